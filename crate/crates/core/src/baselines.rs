//! Classical knowledge-tracing baselines: Bayesian knowledge tracing and
//! performance-factors analysis.
//!
//! BKT models each skill as an independent two-state HMM over "mastered":
//!
//! ```text
//! p(correct | mastered)     = 1 - slip
//! p(correct | not mastered) = guess
//! p(mastered at t=0)        = prior
//! p(not -> mastered)        = learn        (no forgetting)
//! ```
//!
//! Prediction and the Bayes-then-learn state update use only the skill's
//! own observation subsequence, so any reordering that preserves per-skill
//! order (such as the round-robin spread transform) leaves every BKT and
//! PFA prediction bitwise unchanged — both baselines are order-invariant
//! across skills by construction.
//!
//! PFA is a per-skill logistic regression on running success/failure
//! counts: `p = sigmoid(beta + gamma * successes + rho * failures)`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, InteractionSequence, SkillBktParams};
use crate::numerics::{sigmoid, Rng};

// ---------------------------------------------------------------------------
// Bayesian knowledge tracing
// ---------------------------------------------------------------------------

/// Fallback parameters for skills with no observations.
pub const BKT_DEFAULT: SkillBktParams = SkillBktParams {
    prior: 0.5,
    learn: 0.1,
    guess: 0.2,
    slip: 0.1,
};

/// Guess and slip are capped here during fitting to sidestep the
/// identifiability degeneracy where an "inverted" model (mastered students
/// failing) explains the data equally well.
pub const BKT_EMISSION_CAP: f64 = 0.3;

const BKT_EPS: f64 = 1e-6;
const BKT_MAX_ITERS: usize = 200;
const BKT_LL_TOL: f64 = 1e-6;
const BKT_RESTARTS: usize = 5;

/// Fitted BKT parameters for every skill in a vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BktParams {
    /// Keyed by compact skill id.
    pub per_skill: BTreeMap<usize, SkillBktParams>,
    /// Skills that had zero observations and received [`BKT_DEFAULT`].
    pub defaulted: Vec<usize>,
}

impl BktParams {
    pub fn skill(&self, skill: usize) -> SkillBktParams {
        self.per_skill.get(&skill).copied().unwrap_or(BKT_DEFAULT)
    }
}

/// Probability of a correct response given the current mastery estimate.
pub fn bkt_predict(params: &SkillBktParams, mastery: f64) -> f64 {
    mastery * (1.0 - params.slip) + (1.0 - mastery) * params.guess
}

/// Bayes update of the mastery estimate from one observed response,
/// followed by the learning transition.
pub fn bkt_update(params: &SkillBktParams, mastery: f64, correct: u8) -> f64 {
    let (lik_mastered, lik_not) = if correct == 1 {
        (1.0 - params.slip, params.guess)
    } else {
        (params.slip, 1.0 - params.guess)
    };
    let denom = mastery * lik_mastered + (1.0 - mastery) * lik_not;
    let posterior = if denom > 0.0 {
        mastery * lik_mastered / denom
    } else {
        mastery // observation impossible under both states: uninformative
    };
    posterior + (1.0 - posterior) * params.learn
}

/// Per-interaction correctness probabilities for one student, each computed
/// from the mastery state *before* observing that response. Mastery chains
/// are tracked independently per skill.
pub fn bkt_trace(params: &BktParams, seq: &InteractionSequence) -> Vec<f64> {
    let mut mastery: HashMap<usize, f64> = HashMap::new();
    seq.interactions
        .iter()
        .map(|it| {
            let p = params.skill(it.skill);
            let m = *mastery.entry(it.skill).or_insert(p.prior);
            let pred = bkt_predict(&p, m);
            mastery.insert(it.skill, bkt_update(&p, m, it.correct));
            pred
        })
        .collect()
}

/// Fit per-skill BKT parameters by EM over each skill's observation
/// subsequences. Five deterministic restarts, best final log-likelihood
/// wins; guess/slip capped per [`BKT_EMISSION_CAP`]; skills with no
/// observations fall back to [`BKT_DEFAULT`] and are flagged.
pub fn bkt_fit(dataset: &Dataset) -> BktParams {
    let n = dataset.n_skills();
    // Per-skill observation sequences, one per student, within-skill order
    // preserved — exactly the projection the spread transform also preserves.
    let mut per_skill_obs: Vec<Vec<Vec<u8>>> = vec![Vec::new(); n];
    for seq in &dataset.sequences {
        let mut local: HashMap<usize, Vec<u8>> = HashMap::new();
        for it in &seq.interactions {
            local.entry(it.skill).or_default().push(it.correct);
        }
        let mut skills: Vec<usize> = local.keys().copied().collect();
        skills.sort_unstable();
        for s in skills {
            per_skill_obs[s].push(local.remove(&s).unwrap());
        }
    }

    let restarts = restart_inits();
    let mut per_skill = BTreeMap::new();
    let mut defaulted = Vec::new();
    for (skill, obs) in per_skill_obs.iter().enumerate() {
        if obs.is_empty() {
            per_skill.insert(skill, BKT_DEFAULT);
            defaulted.push(skill);
            continue;
        }
        let mut best: Option<(f64, SkillBktParams)> = None;
        for init in &restarts {
            let (fitted, lls) = bkt_em_fit(obs, *init);
            let ll = *lls.last().unwrap();
            if best.map_or(true, |(b, _)| ll > b) {
                best = Some((ll, fitted));
            }
        }
        per_skill.insert(skill, best.unwrap().1);
    }
    BktParams {
        per_skill,
        defaulted,
    }
}

/// The five EM starting points: the defaults plus four spread-out draws
/// from a fixed stream, identical for every skill and every call.
fn restart_inits() -> Vec<SkillBktParams> {
    let mut inits = vec![BKT_DEFAULT];
    let mut rng = Rng::derive(0, "bkt-restarts");
    for _ in 1..BKT_RESTARTS {
        inits.push(SkillBktParams {
            prior: rng.uniform(0.1, 0.9),
            learn: rng.uniform(0.01, 0.4),
            guess: rng.uniform(0.05, BKT_EMISSION_CAP),
            slip: rng.uniform(0.05, BKT_EMISSION_CAP),
        });
    }
    inits
}

fn clamp_unit(x: f64) -> f64 {
    x.clamp(BKT_EPS, 1.0 - BKT_EPS)
}

/// EM for the two-state HMM on one skill's observation sequences. Returns
/// the fitted parameters and the per-iteration log-likelihood trace.
///
/// The M-step clamps each parameter into its box ([eps, 1-eps], emissions
/// additionally capped at 0.3). Each coordinate's expected complete-data
/// log-likelihood is an independent concave binomial term, so the clamp is
/// the exact constrained maximizer and the EM monotonicity guarantee
/// survives it.
pub fn bkt_em_fit(sequences: &[Vec<u8>], init: SkillBktParams) -> (SkillBktParams, Vec<f64>) {
    let mut p = SkillBktParams {
        prior: clamp_unit(init.prior),
        learn: clamp_unit(init.learn),
        guess: init.guess.clamp(BKT_EPS, BKT_EMISSION_CAP),
        slip: init.slip.clamp(BKT_EPS, BKT_EMISSION_CAP),
    };
    let mut lls = Vec::new();
    for _iter in 0..BKT_MAX_ITERS {
        // Expected-count accumulators over all sequences.
        let mut prior_num = 0.0; // gamma_0(mastered) summed
        let mut trans_num = 0.0; // xi(not -> mastered)
        let mut trans_den = 0.0; // gamma(not), transitions only
        let mut guess_num = 0.0; // gamma(not) on correct steps
        let mut guess_den = 0.0; // gamma(not), all steps
        let mut slip_num = 0.0; // gamma(mastered) on incorrect steps
        let mut slip_den = 0.0; // gamma(mastered), all steps
        let mut ll = 0.0;

        for obs in sequences {
            let t_len = obs.len();
            let emit = |state: usize, o: u8| -> f64 {
                match (state, o) {
                    (0, 1) => p.guess,
                    (0, 0) => 1.0 - p.guess,
                    (1, 1) => 1.0 - p.slip,
                    _ => p.slip,
                }
            };
            // Scaled forward pass (Rabiner scaling: alpha rows sum to 1).
            let mut alpha = vec![[0.0f64; 2]; t_len];
            let mut scale = vec![0.0f64; t_len];
            alpha[0] = [(1.0 - p.prior) * emit(0, obs[0]), p.prior * emit(1, obs[0])];
            scale[0] = alpha[0][0] + alpha[0][1];
            alpha[0][0] /= scale[0];
            alpha[0][1] /= scale[0];
            for t in 1..t_len {
                let from_not = alpha[t - 1][0];
                let a0 = from_not * (1.0 - p.learn) * emit(0, obs[t]);
                let a1 = (from_not * p.learn + alpha[t - 1][1]) * emit(1, obs[t]);
                scale[t] = a0 + a1;
                alpha[t] = [a0 / scale[t], a1 / scale[t]];
            }
            ll += scale.iter().map(|c| c.ln()).sum::<f64>();

            // Scaled backward pass sharing the forward scales.
            let mut beta = vec![[0.0f64; 2]; t_len];
            beta[t_len - 1] = [1.0, 1.0];
            for t in (0..t_len - 1).rev() {
                let e0 = emit(0, obs[t + 1]);
                let e1 = emit(1, obs[t + 1]);
                let b0 = ((1.0 - p.learn) * e0 * beta[t + 1][0] + p.learn * e1 * beta[t + 1][1])
                    / scale[t + 1];
                let b1 = e1 * beta[t + 1][1] / scale[t + 1];
                beta[t] = [b0, b1];
            }

            for t in 0..t_len {
                let g0 = alpha[t][0] * beta[t][0];
                let g1 = alpha[t][1] * beta[t][1];
                if t == 0 {
                    prior_num += g1;
                }
                let o = f64::from(obs[t]);
                guess_den += g0;
                guess_num += g0 * o;
                slip_den += g1;
                slip_num += g1 * (1.0 - o);
                if t + 1 < t_len {
                    // xi_t(not -> mastered) under Rabiner scaling.
                    let xi01 =
                        alpha[t][0] * p.learn * emit(1, obs[t + 1]) * beta[t + 1][1] / scale[t + 1];
                    trans_num += xi01;
                    trans_den += g0;
                }
            }
        }
        lls.push(ll);
        if lls.len() >= 2 && ll - lls[lls.len() - 2] < BKT_LL_TOL {
            break;
        }

        let n_seqs = sequences.len() as f64;
        p = SkillBktParams {
            prior: clamp_unit(prior_num / n_seqs),
            learn: if trans_den > 0.0 {
                clamp_unit(trans_num / trans_den)
            } else {
                p.learn
            },
            guess: if guess_den > 0.0 {
                (guess_num / guess_den).clamp(BKT_EPS, BKT_EMISSION_CAP)
            } else {
                p.guess
            },
            slip: if slip_den > 0.0 {
                (slip_num / slip_den).clamp(BKT_EPS, BKT_EMISSION_CAP)
            } else {
                p.slip
            },
        };
    }
    (p, lls)
}

// ---------------------------------------------------------------------------
// Performance-factors analysis
// ---------------------------------------------------------------------------

/// Logistic-regression coefficients for one skill.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PfaSkill {
    pub beta: f64,
    pub gamma: f64,
    pub rho: f64,
}

impl PfaSkill {
    pub const ZERO: PfaSkill = PfaSkill {
        beta: 0.0,
        gamma: 0.0,
        rho: 0.0,
    };
}

/// Fitted PFA coefficients for every skill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfaParams {
    /// Keyed by compact skill id.
    pub per_skill: BTreeMap<usize, PfaSkill>,
}

impl PfaParams {
    pub fn skill(&self, skill: usize) -> PfaSkill {
        self.per_skill
            .get(&skill)
            .copied()
            .unwrap_or(PfaSkill::ZERO)
    }
}

const PFA_L2: f64 = 1e-4;
const PFA_MAX_EPOCHS: usize = 500;
const PFA_GRAD_TOL: f64 = 1e-6;

/// Correctness probability from prior success/failure counts.
pub fn pfa_predict(coeffs: &PfaSkill, successes: u32, failures: u32) -> f64 {
    sigmoid(coeffs.beta + coeffs.gamma * f64::from(successes) + coeffs.rho * f64::from(failures))
}

/// Running (successes, failures) for each interaction's skill, counted over
/// the student's *prior* attempts on that skill.
pub fn pfa_prefix_counts(seq: &InteractionSequence) -> Vec<(u32, u32)> {
    let mut counts: HashMap<usize, (u32, u32)> = HashMap::new();
    seq.interactions
        .iter()
        .map(|it| {
            let entry = counts.entry(it.skill).or_insert((0, 0));
            let out = *entry;
            if it.correct == 1 {
                entry.0 += 1;
            } else {
                entry.1 += 1;
            }
            out
        })
        .collect()
}

/// Per-interaction correctness probabilities for one student.
pub fn pfa_trace(params: &PfaParams, seq: &InteractionSequence) -> Vec<f64> {
    pfa_prefix_counts(seq)
        .into_iter()
        .zip(&seq.interactions)
        .map(|((s, f), it)| pfa_predict(&params.skill(it.skill), s, f))
        .collect()
}

/// Fit per-skill logistic regressions by full-batch gradient descent with
/// backtracking line search on mean BCE + 1e-4 * L2, run to gradient norm
/// < 1e-6 or 500 epochs.
pub fn pfa_fit(dataset: &Dataset) -> PfaParams {
    let n = dataset.n_skills();
    // (successes, failures, label) examples per skill.
    let mut examples: Vec<Vec<(f64, f64, f64)>> = vec![Vec::new(); n];
    for seq in &dataset.sequences {
        for ((s, f), it) in pfa_prefix_counts(seq).into_iter().zip(&seq.interactions) {
            examples[it.skill].push((f64::from(s), f64::from(f), f64::from(it.correct)));
        }
    }
    let per_skill = examples
        .iter()
        .enumerate()
        .map(|(skill, ex)| (skill, fit_skill_logistic(ex)))
        .collect();
    PfaParams { per_skill }
}

fn logistic_objective(theta: &PfaSkill, ex: &[(f64, f64, f64)]) -> (f64, [f64; 3]) {
    let n = ex.len() as f64;
    let mut loss = 0.0;
    let mut grad = [0.0f64; 3];
    for &(s, f, y) in ex {
        let z = theta.beta + theta.gamma * s + theta.rho * f;
        let p = sigmoid(z);
        loss += crate::numerics::binary_cross_entropy(p, y);
        let d = (p - y) / n;
        grad[0] += d;
        grad[1] += d * s;
        grad[2] += d * f;
    }
    loss /= n;
    loss += PFA_L2 * (theta.beta * theta.beta + theta.gamma * theta.gamma + theta.rho * theta.rho);
    grad[0] += 2.0 * PFA_L2 * theta.beta;
    grad[1] += 2.0 * PFA_L2 * theta.gamma;
    grad[2] += 2.0 * PFA_L2 * theta.rho;
    (loss, grad)
}

fn fit_skill_logistic(ex: &[(f64, f64, f64)]) -> PfaSkill {
    if ex.is_empty() {
        return PfaSkill::ZERO;
    }
    let mut theta = PfaSkill::ZERO;
    let (mut loss, mut grad) = logistic_objective(&theta, ex);
    for _epoch in 0..PFA_MAX_EPOCHS {
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if gnorm2.sqrt() < PFA_GRAD_TOL {
            break;
        }
        // Backtracking line search with an Armijo sufficient-decrease test;
        // counts can reach sequence length, so fixed steps would diverge.
        let mut lr = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = PfaSkill {
                beta: theta.beta - lr * grad[0],
                gamma: theta.gamma - lr * grad[1],
                rho: theta.rho - lr * grad[2],
            };
            let (cand_loss, cand_grad) = logistic_objective(&cand, ex);
            if cand_loss <= loss - 1e-4 * lr * gnorm2 {
                theta = cand;
                loss = cand_loss;
                grad = cand_grad;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        if !accepted {
            break; // step underflow: no further progress possible
        }
    }
    theta
}

// ---------------------------------------------------------------------------
