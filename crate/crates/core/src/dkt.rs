//! Deep knowledge tracing: a single-layer LSTM over (skill, correctness)
//! one-hots, projecting each hidden state to per-skill correctness logits.
//!
//! The cell follows the standard six-part formulation, with `[h_{t-1}, x_t]`
//! as the concatenated input:
//!
//! ```text
//! f_t = sigmoid(W_f [h_{t-1}, x_t] + b_f)         forget gate
//! i_t = sigmoid(W_i [h_{t-1}, x_t] + b_i)         input gate
//! c~_t = tanh  (W_c [h_{t-1}, x_t] + b_c)         candidate cell
//! c_t = f_t * c_{t-1} + i_t * c~_t                cell state
//! o_t = sigmoid(W_o [h_{t-1}, x_t] + b_o)         output gate
//! h_t = o_t * tanh(c_t)                           hidden state
//! y_t = W_y h_t + b_y,   p_t = sigmoid(y_t)       per-skill logits
//! ```
//!
//! Training minimizes the mean binary cross-entropy of `p_t[skill_{t+1}]`
//! against `correct_{t+1}` with gradients derived by hand and verified
//! against central finite differences. The input one-hot has length `2N`
//! (index `skill` when correct, `N + skill` when incorrect), so the gate
//! pre-activations reduce to one dense `H x H` product plus a single
//! column of each weight matrix; the fast path below exploits that and is
//! bit-identical to the dense evaluation.
//!
//! `FrozenRecurrent` mode keeps every LSTM parameter at its random
//! initialization and trains only the output projection — the ablation
//! that asks how much of the model's skill is in the recurrent dynamics.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{chunk_max_len, Dataset, InteractionSequence};
use crate::numerics::matrix::{
    add_assign, add_column, add_matvec_t_prefix, add_outer_prefix, dot,
};
use crate::numerics::{
    binary_cross_entropy, clip_global_norm, fnv1a64, init_params, load_params, save_params,
    sigmoid, CheckpointError, InitScheme, Matrix, NumericsError, Optimizer, OptimizerKind, Rng,
    TrainConfig,
};

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub enum DktError {
    SkillOutOfRange { skill: usize, n: usize },
    EmptySequence,
    /// Loss and training need at least one (step, next step) pair somewhere.
    NoPredictionTargets,
    Numerics(NumericsError),
    Checkpoint(CheckpointError),
    Io(std::io::Error),
}

impl fmt::Display for DktError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DktError::SkillOutOfRange { skill, n } => {
                write!(f, "skill {skill} out of range (N={n})")
            }
            DktError::EmptySequence => write!(f, "sequence has no interactions"),
            DktError::NoPredictionTargets => {
                write!(f, "no sequence of length >= 2: nothing to predict")
            }
            DktError::Numerics(e) => write!(f, "{e}"),
            DktError::Checkpoint(e) => write!(f, "{e}"),
            DktError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for DktError {}

impl From<NumericsError> for DktError {
    fn from(e: NumericsError) -> Self {
        DktError::Numerics(e)
    }
}

impl From<CheckpointError> for DktError {
    fn from(e: CheckpointError) -> Self {
        DktError::Checkpoint(e)
    }
}

impl From<std::io::Error> for DktError {
    fn from(e: std::io::Error) -> Self {
        DktError::Io(e)
    }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DktMode {
    /// All parameters train.
    Full,
    /// LSTM parameters stay at initialization; only `w_y`, `b_y` train.
    FrozenRecurrent,
}

/// The DKT model. `hidden` defaults to 200 via [`DktModel::default_hidden`];
/// every matrix is owned and plain so tests can build exact instances.
#[derive(Debug, Clone, PartialEq)]
pub struct DktModel {
    pub n_skills: usize,
    pub hidden: usize,
    pub mode: DktMode,
    pub seed: u64,
    /// Gate weights, each `H x (H + 2N)`: columns `0..H` act on `h_{t-1}`,
    /// columns `H..H+2N` on the one-hot input.
    pub w_f: Matrix,
    pub w_i: Matrix,
    pub w_c: Matrix,
    pub w_o: Matrix,
    /// Gate biases, each `H x 1`.
    pub b_f: Matrix,
    pub b_i: Matrix,
    pub b_c: Matrix,
    pub b_o: Matrix,
    /// Output projection `N x H` and bias `N x 1`.
    pub w_y: Matrix,
    pub b_y: Matrix,
}

/// Everything the cell computes at one step, in role-named arrays, plus
/// the derived logits and probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub forget: Vec<f64>,
    pub input: Vec<f64>,
    pub candidate: Vec<f64>,
    pub cell: Vec<f64>,
    pub output: Vec<f64>,
    pub hidden: Vec<f64>,
    /// Concatenation `[forget, input, candidate, cell, output, hidden]`,
    /// length `6H` — the per-step activation vector all trajectory
    /// analyses work on.
    pub activation: Vec<f64>,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

/// Result of a forward pass: probabilities always, traces on request.
#[derive(Debug, Clone)]
pub struct ForwardRun {
    /// One entry per input step when tracing; empty otherwise.
    pub steps: Vec<TraceStep>,
    /// `p_t` for every step, each of length `N`.
    pub probabilities: Vec<Vec<f64>>,
    pub final_hidden: Vec<f64>,
    pub final_cell: Vec<f64>,
}

/// Per-epoch training record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
    /// Non-fatal observations, e.g. the smoothed loss failing to decrease.
    pub warnings: Vec<String>,
}

/// One-hot input of length `2N`: index `skill` when correct, `N + skill`
/// when incorrect.
pub fn encode_input(skill: usize, correct: u8, n: usize) -> Result<Vec<f64>, DktError> {
    if skill >= n {
        return Err(DktError::SkillOutOfRange { skill, n });
    }
    let mut x = vec![0.0; 2 * n];
    x[hot_index(skill, correct, n)] = 1.0;
    Ok(x)
}

#[inline]
fn hot_index(skill: usize, correct: u8, n: usize) -> usize {
    if correct == 1 {
        skill
    } else {
        n + skill
    }
}

/// Cached intermediates for one training step.
struct StepCache {
    hot: usize,
    f: Vec<f64>,
    i: Vec<f64>,
    cbar: Vec<f64>,
    c: Vec<f64>,
    o: Vec<f64>,
    h: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl DktModel {
    pub const DEFAULT_HIDDEN: usize = 200;

    /// Fresh model: gate weights uniform in `(-1/sqrt(H+2N), +1/sqrt(H+2N))`,
    /// output weights uniform in `(-1/sqrt(H), +1/sqrt(H))`, biases zero
    /// except the forget-gate bias at +1.0 (keeps early memory open).
    pub fn new(n_skills: usize, hidden: usize, seed: u64, mode: DktMode) -> Self {
        assert!(n_skills > 0 && hidden > 0, "empty model");
        let mut rng = Rng::derive(seed, "dkt-init");
        let cols = hidden + 2 * n_skills;
        let gate = |rng: &mut Rng| init_params(hidden, cols, InitScheme::UniformScaled, rng);
        let w_f = gate(&mut rng);
        let w_i = gate(&mut rng);
        let w_c = gate(&mut rng);
        let w_o = gate(&mut rng);
        let mut b_f = Matrix::zeros(hidden, 1);
        b_f.fill(1.0);
        let w_y = init_params(n_skills, hidden, InitScheme::UniformScaled, &mut rng);
        DktModel {
            n_skills,
            hidden,
            mode,
            seed,
            w_f,
            w_i,
            w_c,
            w_o,
            b_f,
            b_i: Matrix::zeros(hidden, 1),
            b_c: Matrix::zeros(hidden, 1),
            b_o: Matrix::zeros(hidden, 1),
            w_y,
            b_y: Matrix::zeros(n_skills, 1),
        }
    }

    // ── parameter plumbing ──────────────────────────────────────────

    /// Canonical parameter order used by training, checkpoints, and
    /// gradient checks.
    pub fn param_names() -> [&'static str; 10] {
        ["w_f", "w_i", "w_c", "w_o", "b_f", "b_i", "b_c", "b_o", "w_y", "b_y"]
    }

    pub fn params(&self) -> [&Matrix; 10] {
        [
            &self.w_f, &self.w_i, &self.w_c, &self.w_o, &self.b_f, &self.b_i, &self.b_c,
            &self.b_o, &self.w_y, &self.b_y,
        ]
    }

    /// Copy of this model with the given parameters (canonical order).
    pub fn with_params(&self, ps: &[Matrix]) -> DktModel {
        assert_eq!(ps.len(), 10);
        let mut m = self.clone();
        for (dst, src) in [
            &mut m.w_f, &mut m.w_i, &mut m.w_c, &mut m.w_o, &mut m.b_f, &mut m.b_i, &mut m.b_c,
            &mut m.b_o, &mut m.w_y, &mut m.b_y,
        ]
        .into_iter()
        .zip(ps)
        {
            assert_eq!(dst.shape(), src.shape(), "parameter shape changed");
            *dst = src.clone();
        }
        m
    }

    /// FNV-1a over the little-endian bytes of all parameters in canonical
    /// order — identical to the checkpoint blob hash.
    pub fn model_hash(&self) -> u64 {
        fnv1a64(&self.content_bytes())
    }

    /// Hash over the recurrent (LSTM) parameters only; the frozen-mode
    /// contract is that this never changes during training.
    pub fn recurrent_hash(&self) -> u64 {
        let mut bytes = Vec::new();
        for m in &self.params()[..8] {
            for v in &m.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fnv1a64(&bytes)
    }

    fn content_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::new();
        for m in self.params() {
            for v in &m.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    pub fn save(&self, dir: &Path) -> Result<u64, DktError> {
        let hyper = serde_json::json!({
            "model": "dkt",
            "n_skills": self.n_skills,
            "hidden": self.hidden,
            "mode": self.mode,
        });
        let names = Self::param_names();
        let params = self.params();
        let pairs: Vec<(&str, &Matrix)> = names.into_iter().zip(params).collect();
        Ok(save_params(dir, &pairs, self.seed, &hyper)?)
    }

    pub fn load(dir: &Path) -> Result<DktModel, DktError> {
        let mut loaded = load_params(dir)?;
        let n = loaded.hyperparameters["n_skills"].as_u64().ok_or_else(|| {
            DktError::Checkpoint(CheckpointError::Corrupt("missing n_skills".into()))
        })? as usize;
        let h = loaded.hyperparameters["hidden"].as_u64().ok_or_else(|| {
            DktError::Checkpoint(CheckpointError::Corrupt("missing hidden".into()))
        })? as usize;
        let mode: DktMode = serde_json::from_value(loaded.hyperparameters["mode"].clone())
            .map_err(|e| {
                DktError::Checkpoint(CheckpointError::Corrupt(format!("bad mode: {e}")))
            })?;
        let seed = loaded.seed;
        let mut take = |name: &str| {
            loaded.take(name).ok_or_else(|| {
                DktError::Checkpoint(CheckpointError::Corrupt(format!("missing param {name}")))
            })
        };
        let model = DktModel {
            n_skills: n,
            hidden: h,
            mode,
            seed,
            w_f: take("w_f")?,
            w_i: take("w_i")?,
            w_c: take("w_c")?,
            w_o: take("w_o")?,
            b_f: take("b_f")?,
            b_i: take("b_i")?,
            b_c: take("b_c")?,
            b_o: take("b_o")?,
            w_y: take("w_y")?,
            b_y: take("b_y")?,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<(), DktError> {
        let (h, n) = (self.hidden, self.n_skills);
        let cols = h + 2 * n;
        for (name, m, want) in [
            ("w_f", &self.w_f, (h, cols)),
            ("w_i", &self.w_i, (h, cols)),
            ("w_c", &self.w_c, (h, cols)),
            ("w_o", &self.w_o, (h, cols)),
            ("b_f", &self.b_f, (h, 1)),
            ("b_i", &self.b_i, (h, 1)),
            ("b_c", &self.b_c, (h, 1)),
            ("b_o", &self.b_o, (h, 1)),
            ("w_y", &self.w_y, (n, h)),
            ("b_y", &self.b_y, (n, 1)),
        ] {
            if m.shape() != want {
                return Err(DktError::Checkpoint(CheckpointError::Corrupt(format!(
                    "{name} has shape {:?}, expected {want:?}",
                    m.shape()
                ))));
            }
        }
        Ok(())
    }

    // ── forward ─────────────────────────────────────────────────────

    /// One cell step on a dense input vector of length `2N`. This is the
    /// direct transcription of the six equations; the training path uses
    /// [`DktModel::step_hot`], which is bit-identical for one-hot inputs.
    pub fn lstm_step(
        &self,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
    ) -> Result<TraceStep, DktError> {
        let h = self.hidden;
        if x.len() != 2 * self.n_skills || h_prev.len() != h || c_prev.len() != h {
            return Err(DktError::Numerics(NumericsError::ShapeMismatch {
                op: "lstm_step",
                lhs: (h_prev.len(), x.len()),
                rhs: (h, 2 * self.n_skills),
            }));
        }
        // u = [h_prev, x]
        let mut u = Vec::with_capacity(h + x.len());
        u.extend_from_slice(h_prev);
        u.extend_from_slice(x);

        let gate_pre = |w: &Matrix, b: &Matrix| -> Vec<f64> {
            let mut z = b.data.clone();
            for r in 0..h {
                z[r] += dot(w.row(r), &u);
            }
            z
        };
        let f: Vec<f64> = gate_pre(&self.w_f, &self.b_f).iter().map(|&z| sigmoid(z)).collect();
        let i: Vec<f64> = gate_pre(&self.w_i, &self.b_i).iter().map(|&z| sigmoid(z)).collect();
        let cbar: Vec<f64> = gate_pre(&self.w_c, &self.b_c).iter().map(|&z| z.tanh()).collect();
        let o: Vec<f64> = gate_pre(&self.w_o, &self.b_o).iter().map(|&z| sigmoid(z)).collect();
        let c: Vec<f64> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * cbar[k]).collect();
        let hidden: Vec<f64> = (0..h).map(|k| o[k] * c[k].tanh()).collect();
        self.finish_step(f, i, cbar, c, o, hidden)
    }

    /// The one-hot fast path: gate pre-activation = `W[:, 0..H] h_prev +
    /// W[:, H+hot] + b`. Skipping the zero input columns adds exactly
    /// nothing, so this matches [`DktModel::lstm_step`] bit for bit.
    fn step_hot(&self, hot: usize, h_prev: &[f64], c_prev: &[f64]) -> StepCache {
        let h = self.hidden;
        let col = h + hot;
        let pre = |w: &Matrix, b: &Matrix| -> Vec<f64> {
            (0..h)
                .map(|r| {
                    let row = w.row(r);
                    // Grouped as (h-part + hot column) + bias: the dense
                    // path folds the hot column into its dot product before
                    // the bias lands, and addition is commutative but not
                    // associative, so the grouping must match to stay
                    // bit-identical.
                    dot(&row[..h], h_prev) + row[col] + b.data[r]
                })
                .collect()
        };
        let zf = pre(&self.w_f, &self.b_f);
        let zi = pre(&self.w_i, &self.b_i);
        let zc = pre(&self.w_c, &self.b_c);
        let zo = pre(&self.w_o, &self.b_o);

        let f: Vec<f64> = zf.iter().map(|&z| sigmoid(z)).collect();
        let i: Vec<f64> = zi.iter().map(|&z| sigmoid(z)).collect();
        let cbar: Vec<f64> = zc.iter().map(|&z| z.tanh()).collect();
        let o: Vec<f64> = zo.iter().map(|&z| sigmoid(z)).collect();
        let c: Vec<f64> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * cbar[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|&v| v.tanh()).collect();
        let hv: Vec<f64> = (0..h).map(|k| o[k] * tanh_c[k]).collect();
        StepCache {
            hot,
            f,
            i,
            cbar,
            c,
            o,
            h: hv,
            tanh_c,
        }
    }

    fn finish_step(
        &self,
        f: Vec<f64>,
        i: Vec<f64>,
        cbar: Vec<f64>,
        c: Vec<f64>,
        o: Vec<f64>,
        hidden: Vec<f64>,
    ) -> Result<TraceStep, DktError> {
        let logits = self.project(&hidden);
        if !hidden.iter().all(|v| v.is_finite()) || !logits.iter().all(|v| v.is_finite()) {
            return Err(DktError::Numerics(NumericsError::NonFinite {
                context: "lstm step".into(),
            }));
        }
        let probabilities: Vec<f64> = logits.iter().map(|&y| sigmoid(y)).collect();
        let mut activation = Vec::with_capacity(6 * self.hidden);
        for part in [&f, &i, &cbar, &c, &o, &hidden] {
            activation.extend_from_slice(part);
        }
        Ok(TraceStep {
            forget: f,
            input: i,
            candidate: cbar,
            cell: c,
            output: o,
            hidden,
            activation,
            logits,
            probabilities,
        })
    }

    /// Full logits `y = W_y h + b_y`.
    fn project(&self, hidden: &[f64]) -> Vec<f64> {
        (0..self.n_skills)
            .map(|q| self.b_y.data[q] + dot(self.w_y.row(q), hidden))
            .collect()
    }

    fn trace_from_cache(&self, s: &StepCache) -> Result<TraceStep, DktError> {
        self.finish_step(
            s.f.clone(),
            s.i.clone(),
            s.cbar.clone(),
            s.c.clone(),
            s.o.clone(),
            s.h.clone(),
        )
    }

    /// Run the cell over a whole sequence from the zero state.
    pub fn forward(&self, seq: &InteractionSequence, trace: bool) -> Result<ForwardRun, DktError> {
        if seq.interactions.is_empty() {
            return Err(DktError::EmptySequence);
        }
        let h = self.hidden;
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        let mut steps = Vec::new();
        let mut probabilities = Vec::with_capacity(seq.interactions.len());
        for it in &seq.interactions {
            if it.skill >= self.n_skills {
                return Err(DktError::SkillOutOfRange {
                    skill: it.skill,
                    n: self.n_skills,
                });
            }
            let cache = self.step_hot(hot_index(it.skill, it.correct, self.n_skills), &h_prev, &c_prev);
            let step = self.trace_from_cache(&cache)?;
            probabilities.push(step.probabilities.clone());
            if trace {
                steps.push(step);
            }
            h_prev = cache.h;
            c_prev = cache.c;
        }
        Ok(ForwardRun {
            steps,
            probabilities,
            final_hidden: h_prev,
            final_cell: c_prev,
        })
    }

    /// Mean next-step binary cross-entropy over the sequence: step `t`'s
    /// prediction for skill `s_{t+1}` is scored against `correct_{t+1}`.
    pub fn loss(&self, seq: &InteractionSequence) -> Result<f64, DktError> {
        if seq.interactions.len() < 2 {
            return Err(DktError::NoPredictionTargets);
        }
        let h = self.hidden;
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        let mut total = 0.0;
        let last = seq.interactions.len() - 1;
        for t in 0..last {
            let it = seq.interactions[t];
            if it.skill >= self.n_skills {
                return Err(DktError::SkillOutOfRange {
                    skill: it.skill,
                    n: self.n_skills,
                });
            }
            let cache = self.step_hot(hot_index(it.skill, it.correct, self.n_skills), &h_prev, &c_prev);
            let next = seq.interactions[t + 1];
            if next.skill >= self.n_skills {
                return Err(DktError::SkillOutOfRange {
                    skill: next.skill,
                    n: self.n_skills,
                });
            }
            let y = self.b_y.data[next.skill] + dot(self.w_y.row(next.skill), &cache.h);
            total += binary_cross_entropy(sigmoid(y), f64::from(next.correct));
            h_prev = cache.h;
            c_prev = cache.c;
        }
        let loss = total / last as f64;
        if !loss.is_finite() {
            return Err(DktError::Numerics(NumericsError::NonFinite {
                context: "dkt loss".into(),
            }));
        }
        Ok(loss)
    }

    /// Probability the student answers `query_skill` correctly after
    /// `history`. An empty history falls back to `sigmoid(b_y[query])` —
    /// the model's resting bias, documented convention.
    pub fn predict_next(
        &self,
        history: &InteractionSequence,
        query_skill: usize,
    ) -> Result<f64, DktError> {
        if query_skill >= self.n_skills {
            return Err(DktError::SkillOutOfRange {
                skill: query_skill,
                n: self.n_skills,
            });
        }
        if history.interactions.is_empty() {
            return Ok(sigmoid(self.b_y.data[query_skill]));
        }
        let run = self.forward(history, false)?;
        Ok(sigmoid(
            self.b_y.data[query_skill] + dot(self.w_y.row(query_skill), &run.final_hidden),
        ))
    }

    // ── training ────────────────────────────────────────────────────

    /// Per-sequence loss and analytic gradients in canonical parameter
    /// order. This is the unit the gradient check verifies.
    pub fn loss_and_gradients(
        &self,
        seq: &InteractionSequence,
    ) -> Result<(f64, Vec<Matrix>), DktError> {
        let mut grads: Vec<Matrix> = self.params().iter().map(|m| m.zeros_like()).collect();
        let loss = self.accumulate_gradients(seq, &mut grads, false)?;
        Ok((loss, grads))
    }

    /// BPTT for one sequence, adding into `grads` (canonical order).
    /// With `output_only` the recurrent backward pass is skipped and only
    /// `w_y`/`b_y` gradients accumulate — the frozen-mode training path.
    fn accumulate_gradients(
        &self,
        seq: &InteractionSequence,
        grads: &mut [Matrix],
        output_only: bool,
    ) -> Result<f64, DktError> {
        if seq.interactions.len() < 2 {
            return Err(DktError::NoPredictionTargets);
        }
        let h = self.hidden;
        let n_targets = seq.interactions.len() - 1;

        // Forward, caching every intermediate. Step t predicts t+1, so the
        // final interaction is consumed only as a target.
        let mut caches: Vec<StepCache> = Vec::with_capacity(n_targets);
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for t in 0..n_targets {
            let it = seq.interactions[t];
            if it.skill >= self.n_skills {
                return Err(DktError::SkillOutOfRange {
                    skill: it.skill,
                    n: self.n_skills,
                });
            }
            let cache = self.step_hot(hot_index(it.skill, it.correct, self.n_skills), &h_prev, &c_prev);
            h_prev.copy_from_slice(&cache.h);
            c_prev.copy_from_slice(&cache.c);
            caches.push(cache);
        }

        // Per-target logit, probability, and upstream dL/dy.
        let mut loss = 0.0;
        let mut dys = Vec::with_capacity(n_targets);
        for t in 0..n_targets {
            let next = seq.interactions[t + 1];
            if next.skill >= self.n_skills {
                return Err(DktError::SkillOutOfRange {
                    skill: next.skill,
                    n: self.n_skills,
                });
            }
            let label = f64::from(next.correct);
            let y = self.b_y.data[next.skill] + dot(self.w_y.row(next.skill), &caches[t].h);
            let p = sigmoid(y);
            loss += binary_cross_entropy(p, label);
            dys.push((next.skill, (p - label) / n_targets as f64));
        }
        loss /= n_targets as f64;
        if !loss.is_finite() {
            return Err(DktError::Numerics(NumericsError::NonFinite {
                context: "dkt loss".into(),
            }));
        }

        let (gw_y, gb_y_idx) = (8, 9);
        // Output layer gradients: dW_y[q] += dy h_t, db_y[q] += dy.
        for (t, &(q, dy)) in dys.iter().enumerate() {
            let row = grads[gw_y].row_mut(q);
            for (k, &hk) in caches[t].h.iter().enumerate() {
                row[k] += dy * hk;
            }
            grads[gb_y_idx].data[q] += dy;
        }
        if output_only {
            return Ok(loss);
        }

        // Reverse pass. dh/dc carry the running gradients w.r.t. h_t, c_t.
        let mut dh = vec![0.0; h];
        let mut dc = vec![0.0; h];
        let mut dzf = vec![0.0; h];
        let mut dzi = vec![0.0; h];
        let mut dzc = vec![0.0; h];
        let mut dzo = vec![0.0; h];
        let zero = vec![0.0; h];
        for t in (0..n_targets).rev() {
            let s = &caches[t];
            let (q, dy) = dys[t];
            // Target contribution arrives at h_t through W_y's row q.
            let wq = self.w_y.row(q);
            for k in 0..h {
                dh[k] += dy * wq[k];
            }

            let c_prev = if t == 0 { &zero } else { &caches[t - 1].c };
            let h_prev = if t == 0 { &zero } else { &caches[t - 1].h };
            for k in 0..h {
                // h = o * tanh(c)
                let do_k = dh[k] * s.tanh_c[k];
                dc[k] += dh[k] * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
                // c = f*c_prev + i*cbar
                let df = dc[k] * c_prev[k];
                let di = dc[k] * s.cbar[k];
                let dcbar = dc[k] * s.i[k];
                dzf[k] = df * s.f[k] * (1.0 - s.f[k]);
                dzi[k] = di * s.i[k] * (1.0 - s.i[k]);
                dzc[k] = dcbar * (1.0 - s.cbar[k] * s.cbar[k]);
                dzo[k] = do_k * s.o[k] * (1.0 - s.o[k]);
                // dc flowing to the previous cell state.
                dc[k] *= s.f[k];
            }

            // Parameter gradients: outer products against [h_prev, onehot].
            let col = self.hidden + s.hot;
            add_outer_prefix(&mut grads[0], &dzf, h_prev);
            add_column(&mut grads[0], col, &dzf);
            add_outer_prefix(&mut grads[1], &dzi, h_prev);
            add_column(&mut grads[1], col, &dzi);
            add_outer_prefix(&mut grads[2], &dzc, h_prev);
            add_column(&mut grads[2], col, &dzc);
            add_outer_prefix(&mut grads[3], &dzo, h_prev);
            add_column(&mut grads[3], col, &dzo);
            add_assign(&mut grads[4].data, &dzf);
            add_assign(&mut grads[5].data, &dzi);
            add_assign(&mut grads[6].data, &dzc);
            add_assign(&mut grads[7].data, &dzo);

            // dh_prev = sum over gates of W[:, 0..H]^T dz.
            for v in dh.iter_mut() {
                *v = 0.0;
            }
            add_matvec_t_prefix(&self.w_f, &dzf, h, &mut dh);
            add_matvec_t_prefix(&self.w_i, &dzi, h, &mut dh);
            add_matvec_t_prefix(&self.w_c, &dzc, h, &mut dh);
            add_matvec_t_prefix(&self.w_o, &dzo, h, &mut dh);
        }
        Ok(loss)
    }

    /// Train on `dataset` (sequences chunked to `config.max_len`), one
    /// optimizer step per mini-batch of sequences. Returns the per-epoch
    /// mean loss log. Sequences with fewer than two interactions carry no
    /// prediction target and are skipped.
    pub fn train(&mut self, dataset: &Dataset, config: &TrainConfig) -> Result<TrainLog, DktError> {
        let data = chunk_max_len(dataset, config.max_len);
        let usable: Vec<&InteractionSequence> = data
            .sequences
            .iter()
            .filter(|s| s.interactions.len() >= 2)
            .collect();
        if usable.is_empty() {
            return Err(DktError::NoPredictionTargets);
        }
        let frozen = self.mode == DktMode::FrozenRecurrent;
        let mut optimizer = match config.optimizer {
            OptimizerKind::Sgd => Optimizer::sgd(config.learning_rate),
            OptimizerKind::Adam => Optimizer::adam(config.learning_rate),
        };
        let mut rng = Rng::derive(config.seed, "dkt-train");
        let mut order: Vec<usize> = (0..usable.len()).collect();
        let batch = config.batch_size.max(1);

        let mut grads: Vec<Matrix> = self.params().iter().map(|m| m.zeros_like()).collect();
        let mut epoch_losses = Vec::with_capacity(config.epochs);
        for _epoch in 0..config.epochs {
            rng.shuffle(&mut order);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(batch) {
                for g in grads.iter_mut() {
                    g.fill(0.0);
                }
                for &idx in chunk {
                    epoch_loss += self.accumulate_gradients(usable[idx], &mut grads, frozen)?;
                }
                let scale = 1.0 / chunk.len() as f64;
                for g in grads.iter_mut() {
                    for v in g.data.iter_mut() {
                        *v *= scale;
                    }
                }
                self.apply_step(&mut optimizer, &mut grads, config.clip_norm, frozen)?;
            }
            epoch_losses.push(epoch_loss / usable.len() as f64);
        }

        let mut warnings = Vec::new();
        if let Some(msg) = smoothed_increase(&epoch_losses) {
            eprintln!("warning: {msg}");
            warnings.push(msg);
        }
        Ok(TrainLog {
            epoch_losses,
            warnings,
        })
    }

    fn apply_step(
        &mut self,
        optimizer: &mut Optimizer,
        grads: &mut [Matrix],
        clip_norm: f64,
        frozen: bool,
    ) -> Result<(), DktError> {
        if frozen {
            let mut gs: Vec<&mut Matrix> = grads[8..].iter_mut().collect();
            clip_global_norm(&mut gs, clip_norm);
            let gs: Vec<&Matrix> = gs.into_iter().map(|g| &*g).collect();
            let mut ps = [&mut self.w_y, &mut self.b_y];
            optimizer.step(&mut ps, &gs)?;
        } else {
            let mut gs: Vec<&mut Matrix> = grads.iter_mut().collect();
            clip_global_norm(&mut gs, clip_norm);
            let gs: Vec<&Matrix> = gs.into_iter().map(|g| &*g).collect();
            let mut ps = [
                &mut self.w_f, &mut self.w_i, &mut self.w_c, &mut self.w_o, &mut self.b_f,
                &mut self.b_i, &mut self.b_c, &mut self.b_o, &mut self.w_y, &mut self.b_y,
            ];
            optimizer.step(&mut ps, &gs)?;
        }
        Ok(())
    }

    // ── trace dump ──────────────────────────────────────────────────

    /// JSON-lines trace: a header `{n_skills, hidden, model_hash}` then one
    /// [`TraceStep`] per input step.
    pub fn dump_trace<W: Write>(
        &self,
        seq: &InteractionSequence,
        mut out: W,
    ) -> Result<(), DktError> {
        let run = self.forward(seq, true)?;
        let header = serde_json::json!({
            "n_skills": self.n_skills,
            "hidden": self.hidden,
            "model_hash": format!("{:#018x}", self.model_hash()),
        });
        writeln!(out, "{header}")?;
        for step in &run.steps {
            let line = serde_json::to_string(step)
                .map_err(|e| DktError::Io(std::io::Error::other(e)))?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Check the 5-epoch moving average of the loss for an overall increase;
/// returns a description when training looks unhealthy.
fn smoothed_increase(losses: &[f64]) -> Option<String> {
    const W: usize = 5;
    if losses.len() < 2 * W {
        return None;
    }
    let avg = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let first = avg(&losses[..W]);
    let last = avg(&losses[losses.len() - W..]);
    if last > first + 1e-9 {
        Some(format!(
            "smoothed training loss rose from {first:.6} to {last:.6}"
        ))
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
