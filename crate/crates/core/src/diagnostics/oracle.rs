//! Oracle-student simulation and post-streak prediction probes.
//!
//! An oracle student answers one skill correctly over and over; the
//! anti-oracle answers everything incorrectly. Feeding such a student to a
//! trained DKT and measuring d(t) = ||a_t - a_{t-1}||_2 between consecutive
//! activation vectors shows whether the hidden trajectory settles into a
//! fixed point, and pairwise distances between different skills' final
//! activations show whether all skills converge toward the same region.

use serde::{Deserialize, Serialize};

use crate::dataset::{Interaction, InteractionSequence};
use crate::dkt::{DktError, DktModel, TraceStep};
use crate::numerics::matrix::l2_distance;
use crate::numerics::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleDirection {
    Correct,
    Incorrect,
}

/// Per-skill activation-settling curves plus cross-skill distances at
/// selected steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceCurve {
    pub direction: OracleDirection,
    pub skills: Vec<usize>,
    pub steps: usize,
    /// `step_distances[s][k]` = d(k+2) = ||a_{k+2} - a_{k+1}|| for skill
    /// `skills[s]` (steps numbered from 1).
    pub step_distances: Vec<Vec<f64>>,
    /// `(step, matrix)` where `matrix[i][j]` = ||a_step(skill_i) -
    /// a_step(skill_j)||, captured at steps 1, 20, and the final step.
    pub cross_skill: Vec<(usize, Vec<Vec<f64>>)>,
    /// The last trace step of each skill's run.
    pub final_steps: Vec<TraceStep>,
}

impl ConvergenceCurve {
    /// Flat rows: `record,skill_a,skill_b,step,value`.
    pub fn csv(&self) -> String {
        let mut out = String::from("record,skill_a,skill_b,step,value\n");
        for (s, dists) in self.skills.iter().zip(&self.step_distances) {
            for (k, d) in dists.iter().enumerate() {
                out.push_str(&format!("step_distance,{s},,{},{d}\n", k + 2));
            }
        }
        for (step, matrix) in &self.cross_skill {
            for (i, a) in self.skills.iter().enumerate() {
                for (j, b) in self.skills.iter().enumerate().skip(i + 1) {
                    out.push_str(&format!("cross_skill,{a},{b},{step},{}\n", matrix[i][j]));
                }
            }
        }
        out
    }
}

/// Feed `steps` identical responses per skill and log how the activation
/// trajectory settles. Read-only over the model.
pub fn oracle_simulation(
    model: &DktModel,
    skills: &[usize],
    steps: usize,
    direction: OracleDirection,
) -> Result<ConvergenceCurve, DktError> {
    assert!(steps >= 2, "need at least two steps to measure settling");
    let mut sorted = skills.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    assert_eq!(sorted.len(), skills.len(), "skills must be distinct");

    let correct = u8::from(direction == OracleDirection::Correct);
    let mut activations: Vec<Vec<Vec<f64>>> = Vec::with_capacity(skills.len());
    let mut final_steps = Vec::with_capacity(skills.len());
    for &skill in skills {
        let seq = InteractionSequence {
            student_id: format!("oracle-{skill}"),
            interactions: vec![Interaction::new(skill, correct); steps],
        };
        let run = model.forward(&seq, true)?;
        activations.push(run.steps.iter().map(|s| s.activation.clone()).collect());
        final_steps.push(run.steps.last().unwrap().clone());
    }

    let step_distances: Vec<Vec<f64>> = activations
        .iter()
        .map(|acts| {
            acts.windows(2)
                .map(|w| l2_distance(&w[0], &w[1]))
                .collect()
        })
        .collect();

    let mut capture_steps = vec![1, 20, steps];
    capture_steps.retain(|&t| t <= steps);
    capture_steps.dedup();
    let cross_skill = capture_steps
        .into_iter()
        .map(|t| {
            let matrix: Vec<Vec<f64>> = activations
                .iter()
                .map(|a| {
                    activations
                        .iter()
                        .map(|b| l2_distance(&a[t - 1], &b[t - 1]))
                        .collect()
                })
                .collect();
            (t, matrix)
        })
        .collect();

    Ok(ConvergenceCurve {
        direction,
        skills: skills.to_vec(),
        steps,
        step_distances,
        cross_skill,
        final_steps,
    })
}

/// Prediction vector after a streak of correct responses on one skill,
/// compared against the zero-history baseline sigmoid(b_y).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreakProbe {
    pub skill: usize,
    pub streak: usize,
    /// p for every skill after the streak, length N.
    pub probabilities: Vec<f64>,
    /// p for every skill with no history at all.
    pub baseline: Vec<f64>,
    pub fraction_above_half: f64,
    pub baseline_fraction_above_half: f64,
}

impl StreakProbe {
    pub fn csv(&self) -> String {
        let mut out = String::from("skill,baseline,post_streak\n");
        for (s, (b, p)) in self.baseline.iter().zip(&self.probabilities).enumerate() {
            out.push_str(&format!("{s},{b},{p}\n"));
        }
        out
    }
}

fn fraction_above_half(probs: &[f64]) -> f64 {
    probs.iter().filter(|&&p| p > 0.5).count() as f64 / probs.len() as f64
}

/// Run `streak` correct responses of `skill` and report the final
/// prediction vector.
pub fn post_streak_predictions(
    model: &DktModel,
    skill: usize,
    streak: usize,
) -> Result<StreakProbe, DktError> {
    assert!(streak >= 1);
    let seq = InteractionSequence {
        student_id: format!("streak-{skill}"),
        interactions: vec![Interaction::new(skill, 1); streak],
    };
    let run = model.forward(&seq, false)?;
    let probabilities = run.probabilities.last().unwrap().clone();
    let baseline: Vec<f64> = model.b_y.data.iter().map(|&z| sigmoid(z)).collect();
    Ok(StreakProbe {
        skill,
        streak,
        fraction_above_half: fraction_above_half(&probabilities),
        baseline_fraction_above_half: fraction_above_half(&baseline),
        probabilities,
        baseline,
    })
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dkt::DktMode;

    #[test]
    fn curve_covers_every_requested_step() {
        let model = DktModel::new(5, 4, 17, DktMode::Full);
        let curve = oracle_simulation(&model, &[0, 2, 4], 30, OracleDirection::Correct).unwrap();
        assert_eq!(curve.skills, vec![0, 2, 4]);
        for dists in &curve.step_distances {
            assert_eq!(dists.len(), 29); // d(t) for t = 2..=30
            assert!(dists.iter().all(|&d| d >= 0.0));
        }
        let captured: Vec<usize> = curve.cross_skill.iter().map(|(t, _)| *t).collect();
        assert_eq!(captured, vec![1, 20, 30]);
        for (_, m) in &curve.cross_skill {
            assert_eq!(m.len(), 3);
            for (i, row) in m.iter().enumerate() {
                assert_eq!(row[i], 0.0);
                for (j, v) in row.iter().enumerate() {
                    assert!((v - m[j][i]).abs() < 1e-15, "distance matrix symmetric");
                }
            }
        }
        assert_eq!(curve.final_steps.len(), 3);
    }

    #[test]
    fn short_runs_drop_unreachable_captures() {
        let model = DktModel::new(3, 4, 18, DktMode::Full);
        let curve = oracle_simulation(&model, &[1], 5, OracleDirection::Incorrect).unwrap();
        let captured: Vec<usize> = curve.cross_skill.iter().map(|(t, _)| *t).collect();
        assert_eq!(captured, vec![1, 5]);
    }

    #[test]
    fn simulation_never_mutates_the_model() {
        let model = DktModel::new(6, 8, 19, DktMode::Full);
        let hash = model.model_hash();
        let _ = oracle_simulation(&model, &[0, 3], 40, OracleDirection::Correct).unwrap();
        let _ = oracle_simulation(&model, &[1], 40, OracleDirection::Incorrect).unwrap();
        let _ = post_streak_predictions(&model, 2, 20).unwrap();
        assert_eq!(model.model_hash(), hash);
    }

    #[test]
    fn streak_probe_reports_full_vector_and_fractions() {
        let model = DktModel::new(7, 5, 20, DktMode::Full);
        let probe = post_streak_predictions(&model, 3, 20).unwrap();
        assert_eq!(probe.probabilities.len(), 7);
        assert_eq!(probe.baseline.len(), 7);
        for &p in probe.probabilities.iter().chain(&probe.baseline) {
            assert!(p > 0.0 && p < 1.0);
        }
        assert!((0.0..=1.0).contains(&probe.fraction_above_half));
        // The baseline is the zero-history projection of the output bias.
        for (b, &z) in probe.baseline.iter().zip(&model.b_y.data) {
            assert_eq!(*b, sigmoid(z));
        }
        let again = post_streak_predictions(&model, 3, 20).unwrap();
        assert_eq!(probe.probabilities, again.probabilities);
    }

    #[test]
    #[should_panic(expected = "distinct")]
    fn duplicate_skills_are_rejected() {
        let model = DktModel::new(4, 3, 21, DktMode::Full);
        let _ = oracle_simulation(&model, &[1, 1], 10, OracleDirection::Correct);
    }
}
