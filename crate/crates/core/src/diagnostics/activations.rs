//! First-step activation enumeration.
//!
//! At the first time step the LSTM's activation vector depends only on the
//! (skill, correctness) one-hot, so running every such input from the zero
//! state enumerates the entire first-step population exactly: 2N labeled
//! points, each the concatenation [f, i, candidate, cell, o, h] of length
//! 6H.

use serde::{Deserialize, Serialize};

use crate::dataset::{Interaction, InteractionSequence};
use crate::dkt::{DktError, DktModel};

/// One first-step activation vector with its input labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActivationPoint {
    pub skill: usize,
    pub correct: u8,
    pub activation: Vec<f64>,
}

/// Run one step from the zero state for every (skill, correctness) pair.
pub fn first_step_activations(model: &DktModel) -> Result<Vec<ActivationPoint>, DktError> {
    let mut points = Vec::with_capacity(2 * model.n_skills);
    for skill in 0..model.n_skills {
        for correct in [0u8, 1u8] {
            let seq = InteractionSequence {
                student_id: format!("probe-{skill}-{correct}"),
                interactions: vec![Interaction::new(skill, correct)],
            };
            let run = model.forward(&seq, true)?;
            points.push(ActivationPoint {
                skill,
                correct,
                activation: run.steps[0].activation.clone(),
            });
        }
    }
    Ok(points)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dkt::DktMode;

    #[test]
    fn enumerates_every_input_once() {
        let model = DktModel::new(6, 5, 3, DktMode::Full);
        let points = first_step_activations(&model).unwrap();
        assert_eq!(points.len(), 12);
        for p in &points {
            assert_eq!(p.activation.len(), 6 * 5);
        }
        let mut seen: Vec<(usize, u8)> = points.iter().map(|p| (p.skill, p.correct)).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 12);
    }

    #[test]
    fn deterministic_and_read_only() {
        let model = DktModel::new(4, 3, 9, DktMode::Full);
        let hash = model.model_hash();
        let a = first_step_activations(&model).unwrap();
        let b = first_step_activations(&model).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa.activation, pb.activation);
        }
        assert_eq!(model.model_hash(), hash);
    }
}
