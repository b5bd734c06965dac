//! Synthetic interaction data from a per-skill two-state generative model.
//!
//! Each (student, skill) pair runs an independent mastered/unmastered
//! chain: mastery starts with probability `prior`, unmastered students
//! master the skill with probability `learn` after each attempt, and
//! responses are emitted through `guess`/`slip` noise. This gives a
//! dataset whose optimal predictor is known by construction, which is
//! what the learnability and recovery tests need.

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, Interaction, InteractionSequence, SkillVocabulary};
use crate::numerics::Rng;

/// The four per-skill probabilities of the generative chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkillBktParams {
    pub prior: f64,
    pub learn: f64,
    pub guess: f64,
    pub slip: f64,
}

impl SkillBktParams {
    pub fn validate(&self) -> Result<(), DatasetError> {
        for (name, v) in [
            ("prior", self.prior),
            ("learn", self.learn),
            ("guess", self.guess),
            ("slip", self.slip),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DatasetError::Invalid(format!(
                    "{name}={v} is not a probability"
                )));
            }
        }
        // guess + slip beyond 1 would make mastery anti-predictive; the
        // boundary (uninformative emissions) is allowed.
        if self.guess + self.slip > 1.0 {
            return Err(DatasetError::Invalid(format!(
                "guess+slip = {} exceeds 1",
                self.guess + self.slip
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillOrdering {
    /// All attempts of a skill are presented as one contiguous run.
    Blocked,
    /// Attempts are shuffled across the student's skills.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_students: usize,
    pub n_skills: usize,
    /// Inclusive bounds on per-student sequence length.
    pub seq_len_range: (usize, usize),
    /// One entry per skill.
    pub skill_params: Vec<SkillBktParams>,
    pub skill_ordering: SkillOrdering,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.n_students == 0 || self.n_skills == 0 {
            return Err(DatasetError::Invalid(
                "need at least one student and one skill".into(),
            ));
        }
        let (lo, hi) = self.seq_len_range;
        if lo < 1 || lo > hi {
            return Err(DatasetError::Invalid(format!(
                "bad seq_len_range ({lo}, {hi})"
            )));
        }
        if self.skill_params.len() != self.n_skills {
            return Err(DatasetError::Invalid(format!(
                "{} skill_params for {} skills",
                self.skill_params.len(),
                self.n_skills
            )));
        }
        for (i, p) in self.skill_params.iter().enumerate() {
            p.validate()
                .map_err(|e| DatasetError::Invalid(format!("skill {i}: {e}")))?;
        }
        Ok(())
    }

    /// A spec whose per-skill parameters are drawn deterministically from
    /// the seed: a mix of easy and hard skills with varied learning rates,
    /// so between-skill and within-skill signal are both present.
    pub fn with_varied_skills(
        n_students: usize,
        n_skills: usize,
        seq_len_range: (usize, usize),
        skill_ordering: SkillOrdering,
        seed: u64,
    ) -> Self {
        let mut rng = Rng::derive(seed, "skill-params");
        let skill_params = (0..n_skills)
            .map(|_| SkillBktParams {
                prior: rng.uniform(0.05, 0.65),
                learn: rng.uniform(0.05, 0.35),
                guess: rng.uniform(0.05, 0.30),
                slip: rng.uniform(0.02, 0.20),
            })
            .collect();
        SyntheticSpec {
            n_students,
            n_skills,
            seq_len_range,
            skill_params,
            skill_ordering,
            seed,
        }
    }
}

/// Generate a dataset from `spec`; byte-identical for identical specs.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset, DatasetError> {
    spec.validate()?;
    let mut rng = Rng::derive(spec.seed, "synth");
    let (lo, hi) = spec.seq_len_range;

    let mut sequences = Vec::with_capacity(spec.n_students);
    let mut skill_pool: Vec<usize> = (0..spec.n_skills).collect();
    for student in 0..spec.n_students {
        let len = rng.range_inclusive(lo, hi);
        // Each student practices a handful of distinct skills.
        let n_use = rng.range_inclusive(2, 5).min(spec.n_skills).max(1);
        rng.shuffle(&mut skill_pool);
        let chosen = &skill_pool[..n_use];

        // Presentation order: assign each attempt a skill, then either
        // group attempts into per-skill runs or shuffle them.
        let mut presented: Vec<usize> = (0..len).map(|_| chosen[rng.below(n_use)]).collect();
        match spec.skill_ordering {
            SkillOrdering::Blocked => {
                let mut blocked = Vec::with_capacity(len);
                for &s in chosen {
                    blocked.extend(presented.iter().copied().filter(|&x| x == s));
                }
                presented = blocked;
            }
            SkillOrdering::Random => rng.shuffle(&mut presented),
        }

        // Walk the presentation, advancing each skill's mastery chain in
        // the order its attempts actually occur.
        let mut mastered: Vec<Option<bool>> = vec![None; spec.n_skills];
        let interactions = presented
            .into_iter()
            .map(|skill| {
                let p = &spec.skill_params[skill];
                let m = *mastered[skill].get_or_insert_with(|| rng.chance(p.prior));
                let correct = if m {
                    !rng.chance(p.slip)
                } else {
                    rng.chance(p.guess)
                };
                if !m && rng.chance(p.learn) {
                    mastered[skill] = Some(true);
                }
                Interaction::new(skill, u8::from(correct))
            })
            .collect();

        sequences.push(InteractionSequence {
            student_id: format!("synth-{student}"),
            interactions,
        });
    }

    Ok(Dataset {
        vocabulary: SkillVocabulary::synthetic(spec.n_skills),
        sequences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_spec(params: SkillBktParams, n_students: usize, len: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_students,
            n_skills: 4,
            seq_len_range: (len, len),
            skill_params: vec![params; 4],
            skill_ordering: SkillOrdering::Blocked,
            seed,
        }
    }

    #[test]
    fn noiseless_mastered_students_always_answer_correctly() {
        let spec = flat_spec(
            SkillBktParams {
                prior: 1.0,
                learn: 0.0,
                guess: 0.0,
                slip: 0.0,
            },
            50,
            20,
            3,
        );
        let ds = generate_synthetic(&spec).unwrap();
        for seq in &ds.sequences {
            assert!(seq.interactions.iter().all(|i| i.correct == 1));
        }
    }

    #[test]
    fn uninformative_emissions_give_half_correct() {
        // guess = slip = 0.5 makes the response a fair coin regardless of
        // mastery, so the empirical rate converges to 1/2.
        let spec = flat_spec(
            SkillBktParams {
                prior: 0.3,
                learn: 0.2,
                guess: 0.5,
                slip: 0.5,
            },
            1000,
            100,
            5,
        );
        let ds = generate_synthetic(&spec).unwrap();
        let total = ds.total_interactions();
        assert_eq!(total, 100_000);
        let correct: usize = ds
            .sequences
            .iter()
            .flat_map(|s| &s.interactions)
            .map(|i| i.correct as usize)
            .sum();
        let rate = correct as f64 / total as f64;
        assert!((rate - 0.5).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn identical_specs_generate_identical_datasets() {
        let spec = SyntheticSpec::with_varied_skills(30, 8, (5, 25), SkillOrdering::Random, 42);
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let other = SyntheticSpec {
            seed: 43,
            ..spec.clone()
        };
        assert_ne!(generate_synthetic(&other).unwrap(), a);
    }

    #[test]
    fn blocked_ordering_presents_each_skill_contiguously() {
        let spec = SyntheticSpec::with_varied_skills(40, 10, (8, 30), SkillOrdering::Blocked, 9);
        let ds = generate_synthetic(&spec).unwrap();
        for seq in &ds.sequences {
            let skills: Vec<usize> = seq.interactions.iter().map(|i| i.skill).collect();
            for (pos, &s) in skills.iter().enumerate() {
                // Once a skill's run ends, it must never reappear.
                if pos + 1 < skills.len() && skills[pos + 1] != s {
                    assert!(
                        !skills[pos + 1..].contains(&s),
                        "skill {s} split across runs in {skills:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn generated_dataset_passes_validation() {
        let spec = SyntheticSpec::with_varied_skills(25, 6, (1, 12), SkillOrdering::Random, 1);
        let ds = generate_synthetic(&spec).unwrap();
        ds.validate().unwrap();
        assert_eq!(ds.n_students(), 25);
        assert_eq!(ds.n_skills(), 6);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = flat_spec(
            SkillBktParams {
                prior: 0.5,
                learn: 0.1,
                guess: 0.6,
                slip: 0.6,
            },
            5,
            5,
            0,
        );
        assert!(generate_synthetic(&spec).is_err(), "guess+slip > 1");
        spec.skill_params = vec![
            SkillBktParams {
                prior: 0.5,
                learn: 0.1,
                guess: 0.1,
                slip: 0.1,
            };
            4
        ];
        spec.seq_len_range = (0, 4);
        assert!(generate_synthetic(&spec).is_err(), "zero-length sequences");
    }
}
