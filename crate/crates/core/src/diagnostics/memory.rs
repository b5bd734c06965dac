//! Memory-change maps for the key-value memory model.
//!
//! One write from the initial value memory is performed for each
//! correctness variant of a skill; the probe reports the attention vector,
//! its support set (slots attended above half the uniform weight), and the
//! delta each write produced. The attention — and hence the support — is
//! identical across variants because correctness never enters the
//! addressing path; only the written content differs.

use serde::{Deserialize, Serialize};

use crate::dkvmn::{DkvmnError, DkvmnModel};
use crate::numerics::Matrix;

/// One correctness variant's write outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryWriteVariant {
    pub correct: u8,
    pub attention: Vec<f64>,
    /// Slots with attention above 1/(2M) — half the uniform weight.
    pub support: Vec<usize>,
    /// Post-write memory minus the initial memory, M x d_v.
    pub delta: Matrix,
}

/// Write deltas for both correctness variants of one skill.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryChangeMap {
    pub skill: usize,
    pub variants: Vec<MemoryWriteVariant>,
}

impl MemoryChangeMap {
    pub fn csv(&self) -> String {
        let mut out = String::from("correct,slot,dim,delta,attention\n");
        for v in &self.variants {
            for i in 0..v.delta.rows {
                for (j, d) in v.delta.row(i).iter().enumerate() {
                    out.push_str(&format!("{},{i},{j},{d},{}\n", v.correct, v.attention[i]));
                }
            }
        }
        out
    }
}

fn support_of(attention: &[f64]) -> Vec<usize> {
    let threshold = 1.0 / (2.0 * attention.len() as f64);
    attention
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Perform one write from the initial memory per correctness variant.
pub fn memory_change_map(model: &DkvmnModel, skill: usize) -> Result<MemoryChangeMap, DkvmnError> {
    let mut variants = Vec::with_capacity(2);
    for correct in [1u8, 0u8] {
        let attention = model.correlation_weight(skill)?;
        let before = &model.init_value_memory;
        let after = model.write_with(before, &attention, skill, correct);
        let delta = Matrix {
            rows: after.rows,
            cols: after.cols,
            data: after
                .data
                .iter()
                .zip(&before.data)
                .map(|(a, b)| a - b)
                .collect(),
        };
        variants.push(MemoryWriteVariant {
            correct,
            support: support_of(&attention),
            attention,
            delta,
        });
    }
    Ok(MemoryChangeMap { skill, variants })
}

/// Jaccard overlap between the attention supports of two skills' maps.
/// Reported for tag-subset comparisons; nothing is asserted about it.
pub fn support_jaccard(a: &MemoryChangeMap, b: &MemoryChangeMap) -> f64 {
    let sa = &a.variants[0].support;
    let sb = &b.variants[0].support;
    let inter = sa.iter().filter(|s| sb.contains(s)).count();
    let union = sa.len() + sb.len() - inter;
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

// ---------------------------------------------------------------------------
