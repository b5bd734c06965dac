//! Prediction-delta matrices: how each observed response moves the whole
//! prediction vector.
//!
//! Row 0 holds the initial prediction vector p_0 (the model's outputs after
//! the first input); row t holds the change at step t. Rows are built by
//! chained subtraction against the running reconstruction, so summing rows
//! 0..=t left-to-right reproduces the stored reconstruction of p_t bit for
//! bit — a plain `p_t - p_{t-1}` would not round-trip when consecutive
//! probabilities differ by orders of magnitude.

use serde::{Deserialize, Serialize};

use crate::dataset::InteractionSequence;
use crate::dkt::{DktError, DktModel};

/// Per-step prediction changes for one student, with input annotations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaMatrix {
    /// Row 0 = p_0; row t >= 1 = change at step t. One row per interaction,
    /// each of length N.
    pub rows: Vec<Vec<f64>>,
    /// (skill, correct) of the input that produced each row.
    pub annotations: Vec<(usize, u8)>,
    /// Steps whose input was correct yet whose mean change across skills
    /// was negative — counted for reporting, never asserted.
    pub anomalies: usize,
}

impl DeltaMatrix {
    pub fn n_skills(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Left-to-right sum of rows 0..=t: the probability vector at step t.
    pub fn reconstruct(&self, t: usize) -> Vec<f64> {
        let mut acc = self.rows[0].clone();
        for row in &self.rows[1..=t] {
            for (a, d) in acc.iter_mut().zip(row) {
                *a += d;
            }
        }
        acc
    }

    /// Wide rows: step, skill, correct, then one delta column per skill.
    pub fn csv(&self) -> String {
        let n = self.n_skills();
        let mut out = String::from("step,skill,correct");
        for j in 0..n {
            out.push_str(&format!(",d{j}"));
        }
        out.push('\n');
        for (t, (row, (skill, correct))) in self.rows.iter().zip(&self.annotations).enumerate() {
            out.push_str(&format!("{t},{skill},{correct}"));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Forward a sequence and difference consecutive prediction vectors.
pub fn prediction_deltas(
    model: &DktModel,
    seq: &InteractionSequence,
) -> Result<DeltaMatrix, DktError> {
    let run = model.forward(seq, false)?;
    let n = model.n_skills;
    let mut rows = Vec::with_capacity(run.probabilities.len());
    rows.push(run.probabilities[0].clone());
    // `recon` is the exact left-to-right row sum; differencing against it
    // (rather than against p_{t-1}) keeps the telescoping identity exact.
    let mut recon = run.probabilities[0].clone();
    let mut anomalies = 0usize;
    for (t, probs) in run.probabilities.iter().enumerate().skip(1) {
        let mut row = Vec::with_capacity(n);
        for j in 0..n {
            let d = probs[j] - recon[j];
            row.push(d);
            recon[j] += d;
        }
        if seq.interactions[t].correct == 1 {
            let mean: f64 = row.iter().sum::<f64>() / n as f64;
            if mean < 0.0 {
                anomalies += 1;
            }
        }
        rows.push(row);
    }
    Ok(DeltaMatrix {
        rows,
        annotations: seq
            .interactions
            .iter()
            .map(|it| (it.skill, it.correct))
            .collect(),
        anomalies,
    })
}

// ---------------------------------------------------------------------------
