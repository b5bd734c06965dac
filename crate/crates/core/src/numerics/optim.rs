//! SGD and Adam, plus global-norm gradient clipping and the shared
//! training-loop configuration.

use serde::{Deserialize, Serialize};

use super::matrix::{Matrix, NumericsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer state: per-parameter moments (Adam) and the step counter.
///
/// The moment list is positional; callers must pass parameters and gradients
/// in the same order on every step.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Optimizer {
    pub fn sgd(learning_rate: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Sgd,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Adam,
            ..Optimizer::sgd(learning_rate)
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update. Moments are allocated lazily on the first call and
    /// their shapes are pinned to that call's parameter list.
    ///
    /// A non-finite gradient aborts the step before touching any parameter.
    pub fn step(
        &mut self,
        params: &mut [&mut Matrix],
        grads: &[&Matrix],
    ) -> Result<(), NumericsError> {
        assert_eq!(params.len(), grads.len(), "params/grads length mismatch");
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "optimizer_step",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
            g.check_finite("gradient")?;
        }
        if self.kind == OptimizerKind::Adam && self.m.is_empty() {
            self.m = grads.iter().map(|g| g.zeros_like()).collect();
            self.v = grads.iter().map(|g| g.zeros_like()).collect();
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.data.iter_mut().zip(&g.data) {
                        *pv -= self.learning_rate * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                let bc1 = 1.0 - self.beta1.powi(self.step as i32);
                let bc2 = 1.0 - self.beta2.powi(self.step as i32);
                for (idx, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = &mut self.m[idx];
                    let v = &mut self.v[idx];
                    assert_eq!(m.shape(), g.shape(), "moment shape drift");
                    for k in 0..g.data.len() {
                        let gv = g.data[k];
                        m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * gv;
                        v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * gv * gv;
                        let mhat = m.data[k] / bc1;
                        let vhat = v.data[k] / bc2;
                        p.data[k] -= self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Scale all gradients in place so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [&mut Matrix], max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for g in grads.iter() {
        for &v in &g.data {
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data.iter_mut() {
                *v *= s;
            }
        }
    }
    norm
}

/// Shared knobs for the BPTT training loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Global L2 gradient clip applied before each update.
    pub clip_norm: f64,
    /// Training sequences longer than this are split into consecutive
    /// windows to bound BPTT cost.
    pub max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 1e-3,
            batch_size: 32,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            clip_norm: 5.0,
            max_len: 200,
        }
    }
}
