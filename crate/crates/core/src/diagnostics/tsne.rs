//! Exact t-SNE for embedding activation vectors in two dimensions.
//!
//! This is the standard algorithm: per-point Gaussian bandwidths found by
//! binary search so each conditional distribution's entropy matches
//! `ln(perplexity)`, symmetrized affinities, and a Student-t low-dimensional
//! kernel minimized by gradient descent with momentum (0.5 until iteration
//! 250, 0.8 after) and early exaggeration (x12 for the first 250
//! iterations). Everything is O(n²) per iteration and fully deterministic
//! under the seed; the KL objective is logged every iteration against the
//! *unexaggerated* affinities so the trace is comparable across phases.

use serde::{Deserialize, Serialize};

use crate::numerics::Rng;

use super::activations::ActivationPoint;

/// Tuning knobs; `new(seed)` fills in the standard defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TsneConfig {
    pub dims: usize,
    pub perplexity: f64,
    pub iters: usize,
    pub seed: u64,
    /// Defaults to `max(50, n/12)` when unset.
    pub learning_rate: Option<f64>,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum_switch_iter: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
}

impl TsneConfig {
    pub fn new(seed: u64) -> Self {
        TsneConfig {
            dims: 2,
            perplexity: 30.0,
            iters: 1000,
            seed,
            learning_rate: None,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            momentum_switch_iter: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
        }
    }
}

/// Raw optimizer output: coordinates plus the per-iteration KL trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TsneRun {
    pub coords: Vec<Vec<f64>>,
    pub kl_trace: Vec<f64>,
    /// Perplexity actually used (auto-lowered when points are scarce).
    pub effective_perplexity: f64,
    pub warnings: Vec<String>,
}

/// A labeled 2-D embedding of first-step activation points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddedPoint {
    pub x: f64,
    pub y: f64,
    pub skill: usize,
    pub correct: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Embedding2D {
    pub points: Vec<EmbeddedPoint>,
    pub kl_trace: Vec<f64>,
    pub effective_perplexity: f64,
    pub warnings: Vec<String>,
}

impl Embedding2D {
    /// Embed labeled activation points (the Fig.-1-style probe).
    pub fn from_activations(points: &[ActivationPoint], config: &TsneConfig) -> Embedding2D {
        let vectors: Vec<Vec<f64>> = points.iter().map(|p| p.activation.clone()).collect();
        let run = tsne(&vectors, config);
        let points = points
            .iter()
            .zip(&run.coords)
            .map(|(p, c)| EmbeddedPoint {
                x: c[0],
                y: c.get(1).copied().unwrap_or(0.0),
                skill: p.skill,
                correct: p.correct,
            })
            .collect();
        Embedding2D {
            points,
            kl_trace: run.kl_trace,
            effective_perplexity: run.effective_perplexity,
            warnings: run.warnings,
        }
    }

    /// One row per point: x, y, skill, correct.
    pub fn csv(&self) -> String {
        let mut out = String::from("x,y,skill,correct\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{},{}\n", p.x, p.y, p.skill, p.correct));
        }
        out
    }
}

const EPS_P: f64 = 1e-12;
const ENTROPY_TOL: f64 = 1e-5;

/// Squared Euclidean distance matrix (flat, row-major).
fn squared_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for (a, b) in points[i].iter().zip(&points[j]) {
                let diff = a - b;
                s += diff * diff;
            }
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Conditional affinities p_{j|i} for one row at inverse bandwidth `beta`,
/// returning (entropy in nats, normalized row).
fn row_affinities(d2: &[f64], i: usize, n: usize, beta: f64, row: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for j in 0..n {
        row[j] = if j == i {
            0.0
        } else {
            (-beta * d2[i * n + j]).exp()
        };
        sum += row[j];
    }
    if sum <= 0.0 {
        // All neighbors underflowed; treat as uniform to keep the search
        // well-defined (the caller's bisection will lower beta).
        let u = 1.0 / (n - 1) as f64;
        for (j, r) in row.iter_mut().enumerate() {
            *r = if j == i { 0.0 } else { u };
        }
        return ((n - 1) as f64).ln();
    }
    let mut entropy = 0.0;
    for r in row.iter_mut() {
        *r /= sum;
        if *r > 0.0 {
            entropy -= *r * r.ln();
        }
    }
    entropy
}

/// Binary search for the bandwidth whose conditional entropy is
/// ln(perplexity), to within 1e-5.
fn search_beta(d2: &[f64], i: usize, n: usize, target_entropy: f64, row: &mut [f64]) {
    let mut beta = 1.0;
    let mut beta_min = f64::NEG_INFINITY;
    let mut beta_max = f64::INFINITY;
    for _ in 0..100 {
        let entropy = row_affinities(d2, i, n, beta, row);
        let diff = entropy - target_entropy;
        if diff.abs() <= ENTROPY_TOL {
            return;
        }
        if diff > 0.0 {
            // Too flat: raise beta.
            beta_min = beta;
            beta = if beta_max.is_finite() {
                (beta + beta_max) / 2.0
            } else {
                beta * 2.0
            };
        } else {
            beta_max = beta;
            beta = if beta_min.is_finite() {
                (beta + beta_min) / 2.0
            } else {
                beta / 2.0
            };
        }
    }
}

/// Exact t-SNE. Degenerate inputs (fewer than two distinct points) yield
/// an all-zero embedding and a warning rather than an error.
pub fn tsne(points: &[Vec<f64>], config: &TsneConfig) -> TsneRun {
    let n = points.len();
    let dims = config.dims;
    let mut warnings = Vec::new();
    if n == 0 {
        return TsneRun {
            coords: Vec::new(),
            kl_trace: Vec::new(),
            effective_perplexity: config.perplexity,
            warnings,
        };
    }
    let d2 = squared_distances(points);
    if n == 1 || d2.iter().all(|&x| x == 0.0) {
        warnings.push(format!(
            "degenerate input: {n} point(s) with no pairwise spread; returning zero embedding"
        ));
        return TsneRun {
            coords: vec![vec![0.0; dims]; n],
            kl_trace: Vec::new(),
            effective_perplexity: config.perplexity,
            warnings,
        };
    }

    // Auto-lower the perplexity when there are fewer than 3x points.
    let mut perplexity = config.perplexity;
    if (n as f64) < 3.0 * perplexity {
        perplexity = ((n - 1) as f64 / 3.0).max(1.0);
        warnings.push(format!(
            "perplexity lowered from {} to {perplexity} for {n} points",
            config.perplexity
        ));
    }

    // Symmetrized affinities P = (p_{j|i} + p_{i|j}) / 2n, floored at 1e-12.
    let target_entropy = perplexity.ln();
    let mut cond = vec![0.0; n * n];
    let mut row = vec![0.0; n];
    for i in 0..n {
        search_beta(&d2, i, n, target_entropy, &mut row);
        cond[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(EPS_P);
            }
        }
    }

    let learning_rate = config
        .learning_rate
        .unwrap_or_else(|| (n as f64 / 12.0).max(50.0));
    let mut rng = Rng::derive(config.seed, "tsne-init");
    let mut y: Vec<f64> = (0..n * dims).map(|_| rng.gaussian() * 1e-4).collect();
    let mut velocity = vec![0.0; n * dims];
    let mut gains = vec![1.0f64; n * dims];
    let mut grad = vec![0.0; n * dims];
    let mut q = vec![0.0; n * n];
    let mut q_next = vec![0.0; n * n];
    let mut y_next = vec![0.0; n * dims];
    let mut kl_trace = Vec::with_capacity(config.iters);

    // Student-t kernel numerators q_ij = (1 + |y_i - y_j|^2)^-1; returns
    // their total Z.
    let fill_q = |y: &[f64], q: &mut [f64]| -> f64 {
        let mut z = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let mut s = 0.0;
                for d in 0..dims {
                    let diff = y[i * dims + d] - y[j * dims + d];
                    s += diff * diff;
                }
                let num = 1.0 / (1.0 + s);
                q[i * n + j] = num;
                q[j * n + i] = num;
                z += 2.0 * num;
            }
        }
        z
    };
    let kl_of = |q: &[f64], z: f64| -> f64 {
        let mut kl = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let pij = p[i * n + j];
                    kl += pij * (pij / (q[i * n + j] / z).max(EPS_P)).ln();
                }
            }
        }
        kl
    };
    // Re-center so the embedding does not drift. Applied before the
    // safeguard check so the verified objective is bitwise the one the
    // next iteration logs.
    let center = |y: &mut [f64]| {
        for d in 0..dims {
            let mean: f64 = (0..n).map(|i| y[i * dims + d]).sum::<f64>() / n as f64;
            for i in 0..n {
                y[i * dims + d] -= mean;
            }
        }
    };

    for iter in 0..config.iters {
        let z = fill_q(&y, &mut q);
        let kl = kl_of(&q, z);
        kl_trace.push(kl);

        let exaggeration = if iter < config.exaggeration_iters {
            config.exaggeration
        } else {
            1.0
        };
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let num = q[i * n + j];
                let coeff = 4.0 * (exaggeration * p[i * n + j] - (num / z).max(EPS_P)) * num;
                for d in 0..dims {
                    grad[i * dims + d] += coeff * (y[i * dims + d] - y[j * dims + d]);
                }
            }
        }

        // The exaggerated and plain objectives differ, so the velocity
        // carried into the plain phase is stale — restart it.
        if iter == config.exaggeration_iters && iter > 0 {
            velocity.iter_mut().for_each(|v| *v = 0.0);
        }

        let momentum = if iter < config.momentum_switch_iter {
            config.initial_momentum
        } else {
            config.final_momentum
        };
        // Per-coordinate gains damp oscillation: shrink where the gradient
        // keeps flipping against the velocity, grow where it agrees.
        for ((v, g), gain) in velocity.iter_mut().zip(&grad).zip(gains.iter_mut()) {
            if *v != 0.0 {
                *gain = if (*g > 0.0) != (*v > 0.0) {
                    *gain + 0.2
                } else {
                    (*gain * 0.8).max(0.01)
                };
            }
            *v = momentum * *v - learning_rate * *gain * g;
        }
        for ((yn, yi), v) in y_next.iter_mut().zip(&y).zip(&velocity) {
            *yn = yi + v;
        }
        center(&mut y_next);

        // Post-exaggeration the logged objective is exactly the one being
        // minimized, so safeguard the step: halve the momentum step while
        // it would increase KL; if it is not a descent direction at all,
        // fall back to a plain gradient step; as a last resort hold
        // position (momentum restart at a stationary point).
        if iter >= config.exaggeration_iters {
            let mut tries = 0;
            loop {
                let z_next = fill_q(&y_next, &mut q_next);
                if kl_of(&q_next, z_next) <= kl {
                    break;
                }
                tries += 1;
                if tries == 10 {
                    for ((v, g), gain) in velocity.iter_mut().zip(&grad).zip(&gains) {
                        *v = -learning_rate * gain * g;
                    }
                } else if tries > 50 {
                    velocity.iter_mut().for_each(|v| *v = 0.0);
                    y_next.copy_from_slice(&y);
                    break;
                } else {
                    velocity.iter_mut().for_each(|v| *v *= 0.5);
                }
                for ((yn, yi), v) in y_next.iter_mut().zip(&y).zip(&velocity) {
                    *yn = yi + v;
                }
                center(&mut y_next);
            }
        }
        std::mem::swap(&mut y, &mut y_next);
    }

    TsneRun {
        coords: (0..n).map(|i| y[i * dims..(i + 1) * dims].to_vec()).collect(),
        kl_trace,
        effective_perplexity: perplexity,
        warnings,
    }
}

// ---------------------------------------------------------------------------
