//! Central finite-difference verification of hand-derived gradients.
//!
//! The checker is the independent oracle for every BPTT implementation in
//! this crate: it knows nothing about how analytic gradients were computed,
//! it only re-evaluates the loss at perturbed parameters.

use super::matrix::Matrix;
use super::rng::Rng;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Perturbation size for the central difference.
    pub step: f64,
    /// Check every coordinate when the parameter count is at most this;
    /// otherwise check a random subsample of this many coordinates.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            max_coords: 2000,
            seed: 0,
        }
    }
}

/// Maximum relative error between `analytic` and central differences of
/// `loss_fn` over the checked coordinates.
///
/// `loss_fn` must be a pure, deterministic function of the parameter list.
/// Relative error per coordinate is |a - n| / max(1, |a|, |n|).
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    params: &[Matrix],
    analytic: &[Matrix],
    cfg: &GradCheckConfig,
) -> f64
where
    F: FnMut(&[Matrix]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "params/grads length mismatch");
    for (p, a) in params.iter().zip(analytic) {
        assert_eq!(p.shape(), a.shape(), "params/grads shape mismatch");
    }
    let mut scratch: Vec<Matrix> = params.to_vec();
    let sizes: Vec<usize> = params.iter().map(|p| p.data.len()).collect();
    let total: usize = sizes.iter().sum();

    let coords: Vec<usize> = if total <= cfg.max_coords {
        (0..total).collect()
    } else {
        let mut rng = Rng::derive(cfg.seed, "gradcheck");
        (0..cfg.max_coords).map(|_| rng.below(total)).collect()
    };

    let mut max_rel = 0.0f64;
    for flat in coords {
        // Map the flat index to (matrix, element).
        let mut idx = flat;
        let mut which = 0;
        while idx >= sizes[which] {
            idx -= sizes[which];
            which += 1;
        }
        let orig = scratch[which].data[idx];
        scratch[which].data[idx] = orig + cfg.step;
        let plus = loss_fn(&scratch);
        scratch[which].data[idx] = orig - cfg.step;
        let minus = loss_fn(&scratch);
        scratch[which].data[idx] = orig;

        let numeric = (plus - minus) / (2.0 * cfg.step);
        let a = analytic[which].data[idx];
        let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
        if rel > max_rel {
            max_rel = rel;
        }
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_matches_to_rounding() {
        // f(x) = x^2 at x = 3, analytic gradient 6.
        let params = vec![Matrix::from_vec(1, 1, vec![3.0])];
        let grads = vec![Matrix::from_vec(1, 1, vec![6.0])];
        let err = finite_diff_check(
            |p| p[0].data[0] * p[0].data[0],
            &params,
            &grads,
            &GradCheckConfig::default(),
        );
        assert!(err < 1e-9, "err {err}");
    }

    #[test]
    fn absolute_value_at_kink_fails_loudly() {
        // |x| at 0 is not differentiable; central differences report slope 0
        // against any claimed subgradient, documenting the checker's limits.
        let params = vec![Matrix::from_vec(1, 1, vec![0.0])];
        let grads = vec![Matrix::from_vec(1, 1, vec![1.0])];
        let err = finite_diff_check(
            |p| p[0].data[0].abs(),
            &params,
            &grads,
            &GradCheckConfig::default(),
        );
        assert!(err > 0.5, "err {err}");
    }

    #[test]
    fn subsampling_kicks_in_for_large_models() {
        let params = vec![Matrix::zeros(100, 100)];
        let grads = vec![Matrix::zeros(100, 100)];
        let cfg = GradCheckConfig {
            max_coords: 200,
            ..Default::default()
        };
        let mut calls = 0usize;
        let err = finite_diff_check(
            |p| {
                calls += 1;
                p[0].data.iter().sum::<f64>()
            },
            &params,
            &grads,
            &cfg,
        );
        // Gradient of a sum is 1 everywhere; claimed 0 gives error 1.
        assert!((err - 1.0).abs() < 1e-6);
        assert_eq!(calls, 400);
    }
}
