//! Minimal dense linear algebra, nonlinearities, seeded initialization,
//! optimizers, and a finite-difference gradient checker.
//!
//! Design constraints observed throughout:
//! - 64-bit floats everywhere.
//! - Every operation is bit-deterministic: fixed accumulation order, no
//!   internal parallelism, a pinned PRNG algorithm ([`rng::Rng`]).
//! - Gradients elsewhere in the crate are hand-derived; [`gradcheck`] is the
//!   independent oracle that keeps them honest.

pub mod checkpoint;
pub mod gradcheck;
pub mod matrix;
pub mod optim;
pub mod rng;

pub use checkpoint::{fnv1a64, load_params, save_params, CheckpointError, LoadedParams};
pub use gradcheck::{finite_diff_check, GradCheckConfig};
pub use matrix::{
    binary_cross_entropy, init_params, sigmoid, softmax, InitScheme, Matrix, NumericsError,
};
pub use optim::{clip_global_norm, Optimizer, OptimizerKind, TrainConfig};
pub use rng::Rng;
