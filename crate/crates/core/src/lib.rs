//! Knowledge-tracing toolkit.
//!
//! Implements two sequence models and two classical baselines for predicting
//! student responses from interaction histories, together with the numerical
//! substrate (hand-derived backpropagation through time, EM fitting, gradient
//! verification) and a probe suite for inspecting what the models learn:
//!
//! - [`dkt`] — single-layer LSTM over one-hot (skill, correctness) inputs with
//!   per-skill output logits, full intermediate tracing, and a frozen-recurrent
//!   training mode.
//! - [`dkvmn`] — dynamic key-value memory network: static key memory attended
//!   by skill embeddings, dynamic value memory updated by erase/add vectors.
//! - [`baselines`] — per-skill Bayesian knowledge tracing (two-state HMM, EM
//!   fit) and performance factors analysis (count-feature logistic regression).
//! - [`dataset`] — CSV ingestion, tag compaction, synthetic data generation,
//!   the spread-shuffle transform, and student-level k-fold splits.
//! - [`metrics`] — AUC / r² and the cross-validated evaluation driver.
//! - [`diagnostics`] — activation t-SNE, prediction-delta matrices, oracle
//!   student simulation, post-streak prediction vectors, memory-change maps,
//!   and SVG renderings.
//! - [`numerics`] — dense matrices, nonlinearities, seeded initialization,
//!   SGD/Adam, a finite-difference gradient checker, and the checkpoint format.
//!
//! Everything is 64-bit, seeded, and bit-deterministic: the same inputs and
//! seeds reproduce the same bytes on any platform.

pub mod baselines;
pub mod dataset;
pub mod diagnostics;
pub mod dkt;
pub mod dkvmn;
pub mod metrics;
pub mod numerics;
