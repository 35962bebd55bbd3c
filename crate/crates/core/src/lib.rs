//! Declarative consistency rules compiled into differentiable losses.
//!
//! Rules are first-order statements over a classifier's label predictions
//! (for example, "contradiction is symmetric"). They can be checked on hard
//! predictions to measure how often a model contradicts itself, or relaxed
//! with a t-norm into a loss that training can minimize alongside the usual
//! cross-entropy.
//!
//! The pieces, bottom-up:
//!
//! - [`logic`]: the rule language, its parser and Boolean semantics.
//! - [`autodiff`]: a scalar expression tape with reverse-mode gradients.
//! - [`tnorm`]: lowering rules to soft truth values and log-space losses.
//! - [`classifier`]: a small MLP producing the label probabilities.
//! - [`metrics`]: global and conditional violation rates, coverage, cross tables.
//! - [`data`]: a synthetic interval-world corpus and the dataset file format.
//! - [`trainer`]: Adam and the two-stage constrained training loop.

pub mod autodiff;
pub mod classifier;
pub mod data;
pub mod logic;
pub mod metrics;
pub mod rules;
pub mod tnorm;
pub mod trainer;
