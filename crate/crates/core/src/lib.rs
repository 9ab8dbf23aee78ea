//! Compiler that turns a declarative pipeline description (datasets,
//! objectives, platform constraints and a composition schedule) into trained,
//! resource-feasible data-plane models plus emitted backend programs.
//!
//! The stages are exposed as separate modules so they can be driven
//! individually:
//!
//! * [`frontend`] parses and validates pipeline spec files and the schedule grammar.
//! * [`data`] loads CSV datasets and synthesizes test data.
//! * [`models`] trains the candidate learners and computes metrics.
//! * [`search`] runs feasibility-constrained Bayesian optimization.
//! * [`backends`] holds the analytic resource and performance models.
//! * [`codegen`] emits backend programs and interprets them.
//! * [`composer`] combines multiple models under one schedule.
//! * [`driver`] ties the stages together for the command-line tool.

// `!(x > 0.0)` is how NaN gets rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backends;
pub mod codegen;
pub mod composer;
pub mod data;
pub mod driver;
pub mod frontend;
pub mod models;
pub mod search;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG used everywhere a seed is accepted.
pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
