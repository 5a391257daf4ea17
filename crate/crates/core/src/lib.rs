//! Exact planning for finite discounted MDPs over a fixed forecast horizon.
//!
//! The crate provides the pieces of a rolling-horizon control stack and the
//! oracles to check them against each other:
//!
//! - [`model`] — model definition, validation, JSON schema, seeded random
//!   generation, and next-state sampling.
//! - [`horizon`] — finite-horizon policies in remaining-horizon order, exact
//!   evaluation, the one-step backup operator, backward induction,
//!   switchable-action sets, and the strict-improvement predicate.
//! - [`switching`] — multi-policy switching, candidate-set generation, and
//!   the synchronous / asynchronous offline improvement drivers.
//! - [`chain`] — induced-chain communication classes, communicating-model
//!   verdicts, infinite-horizon evaluation, and rolling-horizon error curves.
//! - [`online`] — the online controller that improves its policy only at the
//!   visited state, with guarded supervisor feedback and post-hoc
//!   local-optimality verification.
//!
//! Everything is exact (no sampling-based evaluation) and deterministic given
//! seeds. With the default `parallel` feature, candidate evaluation and
//! exhaustive policy enumeration run on the rayon pool; outputs are identical
//! either way.
//!
//! ```
//! use pips_core::fixtures::toggle2;
//! use pips_core::horizon::backward_induction;
//!
//! let model = toggle2();
//! let (values, _policy) = backward_induction(&model, 2, None).unwrap();
//! assert_eq!(values.final_row(), &[2.0, 3.0]);
//! ```

#![forbid(unsafe_code)]

pub mod chain;
pub mod error;
pub mod fixtures;
pub mod horizon;
pub mod model;
pub mod online;
mod par;
pub mod rng;
pub mod switching;

pub use error::{PipsError, Result};
pub use model::{ActionId, MdpModel, StateId};
pub use rng::RngStream;

/// Formats a number with 12 significant digits, the convention for every
/// printed table and CSV cell (keeps diffs against exact oracles meaningful).
pub fn fmt_significant(value: f64) -> String {
    format!("{value:.11e}")
}
