//! Monte Carlo laboratory for degenerate SDEs
//!
//! ```text
//! dX_t = a(X_t) dt + B dL_t
//! ```
//!
//! driven by a pure-jump, stable-like Lévy process `L` whose small jumps are
//! truncated at a radius `δ`. Along every simulated path the crate carries the
//! Jacobi flow `J_t` and its inverse `K_t`, and from them builds the simplified
//! Malliavin matrix, directional Malliavin derivatives and Skorohod integrals.
//! The [`experiments`] and [`girsanov`] modules turn the resulting identities
//! and tail bounds into Monte Carlo statistics.
//!
//! Path-level work is parallelised with rayon when the `parallel` feature is
//! enabled (the default). Every path draws from its own counter-addressed
//! ChaCha stream and reductions run over index-ordered buffers, so results are
//! identical for any worker count.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditions;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod girsanov;
pub mod levy;
pub mod linalg;
pub mod malliavin;
pub mod parallel;
pub mod quad;
pub mod stats;

pub use error::{Error, Result};
pub use flow::{CatalogModel, FlowState, ModelSpec, Trajectory};
pub use levy::{JumpEvent, JumpPath, StableLikeMeasure};
pub use malliavin::MalliavinRecord;
pub use parallel::{Executor, SeedSequence};
