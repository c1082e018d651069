//! Non-autonomous evolution equations `B(t)u̇ + 𝒜(t)u = f`, `u(0) = u0`, on
//! finite-dimensional Gelfand triples, with maximal-regularity diagnostics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evolve;
pub mod fem;
pub mod forms;
pub mod linalg;
pub mod oracle;
pub mod par;
pub mod quadrature;
pub mod quasilinear;
pub mod sqrtop;
pub mod suite;
pub mod triple;

pub use error::{Error, Result};
