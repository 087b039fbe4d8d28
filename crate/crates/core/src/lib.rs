//! Traffic equilibria in the Beckmann and stable-dynamics models.
//!
//! The dual problem `min_{t ≥ t̄} γψ(t/γ) + Σ_e σ*_e(t_e)` is minimized with
//! the universal method of similar triangles; primal edge flows are recovered
//! by averaging oracle flows, and every iterate carries a computable duality
//! gap.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod char_fn;
pub mod cli;
pub mod equilibrium;
pub mod error;
pub mod frank_wolfe;
pub mod link_cost;
pub mod network;
pub mod shortest;
pub mod umst;

pub use error::{Error, ParseError, Result};
