//! Operator-splitting toolkit built around degenerate preconditioned proximal
//! point iterations.
//!
//! The building blocks are block vectors over product spaces ([`spaces`]),
//! monotone operators given by resolvents and forward maps ([`operators`]),
//! and a generic fixed-point engine that evaluates T = (M + A)⁻¹M by block
//! forward substitution ([`ppp`]). Concrete splitting schemes — Douglas-
//! Rachford, Chambolle-Pock, relaxed/Peaceman-Rachford DRS, forward DRS and
//! its parallel and sequential generalizations — are assembled in [`schemes`],
//! each in two interchangeable forms: the block iteration for verification and
//! the direct reduced update for production. Linear-rate certificates live in
//! [`rates`], and [`bench`] carries a portfolio-optimization benchmark.

pub mod bench;
pub mod error;
pub mod operators;
pub mod ppp;
pub mod rates;
pub mod schemes;
pub mod spaces;

pub use error::{Error, Result};
