//! Contraction certificates and switching-controller design for bimodal
//! Filippov systems.
//!
//! The crate is organised bottom-up:
//!
//! * [`expr`]: expression parsing, evaluation and symbolic differentiation
//! * [`measures`]: matrix measures `μ1`, `μ2`, `μ∞` and their norms
//! * [`dynamics`]: controlled systems, switched controllers, closed loops
//! * [`filippov`]: event-driven Filippov and regularized simulation
//! * [`certify`]: grid certificates, decay checks, control effort
//! * [`synth`]: switching-surface construction and gain search
//! * [`config`]: project files and the built-in worked examples

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod filippov;
pub mod measures;
pub mod synth;

pub use error::{Error, Result};
