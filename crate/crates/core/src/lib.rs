//! Numerical laboratory for the one-dimensional α-patch transport model
//! `ω_t + u[ω] ω_x = 0`, `u[ω] = -(-Δ)^{-α/2}`-type velocity with kernel
//! `|x - y|^{-γ}`, `γ = 1 - α`.

// `!(x > 0.0)` style guards are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod barrier;
pub mod biot_savart;
pub mod cli;
pub mod config;
pub mod model;
pub mod plot;
pub mod quadrature;
pub mod transport;
pub mod verification;
