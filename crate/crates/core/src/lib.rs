//! Passive tracer transport in Markov Gaussian velocity fields.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod corrector;
pub mod field;
pub mod kubo;
pub mod quadrature;
pub mod rng;
pub mod snapshot;
pub mod spectrum;
pub mod tracer;
pub mod validation;
