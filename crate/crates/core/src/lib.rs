//! Symmetric exclusion with slow bonds across a smooth membrane on the torus.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with the range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod domain;
pub mod engine;
pub mod generator;
pub mod geometry;
pub mod harness;
pub mod lattice;
pub mod linalg;
