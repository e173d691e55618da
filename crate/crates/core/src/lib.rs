//! Bit-reproducible floating-point summation and GroupBy aggregation.
//!
//! Floating-point addition is not associative, so the result of a parallel
//! or reordered sum depends on the execution schedule. This crate provides a
//! summation state based on multi-level error-free transformations whose
//! finalized result is identical down to the last bit for any input order,
//! chunking, lane width, thread count, or merge tree, together with a GroupBy
//! engine (hash aggregation over radix-partitioned input) that inherits the
//! same guarantee per group, and an exact-summation oracle for validating
//! accuracy bounds.

pub mod aggregate;
pub mod error;
pub mod float_core;
pub mod oracle;
pub mod repro;
pub mod rsum;
pub mod sum_buffer;
pub mod workload;

pub use error::Error;
pub use float_core::{FloatFormat, ReproScalar};
pub use repro::ReproValue;
pub use rsum::{RSumParams, RSumState};
pub use sum_buffer::{BufferPolicy, BufferedAccumulator};
