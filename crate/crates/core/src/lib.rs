//! Behavioral simulation of passive memristive crossbar perceptron hardware:
//! device physics, crossbar circuits, forming, write-and-verify tuning,
//! differential-pair inference, training, and benchmark evaluation.

// `!(x >= 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod crossbar;
pub mod device;
pub mod error;
pub mod forming;
pub mod mlp;
pub mod pipeline;
pub mod registry;
pub mod rng;
pub mod training;
pub mod tuning;

pub use error::{Result, SimError};
