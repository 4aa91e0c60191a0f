// NaN-rejecting checks are spelled `!(x > 0.0)`; oracle constants keep all their digits.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod calibration;
pub mod classical;
pub mod config;
pub mod drivers;
pub mod error;
pub mod hyperelastic;
pub mod io;
pub mod lm;
pub mod synth;
pub mod tensor;
pub mod visco;

pub use error::{Error, Result};
