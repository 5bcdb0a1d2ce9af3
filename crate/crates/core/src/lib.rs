//! Kac hard-sphere collision process on the energy/momentum sphere, its
//! conjugate process, exact samplers for the uniform measure, spectral-gap
//! estimators and quantitative chaos checks.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chaos;
pub mod error;
pub mod kinematics;
pub mod process;
pub mod rng;
pub mod sampling;
pub mod spectral;
pub mod stats;
pub mod verify;

pub use error::{KacError, Result};
