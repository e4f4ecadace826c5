//! Compound Gaussian least squares for linear inverse problems.
//!
//! A signal is modelled as `c = z ⊙ u` with `u` Gaussian and `z` a positive
//! scale field. Given measurements `y = A c + ν`, [`gcgls`] alternates a
//! closed-form or accelerated solve for `u` with projected or proximal
//! gradient steps in `z`; [`net`] unrolls the same iteration into a
//! trainable network with learned scale updates and covariance.
#![no_std]

extern crate alloc;

pub mod data;
pub mod error;
pub mod gcgls;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod regularizer;
pub mod scale_step;
pub mod sensing;
pub mod tikhonov;

pub use error::{Error, Result};
