//! Unrolled gradient-descent video super-resolution.
//!
//! The observation model `y_j = D_s H F_u x_t` is implemented by the pure
//! [`operators`]; [`unrolled`] composes them with learned priors from
//! [`networks`] into the recurrent reconstruction, [`training`] fits it end to
//! end and [`evaluation`] scores the results.

pub mod autodiff;
pub mod degradation;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod operators;
pub mod selftest;
pub mod networks;
pub mod tensor;
pub mod training;
pub mod unrolled;

pub use error::{Error, Result};
