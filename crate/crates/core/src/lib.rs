#![cfg_attr(not(test), no_std)]
extern crate alloc;

pub mod accounting;
pub mod autodiff;
pub mod backbone;
pub mod embed;
pub mod error;
pub mod geometry;
pub mod heads;
pub mod model;
pub mod real;
pub mod rng;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
