#![cfg_attr(not(test), no_std)]
extern crate alloc;

pub mod bounds;
pub mod coupling;
pub mod ensemble;
pub mod error;
pub mod geometry;
pub mod kernel;
pub mod math;
pub mod points;
pub mod rng;
pub mod transport;

pub use error::{Error, Result};
pub use points::Points;
