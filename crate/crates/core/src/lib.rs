//! Numerical core for anisotropic heat-kernel estimates of semi-elliptic
//! operators. `no_std` with `alloc`.

#![no_std]

extern crate alloc;

pub mod aniso;
pub mod error;
pub mod estimator;
pub mod grid;
pub mod kernel;
pub mod legendre;
pub mod linalg;
pub mod operator;
pub mod optim;
pub mod rng;

pub use error::{Error, Result};
