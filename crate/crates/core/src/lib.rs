//! Numerical core of the HC-Mamba segmentation network.
//!
//! A small dense tensor engine with reverse-mode differentiation, diagonal
//! state-space models with zero-order-hold discretization and selective scans,
//! four-direction 2-D scanning, dilated and depthwise-separable convolutions,
//! the dual-branch HC-SSM block and the full U-shaped network, plus the
//! composite segmentation loss and evaluation metrics.
//!
//! The crate is `no_std` (it needs `alloc`). Enable the `std` feature to use
//! the platform's float intrinsics instead of `libm`.
#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
#[macro_use]
extern crate std;

pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod scan2d;
pub mod ssm;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
