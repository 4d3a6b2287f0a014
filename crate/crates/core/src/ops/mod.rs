//! Differentiable operations recorded on a [`Tape`](crate::Tape).

pub mod conv;
pub mod elementwise;
pub mod index;
pub mod linalg;
pub mod norm;
pub mod resample;
pub mod scan;
