//! Forward/backward numeric kernels on raw slices.
//!
//! All kernels are generic over [`Real`](crate::Real); the autodiff graph
//! instantiates them at f32 and the gradient-check suite at f64.

pub mod conv;
pub mod deform;
pub mod losses;
pub mod resample;
pub mod sample;
pub mod shuffle;
