#![cfg_attr(not(feature = "std"), no_std)]
//! Transformation-robust LR↔HR correspondence learning and reference-based
//! image / video super-resolution.
//!
//! The crate is `no_std` + `alloc`. Everything here is pure computation on
//! in-memory tensors: file formats, the CLI and run orchestration live in the
//! `refsr` companion crate.
//!
//! # Layout
//!
//! - [`tensor`], [`image`] – dense NCHW tensors and H×W×C images.
//! - [`kernels`] – convolution, bilinear sampling, deformable aggregation,
//!   pixel shuffle and the loss kernels. Every kernel is generic over
//!   [`Real`] so the exact code used for training (f32) can be checked
//!   against finite differences in f64.
//! - [`graph`] – a small define-by-run reverse-mode autodiff graph.
//! - [`nn`] – parameter stores, layers and the Adam optimizer.
//! - [`descriptor`] – dense descriptor extraction, patch descriptors,
//!   argmax correspondence matching and softmax correlation volumes.
//! - [`homography`], [`contrastive`] – homography-synthesized supervision,
//!   triplet-margin and correlation-distillation training of the matcher.
//! - [`aggregation`] – correspondence-anchored deformable aggregation.
//! - [`image_sr`], [`video_sr`], [`flow`] – the restoration networks.
//! - [`data`] – bicubic resampling, procedural textures, pair synthesis and
//!   transformation-controlled benchmarks.
//! - [`metrics`] – PSNR, SSIM and average end-point error.
//!
//! # Features
//!
//! - `std` *(default)* – use the platform math library and `std` error
//!   integration. Without it the crate builds as `no_std` + `alloc` and
//!   uses `libm`.

extern crate alloc;

pub mod aggregation;
pub mod contrastive;
pub mod data;
pub mod descriptor;
pub mod error;
pub mod flow;
pub mod graph;
pub mod homography;
pub mod image;
pub mod image_sr;
pub mod kernels;
pub mod metrics;
pub mod nn;
pub mod real;
pub mod tensor;
pub mod video_sr;

pub use error::{Error, Result};
pub use image::ImageTensor;
pub use real::Real;
pub use tensor::Tensor;
