//! Core library for a desk-scale preference-optimization laboratory.
//!
//! Everything in this crate is pure computation over `f64` scalars and
//! token sequences: a tape-based reverse-mode autodiff engine with a
//! stop-gradient primitive ([`autodiff`]), the DPO / LPO / LPO-ste loss
//! family with closed-form gradients ([`losses`]), a finite-difference
//! gradient-check harness ([`gradcheck`]), a margin-space gradient-descent
//! simulator ([`dynamics`]), toy sequence policies ([`policy`]), preference
//! pair builders ([`pairs`]), and a training loop ([`trainer`]).
//!
//! The crate is `no_std`-compatible (with `alloc`); all IO, file formats,
//! and the command-line interface live in the companion `lpo-cli` crate.
//! Scalar math routes through [`libm`] so that results are bit-identical
//! across platforms and between `std` and `no_std` builds.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod dynamics;
pub mod fixtures;
pub mod gradcheck;
pub mod losses;
pub mod math;
pub mod pairs;
pub mod policy;
pub mod rng;
pub mod trainer;

pub use autodiff::{Gradients, Tape, Var};
pub use losses::{LossBreakdown, LossKind, LossParams, MarginPair, SteWeighting};
