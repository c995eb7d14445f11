//! Core library for the transient-diagnosis toolkit.
//!
//! Everything in this crate is deterministic, `f64`-only, and allocation-based:
//! given the same inputs and seeds it produces bit-identical results on every
//! platform. The crate is `no_std`-compatible (with `alloc`); the default
//! `std` feature only enables wall-clock timing in training logs and the
//! runtime-dispatched matrix kernels.
//!
//! Module map:
//!
//! * [`numerics`] — tensors, the deterministic RNG, layer primitives, the
//!   recorded-graph reverse-mode differentiator, and a finite-difference
//!   gradient oracle.
//! * [`datagen`] — synthetic loss-of-coolant transients with planted,
//!   machine-checkable structure (which channels carry signal, and how).
//! * [`model`] — the time-sequential residual CNN (input normalization,
//!   positional encoding, residual conv trunk, twin heads) and its losses.
//! * [`train`] — Adam, the minibatch loop, and the plateau termination rule.
//! * [`interpret`] — Grad-CAM++ over the size head and LIME over the
//!   location head.
//! * [`select`] — attribution superposition, outlier-filtered significance
//!   scores, and top-k channel selection.
//! * [`eval`] — accuracy / micro-F1 / average SSE and full-vs-reduced run
//!   comparison.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod datagen;
pub mod eval;
pub mod interpret;
pub mod model;
pub mod numerics;
pub mod select;
#[cfg(test)]
pub mod testutil;
pub mod train;
