//! Bin hierarchy method (BHM): reconstruct a smooth function from noisy
//! sampled integrals.
//!
//! Sampled values stream into `2^K` elementary histogram bins ([`accum`]),
//! which are pooled pairwise into a hierarchy of combined bins
//! ([`hierarchy`]). A polynomial spline is then fitted against the sampled
//! integrals of every usable hierarchy bin at once ([`splinefit`]), with
//! automatic knot placement and an optional smoothness constraint on the
//! highest derivative. Error bands come from the fit covariance, bootstrap
//! over partial histograms, or fit-evolution analysis ([`errors`]);
//! [`zerocheck`] guards against sign-problem data that is statistically
//! indistinguishable from zero, and [`transforms`] maps divergent or
//! semi-infinite targets onto a finite interval before sampling.
//!
//! The crate is `no_std`-compatible (requires `alloc`); disable the default
//! `std` feature for embedded use. File formats and the command-line front
//! end live in the companion `bhm-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod accum;
pub mod errors;
pub mod hierarchy;
pub mod splinefit;
pub mod testbed;
pub mod transforms;
pub mod zerocheck;

mod fmath;
mod lsq;

pub use nalgebra;
