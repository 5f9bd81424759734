//! Degradation-consistent paired training at desk scale.
//!
//! The crate bundles an image degradation pipeline ([`degrade`]), a
//! hand-differentiated two-layer classifier head ([`head`], [`grad`]), the
//! paired clean/degraded training objective ([`dcpt`]), a synthetic
//! real/fake image world with a frozen DCT-energy feature extractor
//! ([`toyworld`]), and the evaluation grid ([`eval`]).

pub mod cli;
pub mod dct;
pub mod dcpt;
pub mod degrade;
pub mod error;
pub mod eval;
pub mod grad;
pub mod head;
pub mod image;
pub mod toyworld;

pub use error::{Error, Result};
pub use image::Image;
