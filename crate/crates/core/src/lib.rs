//! Light field synthesis from a single image.
//!
//! A dilated, densely connected network predicts per-view appearance flow
//! from the luminance of the central view. The central image is first shifted
//! toward every angular position and then warped by that flow with a bilinear
//! sampler. Training matches the mean and standard deviation of the light
//! field, globally and per angular row and column, plus a smoothness penalty
//! on the flow.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod applications;
pub mod error;
pub mod flownet;
pub mod io;
pub mod lightfield;
pub mod losses;
pub mod numerics;
pub mod postprocess;
pub mod scene;
pub mod shifting;
pub mod training;
pub mod warping;

pub use error::{Error, Result};
