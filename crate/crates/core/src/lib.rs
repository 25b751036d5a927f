//! Gait recognition with silhouette-level motion extraction (SiMo) and
//! feature-level motion enhancement (FeMo) on top of a small 3-D
//! convolutional backbone.

pub mod backbone;
pub mod checkpoint;
pub mod error;
pub mod evaluation;
pub mod femo;
pub mod gaitdata;
pub mod losses;
pub mod simo;
pub mod training;

pub use error::{Error, Result};
