//! Dot-diffusion halftoning with class tilings built from a human-visual-system
//! driven search.

pub mod classtiling;
pub mod dbs;
pub mod dotdiffusion;
pub mod error;
pub mod hvs;
pub mod image;
pub mod optimizer;
pub mod pnm;
pub mod spectrum;

pub use error::{Error, PnmError, Result};
pub use image::{BinaryImage, GrayImage, L};
