//! Machine-generated music detection toolkit.

pub mod dataset;
mod error;
pub mod fidelity;
pub mod grid;
pub mod io;
pub mod models;
pub mod multimodal;
pub mod train;
pub mod xai;

pub use error::{Error, Result};
