//! Desk-scale recurrent latent reasoning over a tiny multimodal
//! transformer, with detachable visual-semantic dual supervision, an
//! adaptive ROI feature pipeline, a synthetic five-tuple data builder, and
//! a diagnostic suite.

pub mod backbone;
pub mod checkpoint;
pub mod data;
pub mod diag;
pub mod error;
pub mod image;
pub mod io;
pub mod latent;
pub mod model;
pub mod numerics;
pub mod roi;
pub mod scaffold;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod util;

pub use error::{Error, Result};
pub use scalar::{Dtype, Real};
pub use tensor::Tensor;
