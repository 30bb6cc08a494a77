//! Multi-exposure HDR deghosting: exposure-stack ingestion, an attention +
//! wavelet-pyramid reconstruction network, training, and quality metrics —
//! all on a small self-contained f32 autodiff engine.

pub mod error;
pub mod gradcheck;
pub mod hdr;
pub mod loss;
pub mod mem;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor};
