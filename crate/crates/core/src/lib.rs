//! Fixed-point inference engine and post-training quantization toolkit for
//! MobileNetV2-style fully convolutional face detectors.
//!
//! - [`fixedpoint`] -- Qm.n scalar arithmetic, saturation, integer-bit allocation
//! - [`nn`] -- dense tensors and float / fixed-point kernels
//! - [`model`] -- detector graph construction, storage formats, serialization
//! - [`quantizer`] -- activation profiling and uniform post-training quantization
//! - [`detection`] -- anchors, box codec, IoU, NMS, multi-scale detection
//! - [`loss`] -- detection loss, target assignment and its analytic gradient
//! - [`dataio`] -- FDDB annotations, pixmap images, bilinear resize
//! - [`eval`] -- detection matching and average precision

pub mod dataio;
pub mod detection;
pub mod error;
pub mod eval;
pub mod fixedpoint;
pub mod loss;
pub mod model;
pub mod nn;
pub mod quantizer;

pub use error::{Error, Result};
pub use fixedpoint::{QFormat, QScalar, Rounding};
pub use nn::{PadSpec, QTensor, Tensor};

/// Engine version string, read from `Cargo.toml` at compile time.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
