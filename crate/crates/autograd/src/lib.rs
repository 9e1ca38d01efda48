//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Computations are recorded on a [`Tape`] as they run; [`Tape::backward`]
//! then walks the recording in reverse to produce exact gradients. Complex
//! quantities are carried as pairs of real tensors ([`complex::CVar`]), which
//! is all the real-valued losses in this workspace need.
//!
//! - [`tensor`]: the dense row-major tensor type
//! - [`tape`]: the recording, variables and all primitives with their adjoints
//! - [`complex`]: complex arithmetic over real pairs
//! - [`params`]: named parameter collections
//! - [`adam`]: the adaptive-moment optimizer
//! - [`gradcheck`]: central-difference gradient checking
//! - [`checkpoint`]: versioned binary parameter files

pub mod adam;
pub mod checkpoint;
pub mod complex;
pub mod error;
pub mod gradcheck;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::Adam;
pub use complex::CVar;
pub use error::{Error, Result};
pub use params::{ParamId, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
