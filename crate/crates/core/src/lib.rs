//! Link-level building blocks for IRS-assisted multi-user MISO downlinks.
//!
//! The crate covers the physical layer of the simulator:
//!
//! * [`geometry`]: AP/IRS placement, link angles and random-walk user mobility.
//! * [`channel`]: steering vectors, LoS channel assembly, Rician sampling and
//!   channel-estimation error injection.
//! * [`metrics`]: SINR, weighted sum-rate and pilot-overhead accounting.
//! * [`baselines`]: the benchmark beamformers (fractional-programming WSR
//!   maximization, stale-CSI FP and random phases with MRT).
//! * [`scenario`]: a linear-unit description of a full deployment tying the
//!   pieces together.

pub mod baselines;
pub mod channel;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};

/// Complex scalar used throughout the crate.
pub type C64 = nalgebra::Complex<f64>;

/// Dense complex matrix; vectors are stored as single-column matrices.
pub type ComplexMatrix = nalgebra::DMatrix<C64>;
