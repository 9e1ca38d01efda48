//! Neural beamformers for IRS-assisted multi-user MISO downlinks.
//!
//! * [`lacl`]: a convolutional-LSTM graph neural network that predicts the
//!   next slot's IRS phases from users' LoS channel histories;
//! * [`iafnn`]: a fully-connected network mapping estimated effective
//!   channels to AP beams;
//! * [`dataset`] and [`train`]: training data generation, offline training and
//!   the online two-stage beamforming procedure.

pub mod dataset;
pub mod error;
pub mod features;
pub mod iafnn;
pub mod lacl;
pub mod layers;
pub mod train;

pub use error::{Error, Result};
pub use features::{build_feature_input, build_icsi_input, FeatureTensor, IcsiInput};
pub use iafnn::{IaFnn, IaFnnConfig};
pub use lacl::{LaClConfig, LaClGnn, PredictiveOutput};
