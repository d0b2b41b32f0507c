//! Ergodic interference alignment over K-user Gaussian interference channels,
//! with the two-phase delayed-feedback schemes built on top of it.

pub mod baseline;
pub mod channel;
pub mod delayed_csit;
pub mod episode;
pub mod error;
pub mod metrics;
pub mod output_feedback;
pub mod scheme;
pub mod signal;
pub mod sim;
pub mod verify;

pub use channel::{ChannelMatrix, PairedChannels, PairingScale, QuantizerConfig, SystemConfig};
pub use episode::{DofLedgerEntry, PairingMode};
pub use error::{Degeneracy, Error, Result};
pub use metrics::{dof_formulas, model_rate, DofFormulas, DofReport, LinearObservationModel};
pub use scheme::{Scheme, SchemeOptions, SchemeRunner};
