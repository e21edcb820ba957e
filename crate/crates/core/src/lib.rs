//! Multi-receiver automatic modulation recognition.
//!
//! The crate covers the whole pipeline used to compare local, centralized and
//! distributed recognition regimes over a set of receivers observing the same
//! transmitter:
//!
//! * [`modulation`] synthesizes baseband frames for eight digital schemes.
//! * [`channel`] applies per-receiver multipath, offsets and noise.
//! * [`dataset`] persists multi-receiver records in a little-endian file format.
//! * [`nn`] is a small CPU neural-network kernel with reverse-mode gradients.
//! * [`models`] builds the VTCNN2-1D backbone and the feature-fusion heads.
//! * [`protocols`] implements the decision rules and the bandwidth model.
//! * [`simnet`] runs message-level episodes with exact payload accounting.
//! * [`metrics`] computes accuracy, macro-F1 and F1-vs-SNR curves and writes CSV.
//! * [`experiment`] ties everything together into train/evaluate pipelines.

pub mod channel;
pub mod dataset;
pub mod experiment;
pub mod metrics;
pub mod models;
pub mod modulation;
pub mod nn;
pub mod protocols;
pub mod seed;
pub mod simnet;

pub use modulation::{IqFrame, ModulationType, FRAME_LEN, NUM_CLASSES};
