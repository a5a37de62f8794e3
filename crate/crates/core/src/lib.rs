//! Behavioral model of a ring-oscillator-based time-domain audio feature
//! extractor and the fixed-point GRU keyword classifier that consumes its
//! output.
//!
//! The signal chain mirrors the hardware block by block:
//!
//! ```text
//! PCM ─▶ VTC ─▶ SRO band-pass + PFD rectifier ─▶ PFM encoder ─▶ XOR/CIC TDC
//!     ─▶ β/α correction ─▶ log LUT ─▶ μ/σ normalizer ─▶ GRU-FC ─▶ argmax
//! ```
//!
//! [`ref_fex`] is the voltage-domain reference model used as an oracle for
//! the time-domain chain in [`td_fex`] and [`pfm_tdc`]. [`metrics`] holds the
//! measurement suite (sweeps, noise shaping, dynamic range, figure of merit,
//! accuracy).

pub mod error;
pub mod feature_file;
pub mod gru;
pub mod ini;
pub mod metrics;
pub mod pfm_tdc;
pub mod pipeline;
pub mod postproc;
pub mod ref_fex;
pub mod signal_io;
pub mod synth;
pub mod td_fex;

pub use error::{Error, Result};
pub use feature_file::{FeatureFile, Stage};
pub use gru::{GruFcWeights, Q6p8};
pub use pipeline::{FexModel, TdFex};
pub use postproc::{Calibration, FeatureVector};
pub use signal_io::{DatasetManifest, PcmClip};
pub use td_fex::{ChannelConfig, Fidelity};

/// Number of band-pass channels in the filterbank.
pub const N_CHANNELS: usize = 16;

/// Number of output classes (10 keywords, "Silence", "Unknown").
pub const N_CLASSES: usize = 12;
