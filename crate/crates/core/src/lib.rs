//! Core of the wireless body-area-network monitor: ECG/EEG synthesis,
//! FIR denoising and analytics, the RF channel model and the telemetry
//! wire codec.

pub mod channel;
pub mod config;
pub mod dsp;
pub mod error;
pub mod frame;
pub mod signal;
pub mod wire;

pub use error::{Error, Result};
pub use frame::SampleFrame;
