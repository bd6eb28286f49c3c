//! Spike-camera video reconstruction, super-resolution and motion
//! magnification on synthetic integrate-and-fire streams.

pub mod bsn;
pub mod config;
pub mod encoding;
pub mod error;
pub mod frame;
pub mod inr_sr;
pub mod magnify;
pub mod metrics;
pub mod mie;
pub mod pipeline;
pub mod spike_io;
pub mod spike_sim;

pub use diffkernel;
pub use error::{Error, Result};
pub use frame::Frame;
pub use spike_io::SpikeStream;
