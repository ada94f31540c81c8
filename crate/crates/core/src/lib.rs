//! Music tagging with a convolutional front end and a self-attention back
//! end, trained with noisy-student semi-supervision.
//!
//! The crate covers the whole pipeline: waveform loading and log-mel
//! features ([`dsp`]), waveform augmentation ([`augment`]), a small
//! autodiff engine ([`tensor`]), the tagging models ([`models`]), dataset
//! manifests and artist-level splits ([`data`]), supervised and
//! noisy-student training ([`train`]), metrics ([`eval`]) and the
//! command orchestration used by the CLI ([`commands`]).

pub mod augment;
pub mod commands;
pub mod config;
pub mod data;
pub mod dsp;
mod error;
pub mod eval;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
