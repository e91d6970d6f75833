//! Adversarial attacks on CNN classifiers of multichannel EEG epochs.
//!
//! Epochs are `N x C x T` arrays ([`EpochSet`]). Models are layer chains on
//! the [`advkit_diff`] engine, so gradients with respect to the raw input are
//! available for every architecture, including the spectrogram pipeline.

pub mod attack;
pub mod epochs;
pub mod error;
pub mod eval;
pub mod harness;
pub mod models;
pub mod signal;
pub mod train;

pub use epochs::{EpochSet, UNLABELED};
pub use error::{Error, Result};
