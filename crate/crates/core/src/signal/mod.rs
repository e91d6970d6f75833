//! Preprocessing and feature transforms for epoch sets.

pub mod average;
pub mod csp;
pub mod filter;
pub mod normalize;
pub mod tfr;

pub use average::{average_epochs, group_indices, GroupingKey};
pub use csp::{csp_apply, csp_fit, CspProjection};
pub use filter::{bandpass, downsample};
pub use normalize::{normalize, Normalization};
pub use tfr::{morlet_map, stft, TimeFreqMap, DEFAULT_CYCLES};
