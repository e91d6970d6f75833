//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::SynthSpec;
use crate::attack::AttackSpec;
use crate::error::{invalid, Result};
use crate::models::Family;
use crate::signal::Normalization;
use crate::train::{SplitKind, SplitPlan, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    /// An `EEGB` container file.
    File { path: PathBuf },
    /// Generated epochs; the seed is derived from the master seed.
    Synth(SynthSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum PreprocessStep {
    Bandpass { low_hz: f64, high_hz: f64 },
    Downsample { factor: usize },
    Normalize(Normalization),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Dataset label in the report; defaults to the file stem or "synthetic".
    #[serde(default)]
    pub name: Option<String>,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub preprocess: Vec<PreprocessStep>,
    pub architectures: Vec<Family>,
    #[serde(default = "default_split")]
    pub split: SplitPlan,
    #[serde(default)]
    pub train: TrainConfig,
    pub attacks: Vec<AttackSpec>,
    /// Sweep values; when empty each attack uses its own `epsilon`.
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
}

fn default_split() -> SplitPlan {
    SplitPlan::new(SplitKind::WithinSubject)
}

fn default_output() -> PathBuf {
    PathBuf::from("advkit-out")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.architectures.is_empty() {
            return Err(invalid("configuration lists no architecture"));
        }
        if self.attacks.is_empty() {
            return Err(invalid("configuration lists no attack"));
        }
        for a in &self.attacks {
            a.validate()?;
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
            return Err(invalid(format!("epsilon {e} must be a finite value >= 0")));
        }
        self.train.validate()
    }

    pub fn dataset_name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match &self.dataset {
            DatasetSource::File { path } => {
                path.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
            }
            DatasetSource::Synth(_) => "synthetic".into(),
        }
    }

    /// `(attack, ε)` cells in grid order.
    pub fn attack_cells(&self) -> Vec<(AttackSpec, f64)> {
        self.attacks
            .iter()
            .flat_map(|a| {
                let eps = if self.epsilons.is_empty() { vec![a.epsilon] } else { self.epsilons.clone() };
                eps.into_iter().map(move |e| (a.clone(), e))
            })
            .collect()
    }
}
