//! Gradient-sign attacks under white-, gray- and black-box threat models.

mod averaged;
mod blackbox;
mod graybox;
mod noise;

use advkit_diff::{sign, Tensor};
use serde::{Deserialize, Serialize};

use crate::epochs::EpochSet;
use crate::error::{invalid, Result};
use crate::eval::{bca, rca, snr_db};
use crate::models::{Family, Model};

pub use averaged::{averaged_attack, AveragedAttack, AveragingMode};
pub use blackbox::{
    balance_by_downsampling, fit_blackbox_substitute, ufgsm_blackbox, BlackBoxConfig, BlackBoxSubstitute, ModelOracle,
    Oracle,
};
pub use graybox::{holdout_split, train_substitute, ufgsm_graybox};
pub use noise::random_noise;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    WhiteBox,
    GrayBox,
    BlackBox,
    RandomNoise,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::WhiteBox => "white_box",
            AttackKind::GrayBox => "gray_box",
            AttackKind::BlackBox => "black_box",
            AttackKind::RandomNoise => "random_noise",
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "white_box" | "whitebox" | "white" => Ok(AttackKind::WhiteBox),
            "gray_box" | "graybox" | "gray" | "grey" => Ok(AttackKind::GrayBox),
            "black_box" | "blackbox" | "black" => Ok(AttackKind::BlackBox),
            "random_noise" | "noise" => Ok(AttackKind::RandomNoise),
            _ => Err(invalid(format!("unknown attack {s:?}"))),
        }
    }
}

/// Attack hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Substitute family for gray/black-box attacks; defaults to the target's.
    #[serde(default)]
    pub substitute: Option<Family>,
    /// Augmentation step of the black-box loop.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Augmentation rounds of the black-box loop.
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    /// Label budget for black-box queries; defaults to `|S| · 2^N`.
    #[serde(default)]
    pub query_budget: Option<usize>,
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_lambda() -> f64 {
    0.5
}

fn default_iterations() -> usize {
    2
}

impl AttackSpec {
    pub fn new(kind: AttackKind, epsilon: f64) -> Self {
        Self {
            kind,
            epsilon,
            substitute: None,
            lambda: default_lambda(),
            iterations: default_iterations(),
            seed: 0,
            query_budget: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)?;
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("lambda {} must be positive", self.lambda)));
        }
        Ok(())
    }
}

pub(crate) fn check_epsilon(eps: f64) -> Result<()> {
    if eps >= 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("epsilon {eps} must be a finite value >= 0")))
    }
}

/// Clean and attacked accuracy of a target on labelled epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub clean_rca: f64,
    pub clean_bca: f64,
    pub adv_rca: f64,
    pub adv_bca: f64,
}

#[derive(Clone, Debug)]
pub struct AttackResult {
    pub kind: AttackKind,
    pub epsilon: f64,
    pub adversarial: EpochSet,
    /// Largest `|x̃ - x|` per epoch.
    pub max_deviation: Vec<f64>,
    pub snr_db: f64,
    pub scores: Option<Scores>,
    /// Labels the attacker's model (target or substitute) assigned to the
    /// clean epochs.
    pub attacker_labels: Vec<usize>,
    /// Fraction of clean epochs where a substitute agrees with the target.
    pub substitute_agreement: Option<f64>,
    /// Oracle labels consumed (black-box only).
    pub queries: usize,
    /// Size of the substitute's training set after each round (black-box).
    pub dataset_sizes: Vec<usize>,
}

impl AttackResult {
    pub(crate) fn new(kind: AttackKind, epsilon: f64, clean: &EpochSet, adversarial: EpochSet, attacker_labels: Vec<usize>) -> Result<Self> {
        Ok(Self {
            kind,
            epsilon,
            max_deviation: max_deviation(clean, &adversarial),
            snr_db: snr_db(clean, &adversarial)?,
            adversarial,
            scores: None,
            attacker_labels,
            substitute_agreement: None,
            queries: 0,
            dataset_sizes: vec![],
        })
    }

    /// Fills `scores` (if `clean` is labelled) and, for transfer attacks,
    /// the substitute's agreement with `target`.
    pub fn score(&mut self, target: &Model, clean: &EpochSet, substitute: bool) -> Result<()> {
        let clean_pred = target.predict(clean)?.labels;
        if substitute && !self.attacker_labels.is_empty() {
            let same = clean_pred.iter().zip(&self.attacker_labels).filter(|(a, b)| a == b).count();
            self.substitute_agreement = Some(same as f64 / clean_pred.len().max(1) as f64);
        }
        if clean.labels().iter().all(|&l| l >= 0) && !clean.is_empty() {
            let truth = clean.targets()?;
            let adv_pred = target.predict(&self.adversarial)?.labels;
            let k = clean.n_classes();
            self.scores = Some(Scores {
                clean_rca: rca(&clean_pred, &truth)?,
                clean_bca: bca(&clean_pred, &truth, k).unwrap_or(f64::NAN),
                adv_rca: rca(&adv_pred, &truth)?,
                adv_bca: bca(&adv_pred, &truth, k).unwrap_or(f64::NAN),
            });
        }
        Ok(())
    }
}

/// Largest absolute coordinate change per epoch, in `f64`.
pub fn max_deviation(clean: &EpochSet, adversarial: &EpochSet) -> Vec<f64> {
    (0..clean.len())
        .map(|i| {
            clean
                .epoch(i)
                .iter()
                .zip(adversarial.epoch(i))
                .fold(0.0f64, |m, (&a, &b)| m.max((b as f64 - a as f64).abs()))
        })
        .collect()
}

/// `x + step · sign(g)` coordinatewise.
pub fn sign_step(x: &Tensor<f32>, grad: &Tensor<f32>, step: f64) -> Tensor<f32> {
    let s = step as f32;
    let data = x.data().iter().zip(grad.data()).map(|(&v, &g)| v + s * sign(g)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape as x")
}

/// One gradient-sign step on `x` against `model` at the given labels.
pub fn gradient_sign(model: &Model, x: &EpochSet, labels: &[usize], eps: f64) -> Result<EpochSet> {
    check_epsilon(eps)?;
    let (_, grad) = model.loss_and_input_gradient(x.data(), labels, None)?;
    x.with_data(sign_step(x.data(), &grad, eps))
}

/// FGSM with the true labels of `x`.
pub fn fgsm(model: &Model, x: &EpochSet, eps: f64) -> Result<AttackResult> {
    check_epsilon(eps)?;
    let y = x.targets()?;
    let adv = gradient_sign(model, x, &y, eps)?;
    let mut r = AttackResult::new(AttackKind::WhiteBox, eps, x, adv, y)?;
    r.score(model, x, false)?;
    Ok(r)
}

/// FGSM with labels replaced by the model's own predictions.
pub fn ufgsm_whitebox(model: &Model, x: &EpochSet, eps: f64) -> Result<AttackResult> {
    check_epsilon(eps)?;
    let y = model.predict(x)?.labels;
    let adv = gradient_sign(model, x, &y, eps)?;
    let mut r = AttackResult::new(AttackKind::WhiteBox, eps, x, adv, y)?;
    r.score(model, x, false)?;
    Ok(r)
}

/// Adversarials crafted by UFGSM on `substitute`, without scoring.
pub fn transfer_attack(kind: AttackKind, substitute: &Model, x: &EpochSet, eps: f64) -> Result<AttackResult> {
    check_epsilon(eps)?;
    let y = substitute.predict(x)?.labels;
    let adv = gradient_sign(substitute, x, &y, eps)?;
    AttackResult::new(kind, eps, x, adv, y)
}
