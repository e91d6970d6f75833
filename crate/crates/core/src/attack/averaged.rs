use serde::{Deserialize, Serialize};

use super::{check_epsilon, gradient_sign, AttackKind, AttackResult};
use crate::epochs::EpochSet;
use crate::error::{invalid, Result};
use crate::models::Model;
use crate::signal::average::{average_groups, group_indices};
use crate::signal::GroupingKey;

/// Where the perturbation is computed relative to epoch averaging.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AveragingMode {
    /// Perturb each single epoch and classify the singles.
    Pse,
    /// Perturb each single epoch, then average the attacked singles.
    Aae,
    /// Perturb the averaged epoch directly.
    Pae,
}

impl std::str::FromStr for AveragingMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PSE" => Ok(Self::Pse),
            "AAE" => Ok(Self::Aae),
            "PAE" => Ok(Self::Pae),
            _ => Err(invalid(format!("unknown averaging mode {s:?}"))),
        }
    }
}

/// Clean reference epochs and the attack on them.
#[derive(Clone, Debug)]
pub struct AveragedAttack {
    pub mode: AveragingMode,
    /// Singles for PSE, group means for AAE and PAE.
    pub reference: EpochSet,
    pub result: AttackResult,
}

/// White-box UFGSM against a model trained on averaged epochs, applied
/// before or after averaging `singles` in groups of `group_size`.
pub fn averaged_attack(
    model: &Model,
    singles: &EpochSet,
    group_size: usize,
    key: &GroupingKey,
    mode: AveragingMode,
    eps: f64,
) -> Result<AveragedAttack> {
    check_epsilon(eps)?;
    let groups = group_indices(singles, group_size, key)?;
    let averaged = average_groups(singles, &groups)?;
    let (reference, adversarial, labels) = match mode {
        AveragingMode::Pse | AveragingMode::Aae => {
            let y = model.predict(singles)?.labels;
            let adv = gradient_sign(model, singles, &y, eps)?;
            if mode == AveragingMode::Pse {
                (singles.clone(), adv, y)
            } else {
                let labels = model.predict(&averaged)?.labels;
                (averaged, average_groups(&adv, &groups)?, labels)
            }
        }
        AveragingMode::Pae => {
            let y = model.predict(&averaged)?.labels;
            let adv = gradient_sign(model, &averaged, &y, eps)?;
            (averaged, adv, y)
        }
    };
    let mut result = AttackResult::new(AttackKind::WhiteBox, eps, &reference, adversarial, labels)?;
    result.score(model, &reference, false)?;
    Ok(AveragedAttack { mode, reference, result })
}
