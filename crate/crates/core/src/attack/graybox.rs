use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_epsilon, transfer_attack, AttackKind, AttackResult};
use crate::epochs::EpochSet;
use crate::error::{invalid, Result};
use crate::models::{build_model, ArchSpec, Model};
use crate::train::{train_model, TrainConfig};

/// Stratified `(train, val)` index split holding out `val_fraction` of
/// every class.
pub fn holdout_split(labels: &[usize], classes: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        let n_val = ((members.len() as f64 * val_fraction).round() as usize).min(members.len().saturating_sub(1));
        val.extend_from_slice(&members[..n_val]);
        train.extend_from_slice(&members[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Trains a fresh substitute on `data` with a stratified validation holdout.
pub fn train_substitute(arch: &ArchSpec, data: &EpochSet, val_fraction: f64, cfg: &TrainConfig, seed: u64) -> Result<Model> {
    let labels = data.targets()?;
    let (tr, va) = holdout_split(&labels, data.n_classes(), val_fraction, seed);
    if tr.is_empty() || va.is_empty() {
        return Err(invalid(format!("{} labelled epochs are too few to train a substitute", data.len())));
    }
    let model = build_model(arch, seed)?;
    let cfg = TrainConfig { seed, ..cfg.clone() };
    Ok(train_model(model, &data.select(&tr), &data.select(&va), &cfg)?.0)
}

/// Trains a substitute on the target's training data, then transfers
/// UFGSM adversarials crafted on it to `target`.
#[allow(clippy::too_many_arguments)]
pub fn ufgsm_graybox(
    train_data: &EpochSet,
    substitute_arch: &ArchSpec,
    target: &Model,
    x: &EpochSet,
    eps: f64,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<AttackResult> {
    check_epsilon(eps)?;
    let substitute = train_substitute(substitute_arch, train_data, 0.25, cfg, seed)?;
    let mut r = transfer_attack(AttackKind::GrayBox, &substitute, x, eps)?;
    r.score(target, x, true)?;
    Ok(r)
}
