use std::cell::Cell;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_epsilon, gradient_sign, transfer_attack, AttackKind, AttackResult};
use crate::attack::graybox::train_substitute;
use crate::epochs::EpochSet;
use crate::error::{invalid, Error, Result};
use crate::models::{ArchSpec, Model};
use crate::train::TrainConfig;

/// Query-only access to a classifier.
pub trait Oracle {
    /// Predicted labels of `x`.
    fn query(&self, x: &EpochSet) -> Result<Vec<usize>>;
    /// Labels answered so far.
    fn queries(&self) -> usize;
}

/// Wraps a model as a label oracle with an optional query budget.
pub struct ModelOracle<'a> {
    model: &'a Model,
    budget: Option<usize>,
    used: Cell<usize>,
}

impl<'a> ModelOracle<'a> {
    pub fn new(model: &'a Model, budget: Option<usize>) -> Self {
        Self { model, budget, used: Cell::new(0) }
    }

    pub fn model(&self) -> &Model {
        self.model
    }
}

impl Oracle for ModelOracle<'_> {
    fn query(&self, x: &EpochSet) -> Result<Vec<usize>> {
        let requested = self.used.get() + x.len();
        if let Some(budget) = self.budget {
            if requested > budget {
                return Err(Error::QueryBudget { budget, requested });
            }
        }
        let labels = self.model.predict(x)?.labels;
        self.used.set(requested);
        Ok(labels)
    }

    fn queries(&self) -> usize {
        self.used.get()
    }
}

/// Black-box loop settings.
#[derive(Clone, Debug)]
pub struct BlackBoxConfig {
    pub lambda: f64,
    pub iterations: usize,
    /// Label budget; `None` means `|S| · 2^N`.
    pub query_budget: Option<usize>,
    pub train: TrainConfig,
    pub seed: u64,
}

impl BlackBoxConfig {
    pub fn budget_for(&self, seed_len: usize) -> usize {
        self.query_budget.unwrap_or(seed_len.saturating_mul(1usize << self.iterations.min(usize::BITS as usize - 1)))
    }
}

/// Indices keeping every class at the minority class count; the surplus
/// of larger classes is dropped at random.
pub fn balance_by_downsampling(labels: &[usize], classes: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![vec![]; classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let present: Vec<&mut Vec<usize>> = by_class.iter_mut().filter(|m| !m.is_empty()).collect();
    let keep = present.iter().map(|m| m.len()).min().unwrap_or(0);
    let mut out = Vec::new();
    for members in present {
        members.shuffle(&mut rng);
        out.extend_from_slice(&members[..keep]);
    }
    out.sort_unstable();
    out
}

fn labelled(set: &EpochSet, labels: &[usize]) -> Result<EpochSet> {
    set.with_labels(labels.iter().map(|&l| l as i16).collect())
}

/// A substitute trained from oracle labels, with its query accounting.
#[derive(Clone, Debug)]
pub struct BlackBoxSubstitute {
    pub model: Model,
    /// Oracle labels consumed.
    pub queries: usize,
    /// Size of the training set after balancing and after each round.
    pub dataset_sizes: Vec<usize>,
}

/// Trains a substitute by oracle labelling of `seed_set` and sign-step
/// augmentation, doubling the labelled set every round.
pub fn fit_blackbox_substitute(
    oracle: &dyn Oracle,
    seed_set: &EpochSet,
    substitute_arch: &ArchSpec,
    cfg: &BlackBoxConfig,
) -> Result<BlackBoxSubstitute> {
    if !(cfg.lambda > 0.0 && cfg.lambda.is_finite()) {
        return Err(invalid(format!("lambda {} must be positive", cfg.lambda)));
    }
    if seed_set.is_empty() {
        return Err(invalid("black-box seed set is empty"));
    }
    let k = substitute_arch.classes;
    let start = oracle.queries();
    let first = oracle.query(seed_set)?;
    if let Some(&bad) = first.iter().find(|&&l| l >= k) {
        return Err(invalid(format!("oracle answered label {bad} outside [0, {k})")));
    }
    let keep = balance_by_downsampling(&first, k, cfg.seed);
    let kept: Vec<usize> = keep.iter().map(|&i| first[i]).collect();
    let mut data = labelled(&seed_set.select(&keep), &kept)?;
    let mut sizes = vec![data.len()];
    let mut model = train_substitute(substitute_arch, &data, 0.2, &cfg.train, cfg.seed)?;
    for round in 1..=cfg.iterations {
        let y = data.targets()?;
        let delta = gradient_sign(&model, &data, &y, cfg.lambda)?;
        let answers = oracle.query(&delta)?;
        let delta = labelled(&delta, &answers)?;
        data = EpochSet::concat(&[&data, &delta])?;
        sizes.push(data.len());
        model = train_substitute(substitute_arch, &data, 0.2, &cfg.train, cfg.seed.wrapping_add(round as u64))?;
    }
    Ok(BlackBoxSubstitute { model, queries: oracle.queries() - start, dataset_sizes: sizes })
}

/// Black-box substitute training followed by UFGSM transfer from the
/// substitute. Scoring against the target is left to the caller, which
/// holds more than query access.
pub fn ufgsm_blackbox(
    oracle: &dyn Oracle,
    seed_set: &EpochSet,
    substitute_arch: &ArchSpec,
    x: &EpochSet,
    eps: f64,
    cfg: &BlackBoxConfig,
) -> Result<(AttackResult, Model)> {
    check_epsilon(eps)?;
    let sub = fit_blackbox_substitute(oracle, seed_set, substitute_arch, cfg)?;
    let mut r = transfer_attack(AttackKind::BlackBox, &sub.model, x, eps)?;
    r.queries = sub.queries;
    r.dataset_sizes = sub.dataset_sizes;
    Ok((r, sub.model))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsampling_keeps_minority_count() {
        let labels = [0, 0, 0, 1, 0, 1, 0];
        let keep = balance_by_downsampling(&labels, 2, 3);
        assert_eq!(keep.len(), 4);
        assert_eq!(keep.iter().filter(|&&i| labels[i] == 1).count(), 2);
        assert!(keep.contains(&3) && keep.contains(&5));
    }

    #[test]
    fn absent_classes_are_ignored() {
        let keep = balance_by_downsampling(&[2, 2, 0], 3, 0);
        assert_eq!(keep.len(), 2);
    }
}
