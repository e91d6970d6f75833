//! Train/validation/test partitions.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::epochs::EpochSet;
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitKind {
    /// Every subject is split on its own; the parts are pooled.
    WithinSubject,
    /// One fold per held-out subject; the others give train and validation.
    CrossSubjectLoso,
    /// All subjects pooled, then split.
    MixedSubject,
    /// Subjects in group B are the attacker's; group A is split for the target.
    GroupAb { group_b_subjects: Vec<u16> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    #[serde(flatten)]
    pub kind: SplitKind,
    /// Share of epochs held out for testing (not used by LOSO).
    #[serde(default = "default_test")]
    pub test_fraction: f64,
    /// Share of the remaining epochs used for early stopping.
    #[serde(default = "default_val")]
    pub val_fraction: f64,
}

fn default_test() -> f64 {
    0.2
}

fn default_val() -> f64 {
    0.25
}

impl SplitPlan {
    pub fn new(kind: SplitKind) -> Self {
        Self { kind, test_fraction: default_test(), val_fraction: default_val() }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            SplitKind::WithinSubject => "within",
            SplitKind::CrossSubjectLoso => "loso",
            SplitKind::MixedSubject => "mixed",
            SplitKind::GroupAb { .. } => "group_ab",
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |f: f64| f > 0.0 && f < 1.0;
        if !ok(self.val_fraction) || (self.kind != SplitKind::CrossSubjectLoso && !ok(self.test_fraction)) {
            return Err(invalid(format!(
                "fractions must lie in (0, 1): test {}, val {}",
                self.test_fraction, self.val_fraction
            )));
        }
        Ok(())
    }
}

/// Disjoint index sets into the source `EpochSet`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub name: String,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Epochs available to a query-only attacker (group B).
    pub attacker: Vec<usize>,
}

/// Shuffles each class and interleaves them so that every prefix has
/// close to the overall class proportions.
fn stratified_order(set: &EpochSet, indices: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut by_class: BTreeMap<i16, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        by_class.entry(set.labels()[i]).or_default().push(i);
    }
    let mut keyed = Vec::with_capacity(indices.len());
    for (ci, members) in by_class.values_mut().enumerate() {
        members.shuffle(rng);
        let n = members.len() as f64;
        keyed.extend(members.iter().enumerate().map(|(r, &i)| ((r as f64 + 0.5) / n, ci, i)));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, _, i)| i).collect()
}

fn count(frac: f64, n: usize) -> usize {
    (frac * n as f64).round() as usize
}

/// Cuts an ordered list into (test, val, train).
fn cut(order: &[usize], test_fraction: Option<f64>, val_fraction: f64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let n_test = test_fraction.map_or(0, |f| count(f, order.len()));
    let (test, rest) = order.split_at(n_test);
    let (val, train) = rest.split_at(count(val_fraction, rest.len()));
    (test.to_vec(), val.to_vec(), train.to_vec())
}

fn subjects_of(set: &EpochSet) -> Vec<u16> {
    let mut s = set.subjects().to_vec();
    s.sort_unstable();
    s.dedup();
    s
}

fn finish(mut split: Split) -> Result<Split> {
    for part in [&mut split.train, &mut split.val, &mut split.test, &mut split.attacker] {
        part.sort_unstable();
    }
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(invalid(format!(
            "split {} leaves an empty part ({} train, {} val, {} test)",
            split.name,
            split.train.len(),
            split.val.len(),
            split.test.len()
        )));
    }
    Ok(split)
}

/// Partitions `set` per `plan`; LOSO returns one split per subject.
pub fn make_splits(set: &EpochSet, plan: &SplitPlan, seed: u64) -> Result<Vec<Split>> {
    plan.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<usize> = (0..set.len()).collect();
    let subjects = subjects_of(set);
    let (tf, vf) = (plan.test_fraction, plan.val_fraction);
    match &plan.kind {
        SplitKind::WithinSubject => {
            let mut split = Split { name: plan.name().into(), ..Split::default() };
            for s in subjects {
                let own: Vec<usize> = all.iter().copied().filter(|&i| set.subjects()[i] == s).collect();
                let (test, val, train) = cut(&stratified_order(set, &own, &mut rng), Some(tf), vf);
                split.test.extend(test);
                split.val.extend(val);
                split.train.extend(train);
            }
            Ok(vec![finish(split)?])
        }
        SplitKind::MixedSubject => {
            let (test, val, train) = cut(&stratified_order(set, &all, &mut rng), Some(tf), vf);
            Ok(vec![finish(Split { name: plan.name().into(), train, val, test, attacker: vec![] })?])
        }
        SplitKind::CrossSubjectLoso => {
            if subjects.len() < 2 {
                return Err(invalid(format!("LOSO needs at least 2 subjects, found {}", subjects.len())));
            }
            subjects
                .iter()
                .map(|&s| {
                    let (test, rest): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| set.subjects()[i] == s);
                    let (_, val, train) = cut(&stratified_order(set, &rest, &mut rng), None, vf);
                    finish(Split { name: format!("loso_s{s}"), train, val, test, attacker: vec![] })
                })
                .collect()
        }
        SplitKind::GroupAb { group_b_subjects } => {
            let (attacker, a): (Vec<usize>, Vec<usize>) =
                all.iter().partition(|&&i| group_b_subjects.contains(&set.subjects()[i]));
            if attacker.is_empty() || a.is_empty() {
                return Err(invalid("both subject groups must contain epochs"));
            }
            let (test, val, train) = cut(&stratified_order(set, &a, &mut rng), Some(tf), vf);
            Ok(vec![finish(Split { name: plan.name().into(), train, val, test, attacker })?])
        }
    }
}
