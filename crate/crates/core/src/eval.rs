//! Classification metrics and perturbation characterization.

use serde::{Deserialize, Serialize};

use crate::epochs::EpochSet;
use crate::error::{invalid, Error, Result};
use crate::models::Model;
use crate::signal::tfr::{morlet_map, TimeFreqMap};

fn check_lengths(pred: &[usize], labels: &[usize]) -> Result<()> {
    if pred.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", pred.len(), labels.len())));
    }
    if pred.is_empty() {
        return Err(invalid("metrics need at least one example"));
    }
    Ok(())
}

/// Raw classification accuracy.
pub fn rca(pred: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(pred, labels)?;
    let correct = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// `classes x classes` counts; rows are true classes, columns predictions.
pub fn confusion_matrix(pred: &[usize], labels: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    check_lengths(pred, labels)?;
    let mut m = vec![vec![0; classes]; classes];
    for (&p, &l) in pred.iter().zip(labels) {
        if p >= classes || l >= classes {
            return Err(invalid(format!("class index {} outside [0, {classes})", p.max(l))));
        }
        m[l][p] += 1;
    }
    Ok(m)
}

/// Accuracy within each class; fails if a class has no examples.
pub fn per_class_rca(pred: &[usize], labels: &[usize], classes: usize) -> Result<Vec<f64>> {
    let m = confusion_matrix(pred, labels, classes)?;
    m.iter()
        .enumerate()
        .map(|(c, row)| {
            let n: usize = row.iter().sum();
            if n == 0 {
                Err(Error::EmptyClass { class: c })
            } else {
                Ok(row[c] as f64 / n as f64)
            }
        })
        .collect()
}

/// Balanced classification accuracy: mean of per-class accuracies.
pub fn bca(pred: &[usize], labels: &[usize], classes: usize) -> Result<f64> {
    let per = per_class_rca(pred, labels, classes)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rca: f64,
    pub bca: f64,
    pub per_class_rca: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
    pub snr_db: Option<f64>,
}

impl MetricReport {
    pub fn compute(pred: &[usize], labels: &[usize], classes: usize) -> Result<Self> {
        let per = per_class_rca(pred, labels, classes)?;
        Ok(Self {
            rca: rca(pred, labels)?,
            bca: per.iter().sum::<f64>() / per.len() as f64,
            per_class_rca: per,
            confusion: confusion_matrix(pred, labels, classes)?,
            snr_db: None,
        })
    }

    /// Predicts `set` with `model` and scores against its labels.
    pub fn of_model(model: &Model, set: &EpochSet) -> Result<Self> {
        let pred = model.predict(set)?;
        Self::compute(&pred.labels, &set.targets()?, set.n_classes())
    }
}

/// `10 log10(Σ clean² / Σ (perturbed - clean)²)` over the whole set;
/// `+inf` when nothing was perturbed.
pub fn snr_db(clean: &EpochSet, perturbed: &EpochSet) -> Result<f64> {
    if clean.data().shape() != perturbed.data().shape() {
        return Err(Error::Shape(format!(
            "{:?} vs {:?}",
            clean.data().shape(),
            perturbed.data().shape()
        )));
    }
    let (mut signal, mut noise) = (0.0f64, 0.0f64);
    for (&c, &p) in clean.data().data().iter().zip(perturbed.data().data()) {
        signal += (c as f64).powi(2);
        noise += (p as f64 - c as f64).powi(2);
    }
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

/// Mean wavelet maps for the two misclassification groups of a binary task.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TfrReport {
    pub channel: usize,
    /// Class-0 examples whose adversarials are predicted as class 1.
    pub group1: Vec<usize>,
    /// Class-1 examples whose adversarials are predicted as class 0.
    pub group2: Vec<usize>,
    pub group1_mean: Option<TimeFreqMap>,
    pub group2_mean: Option<TimeFreqMap>,
    /// Mean map of `x̃ - x` over both groups.
    pub perturbation_mean: TimeFreqMap,
    /// `group2_mean - group1_mean`, when both groups are nonempty.
    pub group_difference: Option<TimeFreqMap>,
}

/// Single-channel wavelet maps of the chosen epochs.
fn channel_maps(set: &EpochSet, idx: &[usize], channel: usize, freqs: &[f64], cycles: f64) -> Result<Vec<TimeFreqMap>> {
    let sub = set.select(idx);
    let t = sub.n_samples();
    let rows: Vec<f32> = (0..sub.len()).flat_map(|i| sub.epoch(i)[channel * t..(channel + 1) * t].to_vec()).collect();
    let one = EpochSet::from_parts(
        advkit_diff::Tensor::new(vec![sub.len(), 1, t], rows)?,
        sub.labels().to_vec(),
        sub.subjects().to_vec(),
        sub.fs(),
        sub.n_classes(),
    )?;
    morlet_map(&one, freqs, cycles)
}

pub fn perturbation_tfr_report(
    model: &Model,
    clean: &EpochSet,
    adversarial: &EpochSet,
    channel: usize,
    freqs_hz: &[f64],
    cycles: f64,
) -> Result<TfrReport> {
    if model.classes() != 2 || clean.n_classes() != 2 {
        return Err(invalid("the group report is defined for binary tasks"));
    }
    if clean.data().shape() != adversarial.data().shape() {
        return Err(Error::Shape("clean and adversarial sets differ in shape".into()));
    }
    if channel >= clean.n_channels() {
        return Err(invalid(format!("channel {channel} outside {} channels", clean.n_channels())));
    }
    let truth = clean.targets()?;
    let adv_pred = model.predict(adversarial)?.labels;
    let group1: Vec<usize> = (0..clean.len()).filter(|&i| truth[i] == 0 && adv_pred[i] == 1).collect();
    let group2: Vec<usize> = (0..clean.len()).filter(|&i| truth[i] == 1 && adv_pred[i] == 0).collect();
    if group1.is_empty() && group2.is_empty() {
        return Err(Error::EmptyGroups);
    }
    let mean_of = |idx: &[usize]| -> Result<Option<TimeFreqMap>> {
        if idx.is_empty() {
            return Ok(None);
        }
        Ok(Some(TimeFreqMap::mean(&channel_maps(clean, idx, channel, freqs_hz, cycles)?)?))
    };
    let group1_mean = mean_of(&group1)?;
    let group2_mean = mean_of(&group2)?;
    let both: Vec<usize> = group1.iter().chain(&group2).copied().collect();
    let mut delta = adversarial.data().clone();
    for (d, c) in delta.data_mut().iter_mut().zip(clean.data().data()) {
        *d -= c;
    }
    let perturbation = clean.with_data(delta)?;
    let perturbation_mean = TimeFreqMap::mean(&channel_maps(&perturbation, &both, channel, freqs_hz, cycles)?)?;
    let group_difference = match (&group1_mean, &group2_mean) {
        (Some(a), Some(b)) => {
            let mut d = b.clone();
            for (x, y) in d.values.data_mut().iter_mut().zip(a.values.data()) {
                *x -= y;
            }
            Some(d)
        }
        _ => None,
    };
    Ok(TfrReport { channel, group1, group2, group1_mean, group2_mean, perturbation_mean, group_difference })
}
