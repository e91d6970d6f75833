#![allow(dead_code)]

use advkit::harness::{synth_dataset, SynthSpec};
use advkit::train::TrainConfig;
use advkit::EpochSet;
use advkit_diff::Tensor;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal epochs with the given labels, one subject per epoch.
pub fn gaussian_set(n: usize, c: usize, t: usize, classes: usize, seed: u64) -> EpochSet {
    let mut r = rng(seed);
    let data = Tensor::new(vec![n, c, t], (0..n * c * t).map(|_| r.sample(StandardNormal)).collect()).unwrap();
    let labels = (0..n).map(|i| (i % classes) as i16).collect();
    let subjects = (0..n).map(|i| (i % 3) as u16).collect();
    EpochSet::from_parts(data, labels, subjects, 128.0, classes).unwrap()
}

/// Single-channel epochs from closures of the sample index.
pub fn signal_set(rows: &[Vec<f64>], fs: f64) -> EpochSet {
    let t = rows[0].len();
    let data = Tensor::new(vec![rows.len(), 1, t], rows.iter().flatten().map(|&v| v as f32).collect()).unwrap();
    EpochSet::from_parts(data, vec![0; rows.len()], vec![0; rows.len()], fs, 1).unwrap()
}

pub fn tone(freq: f64, fs: f64, t: usize, amplitude: f64) -> Vec<f64> {
    (0..t).map(|i| amplitude * (2.0 * std::f64::consts::PI * freq * i as f64 / fs).sin()).collect()
}

pub fn small_synth(epochs: usize, snr_db: f64, seed: u64) -> EpochSet {
    synth_dataset(&SynthSpec { epochs, channels: 4, samples: 64, fs: 64.0, template_snr_db: snr_db, subjects: 4, seed, ..SynthSpec::default() })
        .unwrap()
}

pub fn quick_train(max_epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig { max_epochs, patience: 4, seed, ..TrainConfig::default() }
}

/// Held-out accuracy of one-vs-rest ridge regression on flattened epochs.
pub fn ridge_accuracy(train: &EpochSet, test: &EpochSet, lambda: f64) -> f64 {
    let k = train.n_classes();
    let d = train.n_channels() * train.n_samples() + 1;
    let design = |s: &EpochSet| {
        DMatrix::from_fn(s.len(), d, |i, j| if j + 1 == d { 1.0 } else { s.epoch(i)[j] as f64 })
    };
    let x = design(train);
    let gram = x.transpose() * &x + DMatrix::identity(d, d) * lambda;
    let chol = gram.cholesky().expect("ridge system is positive definite");
    let labels = train.targets().unwrap();
    let weights: Vec<DVector<f64>> = (0..k)
        .map(|c| {
            let y = DVector::from_iterator(labels.len(), labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }));
            chol.solve(&(x.transpose() * y))
        })
        .collect();
    let xt = design(test);
    let truth = test.targets().unwrap();
    let correct = (0..test.len())
        .filter(|&i| {
            let row = xt.row(i);
            let scores: Vec<f64> = weights.iter().map(|w| (row * w)[(0, 0)]).collect();
            let best = (0..k).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
            best == truth[i]
        })
        .count();
    correct as f64 / test.len() as f64
}
