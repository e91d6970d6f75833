mod common;

use std::collections::HashMap;

use advkit::attack::random_noise;
use advkit::eval::*;
use advkit::models::{build_model, ArchSpec, Family};
use advkit::signal::morlet_map;
use advkit::{EpochSet, Error};
use advkit_diff::Tensor;
use common::{gaussian_set, rng};
use proptest::prelude::*;
use rand::Rng;

/// Predictions and labels realizing a confusion matrix, row by row.
fn from_confusion(m: &[Vec<usize>]) -> (Vec<usize>, Vec<usize>) {
    let (mut pred, mut labels) = (Vec::new(), Vec::new());
    for (l, row) in m.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            pred.extend(std::iter::repeat_n(p, n));
            labels.extend(std::iter::repeat_n(l, n));
        }
    }
    (pred, labels)
}

#[test]
fn rca_examples() {
    let labels = vec![0; 10];
    let mut pred = labels.clone();
    pred[3] = 1;
    pred[7] = 1;
    assert_eq!(rca(&pred, &labels).unwrap(), 0.8);
    assert_eq!(rca(&labels, &labels).unwrap(), 1.0);
    assert!(rca(&[], &[]).is_err());
    assert!(rca(&[0], &[0, 1]).is_err());
}

#[test]
fn confusion_matches_recount() {
    let mut r = rng(3);
    let pred: Vec<usize> = (0..500).map(|_| r.random_range(0..5)).collect();
    let labels: Vec<usize> = (0..500).map(|_| r.random_range(0..5)).collect();
    let m = confusion_matrix(&pred, &labels, 5).unwrap();
    let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
    for (&p, &l) in pred.iter().zip(&labels) {
        *counts.entry((l, p)).or_default() += 1;
    }
    for (l, row) in m.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            assert_eq!(n, counts.get(&(l, p)).copied().unwrap_or(0));
        }
        assert_eq!(row.iter().sum::<usize>(), labels.iter().filter(|&&x| x == l).count());
    }
    let diag: usize = (0..5).map(|c| m[c][c]).sum();
    assert_eq!(rca(&pred, &labels).unwrap(), diag as f64 / 500.0);
}

#[test]
fn bca_examples() {
    let (pred, labels) = from_confusion(&[vec![9, 1], vec![5, 5]]);
    assert!((bca(&pred, &labels, 2).unwrap() - 0.7).abs() < 1e-12);
    let (pred, labels) = from_confusion(&[vec![7, 3], vec![1, 9]]);
    assert_eq!(bca(&pred, &labels, 2).unwrap(), rca(&pred, &labels).unwrap());
}

#[test]
fn bca_of_crafted_four_class_matrix() {
    let m = vec![vec![5, 1, 0, 0], vec![2, 2, 0, 0], vec![0, 0, 3, 0], vec![1, 1, 1, 1]];
    let (pred, labels) = from_confusion(&m);
    let expected = (5.0 / 6.0 + 0.5 + 1.0 + 0.25) / 4.0;
    assert!((bca(&pred, &labels, 4).unwrap() - expected).abs() < 1e-12);
    let report = MetricReport::compute(&pred, &labels, 4).unwrap();
    assert_eq!(report.confusion, m);
    assert_eq!(report.per_class_rca, vec![5.0 / 6.0, 0.5, 1.0, 0.25]);
}

#[test]
fn bca_needs_every_class() {
    assert!(matches!(bca(&[0, 0], &[0, 0], 2), Err(Error::EmptyClass { class: 1 })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn bca_ignores_class_duplication(
        pairs in prop::collection::vec((0usize..3, 0usize..3), 3..60),
        class in 0usize..3,
        k in 2usize..5,
    ) {
        let mut pairs = pairs;
        pairs.extend([(0, 0), (1, 1), (2, 2)]);
        let (pred, labels): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let mut dup = pairs.clone();
        for _ in 1..k {
            dup.extend(pairs.iter().filter(|(_, l)| *l == class));
        }
        let (dp, dl): (Vec<usize>, Vec<usize>) = dup.iter().copied().unzip();
        let a = per_class_rca(&pred, &labels, 3).unwrap();
        let b = per_class_rca(&dp, &dl, 3).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!((bca(&pred, &labels, 3).unwrap() - bca(&dp, &dl, 3).unwrap()).abs() < 1e-12);
        let m = MetricReport::compute(&pred, &labels, 3).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.rca) && (0.0..=1.0).contains(&m.bca));
    }

    #[test]
    fn rca_ignores_permutation(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..80), seed in 0u64..1000) {
        let mut shuffled = pairs.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut rng(seed));
        let (p, l): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let (sp, sl): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
        prop_assert_eq!(rca(&p, &l).unwrap(), rca(&sp, &sl).unwrap());
    }

    #[test]
    fn snr_is_scale_invariant(seed in 0u64..1000, a in 0.1f32..10.0) {
        let clean = gaussian_set(2, 3, 32, 1, seed);
        let noise = gaussian_set(2, 3, 32, 1, seed + 1);
        let mix = |scale: f32| {
            let c: Vec<f32> = clean.data().data().iter().map(|v| v * scale).collect();
            let p: Vec<f32> = c.iter().zip(noise.data().data()).map(|(c, n)| c + 0.1 * scale * n).collect();
            (clean.with_data(Tensor::new(vec![2, 3, 32], c).unwrap()).unwrap(),
             clean.with_data(Tensor::new(vec![2, 3, 32], p).unwrap()).unwrap())
        };
        let (c1, p1) = mix(1.0);
        let (ca, pa) = mix(a);
        let s1 = snr_db(&c1, &p1).unwrap();
        let sa = snr_db(&ca, &pa).unwrap();
        prop_assert!((s1 - sa).abs() <= 1e-4, "{} vs {}", s1, sa);
    }
}

fn unit_rms(seed: u64) -> EpochSet {
    let set = gaussian_set(20, 4, 128, 2, seed);
    let d = set.data().data();
    let rms = (d.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
    set.with_data(Tensor::new(set.data().shape().to_vec(), d.iter().map(|&v| (v as f64 / rms) as f32).collect()).unwrap())
        .unwrap()
}

#[test]
fn snr_of_sign_noise() {
    let clean = unit_rms(1);
    let noisy = random_noise(&clean, 0.1, 7).unwrap().adversarial;
    assert!((snr_db(&clean, &noisy).unwrap() - 20.0).abs() <= 0.01);
}

#[test]
fn snr_of_identical_sets_is_infinite() {
    let clean = unit_rms(2);
    assert_eq!(snr_db(&clean, &clean).unwrap(), f64::INFINITY);
}

#[test]
fn snr_gains_six_db_when_clean_doubles() {
    let clean = unit_rms(3);
    let noisy = random_noise(&clean, 0.1, 7).unwrap().adversarial;
    let twice = |s: &EpochSet| s.data().data().iter().map(|v| 2.0 * v).collect::<Vec<f32>>();
    let clean2 = clean.with_data(Tensor::new(clean.data().shape().to_vec(), twice(&clean)).unwrap()).unwrap();
    let delta: Vec<f32> = noisy.data().data().iter().zip(clean.data().data()).map(|(n, c)| n - c).collect();
    let noisy2 = clean2
        .with_data(Tensor::new(clean.data().shape().to_vec(), clean2.data().data().iter().zip(&delta).map(|(c, d)| c + d).collect()).unwrap())
        .unwrap();
    let gain = snr_db(&clean2, &noisy2).unwrap() - snr_db(&clean, &noisy).unwrap();
    assert!((gain - 20.0 * 2f64.log10()).abs() <= 0.01, "{gain}");
}

#[test]
fn snr_rejects_shape_mismatch() {
    assert!(snr_db(&gaussian_set(2, 2, 8, 1, 0), &gaussian_set(3, 2, 8, 1, 0)).is_err());
}

const FREQS: [f64; 4] = [4.0, 8.0, 16.0, 32.0];

#[test]
fn tfr_without_misclassification_is_an_error() {
    let set = gaussian_set(10, 4, 128, 2, 4);
    let model = build_model(&ArchSpec::for_set(Family::EegNet, &set), 0).unwrap();
    let adv = random_noise(&set, 0.1, 1).unwrap().adversarial;
    let pred = model.predict(&adv).unwrap().labels;
    let fooled_nobody = set.with_labels(pred.iter().map(|&p| p as i16).collect()).unwrap();
    let err = perturbation_tfr_report(&model, &fooled_nobody, &adv, 0, &FREQS, 7.0).unwrap_err();
    assert!(matches!(err, Error::EmptyGroups));
}

#[test]
fn single_member_group_mean_is_its_map() {
    let set = gaussian_set(10, 4, 128, 2, 5);
    let model = build_model(&ArchSpec::for_set(Family::EegNet, &set), 0).unwrap();
    let adv = random_noise(&set, 0.1, 1).unwrap().adversarial;
    let pred = model.predict(&adv).unwrap().labels;
    let mut labels: Vec<i16> = pred.iter().map(|&p| p as i16).collect();
    labels[0] = 1 - labels[0];
    let clean = set.with_labels(labels).unwrap();
    let report = perturbation_tfr_report(&model, &clean, &adv, 2, &FREQS, 7.0).unwrap();
    let (group, mean) = if pred[0] == 1 { (&report.group1, &report.group1_mean) } else { (&report.group2, &report.group2_mean) };
    assert_eq!(group, &vec![0]);
    assert!(report.group_difference.is_none());
    let row = set.epoch(0)[2 * 128..3 * 128].to_vec();
    let one = EpochSet::from_parts(Tensor::new(vec![1, 1, 128], row).unwrap(), vec![0], vec![0], 128.0, 2).unwrap();
    let direct = &morlet_map(&one, &FREQS, 7.0).unwrap()[0];
    let got = mean.as_ref().unwrap();
    for (a, b) in got.values.data().iter().zip(direct.values.data()) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn sign_noise_perturbation_map_is_flat() {
    let set = gaussian_set(200, 2, 512, 2, 6);
    let model = build_model(&ArchSpec::for_set(Family::EegNet, &set), 0).unwrap();
    let adv = random_noise(&set, 0.1, 2).unwrap().adversarial;
    let report = perturbation_tfr_report(&model, &set, &adv, 0, &FREQS, 7.0).unwrap();
    let members = report.group1.len() + report.group2.len();
    assert!(members >= 100, "only {members} misclassified examples");
    let map = &report.perturbation_mean;
    let sigma_max = 7.0 / (2.0 * std::f64::consts::PI * FREQS[0]) * 128.0;
    let edge = (4.0 * sigma_max).ceil() as usize;
    let level: Vec<f64> = (0..FREQS.len())
        .map(|f| (edge..512 - edge).map(|s| map.at(0, f, s)).sum::<f64>() / (512 - 2 * edge) as f64)
        .collect();
    let mean = level.iter().sum::<f64>() / level.len() as f64;
    for (f, l) in FREQS.iter().zip(&level) {
        assert!((l - mean).abs() <= 0.1 * mean, "{f} Hz level {l} vs mean {mean}");
    }
}

#[test]
fn group_difference_is_second_minus_first() {
    let set = gaussian_set(40, 4, 128, 2, 8);
    let model = build_model(&ArchSpec::for_set(Family::EegNet, &set), 0).unwrap();
    let adv = random_noise(&set, 0.1, 3).unwrap().adversarial;
    let pred = model.predict(&adv).unwrap().labels;
    let labels: Vec<i16> = pred.iter().map(|&p| 1 - p as i16).collect();
    let clean = set.with_labels(labels).unwrap();
    let r = perturbation_tfr_report(&model, &clean, &adv, 1, &FREQS, 7.0).unwrap();
    assert_eq!(r.group1.len() + r.group2.len(), 40);
    if let (Some(a), Some(b), Some(d)) = (&r.group1_mean, &r.group2_mean, &r.group_difference) {
        for ((x, y), z) in a.values.data().iter().zip(b.values.data()).zip(d.values.data()) {
            assert!((y - x - z).abs() < 1e-12);
        }
    } else {
        assert!(r.group_difference.is_none());
    }
    let json = serde_json::to_string(&r).unwrap();
    assert!(json.contains("perturbation_mean"));
    assert!(r.perturbation_mean.to_csv(0).lines().count() == FREQS.len() + 1);
}
