mod common;

use advkit::models::*;
use advkit::train::{evaluate_loss, train_model};
use advkit_diff::{Activation, LayerSpec, PoolKind, Tensor};
use common::{gaussian_set, quick_train, small_synth};

fn arch(family: Family, c: usize, t: usize, k: usize) -> ArchSpec {
    ArchSpec::new(family, c, t, k, 128.0)
}

/// Weights and biases of every conv, dense and batch-norm layer.
fn counted_params(specs: &[LayerSpec], c: usize, t: usize) -> usize {
    let (mut maps, mut h, mut w) = (1usize, c, t);
    let mut flat = None;
    let mut total = 0;
    for spec in specs {
        match spec {
            LayerSpec::Conv2d(cv) => {
                total += cv.out_channels * (maps / cv.groups) * cv.kernel[0] * cv.kernel[1];
                if cv.bias {
                    total += cv.out_channels;
                }
                h = (h + cv.padding[0] + cv.padding[1] - cv.kernel[0]) / cv.stride[0] + 1;
                w = (w + cv.padding[2] + cv.padding[3] - cv.kernel[1]) / cv.stride[1] + 1;
                maps = cv.out_channels;
            }
            LayerSpec::Pool(p) => {
                h = (h - p.window[0]) / p.stride[0] + 1;
                w = (w - p.window[1]) / p.stride[1] + 1;
            }
            LayerSpec::BatchNorm { .. } => total += 2 * maps,
            LayerSpec::Flatten => flat = Some(maps * h * w),
            LayerSpec::Dense { out_features, bias } => {
                total += flat.unwrap() * out_features + if *bias { *out_features } else { 0 };
                flat = Some(*out_features);
            }
            _ => {}
        }
    }
    total
}

#[test]
fn eegnet_is_compact() {
    let a = arch(Family::EegNet, 8, 64, 2);
    let model = build_model(&a, 0).unwrap();
    assert_eq!(model.param_count(), counted_params(&layers(&a).unwrap(), 8, 64));
    assert!(model.param_count() < 5000, "{}", model.param_count());
}

#[test]
fn deepcnn_is_larger_than_eegnet() {
    let e = build_model(&arch(Family::EegNet, 8, 64, 2), 0).unwrap();
    let d = build_model(&arch(Family::DeepCnn, 8, 64, 2), 0).unwrap();
    assert!(d.param_count() > e.param_count());
}

#[test]
fn zero_channels_is_an_error() {
    for family in Family::ALL {
        assert!(build_model(&arch(family, 0, 64, 2), 0).is_err());
    }
    assert!(build_model(&arch(Family::EegNet, 8, 64, 0), 0).is_err());
}

#[test]
fn eegnet_uses_depthwise_spatial_conv() {
    let specs = layers(&arch(Family::EegNet, 8, 64, 2)).unwrap();
    let depthwise = specs.iter().find_map(|s| match s {
        LayerSpec::Conv2d(c) if c.kernel == [8, 1] => Some(c.clone()),
        _ => None,
    });
    let conv = depthwise.expect("spatial conv present");
    assert_eq!(conv.groups, 8);
    assert_eq!(conv.out_channels, 16);
}

#[test]
fn deepcnn_has_four_blocks_then_dense() {
    let specs = layers(&arch(Family::DeepCnn, 8, 128, 2)).unwrap();
    let norms = specs.iter().filter(|s| matches!(s, LayerSpec::BatchNorm { .. })).count();
    let dense = specs.iter().filter(|s| matches!(s, LayerSpec::Dense { .. })).count();
    assert_eq!(norms, 4);
    assert_eq!(dense, 1);
    assert!(matches!(specs.last(), Some(LayerSpec::Dense { .. })));
    let filters: Vec<usize> = specs
        .iter()
        .filter_map(|s| match s {
            LayerSpec::Conv2d(c) => Some(c.out_channels),
            _ => None,
        })
        .collect();
    assert_eq!(filters, vec![25, 25, 50, 100, 200]);
}

#[test]
fn shallowcnn_squares_pools_then_logs() {
    let specs = layers(&arch(Family::ShallowCnn, 8, 128, 2)).unwrap();
    let sq = specs.iter().position(|s| *s == LayerSpec::Activation { function: Activation::Square }).unwrap();
    assert!(matches!(&specs[sq + 1], LayerSpec::Pool(p) if p.kind == PoolKind::Avg));
    assert_eq!(specs[sq + 2], LayerSpec::Activation { function: Activation::Log });
}

#[test]
fn spectrocnn_carries_front_end() {
    let m = build_model(&arch(Family::SpectroCnn, 8, 128, 4), 0).unwrap();
    assert!(m.front_end().is_some());
    for family in [Family::EegNet, Family::DeepCnn, Family::ShallowCnn] {
        assert!(build_model(&arch(family, 8, 128, 4), 0).unwrap().front_end().is_none());
    }
}

#[test]
fn prediction_is_consistent() {
    let set = gaussian_set(7, 8, 64, 2, 1);
    for family in Family::ALL {
        let m = build_model(&ArchSpec::for_set(family, &set), 3).unwrap();
        let p = m.predict(&set).unwrap();
        assert_eq!(p.labels.len(), 7);
        assert_eq!(p.probs.shape(), &[7, 2]);
        for i in 0..7 {
            let row = p.probs.item(i);
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            assert!((sum - 1.0).abs() <= 1e-6, "{family}: {sum}");
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert_eq!(p.labels[i], argmax(row));
        }
    }
}

#[test]
fn prediction_rejects_wrong_shape() {
    let m = build_model(&arch(Family::EegNet, 8, 64, 2), 0).unwrap();
    assert!(m.predict(&gaussian_set(2, 4, 64, 2, 0)).is_err());
}

#[test]
fn input_gradient_has_input_shape() {
    let set = gaussian_set(5, 8, 64, 2, 2);
    for family in Family::ALL {
        let m = build_model(&ArchSpec::for_set(family, &set), 0).unwrap();
        let (j, g) = m.loss_and_input_gradient(set.data(), &set.targets().unwrap(), None).unwrap();
        assert!(j.is_finite());
        assert_eq!(g.shape(), set.data().shape());
        assert!(g.data().iter().any(|&v| v != 0.0), "{family} gradient vanished");
    }
}

#[test]
fn input_gradient_rejects_bad_labels() {
    let set = gaussian_set(2, 8, 64, 2, 2);
    let m = build_model(&ArchSpec::for_set(Family::EegNet, &set), 0).unwrap();
    assert!(m.loss_and_input_gradient(set.data(), &[0, 2], None).is_err());
    assert!(m.loss_and_input_gradient(set.data(), &[0], None).is_err());
}

#[test]
fn gradients_match_finite_differences() {
    for family in Family::ALL {
        for classes in [2, 4] {
            let report = check_gradients(&arch(family, 8, 64, classes), 1, 2).unwrap();
            assert!(report.max_rel_err <= 1e-4, "{family} K={classes}: {}", report.max_rel_err);
            assert!(report.passed(), "{family} K={classes}: {:?}", report.worst_coordinate);
        }
    }
}

#[test]
fn gradient_step_descends() {
    let set = gaussian_set(4, 8, 64, 2, 5);
    let y = set.targets().unwrap();
    for family in Family::ALL {
        let m = build_model(&ArchSpec::for_set(family, &set), 0).unwrap();
        let (j0, g) = m.loss_and_input_gradient(set.data(), &y, None).unwrap();
        let stepped: Vec<f32> = set.data().data().iter().zip(g.data()).map(|(x, d)| x - 1e-3 * d).collect();
        let x1 = Tensor::new(set.data().shape().to_vec(), stepped).unwrap();
        let (j1, _) = m.loss_and_input_gradient(&x1, &y, None).unwrap();
        assert!(j1 < j0, "{family}: {j0} -> {j1}");
    }
}

#[test]
fn weighted_loss_matches_weighted_mean() {
    let set = gaussian_set(6, 8, 64, 2, 5);
    let y = set.targets().unwrap();
    let m = build_model(&ArchSpec::for_set(Family::EegNet, &set), 0).unwrap();
    let w = [0.5f32, 2.0];
    let (j, _) = m.loss_and_input_gradient(set.data(), &y, Some(&w)).unwrap();
    let (mean, _) = evaluate_loss(&m, &set, Some(&w)).unwrap();
    let norm: f64 = y.iter().map(|&l| w[l] as f64).sum();
    assert!((j as f64 / norm - mean).abs() <= 1e-5 * mean.abs());
}

#[test]
fn identical_seeds_are_deterministic() {
    let set = gaussian_set(3, 8, 64, 2, 4);
    let y = set.targets().unwrap();
    for family in Family::ALL {
        let a = build_model(&ArchSpec::for_set(family, &set), 9).unwrap();
        let b = build_model(&ArchSpec::for_set(family, &set), 9).unwrap();
        assert_eq!(a.predict(&set).unwrap(), b.predict(&set).unwrap());
        assert_eq!(
            a.loss_and_input_gradient(set.data(), &y, None).unwrap(),
            b.loss_and_input_gradient(set.data(), &y, None).unwrap()
        );
        let c = build_model(&ArchSpec::for_set(family, &set), 10).unwrap();
        assert_ne!(a.predict(&set).unwrap().probs, c.predict(&set).unwrap().probs);
    }
}

#[test]
fn trained_models_survive_save_and_load() {
    let set = small_synth(64, 0.0, 1);
    let train = set.select(&(0..48).collect::<Vec<_>>());
    let val = set.select(&(48..64).collect::<Vec<_>>());
    let dir = tempfile::tempdir().unwrap();
    for family in [Family::EegNet, Family::SpectroCnn] {
        let m = build_model(&ArchSpec::for_set(family, &set), 0).unwrap();
        let (m, _) = train_model(m, &train, &val, &quick_train(5, 0)).unwrap();
        let path = dir.path().join(format!("{family}.adwt"));
        m.save(&path).unwrap();
        assert!(sidecar_path(&path).exists());
        let back = Model::load(&path).unwrap();
        assert_eq!(back.arch(), m.arch());
        assert_eq!(back.front_end(), m.front_end());
        assert_eq!(back.predict(&set).unwrap(), m.predict(&set).unwrap());
    }
}

#[test]
fn load_rejects_mismatched_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.adwt");
    build_model(&arch(Family::EegNet, 8, 64, 2), 0).unwrap().save(&path).unwrap();
    let other = dir.path().join("o.adwt");
    build_model(&arch(Family::EegNet, 8, 64, 3), 0).unwrap().save(&other).unwrap();
    std::fs::copy(sidecar_path(&other), sidecar_path(&path)).unwrap();
    assert!(Model::load(&path).is_err());
}
