mod common;

use advkit::models::{build_model, ArchSpec, Family};
use advkit::train::*;
use advkit::{EpochSet, Error};
use advkit_diff::loss::{cross_entropy, Reduction};
use advkit_diff::{Gradients, Tensor};
use common::{gaussian_set, quick_train, ridge_accuracy, small_synth};
use proptest::prelude::*;

fn with_subjects(n: usize, subjects: usize, classes: usize) -> EpochSet {
    let base = gaussian_set(n, 2, 8, classes, 0);
    let subj = (0..n).map(|i| (i % subjects) as u16).collect();
    EpochSet::from_parts(base.data().clone(), base.labels().to_vec(), subj, 128.0, classes).unwrap()
}

#[test]
fn class_weights_of_imbalanced_labels() {
    let w = class_weights(&[0, 0, 0, 1], 2).unwrap();
    assert!((w[0] - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(w[1], 2.0);
}

#[test]
fn class_weights_of_balanced_labels_are_one() {
    assert_eq!(class_weights(&[0, 1, 2, 2, 1, 0], 3).unwrap(), vec![1.0; 3]);
}

#[test]
fn class_weights_need_every_class() {
    assert!(matches!(class_weights(&[0, 0, 2], 3), Err(Error::EmptyClass { class: 1 })));
}

#[test]
fn weighting_penalizes_majority_guessing() {
    let labels: Vec<usize> = [vec![0; 8], vec![1; 2]].concat();
    let w: Vec<f32> = class_weights(&labels, 2).unwrap().into_iter().map(|v| v as f32).collect();
    let logits = |pred: &[usize]| {
        Tensor::new(vec![10, 2], pred.iter().flat_map(|&p| if p == 0 { [2.0f32, -2.0] } else { [-2.0, 2.0] }).collect())
            .unwrap()
    };
    let majority = logits(&[0; 10]);
    let balanced = logits(&[0, 0, 0, 0, 0, 0, 1, 1, 1, 1]);
    let loss = |l: &Tensor<f32>, w: Option<&[f32]>| cross_entropy(l, &labels, w, Reduction::Sum).unwrap().0;
    assert!((loss(&majority, None) - loss(&balanced, None)).abs() < 1e-5);
    assert!(loss(&majority, Some(&w)) > loss(&balanced, Some(&w)));
}

#[test]
fn within_subject_fractions() {
    let set = with_subjects(100, 1, 2);
    let s = &make_splits(&set, &SplitPlan::new(SplitKind::WithinSubject), 0).unwrap()[0];
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (60, 20, 20));
}

#[test]
fn loso_holds_out_one_subject_per_fold() {
    let set = with_subjects(90, 9, 2);
    let folds = make_splits(&set, &SplitPlan::new(SplitKind::CrossSubjectLoso), 0).unwrap();
    assert_eq!(folds.len(), 9);
    for (s, fold) in folds.iter().enumerate() {
        let expected: Vec<usize> = (0..90).filter(|i| i % 9 == s).collect();
        assert_eq!(fold.test, expected);
        assert!(fold.train.iter().chain(&fold.val).all(|&i| i % 9 != s));
    }
}

#[test]
fn loso_needs_two_subjects() {
    let set = with_subjects(20, 1, 2);
    assert!(make_splits(&set, &SplitPlan::new(SplitKind::CrossSubjectLoso), 0).is_err());
}

#[test]
fn group_ab_hands_group_b_to_the_attacker() {
    let set = with_subjects(80, 4, 2);
    let plan = SplitPlan::new(SplitKind::GroupAb { group_b_subjects: vec![3] });
    let s = &make_splits(&set, &plan, 1).unwrap()[0];
    assert_eq!(s.attacker, (0..80).filter(|i| i % 4 == 3).collect::<Vec<_>>());
    assert_eq!(s.test.len(), 12);
}

#[test]
fn splits_are_stratified() {
    let set = with_subjects(200, 1, 2);
    let s = &make_splits(&set, &SplitPlan::new(SplitKind::MixedSubject), 3).unwrap()[0];
    let ones = s.test.iter().filter(|&&i| set.labels()[i] == 1).count();
    assert_eq!(ones, 20);
}

fn check_partition(splits: &[Split], n: usize, loso: bool) -> Result<(), TestCaseError> {
    for s in splits {
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).chain(&s.attacker).copied().collect();
        all.sort_unstable();
        let len = all.len();
        all.dedup();
        prop_assert_eq!(all.len(), len, "parts overlap");
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
    if loso {
        let mut tests: Vec<usize> = splits.iter().flat_map(|s| s.test.clone()).collect();
        tests.sort_unstable();
        prop_assert_eq!(tests, (0..n).collect::<Vec<_>>());
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn splits_partition_the_set(n in 40usize..160, subjects in 2usize..6, kind in 0usize..4, seed in 0u64..100) {
        let set = with_subjects(n, subjects, 2);
        let kind = match kind {
            0 => SplitKind::WithinSubject,
            1 => SplitKind::CrossSubjectLoso,
            2 => SplitKind::MixedSubject,
            _ => SplitKind::GroupAb { group_b_subjects: vec![0] },
        };
        let loso = kind == SplitKind::CrossSubjectLoso;
        let plan = SplitPlan::new(kind);
        let splits = make_splits(&set, &plan, seed).unwrap();
        check_partition(&splits, n, loso)?;
        prop_assert_eq!(splits, make_splits(&set, &plan, seed).unwrap());
    }
}

#[test]
fn config_rejects_patience_not_below_max_epochs() {
    assert!(TrainConfig { patience: 10, max_epochs: 10, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig::default().validate().is_ok());
}

#[test]
fn early_stopping_contract() {
    let losses = [1.0, 0.9, 0.8, 0.7, 0.6, 0.61, 0.62, 0.63, 0.64, 0.65];
    let mut stopper = EarlyStopping::new(3);
    let mut stopped = None;
    for (i, &l) in losses.iter().enumerate() {
        if stopper.observe(i + 1, l) == Verdict::Stop {
            stopped = Some(i + 1);
            break;
        }
    }
    assert_eq!(stopped, Some(8));
    assert_eq!(stopper.best_epoch(), 5);
    assert_eq!(stopper.best_loss(), 0.6);
}

#[test]
fn adam_ignores_zero_gradients() {
    let model = build_model(&ArchSpec::new(Family::EegNet, 4, 32, 2, 64.0), 0).unwrap();
    let mut graph = model.graph().clone();
    let before = graph.clone();
    let params = graph
        .nodes()
        .iter()
        .map(|n| n.params().iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect())
        .collect();
    let grads = Gradients { params, input: None };
    let mut adam = Adam::new(&TrainConfig::default());
    for _ in 0..3 {
        adam.step(&mut graph, &grads);
    }
    let a: Vec<_> = graph.nodes().iter().flat_map(|n| n.params().to_vec()).collect();
    let b: Vec<_> = before.nodes().iter().flat_map(|n| n.params().to_vec()).collect();
    assert_eq!(a, b);
}

fn separable() -> (EpochSet, EpochSet) {
    let set = small_synth(400, 0.0, 11);
    let train = set.select(&(0..300).collect::<Vec<_>>());
    let val = set.select(&(300..400).collect::<Vec<_>>());
    (train, val)
}

#[test]
fn separable_set_is_learned() {
    let (train, val) = separable();
    assert!(ridge_accuracy(&train, &val, 1.0) >= 0.95, "oracle cannot separate the set");
    let model = build_model(&ArchSpec::for_set(Family::EegNet, &train), 0).unwrap();
    let (model, history) = train_model(model, &train, &val, &quick_train(50, 0)).unwrap();
    assert!(history.records.len() <= 50);
    let best = history.records.iter().map(|r| r.val_rca).fold(0.0, f64::max);
    assert!(best >= 0.95, "best validation rca {best}");
    let (_, pred) = evaluate_loss(&model, &val, None).unwrap();
    let truth = val.targets().unwrap();
    let acc = pred.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64;
    assert!(acc >= 0.9, "restored model rca {acc}");
}

#[test]
fn identical_seeds_give_identical_histories() {
    let (train, val) = separable();
    let run = || {
        let model = build_model(&ArchSpec::for_set(Family::EegNet, &train), 3).unwrap();
        let (m, h) = train_model(model, &train, &val, &quick_train(6, 3)).unwrap();
        (m.predict(&val).unwrap(), h)
    };
    assert_eq!(run(), run());
}

#[test]
fn restored_model_has_the_best_validation_loss() {
    let (train, val) = separable();
    let model = build_model(&ArchSpec::for_set(Family::ShallowCnn, &train), 1).unwrap();
    let cfg = TrainConfig { patience: 2, ..quick_train(12, 1) };
    let (model, history) = train_model(model, &train, &val, &cfg).unwrap();
    let w: Vec<f32> = class_weights(&train.targets().unwrap(), 2).unwrap().into_iter().map(|v| v as f32).collect();
    let (loss, _) = evaluate_loss(&model, &val, Some(&w)).unwrap();
    for r in &history.records {
        assert!(loss <= r.val_loss + 1e-9, "restored {loss} vs epoch {} {}", r.epoch, r.val_loss);
    }
    assert_eq!(history.best().unwrap().val_loss, loss);
    if history.stopped_early {
        assert_eq!(history.records.last().unwrap().epoch, history.best_epoch + cfg.patience);
    }
}

#[test]
fn history_csv_has_fixed_columns() {
    let history = History {
        records: vec![EpochRecord { epoch: 1, train_loss: 0.5, val_loss: 0.25, val_rca: 1.0, val_bca: 1.0 }],
        best_epoch: 1,
        stopped_early: false,
    };
    let mut buf = Vec::new();
    history.write_csv(&mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        "epoch,train_loss,val_loss,val_rca,val_bca\n1,0.500000,0.250000,1.000000,1.000000\n"
    );
}

#[test]
fn mismatched_class_count_is_rejected() {
    let (train, val) = separable();
    let model = build_model(&ArchSpec::new(Family::EegNet, 4, 64, 3, 64.0), 0).unwrap();
    assert!(train_model(model, &train, &val, &quick_train(5, 0)).is_err());
}
