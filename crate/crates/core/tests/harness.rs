mod common;

use std::path::Path;

use advkit::attack::AttackKind;
use advkit::harness::*;
use advkit::models::Model;
use advkit::{EpochSet, Error};
use advkit_diff::Tensor;
use common::{gaussian_set, ridge_accuracy};
use serde_json::json;

fn labelled_set() -> EpochSet {
    let base = gaussian_set(10, 3, 16, 3, 2);
    let labels = vec![0, 1, 2, -1, 0, 1, 2, 0, 1, -1];
    let subjects = (0..10).map(|i| 100 + i as u16).collect();
    EpochSet::from_parts(base.data().clone(), labels, subjects, 250.0, 3).unwrap()
}

#[test]
fn container_round_trip_is_bit_identical() {
    let set = labelled_set();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.eegb");
    write_container(&set, &path).unwrap();
    let back = read_container(&path).unwrap();
    let bits = |s: &EpochSet| s.data().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&set));
    assert_eq!(back.labels(), set.labels());
    assert_eq!(back.subjects(), set.subjects());
    assert_eq!(back, set);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(Container::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes);
}

#[test]
fn container_layout_is_little_endian() {
    let set = labelled_set();
    let bytes = Container::new(set.clone(), json!({"note": "x"})).to_bytes().unwrap();
    assert_eq!(&bytes[..4], b"EEGB");
    assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
    let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[10..10 + header_len]).unwrap();
    assert_eq!(header["n_epochs"], 10);
    assert_eq!(header["provenance"]["note"], "x");
    let payload = &bytes[10 + header_len..];
    assert_eq!(payload.len(), 10 * 3 * 16 * 4 + 10 * 2 + 10 * 2);
    assert_eq!(f32::from_le_bytes(payload[..4].try_into().unwrap()), set.data().data()[0]);
    let labels = &payload[10 * 3 * 16 * 4..];
    assert_eq!(i16::from_le_bytes([labels[6], labels[7]]), -1);
    let subjects = &labels[20..];
    assert_eq!(u16::from_le_bytes([subjects[18], subjects[19]]), 109);
}

#[test]
fn corrupted_magic_is_rejected() {
    let mut bytes = Container::new(labelled_set(), json!(null)).to_bytes().unwrap();
    bytes[0] = b'X';
    assert!(matches!(Container::from_bytes(&bytes), Err(Error::BadMagic(m)) if &m == b"XEGB"));
}

/// Container bytes whose header claims `claimed` epochs over the payload of `set`.
fn with_claimed_count(set: &EpochSet, claimed: usize) -> Vec<u8> {
    let bytes = Container::new(set.clone(), json!(null)).to_bytes().unwrap();
    let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let mut header: serde_json::Value = serde_json::from_slice(&bytes[10..10 + header_len]).unwrap();
    header["n_epochs"] = json!(claimed);
    let text = serde_json::to_vec(&header).unwrap();
    let mut out = bytes[..6].to_vec();
    out.extend((text.len() as u32).to_le_bytes());
    out.extend(text);
    out.extend(&bytes[10 + header_len..]);
    out
}

#[test]
fn header_count_mismatch_is_rejected() {
    let nine = labelled_set().select(&(0..9).collect::<Vec<_>>());
    let err = Container::from_bytes(&with_claimed_count(&nine, 10)).unwrap_err();
    assert!(matches!(err, Error::CountMismatch(_)), "{err}");
    assert!(Container::from_bytes(&with_claimed_count(&nine, 9)).is_ok());
}

#[test]
fn truncated_container_is_rejected() {
    let bytes = Container::new(labelled_set(), json!(null)).to_bytes().unwrap();
    for cut in [3, 8, 20, bytes.len() - 1] {
        assert!(matches!(Container::from_bytes(&bytes[..cut]), Err(Error::Truncated(_))), "cut {cut}");
    }
}

#[test]
fn synth_has_requested_shape_and_balance() {
    let set = synth_dataset(&SynthSpec::default()).unwrap();
    assert_eq!(set.data().shape(), &[2000, 8, 128]);
    assert_eq!(set.labels().iter().filter(|&&l| l == 0).count(), 1000);
    assert_eq!(set.n_classes(), 2);
    let four = synth_dataset(&SynthSpec { classes: 4, epochs: 100, ..SynthSpec::default() }).unwrap();
    for c in 0..4 {
        assert_eq!(four.labels().iter().filter(|&&l| l == c).count(), 25);
    }
}

#[test]
fn synth_is_byte_deterministic() {
    let spec = SynthSpec { epochs: 200, seed: 7, ..SynthSpec::default() };
    let a = Container::new(synth_dataset(&spec).unwrap(), json!(null)).to_bytes().unwrap();
    let b = Container::new(synth_dataset(&spec).unwrap(), json!(null)).to_bytes().unwrap();
    assert_eq!(a, b);
    let c = Container::new(synth_dataset(&SynthSpec { seed: 8, ..spec }).unwrap(), json!(null)).to_bytes().unwrap();
    assert_ne!(a, c);
}

#[test]
fn synth_at_zero_db_is_linearly_separable() {
    let set = synth_dataset(&SynthSpec { template_snr_db: 0.0, seed: 3, ..SynthSpec::default() }).unwrap();
    let train = set.select(&(0..1600).collect::<Vec<_>>());
    let test = set.select(&(1600..2000).collect::<Vec<_>>());
    let acc = ridge_accuracy(&train, &test, 10.0);
    assert!(acc >= 0.9, "ridge accuracy {acc}");
}

#[test]
fn synth_epochs_are_standardized() {
    let set = synth_dataset(&SynthSpec { epochs: 20, ..SynthSpec::default() }).unwrap();
    for row in set.data().data().chunks(128) {
        let m = row.iter().map(|&v| v as f64).sum::<f64>() / 128.0;
        let v = row.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / 128.0;
        assert!(m.abs() < 1e-5 && (v - 1.0).abs() < 1e-4);
    }
}

#[test]
fn child_seeds_depend_on_master_and_role() {
    assert_eq!(child_seed(5, "split"), child_seed(5, "split"));
    assert_ne!(child_seed(5, "split"), child_seed(6, "split"));
    assert_ne!(child_seed(5, "split"), child_seed(5, "dataset"));
}

fn grid_config(out: &Path, attacks: serde_json::Value, epsilons: serde_json::Value) -> ExperimentConfig {
    let cfg = json!({
        "dataset": {"source": "synth", "epochs": 240, "channels": 4, "samples": 64, "fs": 64.0,
                    "template_snr_db": -3.0, "subjects": 4},
        "architectures": ["eegnet", "deepcnn", "shallowcnn"],
        "split": {"kind": "mixed_subject"},
        "train": {"max_epochs": 12, "patience": 4},
        "attacks": attacks,
        "epsilons": epsilons,
        "output_dir": out,
        "master_seed": 42
    });
    ExperimentConfig::from_json(&cfg.to_string()).unwrap()
}

fn standard_grid(out: &Path) -> ExperimentConfig {
    grid_config(out, json!([{"kind": "white_box"}, {"kind": "random_noise"}]), json!([0.05, 0.3]))
}

#[test]
fn grid_runs_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = standard_grid(&dir.path().join("a"));
    assert_eq!(cfg.attack_cells().len(), 4);
    let bundle = run_experiment(&cfg).unwrap();

    let baseline: Vec<_> = bundle.rows.iter().filter(|r| r.attack == "none").collect();
    let attacked: Vec<_> = bundle.rows.iter().filter(|r| r.attack != "none").collect();
    assert_eq!((baseline.len(), attacked.len()), (3, 12));
    assert_eq!(bundle.manifest.cells.len(), 12);
    assert!(bundle.manifest.cells.iter().all(|c| c.error.is_none()));
    assert!(bundle.csv.starts_with("dataset,arch,split,attack,epsilon,clean_rca,clean_bca,noisy_rca,noisy_bca,adv_rca,adv_bca,snr_db\n"));

    for r in attacked.iter().filter(|r| r.attack == AttackKind::WhiteBox.name()) {
        assert!(r.adv_rca.unwrap() <= r.clean_rca.unwrap(), "{r:?}");
    }
    for c in &bundle.manifest.cells {
        assert!(c.max_deviation.unwrap() <= c.epsilon + 1e-6);
    }

    let rerun = run_experiment(&standard_grid(&dir.path().join("b"))).unwrap();
    let a = std::fs::read(dir.path().join("a/report.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/report.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(rerun.csv, bundle.csv);

    check_artifacts(&dir.path().join("a"), &bundle);
}

/// Reloads every artifact of a run and recomputes the recorded metrics.
fn check_artifacts(out: &Path, bundle: &ReportBundle) {
    let rows = read_report(out.join("report.csv")).unwrap();
    assert_eq!(rows.len(), bundle.rows.len());
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 42);
    for (role, seed) in &bundle.manifest.seeds {
        assert_eq!(*seed, child_seed(42, role), "{role}");
    }

    let cfg = &bundle.manifest.config;
    let set = prepare_dataset(cfg).unwrap();
    let split = &bundle.manifest.splits[0];
    let test = set.select(&split.test);
    let truth = test.targets().unwrap();
    let accuracy = |model: &Model, x: &EpochSet| {
        let p = model.predict(x).unwrap().labels;
        p.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
    };
    for rec in &bundle.manifest.models {
        let model = Model::load(rec.path.as_ref().unwrap()).unwrap();
        let row = rows.iter().find(|r| r.arch == rec.arch && r.attack == "none").unwrap();
        assert!((accuracy(&model, &test) - row.clean_rca.unwrap()).abs() <= 1e-6);
        assert!(rec.history_path.as_ref().unwrap().exists());
        for cell in bundle.manifest.cells.iter().filter(|c| c.arch == rec.arch) {
            let adv = Container::read(cell.adversarial_path.as_ref().unwrap()).unwrap();
            assert_eq!(adv.provenance["epsilon"], json!(cell.epsilon));
            let row = rows
                .iter()
                .find(|r| r.arch == rec.arch && r.attack == cell.attack && r.epsilon == Some(cell.epsilon))
                .unwrap();
            assert!((accuracy(&model, &adv.set) - row.adv_rca.unwrap()).abs() <= 1e-6);
            let snr = advkit::eval::snr_db(&test, &adv.set).unwrap();
            assert!((snr - row.snr_db.unwrap()).abs() <= 1e-6);
        }
    }
}

#[test]
fn failing_cells_do_not_abort_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let attacks = json!([{"kind": "black_box", "query_budget": 3, "iterations": 1}, {"kind": "white_box"}]);
    let mut cfg = grid_config(dir.path(), attacks, json!([0.1]));
    cfg.architectures.truncate(1);
    let bundle = run_experiment(&cfg).unwrap();
    assert_eq!(bundle.rows.len(), 3);
    let bb = &bundle.manifest.cells[0];
    assert!(bb.error.as_ref().unwrap().contains("query budget"), "{:?}", bb.error);
    assert!(bundle.rows[1].adv_rca.is_none());
    assert!(bundle.manifest.cells[1].error.is_none());
    assert!(bundle.rows[2].adv_rca.is_some());
}

#[test]
fn report_table_lists_every_row() {
    let row = ReportRow {
        dataset: "synthetic".into(),
        arch: "eegnet".into(),
        split: "mixed".into(),
        attack: "white_box".into(),
        epsilon: Some(0.1),
        clean_rca: Some(0.9),
        clean_bca: Some(0.9),
        noisy_rca: None,
        noisy_bca: None,
        adv_rca: Some(0.25),
        adv_bca: Some(0.25),
        snr_db: Some(20.0),
    };
    let csv = report_csv(std::slice::from_ref(&row)).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "synthetic,eegnet,mixed,white_box,0.1,0.900000,0.900000,,,0.250000,0.250000,20.000000");
    let table = make_report_table(&[row]);
    assert_eq!(table.lines().count(), 2);
    assert!(table.starts_with("dataset"));
}

#[test]
fn preprocessing_steps_are_applied() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.eegb");
    let set = synth_dataset(&SynthSpec { epochs: 20, samples: 128, fs: 128.0, ..SynthSpec::default() }).unwrap();
    let scaled = set.with_data(Tensor::new(set.data().shape().to_vec(), set.data().data().iter().map(|v| v * 3.0).collect()).unwrap()).unwrap();
    write_container(&scaled, &path).unwrap();
    let cfg = json!({
        "dataset": {"source": "file", "path": path},
        "preprocess": [{"step": "bandpass", "low_hz": 1.0, "high_hz": 30.0},
                       {"step": "downsample", "factor": 2},
                       {"step": "normalize", "scheme": "z_score"}],
        "architectures": ["eegnet"],
        "attacks": [{"kind": "white_box"}]
    });
    let cfg = ExperimentConfig::from_json(&cfg.to_string()).unwrap();
    assert_eq!(cfg.dataset_name(), "d");
    let out = prepare_dataset(&cfg).unwrap();
    assert_eq!(out.data().shape(), &[20, 8, 64]);
    assert_eq!(out.fs(), 64.0);
}
