//! Grid runner: trains targets, attacks them and writes the report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DatasetSource, ExperimentConfig, PreprocessStep};
use super::container::{read_container, Container};
use super::seeds::child_seed;
use super::synth::{synth_dataset, SynthSpec};
use crate::attack::{
    fit_blackbox_substitute, random_noise, train_substitute, transfer_attack, ufgsm_whitebox, AttackKind, AttackResult,
    AttackSpec, BlackBoxConfig, ModelOracle,
};
use crate::epochs::EpochSet;
use crate::error::Result;
use crate::eval::{bca, rca};
use crate::models::{build_model, ArchSpec, Family, Model};
use crate::signal::{bandpass, downsample, normalize};
use crate::train::{make_splits, train_model, History, Split, TrainConfig};

pub const REPORT_COLUMNS: [&str; 12] = [
    "dataset", "arch", "split", "attack", "epsilon", "clean_rca", "clean_bca", "noisy_rca", "noisy_bca", "adv_rca",
    "adv_bca", "snr_db",
];

/// One line of the report; baseline rows have attack `none` and no
/// perturbation columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub arch: String,
    pub split: String,
    pub attack: String,
    pub epsilon: Option<f64>,
    pub clean_rca: Option<f64>,
    pub clean_bca: Option<f64>,
    pub noisy_rca: Option<f64>,
    pub noisy_bca: Option<f64>,
    pub adv_rca: Option<f64>,
    pub adv_bca: Option<f64>,
    pub snr_db: Option<f64>,
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

impl ReportRow {
    fn record(&self) -> Vec<String> {
        vec![
            self.dataset.clone(),
            self.arch.clone(),
            self.split.clone(),
            self.attack.clone(),
            self.epsilon.map_or_else(String::new, |e| format!("{e}")),
            fmt(self.clean_rca),
            fmt(self.clean_bca),
            fmt(self.noisy_rca),
            fmt(self.noisy_bca),
            fmt(self.adv_rca),
            fmt(self.adv_bca),
            fmt(self.snr_db),
        ]
    }
}

pub fn report_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_COLUMNS)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

/// Reads a report written by [`report_csv`].
pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let parse = |s: &str| -> Option<f64> { if s.is_empty() { None } else { s.parse().ok() } };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        rows.push(ReportRow {
            dataset: f(0).into(),
            arch: f(1).into(),
            split: f(2).into(),
            attack: f(3).into(),
            epsilon: parse(f(4)),
            clean_rca: parse(f(5)),
            clean_bca: parse(f(6)),
            noisy_rca: parse(f(7)),
            noisy_bca: parse(f(8)),
            adv_rca: parse(f(9)),
            adv_bca: parse(f(10)),
            snr_db: parse(f(11)),
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub arch: String,
    pub split: String,
    pub seed: u64,
    pub path: Option<PathBuf>,
    pub history_path: Option<PathBuf>,
    pub best_epoch: Option<usize>,
    pub clean_rca: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub arch: String,
    pub split: String,
    pub attack: String,
    pub epsilon: f64,
    pub attack_seed: u64,
    pub noise_seed: u64,
    pub adversarial_path: Option<PathBuf>,
    pub adv_rca: Option<f64>,
    pub max_deviation: Option<f64>,
    pub substitute_agreement: Option<f64>,
    pub queries: Option<usize>,
    pub dataset_sizes: Vec<usize>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: String,
    pub master_seed: u64,
    /// Every derived seed by role.
    pub seeds: BTreeMap<String, u64>,
    pub config: ExperimentConfig,
    pub splits: Vec<Split>,
    pub models: Vec<ModelRecord>,
    pub cells: Vec<CellRecord>,
}

#[derive(Clone, Debug)]
pub struct ReportBundle {
    pub rows: Vec<ReportRow>,
    pub csv: String,
    pub manifest: Manifest,
}

/// Loads or generates the dataset and applies the preprocessing steps.
pub fn prepare_dataset(cfg: &ExperimentConfig) -> Result<EpochSet> {
    let mut set = match &cfg.dataset {
        DatasetSource::File { path } => read_container(path)?,
        DatasetSource::Synth(spec) => synth_dataset(&SynthSpec { seed: child_seed(cfg.master_seed, "dataset"), ..spec.clone() })?,
    };
    for step in &cfg.preprocess {
        set = match step {
            PreprocessStep::Bandpass { low_hz, high_hz } => bandpass(&set, *low_hz, *high_hz)?,
            PreprocessStep::Downsample { factor } => downsample(&set, *factor)?,
            PreprocessStep::Normalize(scheme) => normalize(&set, *scheme)?,
        };
    }
    Ok(set)
}

pub fn target_role(arch: Family, split: &str) -> String {
    format!("target/{arch}/{split}")
}

/// Trains one target on a split with its derived seed.
pub fn train_target(cfg: &ExperimentConfig, set: &EpochSet, arch: Family, split: &Split) -> Result<(Model, History)> {
    let seed = child_seed(cfg.master_seed, &target_role(arch, &split.name));
    let model = build_model(&ArchSpec::for_set(arch, set), seed)?;
    let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    train_model(model, &set.select(&split.train), &set.select(&split.val), &train_cfg)
}

fn attack_label(spec: &AttackSpec) -> String {
    match spec.substitute {
        Some(f) if matches!(spec.kind, AttackKind::GrayBox | AttackKind::BlackBox) => format!("{}:{f}", spec.kind.name()),
        _ => spec.kind.name().into(),
    }
}

fn scores_of(target: &Model, clean: &EpochSet, adv: &EpochSet) -> Result<(f64, f64)> {
    let truth = clean.targets()?;
    let pred = target.predict(adv)?.labels;
    Ok((rca(&pred, &truth)?, bca(&pred, &truth, clean.n_classes()).unwrap_or(f64::NAN)))
}

enum Substitute {
    None,
    Model(Model),
    BlackBox { model: Model, queries: usize, sizes: Vec<usize> },
}

struct PairOutput {
    rows: Vec<ReportRow>,
    model: ModelRecord,
    cells: Vec<CellRecord>,
    seeds: Vec<(String, u64)>,
}

fn file_stem(parts: &[&str]) -> String {
    parts.join("_").replace([':', '/'], "-")
}

#[allow(clippy::too_many_arguments)]
fn run_pair(cfg: &ExperimentConfig, dataset: &str, set: &EpochSet, arch: Family, split: &Split) -> PairOutput {
    let out = &cfg.output_dir;
    let base_row = |attack: &str, epsilon: Option<f64>| ReportRow {
        dataset: dataset.into(),
        arch: arch.name().into(),
        split: split.name.clone(),
        attack: attack.into(),
        epsilon,
        clean_rca: None,
        clean_bca: None,
        noisy_rca: None,
        noisy_bca: None,
        adv_rca: None,
        adv_bca: None,
        snr_db: None,
    };
    let target_seed = child_seed(cfg.master_seed, &target_role(arch, &split.name));
    let mut seeds = vec![(target_role(arch, &split.name), target_seed)];
    let mut record = ModelRecord {
        arch: arch.name().into(),
        split: split.name.clone(),
        seed: target_seed,
        path: None,
        history_path: None,
        best_epoch: None,
        clean_rca: None,
        error: None,
    };
    let stem = file_stem(&[arch.name(), &split.name]);
    let trained = train_target(cfg, set, arch, split).and_then(|(model, history)| {
        let path = out.join("models").join(format!("{stem}.adwt"));
        model.save(&path)?;
        let hist = out.join("history").join(format!("{stem}.csv"));
        history.write_csv(std::fs::File::create(&hist)?)?;
        record.path = Some(path);
        record.history_path = Some(hist);
        record.best_epoch = Some(history.best_epoch);
        Ok(model)
    });
    let cells_spec = cfg.attack_cells();
    let target = match trained {
        Ok(m) => m,
        Err(e) => {
            let msg = format!("target training failed: {e}");
            record.error = Some(msg.clone());
            let mut rows = vec![base_row("none", None)];
            let mut cells = vec![];
            for (spec, eps) in &cells_spec {
                rows.push(base_row(&attack_label(spec), Some(*eps)));
                cells.push(failed_cell(arch, split, spec, *eps, 0, 0, msg.clone()));
            }
            return PairOutput { rows, model: record, cells, seeds };
        }
    };
    let test = set.select(&split.test);
    let clean = scores_of(&target, &test, &test);
    let mut rows = vec![];
    let mut baseline = base_row("none", None);
    if let Ok((r, b)) = clean {
        baseline.clean_rca = Some(r);
        baseline.clean_bca = Some(b);
        record.clean_rca = Some(r);
    } else if let Err(e) = &clean {
        record.error = Some(format!("clean evaluation failed: {e}"));
    }
    rows.push(baseline.clone());

    let mut cells = vec![];
    for (ai, spec) in cfg.attacks.iter().enumerate() {
        let label = attack_label(spec);
        let role = format!("attack/{arch}/{}/{ai}", split.name);
        let attack_seed = child_seed(cfg.master_seed, &role);
        seeds.push((role, attack_seed));
        let substitute = prepare_substitute(cfg, set, &target, arch, split, spec, attack_seed);
        let eps_list: Vec<f64> = cells_spec.iter().filter(|(s, _)| s == spec).map(|(_, e)| *e).collect();
        for eps in eps_list {
            let noise_role = format!("noise/{arch}/{}/{ai}/{eps}", split.name);
            let noise_seed = child_seed(cfg.master_seed, &noise_role);
            seeds.push((noise_role, noise_seed));
            let mut row = base_row(&label, Some(eps));
            row.clean_rca = baseline.clean_rca;
            row.clean_bca = baseline.clean_bca;
            let outcome = (|| -> Result<CellRecord> {
                let sub = substitute.as_ref().map_err(|e| crate::error::invalid(format!("substitute failed: {e}")))?;
                let noisy = random_noise(&test, eps, noise_seed)?;
                let (nr, nb) = scores_of(&target, &test, &noisy.adversarial)?;
                row.noisy_rca = Some(nr);
                row.noisy_bca = Some(nb);
                let mut result = run_attack(spec.kind, sub, &target, &test, eps, noise_seed)?;
                result.score(&target, &test, !matches!(sub, Substitute::None))?;
                let (ar, ab) = scores_of(&target, &test, &result.adversarial)?;
                row.adv_rca = Some(ar);
                row.adv_bca = Some(ab);
                row.snr_db = Some(result.snr_db);
                let path = out.join("adversarial").join(format!("{}.eegb", file_stem(&[arch.name(), &split.name, &label, &format!("eps{eps}")])));
                let provenance = serde_json::json!({
                    "arch": arch.name(),
                    "split": split.name,
                    "attack": label,
                    "epsilon": eps,
                    "attack_seed": attack_seed,
                });
                Container::new(result.adversarial.clone(), provenance).write(&path)?;
                let (queries, sizes) = match sub {
                    Substitute::BlackBox { queries, sizes, .. } => (Some(*queries), sizes.clone()),
                    _ => (None, vec![]),
                };
                Ok(CellRecord {
                    arch: arch.name().into(),
                    split: split.name.clone(),
                    attack: label.clone(),
                    epsilon: eps,
                    attack_seed,
                    noise_seed,
                    adversarial_path: Some(path),
                    adv_rca: Some(ar),
                    max_deviation: result.max_deviation.iter().copied().reduce(f64::max),
                    substitute_agreement: result.substitute_agreement,
                    queries,
                    dataset_sizes: sizes,
                    error: None,
                })
            })();
            cells.push(outcome.unwrap_or_else(|e| failed_cell(arch, split, spec, eps, attack_seed, noise_seed, e.to_string())));
            rows.push(row);
        }
    }
    PairOutput { rows, model: record, cells, seeds }
}

fn failed_cell(arch: Family, split: &Split, spec: &AttackSpec, eps: f64, attack_seed: u64, noise_seed: u64, error: String) -> CellRecord {
    CellRecord {
        arch: arch.name().into(),
        split: split.name.clone(),
        attack: attack_label(spec),
        epsilon: eps,
        attack_seed,
        noise_seed,
        adversarial_path: None,
        adv_rca: None,
        max_deviation: None,
        substitute_agreement: None,
        queries: None,
        dataset_sizes: vec![],
        error: Some(error),
    }
}

fn prepare_substitute(
    cfg: &ExperimentConfig,
    set: &EpochSet,
    target: &Model,
    arch: Family,
    split: &Split,
    spec: &AttackSpec,
    seed: u64,
) -> Result<Substitute> {
    let sub_arch = ArchSpec::for_set(spec.substitute.unwrap_or(arch), set);
    match spec.kind {
        AttackKind::WhiteBox | AttackKind::RandomNoise => Ok(Substitute::None),
        AttackKind::GrayBox => {
            let mut own: Vec<usize> = split.train.iter().chain(&split.val).copied().collect();
            own.sort_unstable();
            Ok(Substitute::Model(train_substitute(&sub_arch, &set.select(&own), 0.25, &cfg.train, seed)?))
        }
        AttackKind::BlackBox => {
            let seed_idx = if split.attacker.is_empty() { &split.val } else { &split.attacker };
            let seed_set = set.select(seed_idx);
            let bb = BlackBoxConfig {
                lambda: spec.lambda,
                iterations: spec.iterations,
                query_budget: spec.query_budget,
                train: cfg.train.clone(),
                seed,
            };
            let oracle = ModelOracle::new(target, Some(bb.budget_for(seed_set.len())));
            let sub = fit_blackbox_substitute(&oracle, &seed_set, &sub_arch, &bb)?;
            Ok(Substitute::BlackBox { model: sub.model, queries: sub.queries, sizes: sub.dataset_sizes })
        }
    }
}

fn run_attack(kind: AttackKind, sub: &Substitute, target: &Model, x: &EpochSet, eps: f64, noise_seed: u64) -> Result<AttackResult> {
    match (kind, sub) {
        (AttackKind::RandomNoise, _) => random_noise(x, eps, noise_seed),
        (_, Substitute::Model(m)) | (_, Substitute::BlackBox { model: m, .. }) => transfer_attack(kind, m, x, eps),
        (_, Substitute::None) => ufgsm_whitebox(target, x, eps),
    }
}

/// Runs the whole grid, writing models, adversarial sets, `report.csv` and
/// `manifest.json` under the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ReportBundle> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    for sub in ["models", "history", "adversarial"] {
        std::fs::create_dir_all(out.join(sub))?;
    }
    let dataset = cfg.dataset_name();
    let set = prepare_dataset(cfg)?;
    let mut seeds = BTreeMap::new();
    if matches!(cfg.dataset, DatasetSource::Synth(_)) {
        seeds.insert("dataset".to_string(), child_seed(cfg.master_seed, "dataset"));
    }
    let split_seed = child_seed(cfg.master_seed, "split");
    seeds.insert("split".to_string(), split_seed);
    let splits = make_splits(&set, &cfg.split, split_seed)?;
    let pairs: Vec<(Family, &Split)> =
        cfg.architectures.iter().flat_map(|&a| splits.iter().map(move |s| (a, s))).collect();
    let outputs: Vec<PairOutput> = pairs.par_iter().map(|&(a, s)| run_pair(cfg, &dataset, &set, a, s)).collect();

    let (mut rows, mut models, mut cells) = (vec![], vec![], vec![]);
    for o in outputs {
        rows.extend(o.rows);
        models.push(o.model);
        cells.extend(o.cells);
        seeds.extend(o.seeds);
    }
    let csv = report_csv(&rows)?;
    std::fs::write(out.join("report.csv"), &csv)?;
    let manifest = Manifest {
        dataset,
        master_seed: cfg.master_seed,
        seeds,
        config: cfg.clone(),
        splits,
        models,
        cells,
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(ReportBundle { rows, csv, manifest })
}

/// Fixed-width text rendering of report rows.
pub fn make_report_table(rows: &[ReportRow]) -> String {
    let cells: Vec<Vec<String>> = std::iter::once(REPORT_COLUMNS.iter().map(|s| s.to_string()).collect())
        .chain(rows.iter().map(|r| r.record()))
        .collect();
    let widths: Vec<usize> =
        (0..REPORT_COLUMNS.len()).map(|i| cells.iter().map(|row| row[i].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in cells {
        let line: Vec<String> = row.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
