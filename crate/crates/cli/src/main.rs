//! `advkit` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use advkit::attack::AttackKind;
use advkit::eval::MetricReport;
use advkit::harness::{
    init_threads, make_report_table, prepare_dataset, read_container, read_report, run_experiment, synth_dataset,
    train_target, Container, ExperimentConfig, SynthSpec,
};
use advkit::models::{check_gradients, ArchSpec, Family, Model};
use advkit::train::make_splits;
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

/// Adversarial attacks on CNN classifiers of EEG epochs.
#[derive(Debug, Parser)]
#[command(name = "advkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic epoch container.
    Synth {
        /// Output container path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON synthetic dataset spec; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the target models of an experiment configuration.
    Train(GridArgs),
    /// Run the attack grid of an experiment configuration.
    Attack(GridArgs),
    /// Run the attack grid over a list of perturbation sizes.
    Sweep(GridArgs),
    /// Score a saved model on a container.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Print the report table of a finished run.
    Report {
        /// Run directory holding report.csv, or the CSV itself.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare model gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value = "eegnet")]
        arch: Family,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 8)]
        channels: usize,
        #[arg(long, default_value_t = 64)]
        samples: usize,
    },
}

#[derive(Debug, Args)]
struct GridArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Perturbation size; repeat for a sweep.
    #[arg(long = "epsilon")]
    epsilons: Vec<f64>,
    /// Architecture; repeat for several.
    #[arg(long = "arch")]
    archs: Vec<Family>,
    /// Attack kind; repeat for several.
    #[arg(long = "attack")]
    attacks: Vec<AttackKind>,
}

/// Perturbation sizes swept when neither the flags nor the file list any.
const DEFAULT_SWEEP: [f64; 6] = [0.0, 0.01, 0.02, 0.05, 0.1, 0.2];

fn load_config(args: &GridArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    if !args.epsilons.is_empty() {
        cfg.epsilons = args.epsilons.clone();
    }
    if !args.archs.is_empty() {
        cfg.architectures = args.archs.clone();
    }
    if !args.attacks.is_empty() {
        let template = cfg.attacks[0].clone();
        cfg.attacks = args
            .attacks
            .iter()
            .map(|&kind| cfg.attacks.iter().find(|a| a.kind == kind).cloned().unwrap_or(advkit::attack::AttackSpec { kind, ..template.clone() }))
            .collect();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_grid(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let bundle = run_experiment(cfg)?;
    print!("{}", make_report_table(&bundle.rows));
    let failed: Vec<_> = bundle.manifest.cells.iter().filter_map(|c| c.error.as_ref().map(|e| (c, e))).collect();
    for (c, e) in &failed {
        eprintln!("cell {} {} {} eps {} failed: {e}", c.arch, c.split, c.attack, c.epsilon);
    }
    println!("wrote {}", cfg.output_dir.join("report.csv").display());
    Ok(())
}

fn train(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let set = prepare_dataset(cfg)?;
    let splits = make_splits(&set, &cfg.split, advkit::harness::child_seed(cfg.master_seed, "split"))?;
    std::fs::create_dir_all(cfg.output_dir.join("models"))?;
    for &arch in &cfg.architectures {
        for split in &splits {
            let (model, history) = train_target(cfg, &set, arch, split)?;
            let path = cfg.output_dir.join("models").join(format!("{}_{}.adwt", arch.name(), split.name));
            model.save(&path)?;
            let report = MetricReport::of_model(&model, &set.select(&split.test))?;
            println!(
                "{arch} {}: best epoch {} test rca {:.4} bca {:.4} -> {}",
                split.name,
                history.best_epoch,
                report.rca,
                report.bca,
                path.display()
            );
        }
    }
    Ok(())
}

fn report_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("report.csv")
    } else {
        out.to_path_buf()
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads();
    match cli.command {
        Command::Synth { out, seed, config } => {
            let mut spec = match &config {
                Some(p) => serde_json::from_str::<SynthSpec>(&std::fs::read_to_string(p)?)?,
                None => SynthSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let set = synth_dataset(&spec)?;
            let provenance = serde_json::json!({ "generator": "synth", "spec": spec });
            Container::new(set, provenance).write(&out)?;
            println!("wrote {} ({} epochs)", out.display(), spec.epochs);
        }
        Command::Train(args) => train(&load_config(&args)?)?,
        Command::Attack(args) => run_grid(&load_config(&args)?)?,
        Command::Sweep(args) => {
            let mut cfg = load_config(&args)?;
            if cfg.epsilons.is_empty() {
                cfg.epsilons = DEFAULT_SWEEP.to_vec();
            }
            run_grid(&cfg)?
        }
        Command::Eval { model, data } => {
            let model = Model::load(&model).with_context(|| format!("loading {}", model.display()))?;
            let set = read_container(&data)?;
            let report = MetricReport::of_model(&model, &set)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Report { out } => {
            let rows = read_report(report_path(&out))?;
            print!("{}", make_report_table(&rows));
        }
        Command::Gradcheck { arch, seed, classes, channels, samples } => {
            let spec = ArchSpec::new(arch, channels, samples, classes, 128.0);
            let report = check_gradients(&spec, seed, 2)?;
            println!("arch {arch} max_rel_err {:.3e} tolerance {:.0e}", report.max_rel_err, report.tolerance);
            if !report.passed() {
                bail!("gradient check failed at {:?}", report.worst_coordinate);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
