//! Data container, synthetic data, seeding and the experiment runner.

pub mod config;
pub mod container;
pub mod runner;
pub mod seeds;
pub mod synth;

pub use config::{DatasetSource, ExperimentConfig, PreprocessStep};
pub use container::{read_container, write_container, Container};
pub use runner::{
    make_report_table, prepare_dataset, read_report, report_csv, run_experiment, train_target, CellRecord, Manifest,
    ModelRecord, ReportBundle, ReportRow, REPORT_COLUMNS,
};
pub use seeds::child_seed;
pub use synth::{synth_dataset, SynthSpec};

/// Worker cap read from this environment variable.
pub const THREADS_ENV: &str = "ADVKIT_THREADS";

/// Sizes the global worker pool from `ADVKIT_THREADS` when it holds a
/// positive integer. Returns the pool size in effect.
pub fn init_threads() -> usize {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    rayon::current_num_threads()
}
