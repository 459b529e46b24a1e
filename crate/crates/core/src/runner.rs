//! Data preparation and single-run output files shared by the CLI and sweeps.

use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::config::{DatasetKind, FLConfig};
use crate::data::{
    holdout_then_partition, load_idx, load_partition, synth_shifted, Dataset, Partition,
};
use crate::error::{Error, Result};
use crate::federation::{run_training_with, Counters, GlobalState};
use crate::metrics::MetricsReport;

/// Environment variable that overrides the default results directory.
pub const RESULTS_ENV: &str = "HFZ_RESULTS_DIR";

pub fn results_root() -> PathBuf {
    std::env::var_os(RESULTS_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("results"))
}

pub fn load_dataset(cfg: &FLConfig) -> Result<Dataset> {
    let d = &cfg.dataset;
    match d.kind {
        DatasetKind::Synthetic => synth_shifted(
            d.num_classes,
            d.samples_per_class,
            d.feature_dim,
            d.spread,
            d.seed.unwrap_or(cfg.seed),
        ),
        DatasetKind::Idx => {
            let images = d.images_path.as_ref().ok_or_else(|| {
                Error::Config("dataset.images_path is required for idx data".into())
            })?;
            let labels = d.labels_path.as_ref().ok_or_else(|| {
                Error::Config("dataset.labels_path is required for idx data".into())
            })?;
            load_idx(images, labels)
        }
    }
}

/// The partition named by the config, or a fresh holdout + Dirichlet draw.
pub fn make_partition(cfg: &FLConfig, dataset: &Dataset) -> Result<Partition> {
    match &cfg.partition_path {
        Some(path) => load_partition(path),
        None => holdout_then_partition(
            dataset,
            cfg.holdout_fraction,
            cfg.n_participating,
            cfg.m_nonparticipating,
            cfg.alpha_d,
            cfg.min_per_client,
            cfg.partition_retries,
            cfg.seed,
        ),
    }
}

pub fn prepare(cfg: &FLConfig) -> Result<(Dataset, Partition)> {
    let dataset = load_dataset(cfg)?;
    let partition = make_partition(cfg, &dataset)?;
    Ok((dataset, partition))
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "config.json";

pub struct RunOutput {
    pub dir: PathBuf,
    pub state: GlobalState,
    pub report: MetricsReport,
}

/// Trains and writes config sidecar, checkpoint, metrics CSV, and the JSON
/// report into `dir`. The report is written last and marks the run complete.
pub fn run_and_write(cfg: &FLConfig, dir: &Path) -> Result<RunOutput> {
    let (dataset, partition) = prepare(cfg)?;
    let counters = Counters::new();
    let (state, report) = run_training_with(cfg, &partition, &dataset, &counters)?;
    let write = |name: &str, bytes: &[u8]| crate::io::write_atomic(&dir.join(name), bytes);
    write(
        CONFIG_FILE,
        serde_json::to_string_pretty(cfg)
            .expect("config serializes")
            .as_bytes(),
    )?;
    Checkpoint::new(cfg.clone(), state.clone()).save(dir.join(CHECKPOINT_FILE))?;
    write(METRICS_FILE, report.to_csv().as_bytes())?;
    write(
        REPORT_FILE,
        serde_json::to_string_pretty(&report)
            .expect("report serializes")
            .as_bytes(),
    )?;
    Ok(RunOutput {
        dir: dir.to_path_buf(),
        state,
        report,
    })
}

pub fn load_report(dir: &Path) -> Result<MetricsReport> {
    let path = dir.join(REPORT_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format("report", e.to_string()))
}
