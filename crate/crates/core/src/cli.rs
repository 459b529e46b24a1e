//! `hfz` command line. Every failure prints one `error:` line on stderr and
//! maps to an exit code: 1 config/usage, 2 data/format/io, 3 numerical.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::{DatasetKind, FLConfig};
use crate::data::save_partition;
use crate::embedding::write_embeddings_csv;
use crate::error::{Error, Result};
use crate::experiment::{run_experiment, ExperimentSpec, SUMMARY_FILE};
use crate::federation::{evaluate_state, resume_training, Counters};
use crate::metrics::MetricsReport;
use crate::model::ModelSpec;
use crate::runner::{
    load_dataset, prepare, results_root, run_and_write, CHECKPOINT_FILE, METRICS_FILE,
};

#[derive(Parser, Debug)]
#[command(
    name = "hfz",
    version,
    about = "Deterministic federated learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct ConfigArgs {
    /// TOML config file; defaults apply to anything it leaves out.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// `key=value` overrides applied after the file, e.g. `method=fedavg`.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<FLConfig> {
        match &self.config {
            Some(path) => FLConfig::load(path, &self.overrides),
            None => FLConfig::from_overrides(&self.overrides),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw the holdout and client partition and save it as JSON.
    Partition {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train one configuration and write checkpoint, metrics, and report.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory; defaults to `<results root>/<fingerprint>`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Continue a checkpoint up to the configured number of rounds.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Total rounds to reach.
        #[arg(long)]
        rounds: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Recompute gACC, pACC and zACC from a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Run a sweep file; finished runs are reused.
    Ablate {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Write every client's eval-mode embeddings as CSV.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Parameter counts of the generated side against a plain classifier.
    Budget {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        json: bool,
    },
}

fn out_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn print_metrics<W: Write>(out: &mut W, r: &MetricsReport) -> Result<()> {
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.2}"));
    writeln!(
        out,
        "{} seed={} fingerprint={} gACC={} pACC={:.2} zACC={} collapse={}",
        r.method.as_str(),
        r.seed,
        r.fingerprint,
        opt(r.gacc),
        r.pacc,
        opt(r.zacc),
        r.collapse.map_or("n/a".to_string(), |c| format!("{c:.4}")),
    )
    .map_err(out_err)
}

fn load_config_data(ck: &Checkpoint) -> Result<(crate::data::Dataset, crate::data::Partition)> {
    prepare(&ck.config)
}

fn export_embeddings(checkpoint: &Path, out: &Path) -> Result<usize> {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = &ck.config;
    if !cfg.method.uses_extractor() {
        return Err(Error::Config(format!(
            "method {} has no embeddings",
            cfg.method.as_str()
        )));
    }
    let (dataset, partition) = load_config_data(&ck)?;
    let spec = ModelSpec::from_config(cfg, dataset.feature_dim(), dataset.num_classes())?;
    let clients = partition.client_datasets(cfg.test_fraction, cfg.seed)?;
    let mut buf = Vec::new();
    let mut rows = 0;
    for (i, c) in clients.iter().enumerate() {
        let mut idx: Vec<usize> = c.train.iter().chain(&c.eval).copied().collect();
        idx.sort_unstable();
        let (x, y) = dataset.batch(&idx)?;
        let emb = spec.embeddings(&ck.state.global, &x)?;
        write_embeddings_csv(&mut buf, c.id, &y, &emb, i == 0)?;
        rows += idx.len();
    }
    crate::io::write_atomic(out, &buf)?;
    Ok(rows)
}

fn run<W: Write>(cli: Cli, out: &mut W) -> Result<()> {
    match cli.command {
        Command::Partition { cfg, out: path } => {
            let cfg = cfg.load()?;
            let (_, partition) = prepare(&cfg)?;
            save_partition(&partition, &path)?;
            let sizes: Vec<usize> = partition.client_indices.iter().map(Vec::len).collect();
            writeln!(
                out,
                "wrote {} ({} clients, holdout {}, sizes {:?})",
                path.display(),
                partition.num_clients(),
                partition.holdout.len(),
                sizes
            )
            .map_err(out_err)?;
        }
        Command::Train { cfg, out_dir } => {
            let cfg = cfg.load()?;
            let dir = out_dir.unwrap_or_else(|| results_root().join(cfg.fingerprint()));
            let run = run_and_write(&cfg, &dir)?;
            print_metrics(out, &run.report)?;
            writeln!(out, "wrote {}", dir.display()).map_err(out_err)?;
        }
        Command::Resume {
            checkpoint,
            rounds,
            out_dir,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let cfg = FLConfig {
                rounds,
                ..ck.config.clone()
            };
            cfg.validate()?;
            let (dataset, partition) = prepare(&cfg)?;
            let (state, report) =
                resume_training(&cfg, &partition, &dataset, ck.state, &Counters::new())?;
            Checkpoint::new(cfg, state).save(out_dir.join(CHECKPOINT_FILE))?;
            crate::io::write_atomic(&out_dir.join(METRICS_FILE), report.to_csv().as_bytes())?;
            print_metrics(out, &report)?;
        }
        Command::Eval { checkpoint, json } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let (dataset, partition) = load_config_data(&ck)?;
            let report = evaluate_state(
                &ck.config,
                &partition,
                &dataset,
                &ck.state,
                &Counters::new(),
            )?;
            if json {
                let text = serde_json::to_string_pretty(&report).expect("report serializes");
                writeln!(out, "{text}").map_err(out_err)?;
            } else {
                print_metrics(out, &report)?;
            }
        }
        Command::Ablate { spec } => {
            let spec = ExperimentSpec::load(&spec)?;
            let outcome = run_experiment(&spec)?;
            for c in &outcome.cells {
                let fmt = |s: Option<crate::experiment::Stat>| {
                    s.map_or("n/a".to_string(), |s| format!("{:.2}±{:.2}", s.mean, s.std))
                };
                writeln!(
                    out,
                    "{} [{}] gACC={} pACC={} zACC={}",
                    c.cell.fingerprint(),
                    c.cell.label(),
                    fmt(c.gacc),
                    fmt(c.pacc),
                    fmt(c.zacc)
                )
                .map_err(out_err)?;
            }
            writeln!(
                out,
                "{} new runs, {} reused, summary in {}",
                outcome.new_runs,
                outcome.reused_runs,
                spec.output_dir.join(SUMMARY_FILE).display()
            )
            .map_err(out_err)?;
        }
        Command::ExportEmbeddings {
            checkpoint,
            out: path,
        } => {
            let rows = export_embeddings(&checkpoint, &path)?;
            writeln!(out, "wrote {rows} rows to {}", path.display()).map_err(out_err)?;
        }
        Command::Budget { cfg, json } => {
            let cfg = cfg.load()?;
            let (features, classes) = match cfg.dataset.kind {
                DatasetKind::Synthetic => (cfg.dataset.feature_dim, cfg.dataset.num_classes),
                DatasetKind::Idx => {
                    let d = load_dataset(&cfg)?;
                    (d.feature_dim(), d.num_classes())
                }
            };
            let spec = ModelSpec::from_config(&cfg, features, classes)?;
            let report = spec.budget()?;
            if json {
                let text = serde_json::to_string_pretty(&report).expect("budget serializes");
                writeln!(out, "{text}").map_err(out_err)?;
            } else {
                writeln!(out, "{report}").map_err(out_err)?;
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
pub fn cli_main<I, T, W, E>(args: I, out: &mut W, err: &mut E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
    W: Write,
    E: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    1
                }
            };
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
