//! Command-line front end. Exit codes: 0 success, 1 runtime or config
//! error, 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;

use crate::error::{Error, Result};
use crate::experiment::{
    run_compare, run_evaluation, run_export_plot_data, run_prepare, run_training, ExperimentConfig,
    ModelKind, ModelSection, Registry, ResolvedConfig, CHECKPOINT_FILE,
};
use crate::train::Protocol;

#[derive(Debug, Parser)]
#[command(
    name = "ethfpt",
    version,
    about = "Frozen pretrained transformers for daily ETH forecasting"
)]
pub struct Cli {
    /// Experiment TOML file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `data.csv`.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Overrides `model.kind` (gpt2, llama, ann, mlp, lstm, patchtst).
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Overrides `train.protocol` (short_term, few_shot).
    #[arg(long, global = true)]
    pub protocol: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean, regularize and split the dataset.
    Prepare,
    /// Train under the configured protocol, evaluate and register the run.
    Train,
    /// Re-evaluate a saved checkpoint on the test split.
    Evaluate {
        /// Checkpoint file, or a run directory containing one.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train with the few-shot protocol.
    Fewshot,
    /// Print the comparison table for one protocol.
    Compare,
    /// Write the dataset and prediction series used for plotting.
    ExportPlotData,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

impl Cli {
    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig {
                data: Default::default(),
                model: ModelSection::of_kind(ModelKind::Gpt2),
                train: Default::default(),
            },
        };
        if let Some(m) = &self.model {
            let kind: ModelKind = m
                .parse()
                .map_err(|_| usage(format!("unknown model `{m}`")))?;
            if kind != cfg.model.kind {
                cfg.model = ModelSection::of_kind(kind);
            }
        }
        if let Some(d) = &self.dataset {
            cfg.data.csv = Some(d.clone());
        }
        if let Some(s) = self.seed {
            cfg.train.seed = Some(s);
        }
        if let Some(p) = &self.protocol {
            cfg.train.protocol = Some(
                p.parse()
                    .map_err(|_| usage(format!("unknown protocol `{p}`")))?,
            );
        }
        Ok(cfg)
    }

    fn resolved(&self, force: Option<Protocol>) -> Result<ResolvedConfig> {
        let mut cfg = self.experiment()?;
        if let Some(p) = force {
            cfg.train.protocol = Some(p);
        }
        cfg.resolve()
    }

    fn out_dir(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

fn checkpoint_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(CHECKPOINT_FILE)
    } else {
        p.to_path_buf()
    }
}

/// Executes a parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    let registry = Registry::from_env();
    match &cli.command {
        Command::Prepare => {
            let cfg = cli.experiment()?;
            let out = cli.out_dir("prepared");
            let m = run_prepare(&cfg.data, &out)?;
            for s in &m.segments {
                println!("{:<5} {:>5} days  {} .. {}", s.name, s.len, s.first, s.last);
            }
            println!("wrote {}", out.display());
        }
        Command::Train | Command::Fewshot => {
            let force = matches!(cli.command, Command::Fewshot).then_some(Protocol::FewShot);
            let resolved = cli.resolved(force)?;
            let outcome = run_training(&resolved, cli.out.as_deref(), &registry)?;
            let m = &outcome.metrics;
            println!(
                "{} {} {}: mse {:.6} mae {:.6} rmse {:.6} ({})",
                outcome.record.id,
                resolved.label,
                resolved.train.protocol,
                m.mse,
                m.mae,
                m.rmse,
                m.scale_label
            );
            info!("artifacts in {}", outcome.out_dir.display());
        }
        Command::Evaluate { checkpoint } => {
            let resolved = cli.resolved(None)?;
            let ckpt = checkpoint_path(checkpoint);
            let out = cli
                .out
                .clone()
                .unwrap_or_else(|| ckpt.parent().unwrap_or(Path::new(".")).join("eval"));
            let (m, _) = run_evaluation(&resolved, &ckpt, &out)?;
            println!(
                "{}: mse {:.6} mae {:.6} rmse {:.6} ({})",
                resolved.label, m.mse, m.mae, m.rmse, m.scale_label
            );
        }
        Command::Compare => {
            let protocol = match &cli.protocol {
                Some(p) => p
                    .parse()
                    .map_err(|_| usage(format!("unknown protocol `{p}`")))?,
                None => match &cli.config {
                    Some(_) => cli.resolved(None)?.train.protocol,
                    None => Protocol::ShortTerm,
                },
            };
            print!("{}", run_compare(&registry, protocol)?.render());
        }
        Command::ExportPlotData => {
            let cfg = cli.experiment()?;
            let out = cli.out_dir("plot_data");
            let (a, b) = run_export_plot_data(&cfg.data, &registry, &out)?;
            println!("wrote {} and {}", a.display(), b.display());
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) => 2,
                _ => 1,
            }
        }
    }
}
