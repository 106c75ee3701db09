//! Experiment runner and feature-selection front end for the `foba-core`
//! greedy selection engine.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod report;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::{Command, ExperimentConfig, StopChoice};

#[derive(Debug, Parser)]
#[command(
    name = "foba-select",
    version,
    about = "Forward-backward greedy feature selection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Planted-support logistic regression sweep.
    LogisticSynthetic(CommonArgs),
    /// Synthetic linear-chain CRF sweep over sparsity levels.
    CrfSynthetic(CommonArgs),
    /// Sparsity sweep on a sparse classification train/test pair.
    Dataset {
        train: PathBuf,
        test: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Select features on one data file and report them.
    Select {
        input: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// `key=value` settings file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated: foba-obj, foba-gdt, forward-obj, forward-gdt.
    #[arg(long)]
    pub algo: Option<String>,
    #[arg(long, group = "rule")]
    pub eps: Option<f64>,
    #[arg(long, group = "rule")]
    pub delta: Option<f64>,
    #[arg(long, group = "rule")]
    pub sparsity: Option<usize>,
    #[arg(long, group = "rule")]
    pub exhaust: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report feature and group indices starting at 1.
    #[arg(long)]
    pub one_based: bool,
    /// Sweep values: `a..b`, `a..b:step` or a comma list.
    #[arg(long)]
    pub sweep: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Input kind for `select`: logistic or crf.
    #[arg(long)]
    pub objective: Option<String>,
}

/// Defaults, then the config file, then flags.
pub fn build_config(
    command: Command,
    common: &CommonArgs,
    train: Option<PathBuf>,
    test: Option<PathBuf>,
) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::defaults(command);
    if let Some(path) = &common.config {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_text(&text)
            .with_context(|| format!("in {}", path.display()))?;
    }
    if let Some(a) = &common.algo {
        cfg.set("algorithms", a)?;
    }
    if let Some(v) = common.eps {
        cfg.stop = StopChoice::Eps(v);
    }
    if let Some(v) = common.delta {
        cfg.stop = StopChoice::Delta(v);
    }
    if let Some(k) = common.sparsity {
        cfg.stop = StopChoice::Sparsity(k);
    }
    if common.exhaust {
        cfg.stop = StopChoice::Exhaust;
    }
    if let Some(s) = &common.sweep {
        cfg.set("sweep", s)?;
    }
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if let Some(v) = common.trials {
        cfg.trials = v;
    }
    if let Some(v) = common.jobs {
        cfg.jobs = v;
    }
    if let Some(v) = &common.out {
        cfg.out = v.clone();
    }
    if common.one_based {
        cfg.one_based = true;
    }
    if let Some(v) = common.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = common.group_size {
        cfg.group_size = Some(v);
    }
    if let Some(v) = &common.objective {
        cfg.set("objective", v)?;
    }
    if train.is_some() {
        cfg.train = train;
    }
    if test.is_some() {
        cfg.test = test;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn config_from_cli(cli: Cli) -> Result<ExperimentConfig> {
    match cli.command {
        CliCommand::LogisticSynthetic(c) => {
            build_config(Command::LogisticSynthetic, &c, None, None)
        }
        CliCommand::CrfSynthetic(c) => build_config(Command::CrfSynthetic, &c, None, None),
        CliCommand::Dataset {
            train,
            test,
            common,
        } => build_config(Command::Dataset, &common, Some(train), test),
        CliCommand::Select { input, common } => {
            build_config(Command::Select, &common, Some(input), None)
        }
    }
}

/// Runs the configured command and writes its CSV files under `cfg.out`.
pub fn execute(cfg: &ExperimentConfig) -> Result<()> {
    match cfg.command {
        Command::LogisticSynthetic | Command::CrfSynthetic | Command::Dataset => {
            let report = match cfg.command {
                Command::LogisticSynthetic => experiments::run_logistic_synthetic(cfg)?,
                Command::CrfSynthetic => experiments::run_crf_synthetic(cfg)?,
                _ => experiments::run_dataset(cfg)?,
            };
            report::write_sweep(&cfg.out, &report, &cfg.algorithms)?;
            log::info!(
                "{} runs written to {}",
                report.results.len(),
                cfg.out.display()
            );
        }
        Command::Select => {
            let sel = experiments::run_select(cfg)?;
            report::write_selection(&cfg.out, &sel, cfg.one_based)?;
            println!(
                "{}: {} features selected, objective {}, stop {}",
                sel.algorithm,
                sel.result.nnz(),
                report::num(sel.result.value),
                sel.result.stop_reason
            );
        }
    }
    Ok(())
}
