//! Experiment configuration: defaults per command, `key=value` files and
//! command-line overrides.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use foba_core::foba::GoodnessMeasure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    FobaObj,
    FobaGdt,
    ForwardObj,
    ForwardGdt,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::FobaGdt,
        Algorithm::ForwardGdt,
        Algorithm::FobaObj,
        Algorithm::ForwardObj,
    ];

    pub fn measure(self) -> GoodnessMeasure {
        match self {
            Algorithm::FobaObj | Algorithm::ForwardObj => GoodnessMeasure::ObjectiveReduction,
            Algorithm::FobaGdt | Algorithm::ForwardGdt => GoodnessMeasure::GradientMagnitude,
        }
    }

    pub fn backward(self) -> bool {
        matches!(self, Algorithm::FobaObj | Algorithm::FobaGdt)
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FobaObj => "foba-obj",
            Algorithm::FobaGdt => "foba-gdt",
            Algorithm::ForwardObj => "forward-obj",
            Algorithm::ForwardGdt => "forward-gdt",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "foba-obj" => Ok(Algorithm::FobaObj),
            "foba-gdt" => Ok(Algorithm::FobaGdt),
            "forward-obj" => Ok(Algorithm::ForwardObj),
            "forward-gdt" => Ok(Algorithm::ForwardGdt),
            other => bail!("unknown algorithm {other:?} (expected foba-obj, foba-gdt, forward-obj, forward-gdt)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopChoice {
    /// Thresholds computed from the planted support.
    Truth,
    Eps(f64),
    Delta(f64),
    Sparsity(usize),
    /// Sparsity level taken from the sweep value of each run.
    Sweep,
    Exhaust,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    LogisticSynthetic,
    CrfSynthetic,
    Dataset,
    Select,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Logistic,
    Chain,
}

impl FromStr for DataKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "logistic" => Ok(DataKind::Logistic),
            "crf" | "chain" => Ok(DataKind::Chain),
            other => bail!("unknown objective {other:?} (expected logistic or crf)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub algorithms: Vec<Algorithm>,
    pub stop: StopChoice,
    pub sweep: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
    pub n: usize,
    pub d: usize,
    pub lambda: f64,
    pub beta_norm: f64,
    pub length: usize,
    pub channels: usize,
    pub states: usize,
    pub labels: usize,
    pub transition_strength: f64,
    pub emission_strength: f64,
    /// Inner-solver tolerance; `None` picks the default of the data kind.
    pub grad_tol: Option<f64>,
    pub max_iter: usize,
    pub group_size: Option<usize>,
    pub one_based: bool,
    pub objective: DataKind,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn defaults(command: Command) -> Self {
        let base = Self {
            command,
            algorithms: Algorithm::ALL.to_vec(),
            stop: StopChoice::Truth,
            sweep: (5..=14).collect(),
            trials: 50,
            seed: 1,
            jobs: 1,
            out: PathBuf::from("out"),
            n: 100,
            d: 500,
            lambda: 0.01,
            beta_norm: 5.0,
            length: 800,
            channels: 4,
            states: 5,
            labels: 4,
            transition_strength: 2.0,
            emission_strength: 3.0,
            grad_tol: None,
            max_iter: 500,
            group_size: None,
            one_based: false,
            objective: DataKind::Logistic,
            train: None,
            test: None,
        };
        match command {
            Command::LogisticSynthetic => base,
            Command::CrfSynthetic => Self {
                stop: StopChoice::Sweep,
                sweep: vec![10, 15, 20, 25, 30],
                trials: 20,
                ..base
            },
            Command::Dataset => Self {
                stop: StopChoice::Sweep,
                sweep: (1..=7).map(|k| 10 * k).collect(),
                trials: 1,
                lambda: 1e-4,
                ..base
            },
            Command::Select => Self {
                algorithms: vec![Algorithm::FobaGdt],
                stop: StopChoice::Sparsity(10),
                trials: 1,
                lambda: 1e-4,
                ..base
            },
        }
    }

    /// Explicit tolerance, else 1e-4 for chain data, 1e-8 for the
    /// logistic sweep and 1e-6 otherwise.
    pub fn grad_tol(&self) -> f64 {
        self.grad_tol
            .unwrap_or(match (self.command, self.objective) {
                (Command::CrfSynthetic, _) | (Command::Select, DataKind::Chain) => 1e-4,
                (Command::LogisticSynthetic, _) => 1e-8,
                _ => 1e-6,
            })
    }

    /// Applies one `key=value` setting; unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let ctx = || format!("invalid value {value:?} for {key}");
        match key.trim() {
            "algorithms" | "algo" => {
                self.algorithms = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(Algorithm::from_str)
                    .collect::<Result<_>>()?;
            }
            "stop" => {
                self.stop = match value {
                    "truth" => StopChoice::Truth,
                    "sweep" => StopChoice::Sweep,
                    "exhaust" => StopChoice::Exhaust,
                    _ => bail!("stop must be truth, sweep or exhaust; use eps, delta or sparsity for fixed rules"),
                }
            }
            "eps" => self.stop = StopChoice::Eps(value.parse().with_context(ctx)?),
            "delta" => self.stop = StopChoice::Delta(value.parse().with_context(ctx)?),
            "sparsity" => self.stop = StopChoice::Sparsity(value.parse().with_context(ctx)?),
            "sweep" => self.sweep = parse_sweep(value).with_context(ctx)?,
            "trials" => self.trials = value.parse().with_context(ctx)?,
            "seed" => self.seed = value.parse().with_context(ctx)?,
            "jobs" => self.jobs = value.parse().with_context(ctx)?,
            "out" => self.out = PathBuf::from(value),
            "n" => self.n = value.parse().with_context(ctx)?,
            "d" => self.d = value.parse().with_context(ctx)?,
            "lambda" => self.lambda = value.parse().with_context(ctx)?,
            "beta_norm" => self.beta_norm = value.parse().with_context(ctx)?,
            "length" => self.length = value.parse().with_context(ctx)?,
            "channels" => self.channels = value.parse().with_context(ctx)?,
            "states" => self.states = value.parse().with_context(ctx)?,
            "labels" => self.labels = value.parse().with_context(ctx)?,
            "transition_strength" => self.transition_strength = value.parse().with_context(ctx)?,
            "emission_strength" => self.emission_strength = value.parse().with_context(ctx)?,
            "grad_tol" => self.grad_tol = Some(value.parse().with_context(ctx)?),
            "max_iter" => self.max_iter = value.parse().with_context(ctx)?,
            "group_size" => self.group_size = Some(value.parse().with_context(ctx)?),
            "one_based" => self.one_based = parse_bool(value).with_context(ctx)?,
            "objective" => self.objective = value.parse()?,
            "train" => self.train = Some(PathBuf::from(value)),
            "test" => self.test = Some(PathBuf::from(value)),
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    /// Reads `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected key=value, got {raw:?}", i + 1))?;
            self.set(k, v)
                .with_context(|| format!("config line {}", i + 1))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            bail!("no algorithms selected");
        }
        if self.trials == 0 {
            bail!("trials must be >= 1");
        }
        if self.jobs == 0 {
            bail!("jobs must be >= 1");
        }
        if !(self.grad_tol() > 0.0) || self.max_iter == 0 {
            bail!("grad_tol must be > 0 and max_iter >= 1");
        }
        if !(self.lambda >= 0.0) {
            bail!("lambda must be >= 0");
        }
        if self.group_size == Some(0) {
            bail!("group_size must be >= 1");
        }
        match self.stop {
            StopChoice::Eps(v) | StopChoice::Delta(v) if !(v > 0.0) => {
                bail!("threshold must be > 0")
            }
            StopChoice::Sparsity(0) => bail!("sparsity must be >= 1"),
            StopChoice::Eps(_)
                if self
                    .algorithms
                    .iter()
                    .any(|a| a.measure() != GoodnessMeasure::GradientMagnitude) =>
            {
                bail!("--eps applies to gradient algorithms only; use --delta for objective algorithms")
            }
            StopChoice::Delta(_)
                if self
                    .algorithms
                    .iter()
                    .any(|a| a.measure() != GoodnessMeasure::ObjectiveReduction) =>
            {
                bail!("--delta applies to objective algorithms only; use --eps for gradient algorithms")
            }
            _ => {}
        }
        let needs_sweep = matches!(
            self.command,
            Command::LogisticSynthetic | Command::CrfSynthetic | Command::Dataset
        );
        if needs_sweep && (self.sweep.is_empty() || self.sweep.contains(&0)) {
            bail!("sweep must list positive sparsity values");
        }
        match self.command {
            Command::LogisticSynthetic => {
                if self.n == 0 || !self.n.is_multiple_of(2) {
                    bail!("n must be positive and even");
                }
                if let Some(&k) = self.sweep.iter().find(|&&k| k > self.d) {
                    bail!("sweep value {k} exceeds d={}", self.d);
                }
                if self.stop == StopChoice::Sweep {
                    bail!("logistic-synthetic sweeps the planted sparsity; pick truth, eps, delta, sparsity or exhaust");
                }
            }
            Command::CrfSynthetic => {
                if self.length == 0 || self.channels == 0 || self.states == 0 || self.labels == 0 {
                    bail!("chain sizes must be positive");
                }
                if self.stop == StopChoice::Truth {
                    bail!("crf-synthetic has no planted support; use sweep, sparsity or exhaust");
                }
            }
            Command::Dataset => {
                if self.stop == StopChoice::Truth {
                    bail!("dataset runs have no planted support; use sweep, sparsity, eps, delta or exhaust");
                }
                if self.train.is_none() {
                    bail!("dataset needs a training file");
                }
            }
            Command::Select => {
                if matches!(self.stop, StopChoice::Truth | StopChoice::Sweep) {
                    bail!("select needs a fixed rule: eps, delta, sparsity or exhaust");
                }
                if self.train.is_none() {
                    bail!("select needs an input file");
                }
            }
        }
        Ok(())
    }
}

/// `a..b` (inclusive), `a..b:step`, or a comma list.
pub fn parse_sweep(s: &str) -> Result<Vec<usize>> {
    if let Some((lo, rest)) = s.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((h, st)) => (h, st.trim().parse::<usize>()?),
            None => (rest, 1),
        };
        let (lo, hi): (usize, usize) = (lo.trim().parse()?, hi.trim().parse()?);
        if step == 0 || lo > hi {
            bail!("empty range {s:?}");
        }
        return Ok((lo..=hi).step_by(step).collect());
    }
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| Ok(t.trim().parse()?))
        .collect()
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        _ => bail!("expected a boolean"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_protocols() {
        let c = ExperimentConfig::defaults(Command::LogisticSynthetic);
        assert_eq!(c.sweep, (5..=14).collect::<Vec<_>>());
        assert_eq!((c.trials, c.n, c.d, c.lambda), (50, 100, 500, 0.01));
        let c = ExperimentConfig::defaults(Command::CrfSynthetic);
        assert_eq!(c.sweep, vec![10, 15, 20, 25, 30]);
        assert_eq!((c.length, c.channels, c.states, c.labels), (800, 4, 5, 4));
        assert_eq!(ExperimentConfig::defaults(Command::Dataset).lambda, 1e-4);
    }

    #[test]
    fn file_settings_and_unknown_keys() {
        let mut c = ExperimentConfig::defaults(Command::LogisticSynthetic);
        c.apply_text("# comment\ntrials = 3\nsweep=5..9:2\nalgorithms=foba-gdt,forward-gdt\n")
            .unwrap();
        assert_eq!(c.trials, 3);
        assert_eq!(c.sweep, vec![5, 7, 9]);
        assert_eq!(
            c.algorithms,
            vec![Algorithm::FobaGdt, Algorithm::ForwardGdt]
        );
        assert!(c.apply_text("bogus=1\n").is_err());
        assert!(c.apply_text("trials\n").is_err());
        assert!(c.set("sweep", "3,4, 8").is_ok());
        assert_eq!(c.sweep, vec![3, 4, 8]);
    }

    #[test]
    fn mismatched_thresholds_are_rejected() {
        let mut c = ExperimentConfig::defaults(Command::LogisticSynthetic);
        c.stop = StopChoice::Eps(0.1);
        assert!(c.validate().is_err());
        c.algorithms = vec![Algorithm::FobaGdt];
        assert!(c.validate().is_ok());
        c.stop = StopChoice::Delta(0.1);
        assert!(c.validate().is_err());
    }
}
