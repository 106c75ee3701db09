//! Experiment runners. Each returns its rows in memory; [`crate::report`]
//! turns them into CSV files.

use std::time::Instant;

use anyhow::{bail, Context, Result};
use foba_core::analysis::{estimation_error, f_measure, threshold_from_truth, truth_rule};
use foba_core::crf::ChainCrfProblem;
use foba_core::datagen::{
    gen_chain, gen_logistic, parse_sparse_classification, read_chain_file, ChainSyntheticSpec,
    LogisticSyntheticSpec, SparseClassification,
};
use foba_core::foba::{
    audit_trace, run_foba, run_forward, FobaConfig, FobaResult, GoodnessMeasure, StoppingRule,
    TranscriptAudit,
};
use foba_core::solver::SolverConfig;
use foba_core::{LogisticL2Problem, Objective};
use rayon::prelude::*;

use crate::config::{Algorithm, Command, DataKind, ExperimentConfig, StopChoice};

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub algorithm: Algorithm,
    pub objective_kind: &'static str,
    pub seed: u64,
    pub k: usize,
    pub f_measure: Option<f64>,
    pub est_error: Option<f64>,
    pub objective: f64,
    pub nnz: usize,
    pub wall_micros: u128,
    pub stop_reason: String,
}

/// One row of `classification.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationRow {
    pub algorithm: Algorithm,
    pub objective_kind: &'static str,
    pub seed: u64,
    pub k: usize,
    pub train_error: f64,
    pub test_error: f64,
    pub objective: f64,
    pub wall_micros: u128,
}

#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    pub results: Vec<ResultRow>,
    pub classification: Vec<ClassificationRow>,
    pub audit: TranscriptAudit,
}

impl SweepReport {
    fn extend(&mut self, other: SweepReport) {
        self.results.extend(other.results);
        self.classification.extend(other.classification);
        self.audit.merge(&other.audit);
    }
}

pub fn solver_config(cfg: &ExperimentConfig) -> SolverConfig {
    SolverConfig {
        grad_tol: cfg.grad_tol(),
        max_iter: cfg.max_iter,
        ..SolverConfig::default()
    }
}

pub fn engine_config(cfg: &ExperimentConfig) -> FobaConfig {
    FobaConfig {
        solver: solver_config(cfg),
        max_forward: None,
        parallel_scan: cfg.jobs == 1,
    }
}

/// Runs `algo` and times the engine alone.
pub fn run_timed(
    p: &(impl Objective + ?Sized),
    algo: Algorithm,
    rule: StoppingRule,
    cfg: &FobaConfig,
) -> foba_core::Result<(FobaResult, u128)> {
    let start = Instant::now();
    let r = if algo.backward() {
        run_foba(p, algo.measure(), rule, cfg)?
    } else {
        run_forward(p, algo.measure(), rule, cfg)?
    };
    Ok((r, start.elapsed().as_micros()))
}

/// Seed of trial `t` at sweep value `k`.
pub fn trial_seed(base: u64, k: usize, t: usize) -> u64 {
    base.wrapping_mul(1_000_003)
        .wrapping_add(k as u64 * 1_000)
        .wrapping_add(t as u64)
}

/// `SparsityLevel(k)`, or `ExhaustAll` when `k` covers every candidate.
pub fn sparsity_rule(k: usize, candidates: usize) -> StoppingRule {
    if k >= candidates {
        StoppingRule::ExhaustAll
    } else {
        StoppingRule::SparsityLevel(k)
    }
}

fn fixed_rule(
    stop: StopChoice,
    algo: Algorithm,
    sweep_value: usize,
    candidates: usize,
) -> Result<StoppingRule> {
    Ok(match stop {
        StopChoice::Eps(v) => StoppingRule::GradientThreshold(v),
        StopChoice::Delta(v) => StoppingRule::ObjectiveThreshold(v),
        StopChoice::Sparsity(k) => sparsity_rule(k, candidates),
        StopChoice::Sweep => sparsity_rule(sweep_value, candidates),
        StopChoice::Exhaust => StoppingRule::ExhaustAll,
        StopChoice::Truth => bail!("{algo}: no planted support to derive a threshold from"),
    })
}

fn in_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("building worker pool")?;
    Ok(pool.install(f))
}

fn logistic_trial(cfg: &ExperimentConfig, k_bar: usize, t: usize) -> Result<SweepReport> {
    let seed = trial_seed(cfg.seed, k_bar, t);
    let planted = gen_logistic(&LogisticSyntheticSpec {
        n: cfg.n,
        d: cfg.d,
        k_bar,
        beta_norm: cfg.beta_norm,
        lambda: cfg.lambda,
        seed,
    })?;
    let p = &planted.problem;
    let engine = engine_config(cfg);
    let truth_eps = threshold_from_truth(
        p,
        &planted.support,
        GoodnessMeasure::GradientMagnitude,
        &engine.solver,
    )?;
    let beta_bar = truth_eps.beta_bar.clone();
    let mut truth_delta = None;
    let mut report = SweepReport::default();
    for &algo in &cfg.algorithms {
        let rule = match (cfg.stop, algo.measure()) {
            (StopChoice::Truth, GoodnessMeasure::GradientMagnitude) => truth_rule(
                GoodnessMeasure::GradientMagnitude,
                truth_eps.value,
                &engine.solver,
            ),
            (StopChoice::Truth, GoodnessMeasure::ObjectiveReduction) => {
                let delta = match truth_delta {
                    Some(v) => v,
                    None => {
                        let v = threshold_from_truth(
                            p,
                            &planted.support,
                            GoodnessMeasure::ObjectiveReduction,
                            &engine.solver,
                        )?
                        .value;
                        truth_delta = Some(v);
                        v
                    }
                };
                truth_rule(GoodnessMeasure::ObjectiveReduction, delta, &engine.solver)
            }
            (stop, _) => fixed_rule(stop, algo, k_bar, cfg.d)?,
        };
        let (r, wall) =
            run_timed(p, algo, rule, &engine).with_context(|| format!("{algo} on seed {seed}"))?;
        report.audit.merge(&audit_trace(&r.trace));
        report.results.push(ResultRow {
            algorithm: algo,
            objective_kind: "logistic",
            seed,
            k: k_bar,
            f_measure: Some(f_measure(&r.support, &planted.support)?),
            est_error: Some(estimation_error(&r.beta, &beta_bar)?),
            objective: r.value,
            nnz: r.nnz(),
            wall_micros: wall,
            stop_reason: r.stop_reason.to_string(),
        });
    }
    Ok(report)
}

/// Planted-support logistic sweep: every sweep value, trial and algorithm.
pub fn run_logistic_synthetic(cfg: &ExperimentConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = cfg
        .sweep
        .iter()
        .flat_map(|&k| (0..cfg.trials).map(move |t| (k, t)))
        .collect();
    let parts: Vec<Result<SweepReport>> = in_pool(cfg.jobs, || {
        jobs.par_iter()
            .map(|&(k, t)| logistic_trial(cfg, k, t))
            .collect()
    })?;
    let mut report = SweepReport::default();
    for part in parts {
        report.extend(part?);
    }
    Ok(report)
}

/// Chain spec for the synthetic CRF study.
pub fn chain_spec(cfg: &ExperimentConfig, seed: u64) -> ChainSyntheticSpec {
    ChainSyntheticSpec {
        length: cfg.length,
        channels: cfg.channels,
        states: cfg.states,
        labels: cfg.labels,
        transition_strength: cfg.transition_strength,
        emission_strength: cfg.emission_strength,
        seed,
    }
}

/// Seed of the held-out chain paired with a training seed.
pub fn test_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

fn crf_trial(cfg: &ExperimentConfig, level: usize, t: usize) -> Result<SweepReport> {
    let seed = trial_seed(cfg.seed, level, t);
    let train = gen_chain(&chain_spec(cfg, seed))?;
    let test = gen_chain(&chain_spec(cfg, test_seed(seed)))?;
    let p = ChainCrfProblem::new(train);
    let candidates = p.features().observation_count();
    let engine = engine_config(cfg);
    let mut report = SweepReport::default();
    for &algo in &cfg.algorithms {
        let rule = fixed_rule(cfg.stop, algo, level, candidates)?;
        let (r, wall) =
            run_timed(&p, algo, rule, &engine).with_context(|| format!("{algo} on seed {seed}"))?;
        report.audit.merge(&audit_trace(&r.trace));
        let train_error = p.label_error(&r.beta, p.data());
        let test_error = p.label_error(&r.beta, &test);
        report.results.push(ResultRow {
            algorithm: algo,
            objective_kind: "crf",
            seed,
            k: level,
            f_measure: None,
            est_error: None,
            objective: r.value,
            nnz: r.nnz(),
            wall_micros: wall,
            stop_reason: r.stop_reason.to_string(),
        });
        report.classification.push(ClassificationRow {
            algorithm: algo,
            objective_kind: "crf",
            seed,
            k: level,
            train_error,
            test_error,
            objective: r.value,
            wall_micros: wall,
        });
    }
    Ok(report)
}

/// Synthetic chain study over sparsity levels.
pub fn run_crf_synthetic(cfg: &ExperimentConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = cfg
        .sweep
        .iter()
        .flat_map(|&k| (0..cfg.trials).map(move |t| (k, t)))
        .collect();
    let parts: Vec<Result<SweepReport>> = in_pool(cfg.jobs, || {
        jobs.par_iter()
            .map(|&(k, t)| crf_trial(cfg, k, t))
            .collect()
    })?;
    let mut report = SweepReport::default();
    for part in parts {
        report.extend(part?);
    }
    Ok(report)
}

/// Train and test sets padded to a shared dimension.
pub fn load_pair(
    train: &std::path::Path,
    test: Option<&std::path::Path>,
) -> Result<(SparseClassification, SparseClassification)> {
    let tr = parse_sparse_classification(train, None)
        .with_context(|| format!("reading {}", train.display()))?;
    let te = match test {
        Some(path) => parse_sparse_classification(path, None)
            .with_context(|| format!("reading {}", path.display()))?,
        None => tr.clone(),
    };
    let dim = tr.dim.max(te.dim);
    Ok((tr.with_dim(dim), te.with_dim(dim)))
}

/// Sparsity sweep on a train/test pair of sparse classification files.
///
/// The reported objective is `n * Q`, the sum of per-sample losses plus
/// `n lambda / 2 ||beta||^2`.
pub fn run_dataset(cfg: &ExperimentConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let train_path = cfg.train.as_deref().expect("validated");
    let (tr, te) = load_pair(train_path, cfg.test.as_deref())?;
    let train = tr.into_problem(cfg.lambda)?;
    let test = te.into_problem(cfg.lambda)?;
    run_dataset_problems(cfg, &train, &test)
}

pub fn run_dataset_problems(
    cfg: &ExperimentConfig,
    train: &LogisticL2Problem,
    test: &LogisticL2Problem,
) -> Result<SweepReport> {
    let engine = engine_config(cfg);
    let jobs: Vec<(usize, Algorithm)> = cfg
        .sweep
        .iter()
        .flat_map(|&s| cfg.algorithms.iter().map(move |&a| (s, a)))
        .collect();
    let n = train.n() as f64;
    let parts: Vec<Result<SweepReport>> = in_pool(cfg.jobs, || {
        jobs.par_iter()
            .map(|&(s, algo)| {
                let rule = fixed_rule(cfg.stop, algo, s, train.dim())?;
                let (r, wall) = run_timed(train, algo, rule, &engine)
                    .with_context(|| format!("{algo} at S={s}"))?;
                let objective = n * r.value;
                let mut part = SweepReport {
                    audit: audit_trace(&r.trace),
                    ..SweepReport::default()
                };
                part.results.push(ResultRow {
                    algorithm: algo,
                    objective_kind: "logistic",
                    seed: cfg.seed,
                    k: s,
                    f_measure: None,
                    est_error: None,
                    objective,
                    nnz: r.nnz(),
                    wall_micros: wall,
                    stop_reason: r.stop_reason.to_string(),
                });
                part.classification.push(ClassificationRow {
                    algorithm: algo,
                    objective_kind: "logistic",
                    seed: cfg.seed,
                    k: s,
                    train_error: train.classification_error(&r.beta),
                    test_error: test.classification_error(&r.beta),
                    objective,
                    wall_micros: wall,
                });
                Ok(part)
            })
            .collect()
    })?;
    let mut report = SweepReport::default();
    for part in parts {
        report.extend(part?);
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub algorithm: Algorithm,
    pub result: FobaResult,
    pub wall_micros: u128,
    /// Groups touched by the selection: channels for chain data, blocks of
    /// `group_size` consecutive features otherwise.
    pub groups: Option<Vec<usize>>,
}

pub fn run_select(cfg: &ExperimentConfig) -> Result<Selection> {
    cfg.validate()?;
    if cfg.command != Command::Select {
        bail!("run_select needs a select config");
    }
    let [algo] = cfg.algorithms[..] else {
        bail!(
            "select runs exactly one algorithm, got {}",
            cfg.algorithms.len()
        );
    };
    let path = cfg.train.as_deref().expect("validated");
    let engine = engine_config(cfg);
    match cfg.objective {
        DataKind::Logistic => {
            let data = parse_sparse_classification(path, None)
                .with_context(|| format!("reading {}", path.display()))?;
            let p = data.into_problem(cfg.lambda)?;
            let rule = fixed_rule(cfg.stop, algo, 0, p.dim())?;
            let (result, wall_micros) = run_timed(&p, algo, rule, &engine)?;
            let groups = match cfg.group_size {
                Some(size) => {
                    let map = foba_core::analysis::contiguous_groups(p.dim(), size);
                    Some(
                        foba_core::analysis::sensor_groups(&result.support, &map)?
                            .indices()
                            .to_vec(),
                    )
                }
                None => None,
            };
            Ok(Selection {
                algorithm: algo,
                result,
                wall_micros,
                groups,
            })
        }
        DataKind::Chain => {
            let data =
                read_chain_file(path).with_context(|| format!("reading {}", path.display()))?;
            let p = ChainCrfProblem::new(data);
            let space = p.features().clone();
            let rule = fixed_rule(cfg.stop, algo, 0, space.observation_count())?;
            let (result, wall_micros) = run_timed(&p, algo, rule, &engine)?;
            let map: Vec<usize> = (0..space.observation_count())
                .map(|m| space.channel_of(m).expect("observation feature"))
                .collect();
            let groups = foba_core::analysis::sensor_groups(&result.support, &map)?
                .indices()
                .to_vec();
            Ok(Selection {
                algorithm: algo,
                result,
                wall_micros,
                groups: Some(groups),
            })
        }
    }
}
