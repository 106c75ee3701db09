//! The forward-backward greedy engine and its forward-only baseline.
//!
//! Each outer iteration checks the stopping rule, adds the best candidate
//! outside the support (forward step), re-solves on the grown support and
//! records the gain `delta` on a stack. The backward sweep then repeatedly
//! drops the selected feature whose zeroing hurts least, as long as that
//! damage is below half the `delta` on top of the stack, popping the stack
//! and re-solving after each removal.
//!
//! Non-sparsifiable features (CRF transitions) are kept in every solve and
//! are never candidates; `k` counts selected sparsifiable features only.

use std::fmt;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::solver::{minimize_along, restricted_minimize, SolverConfig};
use crate::types::{DenseVector, SupportSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GoodnessMeasure {
    /// `Q(beta) - min_alpha Q(beta + alpha e_i)`.
    ObjectiveReduction,
    /// `|grad Q(beta)_i|`.
    GradientMagnitude,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StoppingRule {
    /// Stop when the best objective reduction falls below `delta`.
    ObjectiveThreshold(f64),
    /// Stop when `||grad Q(beta)||_inf < epsilon`.
    GradientThreshold(f64),
    /// Stop once `k >= K`.
    SparsityLevel(usize),
    /// Run until every sparsifiable feature is selected.
    ExhaustAll,
}

impl StoppingRule {
    pub fn validate(&self, measure: GoodnessMeasure, dim: usize) -> Result<()> {
        match (*self, measure) {
            (StoppingRule::ObjectiveThreshold(_), GoodnessMeasure::GradientMagnitude) => Err(
                Error::MismatchedRule("delta threshold requires the objective-reduction measure"),
            ),
            (StoppingRule::GradientThreshold(_), GoodnessMeasure::ObjectiveReduction) => Err(
                Error::MismatchedRule("epsilon threshold requires the gradient-magnitude measure"),
            ),
            (StoppingRule::ObjectiveThreshold(v) | StoppingRule::GradientThreshold(v), _)
                if !(v > 0.0) =>
            {
                Err(Error::InvalidInput(format!(
                    "threshold must be > 0, got {v}"
                )))
            }
            (StoppingRule::SparsityLevel(k), _) if k == 0 || k > dim => Err(Error::InvalidInput(
                format!("sparsity level {k} outside 1..={dim}"),
            )),
            _ => Ok(()),
        }
    }

    /// The threshold rule natural to `measure`.
    pub fn threshold_for(measure: GoodnessMeasure, value: f64) -> Self {
        match measure {
            GoodnessMeasure::ObjectiveReduction => StoppingRule::ObjectiveThreshold(value),
            GoodnessMeasure::GradientMagnitude => StoppingRule::GradientThreshold(value),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Forward,
    Backward,
    Stop,
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepKind::Forward => "forward",
            StepKind::Backward => "backward",
            StepKind::Stop => "stop",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Threshold,
    SparsityLevel,
    /// No sparsifiable feature left outside the support.
    Exhausted,
    /// Forward-acceptance cap reached.
    Guard,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Threshold => "threshold",
            StopReason::SparsityLevel => "sparsity",
            StopReason::Exhausted => "exhausted",
            StopReason::Guard => "guard",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub kind: StepKind,
    pub iteration: usize,
    pub feature: Option<usize>,
    /// Forward: goodness of the chosen feature. Backward: removal damage
    /// `Q(beta - beta_i e_i) - Q(beta)`. Stop: best goodness left (NaN if none).
    pub goodness: f64,
    /// Backward only: the `delta` of the level the removal was tested against.
    pub delta: Option<f64>,
    pub q_before: f64,
    pub q_after: f64,
    pub support_size: usize,
    pub wall_micros: u128,
    pub stop_reason: Option<StopReason>,
}

#[derive(Debug, Clone)]
pub struct FobaConfig {
    pub solver: SolverConfig,
    /// Cap on forward acceptances; defaults to the number of sparsifiable features.
    pub max_forward: Option<usize>,
    /// Evaluate objective-reduction candidates in parallel.
    pub parallel_scan: bool,
}

impl Default for FobaConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            max_forward: None,
            parallel_scan: true,
        }
    }
}

/// Engine state between steps.
#[derive(Debug, Clone)]
pub struct FobaState {
    beta: DenseVector,
    value: f64,
    selected: SupportSet,
    free: SupportSet,
    candidates: usize,
    delta_stack: Vec<f64>,
    trace: Vec<TraceRecord>,
    iteration: usize,
    forward_steps: usize,
    removals: usize,
    started: Instant,
}

impl FobaState {
    /// `F = ∅` with non-sparsifiable features solved to optimality (or
    /// `beta = 0` when every feature is sparsifiable).
    pub fn new(p: &(impl Objective + ?Sized), cfg: &SolverConfig) -> Result<Self> {
        let dim = p.dim();
        let free = SupportSet::from_indices(dim, (0..dim).filter(|&j| !p.is_sparsifiable(j)))?;
        let beta = restricted_minimize(p, &free, &DenseVector::zeros(dim), cfg)?;
        let value = p.value(&beta);
        Ok(Self {
            beta,
            value,
            selected: SupportSet::empty(dim),
            candidates: dim - free.len(),
            free,
            delta_stack: Vec::new(),
            trace: Vec::new(),
            iteration: 0,
            forward_steps: 0,
            removals: 0,
            started: Instant::now(),
        })
    }

    pub fn beta(&self) -> &DenseVector {
        &self.beta
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// Selected sparsifiable features `F^(k)`.
    pub fn support(&self) -> &SupportSet {
        &self.selected
    }

    /// Features kept in every solve.
    pub fn free(&self) -> &SupportSet {
        &self.free
    }

    pub fn k(&self) -> usize {
        self.selected.len()
    }

    pub fn delta_stack(&self) -> &[f64] {
        &self.delta_stack
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    fn active(&self) -> SupportSet {
        self.selected.union(&self.free)
    }

    fn remaining(&self) -> usize {
        self.candidates - self.selected.len()
    }

    fn is_candidate(&self, p: &(impl Objective + ?Sized), j: usize) -> bool {
        p.is_sparsifiable(j) && !self.selected.contains(j)
    }

    fn micros(&self) -> u128 {
        self.started.elapsed().as_micros()
    }
}

struct Scan {
    best: Option<(usize, f64)>,
    grad_inf: Option<f64>,
}

fn argmax_lowest(items: impl Iterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    items.fold(None, |acc, (i, v)| match acc {
        Some((_, best)) if v <= best => acc,
        _ => Some((i, v)),
    })
}

fn scan(
    p: &(impl Objective + ?Sized),
    state: &FobaState,
    measure: GoodnessMeasure,
    parallel: bool,
) -> Result<Scan> {
    let dim = p.dim();
    match measure {
        GoodnessMeasure::GradientMagnitude => {
            let g = p.gradient(&state.beta);
            let grad_inf = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let best = argmax_lowest(
                (0..dim)
                    .filter(|&j| state.is_candidate(p, j))
                    .map(|j| (j, g[j].abs())),
            );
            Ok(Scan {
                best,
                grad_inf: Some(grad_inf),
            })
        }
        GoodnessMeasure::ObjectiveReduction => {
            let oracle = p.line_oracle(&state.beta);
            let base = oracle.base_value();
            let exact = p.has_exact_line_min();
            let cands: Vec<usize> = (0..dim).filter(|&j| state.is_candidate(p, j)).collect();
            let reduce = |j: usize| -> Result<(usize, f64)> {
                match minimize_along(oracle.as_ref(), j, exact) {
                    Ok((_, v)) => Ok((j, (base - v).max(0.0))),
                    // A zero column cannot reduce the objective.
                    Err(Error::ZeroCurvatureColumn(_)) => Ok((j, 0.0)),
                    Err(e) => Err(e),
                }
            };
            let scores: Vec<(usize, f64)> = if parallel {
                cands
                    .par_iter()
                    .map(|&j| reduce(j))
                    .collect::<Result<_>>()?
            } else {
                cands.iter().map(|&j| reduce(j)).collect::<Result<_>>()?
            };
            Ok(Scan {
                best: argmax_lowest(scores.into_iter()),
                grad_inf: None,
            })
        }
    }
}

/// Best feature outside the support and its goodness; ties go to the lowest index.
pub fn forward_candidate(
    p: &(impl Objective + ?Sized),
    state: &FobaState,
    measure: GoodnessMeasure,
) -> Result<(usize, f64)> {
    scan(p, state, measure, true)?
        .best
        .ok_or(Error::NoCandidate)
}

fn decide(
    state: &FobaState,
    rule: StoppingRule,
    scan: &Scan,
    p: &(impl Objective + ?Sized),
) -> Option<StopReason> {
    if state.remaining() == 0 {
        return Some(StopReason::Exhausted);
    }
    match rule {
        StoppingRule::ObjectiveThreshold(delta) => {
            let best = scan.best.map_or(0.0, |(_, g)| g);
            (best < delta).then_some(StopReason::Threshold)
        }
        StoppingRule::GradientThreshold(eps) => {
            let norm = scan.grad_inf.unwrap_or_else(|| {
                p.gradient(&state.beta)
                    .iter()
                    .fold(0.0f64, |m, v| m.max(v.abs()))
            });
            (norm < eps).then_some(StopReason::Threshold)
        }
        StoppingRule::SparsityLevel(k) => (state.k() >= k).then_some(StopReason::SparsityLevel),
        StoppingRule::ExhaustAll => None,
    }
}

/// Whether the engine should stop at `state` under `rule`.
pub fn stop_check(
    p: &(impl Objective + ?Sized),
    state: &FobaState,
    measure: GoodnessMeasure,
    rule: StoppingRule,
) -> Result<bool> {
    rule.validate(measure, p.dim())?;
    let s = scan(p, state, measure, true)?;
    Ok(decide(state, rule, &s, p).is_some())
}

fn apply_forward(
    p: &(impl Objective + ?Sized),
    state: &mut FobaState,
    feature: usize,
    goodness: f64,
    cfg: &SolverConfig,
) -> Result<()> {
    let q_before = state.value;
    state.selected.insert(feature);
    let beta = restricted_minimize(p, &state.active(), &state.beta, cfg)?;
    let q_after = p.value(&beta);
    state.beta = beta;
    state.value = q_after;
    state.delta_stack.push(q_before - q_after);
    state.forward_steps += 1;
    state.iteration += 1;
    state.trace.push(TraceRecord {
        kind: StepKind::Forward,
        iteration: state.iteration,
        feature: Some(feature),
        goodness,
        delta: None,
        q_before,
        q_after,
        support_size: state.k(),
        wall_micros: state.micros(),
        stop_reason: None,
    });
    log::trace!("forward +{feature} goodness={goodness:e} Q={q_after}");
    Ok(())
}

/// Adds the best candidate, re-solves on the grown support and pushes
/// `delta = Q(beta^(k)) - Q(beta^(k+1))`.
pub fn forward_step(
    p: &(impl Objective + ?Sized),
    state: &mut FobaState,
    measure: GoodnessMeasure,
    cfg: &SolverConfig,
) -> Result<()> {
    let (feature, goodness) = forward_candidate(p, state, measure)?;
    apply_forward(p, state, feature, goodness, cfg)
}

/// Removes features while the least damaging removal costs less than half
/// of the `delta` at the current level; returns the number removed.
pub fn backward_sweep(
    p: &(impl Objective + ?Sized),
    state: &mut FobaState,
    cfg: &SolverConfig,
) -> Result<usize> {
    let mut removed = 0;
    let cap = state.k();
    while removed < cap {
        let Some(&delta) = state.delta_stack.last() else {
            break;
        };
        let q_before = state.value;
        let worst = {
            let oracle = p.line_oracle(&state.beta);
            let base = oracle.base_value();
            state
                .selected
                .iter()
                .map(|i| (i, oracle.value_at(i, -state.beta[i]) - base))
                .fold(None, |acc: Option<(usize, f64)>, (i, v)| match acc {
                    Some((_, best)) if v >= best => acc,
                    _ => Some((i, v)),
                })
        };
        let Some((feature, damage)) = worst else {
            break;
        };
        if damage >= delta / 2.0 {
            break;
        }
        state.selected.remove(feature);
        state.delta_stack.pop();
        let mut warm = state.beta.clone().into_vec();
        warm[feature] = 0.0;
        let warm = DenseVector::from_vec_unchecked(warm);
        let beta = restricted_minimize(p, &state.active(), &warm, cfg)?;
        state.value = p.value(&beta);
        state.beta = beta;
        state.removals += 1;
        state.iteration += 1;
        removed += 1;
        state.trace.push(TraceRecord {
            kind: StepKind::Backward,
            iteration: state.iteration,
            feature: Some(feature),
            goodness: damage,
            delta: Some(delta),
            q_before,
            q_after: state.value,
            support_size: state.k(),
            wall_micros: state.micros(),
            stop_reason: None,
        });
        log::trace!("backward -{feature} damage={damage:e} delta={delta:e}");
    }
    Ok(removed)
}

#[derive(Debug, Clone)]
pub struct FobaResult {
    pub beta: DenseVector,
    /// Selected sparsifiable features.
    pub support: SupportSet,
    /// Features kept in every solve.
    pub free: SupportSet,
    pub value: f64,
    pub trace: Vec<TraceRecord>,
    pub stop_reason: StopReason,
    pub forward_steps: usize,
    pub removals: usize,
}

impl FobaResult {
    pub fn nnz(&self) -> usize {
        self.support.len()
    }
}

fn run(
    p: &(impl Objective + ?Sized),
    measure: GoodnessMeasure,
    rule: StoppingRule,
    cfg: &FobaConfig,
    backward: bool,
) -> Result<FobaResult> {
    cfg.solver.validate()?;
    let mut state = FobaState::new(p, &cfg.solver)?;
    rule.validate(measure, state.candidates.max(1))?;
    let max_forward = cfg.max_forward.unwrap_or(state.candidates);
    let reason = loop {
        let s = scan(p, &state, measure, cfg.parallel_scan)?;
        if let Some(reason) = decide(&state, rule, &s, p) {
            state.iteration += 1;
            state.trace.push(TraceRecord {
                kind: StepKind::Stop,
                iteration: state.iteration,
                feature: None,
                goodness: s.best.map_or(f64::NAN, |(_, g)| g),
                delta: None,
                q_before: state.value,
                q_after: state.value,
                support_size: state.k(),
                wall_micros: state.micros(),
                stop_reason: Some(reason),
            });
            break reason;
        }
        if state.forward_steps >= max_forward {
            state.iteration += 1;
            state.trace.push(TraceRecord {
                kind: StepKind::Stop,
                iteration: state.iteration,
                feature: None,
                goodness: s.best.map_or(f64::NAN, |(_, g)| g),
                delta: None,
                q_before: state.value,
                q_after: state.value,
                support_size: state.k(),
                wall_micros: state.micros(),
                stop_reason: Some(StopReason::Guard),
            });
            log::debug!(
                "forward guard tripped after {} acceptances",
                state.forward_steps
            );
            break StopReason::Guard;
        }
        let (feature, goodness) = s.best.ok_or(Error::NoCandidate)?;
        apply_forward(p, &mut state, feature, goodness, &cfg.solver)?;
        if backward {
            backward_sweep(p, &mut state, &cfg.solver)?;
        }
    };
    Ok(FobaResult {
        support: state.selected,
        free: state.free,
        value: state.value,
        stop_reason: reason,
        forward_steps: state.forward_steps,
        removals: state.removals,
        beta: state.beta,
        trace: state.trace,
    })
}

/// Forward-backward greedy selection.
pub fn run_foba(
    p: &(impl Objective + ?Sized),
    measure: GoodnessMeasure,
    rule: StoppingRule,
    cfg: &FobaConfig,
) -> Result<FobaResult> {
    run(p, measure, rule, cfg, true)
}

/// Forward-only greedy selection with the same forward step and rules.
pub fn run_forward(
    p: &(impl Objective + ?Sized),
    measure: GoodnessMeasure,
    rule: StoppingRule,
    cfg: &FobaConfig,
) -> Result<FobaResult> {
    run(p, measure, rule, cfg, false)
}

/// Violations of the engine's step invariants found in a trace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TranscriptAudit {
    pub removals_checked: usize,
    pub forwards_checked: usize,
    /// Removals whose damage was not below half the level's delta.
    pub removal_violations: Vec<usize>,
    /// Forward steps with positive goodness that did not lower `Q`.
    pub forward_violations: Vec<usize>,
    /// Removals that did not land strictly below the value last held at
    /// the same support size.
    pub level_violations: Vec<usize>,
}

impl TranscriptAudit {
    pub fn is_clean(&self) -> bool {
        self.removal_violations.is_empty()
            && self.forward_violations.is_empty()
            && self.level_violations.is_empty()
    }

    pub fn merge(&mut self, other: &TranscriptAudit) {
        self.removals_checked += other.removals_checked;
        self.forwards_checked += other.forwards_checked;
        self.removal_violations.extend(&other.removal_violations);
        self.forward_violations.extend(&other.forward_violations);
        self.level_violations.extend(&other.level_violations);
    }
}

/// Checks a trace against the backward removal test and the strict
/// decrease of `Q`: forward steps with positive goodness lower `Q`, and
/// each time a removal returns the engine to level `k` the value there is
/// below the value previously held at level `k`.
pub fn audit_trace(trace: &[TraceRecord]) -> TranscriptAudit {
    let mut audit = TranscriptAudit::default();
    let mut level_value: Vec<f64> = Vec::new();
    let set_level = |levels: &mut Vec<f64>, k: usize, q: f64| {
        if levels.len() <= k {
            levels.resize(k + 1, f64::INFINITY);
        }
        levels[k] = q;
    };
    for rec in trace {
        match rec.kind {
            StepKind::Forward => {
                audit.forwards_checked += 1;
                if level_value.is_empty() {
                    set_level(&mut level_value, rec.support_size - 1, rec.q_before);
                }
                if rec.goodness > 0.0 && !(rec.q_after < rec.q_before) {
                    audit.forward_violations.push(rec.iteration);
                }
                set_level(&mut level_value, rec.support_size, rec.q_after);
            }
            StepKind::Backward => {
                audit.removals_checked += 1;
                let delta = rec.delta.unwrap_or(f64::NAN);
                if !(rec.goodness < delta / 2.0) {
                    audit.removal_violations.push(rec.iteration);
                }
                let prev = level_value
                    .get(rec.support_size)
                    .copied()
                    .unwrap_or(f64::INFINITY);
                if !(rec.q_after < prev) {
                    audit.level_violations.push(rec.iteration);
                }
                set_level(&mut level_value, rec.support_size, rec.q_after);
            }
            StepKind::Stop => {}
        }
    }
    audit
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{LeastSquaresProblem, LineOracle, LinePoint, LogisticL2Problem};
    use crate::types::Rng;
    use nalgebra::DMatrix;

    /// `Q(beta) = 1/2 ||beta - c||^2 + <shift, beta>` style test objective with
    /// a prescribed gradient at the origin.
    struct Separable {
        target: Vec<f64>,
    }

    impl Objective for Separable {
        fn dim(&self) -> usize {
            self.target.len()
        }
        fn value(&self, b: &[f64]) -> f64 {
            b.iter()
                .zip(&self.target)
                .map(|(x, t)| 0.5 * (x - t) * (x - t))
                .sum()
        }
        fn gradient(&self, b: &[f64]) -> Vec<f64> {
            b.iter().zip(&self.target).map(|(x, t)| x - t).collect()
        }
        fn line_oracle<'a>(&'a self, beta: &'a [f64]) -> Box<dyn LineOracle + 'a> {
            Box::new(crate::objectives::GenericLine::new(self, beta))
        }
        fn kind(&self) -> &'static str {
            "separable"
        }
    }

    fn unit_columns(rng: &mut Rng, n: usize, d: usize) -> DMatrix<f64> {
        let mut x = DMatrix::from_fn(n, d, |_, _| rng.normal());
        for mut c in x.column_iter_mut() {
            let norm = c.norm();
            c /= norm;
        }
        x
    }

    #[test]
    fn gradient_candidate_is_max_abs_with_low_index_ties() {
        // grad at 0 equals -target.
        let p = Separable {
            target: vec![-3.0, 5.0, 0.0],
        };
        let st = FobaState::new(&p, &SolverConfig::default()).unwrap();
        assert_eq!(
            forward_candidate(&p, &st, GoodnessMeasure::GradientMagnitude).unwrap(),
            (1, 5.0)
        );
        let p = Separable {
            target: vec![-2.0, 2.0],
        };
        let st = FobaState::new(&p, &SolverConfig::default()).unwrap();
        assert_eq!(
            forward_candidate(&p, &st, GoodnessMeasure::GradientMagnitude).unwrap(),
            (0, 2.0)
        );
        assert_eq!(
            forward_candidate(&p, &st, GoodnessMeasure::ObjectiveReduction)
                .unwrap()
                .0,
            0
        );
    }

    #[test]
    fn no_candidate_when_full() {
        let p = Separable {
            target: vec![1.0, 2.0],
        };
        let cfg = SolverConfig::default();
        let mut st = FobaState::new(&p, &cfg).unwrap();
        forward_step(&p, &mut st, GoodnessMeasure::GradientMagnitude, &cfg).unwrap();
        forward_step(&p, &mut st, GoodnessMeasure::GradientMagnitude, &cfg).unwrap();
        assert!(matches!(
            forward_candidate(&p, &st, GoodnessMeasure::GradientMagnitude),
            Err(Error::NoCandidate)
        ));
    }

    #[test]
    fn objective_and_gradient_measures_agree_on_unit_columns() {
        for seed in 0..10 {
            let mut rng = Rng::new(100 + seed);
            let x = unit_columns(&mut rng, 20, 15);
            let y = (0..20).map(|_| rng.normal()).collect();
            let p = LeastSquaresProblem::new(x, y).unwrap();
            let cfg = SolverConfig::default();
            let mut a = FobaState::new(&p, &cfg).unwrap();
            let mut b = a.clone();
            for _ in 0..4 {
                let ca = forward_candidate(&p, &a, GoodnessMeasure::ObjectiveReduction).unwrap();
                let cb = forward_candidate(&p, &b, GoodnessMeasure::GradientMagnitude).unwrap();
                assert_eq!(ca.0, cb.0);
                assert!((ca.1 - 0.5 * cb.1 * cb.1).abs() < 1e-12);
                forward_step(&p, &mut a, GoodnessMeasure::ObjectiveReduction, &cfg).unwrap();
                forward_step(&p, &mut b, GoodnessMeasure::GradientMagnitude, &cfg).unwrap();
            }
        }
    }

    #[test]
    fn stop_check_rules() {
        let p = Separable {
            target: vec![0.0; 3],
        };
        let st = FobaState::new(&p, &SolverConfig::default()).unwrap();
        assert!(stop_check(
            &p,
            &st,
            GoodnessMeasure::GradientMagnitude,
            StoppingRule::GradientThreshold(1e-300)
        )
        .unwrap());
        assert!(matches!(
            stop_check(
                &p,
                &st,
                GoodnessMeasure::GradientMagnitude,
                StoppingRule::ObjectiveThreshold(1.0)
            ),
            Err(Error::MismatchedRule(_))
        ));
        assert!(matches!(
            stop_check(
                &p,
                &st,
                GoodnessMeasure::ObjectiveReduction,
                StoppingRule::GradientThreshold(1.0)
            ),
            Err(Error::MismatchedRule(_))
        ));

        let target: Vec<f64> = (1..=12).map(|v| v as f64).collect();
        let p = Separable { target };
        let cfg = SolverConfig::default();
        let mut st = FobaState::new(&p, &cfg).unwrap();
        for _ in 0..10 {
            forward_step(&p, &mut st, GoodnessMeasure::GradientMagnitude, &cfg).unwrap();
        }
        assert!(stop_check(
            &p,
            &st,
            GoodnessMeasure::GradientMagnitude,
            StoppingRule::SparsityLevel(10)
        )
        .unwrap());
        assert!(!stop_check(
            &p,
            &st,
            GoodnessMeasure::GradientMagnitude,
            StoppingRule::SparsityLevel(11)
        )
        .unwrap());
        assert!(!stop_check(
            &p,
            &st,
            GoodnessMeasure::GradientMagnitude,
            StoppingRule::ExhaustAll
        )
        .unwrap());
    }

    #[test]
    fn first_forward_delta_is_half_max_grad_squared() {
        let mut rng = Rng::new(9);
        let x = unit_columns(&mut rng, 30, 10);
        let y: Vec<f64> = (0..30).map(|_| rng.normal()).collect();
        let p = LeastSquaresProblem::new(x, y).unwrap();
        let cfg = SolverConfig::default();
        let mut st = FobaState::new(&p, &cfg).unwrap();
        let g0 = p.gradient(&[0.0; 10]);
        let q0 = st.value();
        forward_step(&p, &mut st, GoodnessMeasure::GradientMagnitude, &cfg).unwrap();
        let max_sq = g0.iter().fold(0.0f64, |m, g| m.max(g * g));
        assert!((st.delta_stack()[0] - max_sq / 2.0).abs() < 1e-12);
        assert!(st.value() < q0);
    }

    #[test]
    fn huge_threshold_returns_empty_model() {
        let mut rng = Rng::new(10);
        let x = unit_columns(&mut rng, 10, 5);
        let y = (0..10).map(|_| rng.normal()).collect();
        let p = LeastSquaresProblem::new(x, y).unwrap();
        let r = run_foba(
            &p,
            GoodnessMeasure::ObjectiveReduction,
            StoppingRule::ObjectiveThreshold(1e9),
            &FobaConfig::default(),
        )
        .unwrap();
        assert!(r.support.is_empty());
        assert!(r.beta.iter().all(|&b| b == 0.0));
        assert_eq!(r.stop_reason, StopReason::Threshold);
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn duplicated_column_copy_is_removed() {
        // Columns 0 and 1 are identical; with both selected and a useful
        // feature added last, the redundant copy must go.
        let mut rng = Rng::new(11);
        let (n, d) = (25, 6);
        let mut x = unit_columns(&mut rng, n, d);
        let c0 = x.column(0).into_owned();
        x.set_column(1, &c0);
        let y: Vec<f64> = (0..n)
            .map(|i| 3.0 * x[(i, 0)] + 2.0 * x[(i, 2)] + 0.01 * rng.normal())
            .collect();
        let p = LeastSquaresProblem::new(x, y).unwrap();
        let cfg = SolverConfig::default();
        let mut st = FobaState::new(&p, &cfg).unwrap();
        apply_forward(&p, &mut st, 0, 0.0, &cfg).unwrap();
        apply_forward(&p, &mut st, 1, 0.0, &cfg).unwrap();
        apply_forward(&p, &mut st, 2, 0.0, &cfg).unwrap();
        // Exhaustive damage oracle.
        let q = p.value(&st.beta);
        let damages: Vec<f64> = st
            .support()
            .iter()
            .map(|i| {
                let mut b = st.beta.as_slice().to_vec();
                b[i] = 0.0;
                p.value(&b) - q
            })
            .collect();
        let delta = *st.delta_stack().last().unwrap();
        assert!(damages.iter().any(|&dmg| dmg < delta / 2.0));
        let removed = backward_sweep(&p, &mut st, &cfg).unwrap();
        assert_eq!(removed, 1);
        assert_eq!(st.k(), 2);
        assert!(st.support().contains(2));
        assert!(st.support().contains(0) ^ st.support().contains(1));
        assert_eq!(st.delta_stack().len(), 2);
    }

    #[test]
    fn single_feature_collapse_returns_to_empty() {
        // delta tiny relative to the damage? No: force a feature whose gain
        // is far below the damage threshold by planting a useless forward.
        let p = Separable {
            target: vec![1.0, 0.0],
        };
        let cfg = SolverConfig::default();
        let mut st = FobaState::new(&p, &cfg).unwrap();
        // Feature 1 has zero gradient: beta stays 0, delta = 0, damage = 0 >= 0.
        apply_forward(&p, &mut st, 1, 0.0, &cfg).unwrap();
        assert_eq!(backward_sweep(&p, &mut st, &cfg).unwrap(), 0);

        // A real gain whose delta is then pushed artificially high collapses.
        let mut st = FobaState::new(&p, &cfg).unwrap();
        apply_forward(&p, &mut st, 0, 1.0, &cfg).unwrap();
        st.delta_stack[0] = 10.0;
        assert_eq!(backward_sweep(&p, &mut st, &cfg).unwrap(), 1);
        assert!(st.support().is_empty());
        assert!(st.beta().iter().all(|&b| b == 0.0));
        assert!(st.delta_stack().is_empty());
    }

    #[test]
    fn all_damages_above_threshold_leave_state_unchanged() {
        let p = Separable {
            target: vec![3.0, -2.0, 1.5],
        };
        let cfg = SolverConfig::default();
        let mut st = FobaState::new(&p, &cfg).unwrap();
        for _ in 0..3 {
            forward_step(&p, &mut st, GoodnessMeasure::GradientMagnitude, &cfg).unwrap();
        }
        let before = st.clone();
        assert_eq!(backward_sweep(&p, &mut st, &cfg).unwrap(), 0);
        assert_eq!(st.support(), before.support());
        assert_eq!(st.beta(), before.beta());
    }

    #[test]
    fn orthonormal_design_recovers_support_without_removals() {
        let mut rng = Rng::new(12);
        let (n, d) = (40, 12);
        let g = DMatrix::from_fn(n, d, |_, _| rng.normal());
        let q = g.qr().q();
        let mut beta = vec![0.0; d];
        for (j, v) in [(1, 2.0), (4, -1.5), (9, 1.0)] {
            beta[j] = v;
        }
        let y: Vec<f64> = (0..n)
            .map(|i| (0..d).map(|j| q[(i, j)] * beta[j]).sum())
            .collect();
        let p = LeastSquaresProblem::new(q, y).unwrap();
        let rule = StoppingRule::GradientThreshold(1e-6);
        let cfg = FobaConfig::default();
        let fb = run_foba(&p, GoodnessMeasure::GradientMagnitude, rule, &cfg).unwrap();
        let fw = run_forward(&p, GoodnessMeasure::GradientMagnitude, rule, &cfg).unwrap();
        assert_eq!(fb.support.indices(), &[1, 4, 9]);
        assert_eq!(fb.support, fw.support);
        assert_eq!(fb.removals, 0);
        assert!(audit_trace(&fb.trace).is_clean());
    }

    #[test]
    fn forward_trace_is_shared_prefix() {
        let mut rng = Rng::new(13);
        let (n, d) = (40, 30);
        let rows: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.sign()).collect();
        let p = LogisticL2Problem::from_rows(d, &rows, y, 0.05).unwrap();
        let rule = StoppingRule::SparsityLevel(6);
        let cfg = FobaConfig::default();
        let fb = run_foba(&p, GoodnessMeasure::GradientMagnitude, rule, &cfg).unwrap();
        let fw = run_forward(&p, GoodnessMeasure::GradientMagnitude, rule, &cfg).unwrap();
        // Up to the first removal both runs take identical forward steps.
        let first_fb: Vec<_> = fb
            .trace
            .iter()
            .take_while(|r| r.kind == StepKind::Forward)
            .map(|r| r.feature)
            .collect();
        let first_fw: Vec<_> = fw
            .trace
            .iter()
            .take(first_fb.len())
            .map(|r| r.feature)
            .collect();
        assert_eq!(first_fb, first_fw);
        assert_eq!(fw.nnz(), 6);
        assert_eq!(fb.nnz(), 6);
        assert!(audit_trace(&fb.trace).is_clean());
    }

    #[test]
    fn scaled_objective_selects_same_sequence() {
        struct Scaled<'a>(&'a LogisticL2Problem, f64);
        impl Objective for Scaled<'_> {
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn value(&self, b: &[f64]) -> f64 {
                self.1 * self.0.value(b)
            }
            fn gradient(&self, b: &[f64]) -> Vec<f64> {
                self.0.gradient(b).into_iter().map(|g| self.1 * g).collect()
            }
            fn line_oracle<'a>(&'a self, beta: &'a [f64]) -> Box<dyn LineOracle + 'a> {
                struct L<'b>(Box<dyn LineOracle + 'b>, f64);
                impl LineOracle for L<'_> {
                    fn base_value(&self) -> f64 {
                        self.1 * self.0.base_value()
                    }
                    fn eval(&self, j: usize, a: f64) -> LinePoint {
                        let p = self.0.eval(j, a);
                        LinePoint {
                            value: self.1 * p.value,
                            slope: self.1 * p.slope,
                            curvature: p.curvature.map(|c| self.1 * c),
                        }
                    }
                }
                Box::new(L(self.0.line_oracle(beta), self.1))
            }
            fn kind(&self) -> &'static str {
                "scaled"
            }
            fn restricted_hessian(&self, b: &[f64], s: &[usize]) -> Option<DMatrix<f64>> {
                self.0.restricted_hessian(b, s).map(|h| h * self.1)
            }
            fn has_restricted_newton(&self) -> bool {
                true
            }
        }
        let mut rng = Rng::new(14);
        let (n, d) = (30, 20);
        let rows: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.sign()).collect();
        let p = LogisticL2Problem::from_rows(d, &rows, y, 0.1).unwrap();
        let c = 4.0;
        let eps = 0.02;
        let cfg = FobaConfig::default();
        let a = run_foba(
            &p,
            GoodnessMeasure::GradientMagnitude,
            StoppingRule::GradientThreshold(eps),
            &cfg,
        )
        .unwrap();
        let b = run_foba(
            &Scaled(&p, c),
            GoodnessMeasure::GradientMagnitude,
            StoppingRule::GradientThreshold(c * eps),
            &cfg,
        )
        .unwrap();
        let seq = |r: &FobaResult| {
            r.trace
                .iter()
                .map(|t| (t.kind, t.feature))
                .collect::<Vec<_>>()
        };
        assert_eq!(seq(&a), seq(&b));
    }

    #[test]
    fn guard_stops_run() {
        let p = Separable {
            target: vec![1.0, 2.0, 3.0, 4.0],
        };
        let cfg = FobaConfig {
            max_forward: Some(2),
            ..FobaConfig::default()
        };
        let r = run_foba(
            &p,
            GoodnessMeasure::GradientMagnitude,
            StoppingRule::ExhaustAll,
            &cfg,
        )
        .unwrap();
        assert_eq!(r.stop_reason, StopReason::Guard);
        assert_eq!(r.forward_steps, 2);
        let r = run_foba(
            &p,
            GoodnessMeasure::GradientMagnitude,
            StoppingRule::ExhaustAll,
            &FobaConfig::default(),
        )
        .unwrap();
        assert_eq!(r.stop_reason, StopReason::Exhausted);
        assert_eq!(r.nnz(), 4);
    }

    #[test]
    fn trace_row_count_matches_steps() {
        let mut rng = Rng::new(15);
        let (n, d) = (30, 25);
        let rows: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.sign()).collect();
        let p = LogisticL2Problem::from_rows(d, &rows, y, 0.01).unwrap();
        let r = run_foba(
            &p,
            GoodnessMeasure::ObjectiveReduction,
            StoppingRule::ObjectiveThreshold(1e-3),
            &FobaConfig::default(),
        )
        .unwrap();
        assert_eq!(r.trace.len(), r.forward_steps + r.removals + 1);
        assert_eq!(r.trace.last().unwrap().kind, StepKind::Stop);
        assert_eq!(r.support.len(), r.forward_steps - r.removals);
    }

    #[test]
    fn audit_flags_bad_records() {
        let rec = |kind, size, goodness, delta, qb, qa| TraceRecord {
            kind,
            iteration: size,
            feature: Some(0),
            goodness,
            delta,
            q_before: qb,
            q_after: qa,
            support_size: size,
            wall_micros: 0,
            stop_reason: None,
        };
        let trace = vec![
            rec(StepKind::Forward, 1, 1.0, None, 5.0, 5.0),
            rec(StepKind::Forward, 2, 1.0, None, 5.0, 3.0),
            rec(StepKind::Backward, 1, 1.5, Some(2.0), 3.0, 6.0),
        ];
        let a = audit_trace(&trace);
        assert_eq!(a.forward_violations, vec![1]);
        assert_eq!(a.removal_violations, vec![1]);
        assert_eq!(a.level_violations, vec![1]);
    }
}
