//! Evaluation metrics, restricted strong convexity constants, recovery
//! bounds and truth-derived stopping thresholds.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::foba::{GoodnessMeasure, StoppingRule};
use crate::objectives::Objective;
use crate::solver::{minimize_along, restricted_minimize, SolverConfig};
use crate::types::{DenseVector, Rng, SupportSet};

/// Largest number of supports enumerated by [`rscc_exhaustive_quadratic`].
pub const EXHAUSTIVE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RsccMethod {
    Exhaustive,
    Sampled(usize),
}

impl fmt::Display for RsccMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RsccMethod::Exhaustive => f.write_str("exhaustive"),
            RsccMethod::Sampled(n) => write!(f, "sampled({n})"),
        }
    }
}

/// Restricted curvature constants `rho_-(s) <= rho_+(s)` and their ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RsccEstimate {
    pub s: usize,
    pub rho_minus: f64,
    pub rho_plus: f64,
    /// `rho_plus / rho_minus`, infinite when `rho_minus == 0`.
    pub kappa: f64,
    pub method: RsccMethod,
}

impl RsccEstimate {
    fn new(s: usize, rho_minus: f64, rho_plus: f64, method: RsccMethod) -> Self {
        let rho_minus = rho_minus.max(0.0);
        let kappa = if rho_minus > 0.0 {
            rho_plus / rho_minus
        } else {
            f64::INFINITY
        };
        Self {
            s,
            rho_minus,
            rho_plus,
            kappa,
            method,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBounds {
    pub gamma: f64,
    /// Missed true features whose magnitude is below `gamma`.
    pub delta_bar: usize,
    /// Bound on `||beta - beta_bar||^2`.
    pub estimation_bound: f64,
    /// Bound on `Q(beta) - Q(beta_bar)`.
    pub objective_bound: f64,
    /// Bound on `|F_bar - F|`.
    pub selection_bound: f64,
}

/// `2 |F ∩ F_true| / (|F| + |F_true|)`.
pub fn f_measure(found: &SupportSet, truth: &SupportSet) -> Result<f64> {
    let total = found.len() + truth.len();
    if total == 0 {
        return Err(Error::BothEmpty);
    }
    Ok(2.0 * found.intersection(truth).len() as f64 / total as f64)
}

/// `||beta - beta_true|| / ||beta_true||`.
pub fn estimation_error(beta: &DenseVector, truth: &DenseVector) -> Result<f64> {
    if beta.dim() != truth.dim() {
        return Err(Error::DimensionMismatch {
            expected: truth.dim(),
            got: beta.dim(),
        });
    }
    let denom = truth.norm();
    if denom == 0.0 {
        return Err(Error::ZeroTruth);
    }
    let num = beta
        .iter()
        .zip(truth.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

/// `n choose k` as a float, exact well past the enumeration limit.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn extreme_eigenvalues(gram: &DMatrix<f64>, idx: &[usize]) -> (f64, f64) {
    let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| gram[(idx[a], idx[b])]);
    let eig = SymmetricEigen::new(sub);
    eig.eigenvalues
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Exact `rho_-(s)`, `rho_+(s)` of `Q = 1/2 ||X beta - y||^2`: the extreme
/// eigenvalues of `(X^T X)_{S,S}` over all supports with `|S| <= s`.
///
/// Eigenvalue interlacing makes the size-`s` supports sufficient.
pub fn rscc_exhaustive_quadratic(x: &DMatrix<f64>, s: usize) -> Result<RsccEstimate> {
    let d = x.ncols();
    if s == 0 || d == 0 {
        return Err(Error::InvalidInput(
            "rscc needs s >= 1 and at least one column".into(),
        ));
    }
    let size = s.min(d);
    let count = binomial(d, size);
    if count > EXHAUSTIVE_LIMIT {
        return Err(Error::GuardViolation {
            count,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let gram = x.transpose() * x;
    // Split the enumeration by leading index so the reduction order is fixed.
    let parts: Vec<(f64, f64)> = (0..=d - size)
        .into_par_iter()
        .map(|first| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            let mut rest: Vec<usize> = (first + 1..first + size).collect();
            let mut idx = Vec::with_capacity(size);
            loop {
                idx.clear();
                idx.push(first);
                idx.extend_from_slice(&rest);
                let (a, b) = extreme_eigenvalues(&gram, &idx);
                lo = lo.min(a);
                hi = hi.max(b);
                if rest.is_empty() || !next_tail(&mut rest, first + 1, d) {
                    break;
                }
            }
            (lo, hi)
        })
        .collect();
    let (lo, hi) = parts
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), (a, b)| {
            (l.min(a), h.max(b))
        });
    Ok(RsccEstimate::new(s, lo, hi, RsccMethod::Exhaustive))
}

/// Advances a sorted combination of values drawn from `[offset, n)`.
fn next_tail(c: &mut [usize], offset: usize, n: usize) -> bool {
    for v in c.iter_mut() {
        *v -= offset;
    }
    let more = next_combination(c, n - offset);
    for v in c.iter_mut() {
        *v += offset;
    }
    more
}

fn random_on_support(rng: &mut Rng, dim: usize, support: &[usize]) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for &j in support {
        v[j] = rng.normal();
    }
    v
}

/// Scales `dir` until `Q(base + t dir) <= level`, halving from `t = 1`.
fn inside_sublevel(
    p: &(impl Objective + ?Sized),
    base: &[f64],
    dir: &[f64],
    level: f64,
    halvings: usize,
) -> Option<Vec<f64>> {
    let mut t = 1.0;
    for _ in 0..=halvings {
        let cand: Vec<f64> = base.iter().zip(dir).map(|(b, d)| b + t * d).collect();
        if p.value(&cand) <= level {
            return Some(cand);
        }
        t *= 0.5;
    }
    None
}

/// Sampled surrogate for the restricted curvature constants.
///
/// Each trial draws a support of size `s`, a point `beta` and a step `t`
/// on it with `beta` and `beta + t` in `{Q <= Q(0)}` (by shrinking, with
/// steps that would need to shrink below `2^-12` redrawn), and
/// records `2 [Q(beta + t) - Q(beta) - <grad Q(beta), t>] / ||t||^2`.
/// The result is an inner range: it can only under-report `rho_+` and
/// over-report `rho_-`.
pub fn rscc_sampled(
    p: &(impl Objective + ?Sized),
    s: usize,
    trials: usize,
    rng: &mut Rng,
) -> Result<RsccEstimate> {
    let dim = p.dim();
    if trials == 0 || s == 0 || dim == 0 {
        return Err(Error::InvalidInput(
            "rscc sampling needs trials >= 1 and s >= 1".into(),
        ));
    }
    let size = s.min(dim);
    let zero = vec![0.0; dim];
    let level = p.value(&zero);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut done = 0;
    let mut attempts = 0;
    while done < trials && attempts < 100 * trials {
        attempts += 1;
        let support = rng.choose_k(dim, size);
        let dir = random_on_support(rng, dim, &support);
        let beta = inside_sublevel(p, &zero, &dir, level, 60).unwrap_or_else(|| zero.clone());
        let step = random_on_support(rng, dim, &support);
        let Some(moved) = inside_sublevel(p, &beta, &step, level, 12) else {
            continue;
        };
        let t: Vec<f64> = moved.iter().zip(&beta).map(|(a, b)| a - b).collect();
        let tt: f64 = t.iter().map(|v| v * v).sum();
        if tt == 0.0 {
            continue;
        }
        let g = p.gradient(&beta);
        let lin: f64 = g.iter().zip(&t).map(|(a, b)| a * b).sum();
        let ratio = 2.0 * (p.value(&moved) - p.value(&beta) - lin) / tt;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
        done += 1;
    }
    if done == 0 {
        return Err(Error::InvalidInput(
            "no sample stayed inside the sublevel set".into(),
        ));
    }
    Ok(RsccEstimate::new(
        s,
        lo,
        hi.max(lo.max(0.0)),
        RsccMethod::Sampled(trials),
    ))
}

/// Estimation, objective and selection bounds for an output support
/// `found` against the target `truth` (its support is `F_bar`).
pub fn theorem_bounds(
    measure: GoodnessMeasure,
    threshold: f64,
    rho1_plus: f64,
    rho_s_minus: f64,
    truth: &DenseVector,
    found: &SupportSet,
) -> Result<ErrorBounds> {
    if !(rho_s_minus > 0.0) {
        return Err(Error::InvalidInput(format!(
            "rho_minus must be > 0, got {rho_s_minus}"
        )));
    }
    let gamma = match measure {
        GoodnessMeasure::ObjectiveReduction => 4.0 * (rho1_plus * threshold).sqrt() / rho_s_minus,
        GoodnessMeasure::GradientMagnitude => 2.0 * 2f64.sqrt() * threshold / rho_s_minus,
    };
    let delta_bar = truth
        .iter()
        .enumerate()
        .filter(|&(j, &b)| b != 0.0 && !found.contains(j) && b.abs() < gamma)
        .count();
    let db = delta_bar as f64;
    let (estimation_bound, objective_bound) = match measure {
        GoodnessMeasure::ObjectiveReduction => (
            16.0 * rho1_plus * rho1_plus * threshold * db / (rho_s_minus * rho_s_minus),
            2.0 * rho1_plus * threshold * db / rho_s_minus,
        ),
        GoodnessMeasure::GradientMagnitude => (
            8.0 * threshold * threshold * db / (rho_s_minus * rho_s_minus),
            threshold * threshold * db / rho_s_minus,
        ),
    };
    Ok(ErrorBounds {
        gamma,
        delta_bar,
        estimation_bound,
        objective_bound,
        selection_bound: 2.0 * db,
    })
}

/// Whether `s` is large enough for the termination guarantee at true
/// sparsity `k_bar` given `rho_+(s)`, `rho_-(s)` and `rho_+(1)`.
pub fn sparsity_condition_holds(
    s: usize,
    k_bar: usize,
    rho_s_plus: f64,
    rho_s_minus: f64,
    rho1_plus: f64,
) -> bool {
    if s <= k_bar || !(rho_s_minus > 0.0) {
        return false;
    }
    let factor = ((rho_s_plus / rho_s_minus).sqrt() + 1.0) * 2.0 * rho1_plus / rho_s_minus;
    (s - k_bar) as f64 > (k_bar + 1) as f64 * factor * factor
}

/// Objective threshold `epsilon`, or `delta`, that an oracle knowing `F_bar`
/// would pick, together with the target `beta_bar`.
#[derive(Debug, Clone)]
pub struct TruthThreshold {
    pub beta_bar: DenseVector,
    pub value: f64,
}

/// `beta_bar = argmin over F_true`, then `delta = Q(beta_bar) - min_{alpha,
/// j ∉ F_true} Q(beta_bar + alpha e_j)` or `epsilon = ||grad Q(beta_bar)||_inf`.
///
/// Non-sparsifiable features are solved alongside `F_true` and excluded
/// from the scan.
pub fn threshold_from_truth(
    p: &(impl Objective + ?Sized),
    truth: &SupportSet,
    measure: GoodnessMeasure,
    cfg: &SolverConfig,
) -> Result<TruthThreshold> {
    let dim = p.dim();
    if truth.is_empty() && measure == GoodnessMeasure::ObjectiveReduction {
        return Err(Error::InvalidInput(
            "delta from truth needs a nonempty support".into(),
        ));
    }
    let free = SupportSet::from_indices(dim, (0..dim).filter(|&j| !p.is_sparsifiable(j)))?;
    let active = truth.union(&free);
    let beta_bar = restricted_minimize(p, &active, &DenseVector::zeros(dim), cfg)?;
    let value = match measure {
        GoodnessMeasure::GradientMagnitude => p
            .gradient(&beta_bar)
            .iter()
            .fold(0.0f64, |m, g| m.max(g.abs())),
        GoodnessMeasure::ObjectiveReduction => {
            let oracle = p.line_oracle(&beta_bar);
            let base = oracle.base_value();
            let exact = p.has_exact_line_min();
            let mut best = 0.0f64;
            for j in (0..dim).filter(|&j| p.is_sparsifiable(j) && !active.contains(j)) {
                match minimize_along(oracle.as_ref(), j, exact) {
                    Ok((_, v)) => best = best.max(base - v),
                    Err(Error::ZeroCurvatureColumn(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            best
        }
    };
    Ok(TruthThreshold { beta_bar, value })
}

/// Stopping rule built from a truth threshold, lifted just above the value
/// so that rounding and the inner-solver tolerance cannot decide the
/// strict `<` test on noiseless instances.
pub fn truth_rule(measure: GoodnessMeasure, value: f64, cfg: &SolverConfig) -> StoppingRule {
    let floor = 10.0 * cfg.grad_tol;
    let lifted = match measure {
        GoodnessMeasure::GradientMagnitude => value * (1.0 + 1e-6) + floor,
        GoodnessMeasure::ObjectiveReduction => value * (1.0 + 1e-6) + 0.5 * floor * floor,
    };
    StoppingRule::threshold_for(measure, lifted)
}

/// Groups touched by `found`; `groups[j]` is the group of feature `j`.
pub fn sensor_groups(found: &SupportSet, groups: &[usize]) -> Result<SupportSet> {
    let dim = groups.iter().max().map_or(0, |&g| g + 1);
    let mut hit = Vec::with_capacity(found.len());
    for j in found.iter() {
        hit.push(*groups.get(j).ok_or(Error::UnmappedFeature(j))?);
    }
    SupportSet::from_indices(dim, hit)
}

/// Consecutive blocks of `size` features per group.
pub fn contiguous_groups(dim: usize, size: usize) -> Vec<usize> {
    assert!(size > 0, "group size must be positive");
    (0..dim).map(|j| j / size).collect()
}
