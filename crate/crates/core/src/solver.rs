//! Inner optimization: minimization restricted to a support set and
//! one-dimensional minimization along a coordinate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::objectives::{check_dim, LineOracle, Objective};
use crate::types::{DenseVector, SupportSet};

/// Tolerance on `|dQ/dalpha|` for the iterative 1-D path.
pub const LINE_SLOPE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Stop once `||grad Q|_F||_inf <= grad_tol`.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Backtracking step shrink factor.
    pub shrink: f64,
    /// Armijo sufficient-decrease constant.
    pub sufficient_decrease: f64,
    /// Largest support solved by exact Newton; above it (or without a
    /// Hessian) L-BFGS is used.
    pub newton_max_support: usize,
    pub lbfgs_memory: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iter: 500,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            newton_max_support: 64,
            lbfgs_memory: 10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidInput("grad_tol must be > 0".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be >= 1".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidInput("shrink must lie in (0, 1)".into()));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return Err(Error::InvalidInput(
                "sufficient_decrease must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

fn scatter(dim: usize, support: &[usize], z: &[f64]) -> Vec<f64> {
    let mut full = vec![0.0; dim];
    for (&j, &v) in support.iter().zip(z) {
        full[j] = v;
    }
    full
}

fn gather(full: &[f64], support: &[usize]) -> Vec<f64> {
    support.iter().map(|&j| full[j]).collect()
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `H d = -g`, adding a growing ridge when `H` is not positive definite.
fn newton_direction(mut h: DMatrix<f64>, g: &[f64]) -> Option<Vec<f64>> {
    let rhs = DVector::from_iterator(g.len(), g.iter().map(|v| -v));
    let mut ridge = 1e-10;
    for _ in 0..12 {
        if let Some(chol) = h.clone().cholesky() {
            return Some(chol.solve(&rhs).as_slice().to_vec());
        }
        for k in 0..g.len() {
            h[(k, k)] += ridge;
        }
        ridge *= 10.0;
    }
    None
}

struct Lbfgs {
    memory: usize,
    pairs: Vec<(Vec<f64>, Vec<f64>, f64)>,
}

impl Lbfgs {
    fn new(memory: usize) -> Self {
        Self {
            memory: memory.max(1),
            pairs: Vec::new(),
        }
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if self.pairs.len() == self.memory {
                self.pairs.remove(0);
            }
            self.pairs.push((s, y, 1.0 / sy));
        }
    }

    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q: Vec<f64> = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = self
            .pairs
            .last()
            .map(|(s, y, _)| dot(s, y) / dot(y, y))
            .unwrap_or(1.0 / norm_inf(g).max(1.0));
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        q.iter().map(|v| -v).collect()
    }
}

/// `argmin_{supp(beta) ⊆ F} Q(beta)`, warm-started at `warm`.
///
/// The result is supported on `F` with entries off `F` exactly zero, its
/// value never exceeds `Q(warm)`, and `||grad Q|_F||_inf <= cfg.grad_tol`.
/// Newton with Armijo backtracking is used when the problem exposes a
/// restricted Hessian and `|F| <= cfg.newton_max_support`; otherwise L-BFGS.
pub fn restricted_minimize(
    p: &(impl Objective + ?Sized),
    support: &SupportSet,
    warm: &DenseVector,
    cfg: &SolverConfig,
) -> Result<DenseVector> {
    let dim = p.dim();
    check_dim(dim, warm.dim())?;
    if let Some((i, _)) = warm
        .iter()
        .enumerate()
        .find(|&(i, v)| *v != 0.0 && !support.contains(i))
    {
        return Err(Error::InvalidInput(format!(
            "warm start is nonzero at {i}, outside the support"
        )));
    }
    if support.is_empty() {
        return Ok(DenseVector::zeros(dim));
    }
    let idx = support.indices();
    let use_newton = p.has_restricted_newton() && idx.len() <= cfg.newton_max_support;

    let mut full = warm.as_slice().to_vec();
    let mut z = gather(&full, idx);
    let mut q = p.value(&full);
    let mut g = gather(&p.gradient(&full), idx);
    let mut lbfgs = Lbfgs::new(cfg.lbfgs_memory);
    let mut gnorm = norm_inf(&g);

    for _ in 0..cfg.max_iter {
        if gnorm <= cfg.grad_tol {
            return Ok(DenseVector::from_vec_unchecked(full));
        }
        let mut dir = if use_newton {
            p.restricted_hessian(&full, idx)
                .and_then(|h| newton_direction(h, &g))
                .unwrap_or_else(|| g.iter().map(|v| -v).collect())
        } else {
            lbfgs.direction(&g)
        };
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..80 {
            let trial: Vec<f64> = z.iter().zip(&dir).map(|(zi, di)| zi + t * di).collect();
            let trial_full = scatter(dim, idx, &trial);
            let qt = p.value(&trial_full);
            if qt.is_finite() && qt <= q + cfg.sufficient_decrease * t * slope {
                accepted = Some((trial, trial_full, qt));
                break;
            }
            t *= cfg.shrink;
        }
        let Some((z_new, full_new, q_new)) = accepted else {
            // Line search stalled at the rounding floor.
            break;
        };
        let g_new = gather(&p.gradient(&full_new), idx);
        if !use_newton {
            let s: Vec<f64> = z_new.iter().zip(&z).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
            lbfgs.push(s, y);
        }
        z = z_new;
        full = full_new;
        q = q_new;
        g = g_new;
        gnorm = norm_inf(&g);
    }
    if gnorm <= cfg.grad_tol {
        return Ok(DenseVector::from_vec_unchecked(full));
    }
    Err(Error::NonConvergence {
        iterations: cfg.max_iter,
        grad_norm: gnorm,
        best: DenseVector::from_vec_unchecked(full),
    })
}

/// `min_alpha Q(beta + alpha e_j)`, returning `(alpha_star, new_value)`.
///
/// Problems with constant coordinate curvature (least squares) use the
/// closed form `-grad_j / ||X_j||^2`; the rest use safeguarded 1-D Newton
/// with bisection on the slope sign change.
pub fn line_minimize(
    p: &(impl Objective + ?Sized),
    beta: &DenseVector,
    j: usize,
) -> Result<(f64, f64)> {
    check_dim(p.dim(), beta.dim())?;
    if j >= p.dim() {
        return Err(Error::IndexOutOfRange {
            index: j,
            dim: p.dim(),
        });
    }
    let oracle = p.line_oracle(beta);
    minimize_along(oracle.as_ref(), j, p.has_exact_line_min())
}

/// 1-D minimization through a shared oracle; see [`line_minimize`].
pub fn minimize_along(oracle: &dyn LineOracle, j: usize, exact: bool) -> Result<(f64, f64)> {
    let base = oracle.base_value();
    let p0 = oracle.eval(j, 0.0);
    if exact {
        let a = p0.curvature.unwrap_or(0.0);
        if a == 0.0 {
            return Err(Error::ZeroCurvatureColumn(j));
        }
        if p0.slope == 0.0 {
            return Ok((0.0, base));
        }
        let alpha = -p0.slope / a;
        let v = oracle.eval(j, alpha).value;
        return Ok(if v <= base { (alpha, v) } else { (0.0, base) });
    }
    if p0.slope.abs() <= LINE_SLOPE_TOL {
        return Ok((0.0, base));
    }
    let dir = -p0.slope.signum();
    let mut best = (0.0, base);
    let consider = |alpha: f64, v: f64, best: &mut (f64, f64)| {
        if v < best.1 {
            *best = (alpha, v);
        }
    };

    // Bracket the sign change of the slope, walking downhill.
    let mut lo = (0.0, p0.slope);
    let mut step = match p0.curvature {
        Some(c) if c > 0.0 => p0.slope.abs() / c,
        _ => 1.0,
    };
    let mut hi = None;
    let mut last = (lo.0, lo.1, p0.curvature);
    for _ in 0..80 {
        let a = lo.0 + dir * step;
        let pt = oracle.eval(j, a);
        consider(a, pt.value, &mut best);
        if pt.slope.abs() <= LINE_SLOPE_TOL {
            return Ok(best_or(a, pt.value, best, base));
        }
        last = (a, pt.slope, pt.curvature);
        if pt.slope * dir < 0.0 {
            lo = (a, pt.slope);
            step *= 2.0;
        } else {
            hi = Some((a, pt.slope));
            break;
        }
    }
    let Some(mut hi) = hi else {
        // No minimizer within reach (objective keeps decreasing).
        return Ok(best);
    };

    for _ in 0..200 {
        let (left, right) = if lo.0 < hi.0 {
            (lo.0, hi.0)
        } else {
            (hi.0, lo.0)
        };
        if right - left <= 1e-15 * (1.0 + left.abs().max(right.abs())) {
            break;
        }
        let inside = |a: f64| a.is_finite() && a > left && a < right;
        let newton = match last.2 {
            Some(c) if c > 0.0 => last.0 - last.1 / c,
            _ => f64::NAN,
        };
        let secant = lo.0 - lo.1 * (hi.0 - lo.0) / (hi.1 - lo.1);
        let next = if inside(newton) {
            newton
        } else if inside(secant) {
            secant
        } else {
            0.5 * (left + right)
        };
        let pt = oracle.eval(j, next);
        consider(next, pt.value, &mut best);
        if pt.slope.abs() <= LINE_SLOPE_TOL {
            return Ok(best_or(next, pt.value, best, base));
        }
        last = (next, pt.slope, pt.curvature);
        if pt.slope * dir < 0.0 {
            lo = (next, pt.slope);
        } else {
            hi = (next, pt.slope);
        }
    }
    Ok(best)
}

/// Prefers the stationary point unless it sits above the base value.
fn best_or(alpha: f64, v: f64, best: (f64, f64), base: f64) -> (f64, f64) {
    if v <= base {
        (alpha, v)
    } else {
        best
    }
}
