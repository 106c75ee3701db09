//! The objective contract and the two regression-style instances.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::DenseVector;

/// Value and derivatives of `alpha -> Q(beta + alpha e_j)` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinePoint {
    pub value: f64,
    pub slope: f64,
    pub curvature: Option<f64>,
}

/// One-dimensional restrictions of `Q` through a fixed base point.
///
/// Implementations precompute whatever the base point allows (residuals,
/// margins) so a whole candidate scan shares that work.
pub trait LineOracle: Sync {
    fn base_value(&self) -> f64;
    fn eval(&self, j: usize, alpha: f64) -> LinePoint;

    fn value_at(&self, j: usize, alpha: f64) -> f64 {
        self.eval(j, alpha).value
    }
}

/// A smooth convex objective `Q(beta)` over `R^d`.
///
/// `value` and `gradient` assume `beta.len() == dim()`; the `*_checked`
/// variants validate that at the boundary.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn value(&self, beta: &[f64]) -> f64;

    fn gradient(&self, beta: &[f64]) -> Vec<f64>;

    fn line_oracle<'a>(&'a self, beta: &'a [f64]) -> Box<dyn LineOracle + 'a>;

    /// Short name used in reports.
    fn kind(&self) -> &'static str;

    /// Hessian restricted to `support` (rows/cols in the given order).
    fn restricted_hessian(&self, _beta: &[f64], _support: &[usize]) -> Option<DMatrix<f64>> {
        None
    }

    /// True when the line oracle's curvature is constant along every
    /// coordinate, so one Newton step is the exact 1-D minimizer.
    fn has_exact_line_min(&self) -> bool {
        false
    }

    fn has_restricted_newton(&self) -> bool {
        false
    }

    /// Whether feature `j` takes part in selection. Features that are not
    /// sparsifiable stay in every restricted solve.
    fn is_sparsifiable(&self, _j: usize) -> bool {
        true
    }

    fn value_checked(&self, beta: &DenseVector) -> Result<f64> {
        check_dim(self.dim(), beta.dim())?;
        Ok(self.value(beta))
    }

    fn gradient_checked(&self, beta: &DenseVector) -> Result<DenseVector> {
        check_dim(self.dim(), beta.dim())?;
        DenseVector::new(self.gradient(beta))
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Line oracle that re-evaluates the full objective and gradient per point.
pub struct GenericLine<'a, P: Objective + ?Sized> {
    problem: &'a P,
    beta: &'a [f64],
    base: f64,
}

impl<'a, P: Objective + ?Sized> GenericLine<'a, P> {
    pub fn new(problem: &'a P, beta: &'a [f64]) -> Self {
        let base = problem.value(beta);
        Self {
            problem,
            beta,
            base,
        }
    }
}

impl<P: Objective + ?Sized> LineOracle for GenericLine<'_, P> {
    fn base_value(&self) -> f64 {
        self.base
    }

    fn eval(&self, j: usize, alpha: f64) -> LinePoint {
        if alpha == 0.0 {
            let g = self.problem.gradient(self.beta);
            return LinePoint {
                value: self.base,
                slope: g[j],
                curvature: None,
            };
        }
        let mut moved = self.beta.to_vec();
        moved[j] += alpha;
        LinePoint {
            value: self.problem.value(&moved),
            slope: self.problem.gradient(&moved)[j],
            curvature: None,
        }
    }

    fn value_at(&self, j: usize, alpha: f64) -> f64 {
        if alpha == 0.0 {
            return self.base;
        }
        let mut moved = self.beta.to_vec();
        moved[j] += alpha;
        self.problem.value(&moved)
    }
}

fn matrix_from_rows(n: usize, d: usize, rows: &[f64]) -> Result<DMatrix<f64>> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput(
            "design matrix must be at least 1x1".into(),
        ));
    }
    check_dim(n * d, rows.len())?;
    if let Some(index) = rows.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(DMatrix::from_row_slice(n, d, rows))
}

fn mat_vec(x: &DMatrix<f64>, beta: &[f64]) -> DVector<f64> {
    // Skip zero coordinates: supports are small relative to d.
    let mut out = DVector::zeros(x.nrows());
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            out.axpy(b, &x.column(j), 1.0);
        }
    }
    out
}

/// `Q(beta) = 1/2 ||X beta - y||^2`.
#[derive(Debug, Clone)]
pub struct LeastSquaresProblem {
    x: DMatrix<f64>,
    y: DVector<f64>,
    col_norms_sq: Vec<f64>,
}

impl LeastSquaresProblem {
    /// `rows` is the design matrix in row-major order, `n = y.len()`.
    pub fn from_rows(d: usize, rows: &[f64], y: Vec<f64>) -> Result<Self> {
        let x = matrix_from_rows(y.len(), d, rows)?;
        Self::new(x, y)
    }

    pub fn new(x: DMatrix<f64>, y: Vec<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidInput(
                "design matrix must be at least 1x1".into(),
            ));
        }
        check_dim(x.nrows(), y.len())?;
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite entry in X or y".into()));
        }
        let col_norms_sq = x.column_iter().map(|c| c.norm_squared()).collect();
        Ok(Self {
            x,
            y: DVector::from_vec(y),
            col_norms_sq,
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        self.y.as_slice()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn col_norm_sq(&self, j: usize) -> f64 {
        self.col_norms_sq[j]
    }

    pub fn residual(&self, beta: &[f64]) -> DVector<f64> {
        mat_vec(&self.x, beta) - &self.y
    }
}

struct LsLine<'a> {
    p: &'a LeastSquaresProblem,
    r: DVector<f64>,
    base: f64,
}

impl LineOracle for LsLine<'_> {
    fn base_value(&self) -> f64 {
        self.base
    }

    fn eval(&self, j: usize, alpha: f64) -> LinePoint {
        let c = self.p.x.column(j).dot(&self.r);
        let a = self.p.col_norms_sq[j];
        LinePoint {
            value: self.base + alpha * c + 0.5 * alpha * alpha * a,
            slope: c + alpha * a,
            curvature: Some(a),
        }
    }
}

impl Objective for LeastSquaresProblem {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn value(&self, beta: &[f64]) -> f64 {
        0.5 * self.residual(beta).norm_squared()
    }

    fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let r = self.residual(beta);
        self.x.tr_mul(&r).as_slice().to_vec()
    }

    fn line_oracle<'a>(&'a self, beta: &'a [f64]) -> Box<dyn LineOracle + 'a> {
        let r = self.residual(beta);
        let base = 0.5 * r.norm_squared();
        Box::new(LsLine { p: self, r, base })
    }

    fn kind(&self) -> &'static str {
        "least-squares"
    }

    fn restricted_hessian(&self, _beta: &[f64], support: &[usize]) -> Option<DMatrix<f64>> {
        let xf = self.x.select_columns(support);
        Some(xf.tr_mul(&xf))
    }

    fn has_exact_line_min(&self) -> bool {
        true
    }

    fn has_restricted_newton(&self) -> bool {
        true
    }
}

/// `log(1 + e^t)` without overflow.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `1 / (1 + e^{-t})` without overflow.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `Q(beta) = 1/n sum_i log(1 + exp(-y_i X_i beta)) + lambda/2 ||beta||^2`
/// with labels in `{-1, +1}`.
#[derive(Debug, Clone)]
pub struct LogisticL2Problem {
    x: DMatrix<f64>,
    y: Vec<f64>,
    lambda: f64,
}

impl LogisticL2Problem {
    pub fn from_rows(d: usize, rows: &[f64], y: Vec<f64>, lambda: f64) -> Result<Self> {
        let x = matrix_from_rows(y.len(), d, rows)?;
        Self::new(x, y, lambda)
    }

    pub fn new(x: DMatrix<f64>, y: Vec<f64>, lambda: f64) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidInput(
                "design matrix must be at least 1x1".into(),
            ));
        }
        check_dim(x.nrows(), y.len())?;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "ridge weight must be >= 0, got {lambda}"
            )));
        }
        if let Some(bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
            return Err(Error::InvalidInput(format!("label {bad} is not +1 or -1")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite entry in X".into()));
        }
        Ok(Self { x, y, lambda })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Same data with a different ridge weight.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.x.clone(), self.y.clone(), lambda)
    }

    /// `y_i X_i beta` per sample.
    pub fn margins(&self, beta: &[f64]) -> Vec<f64> {
        let z = mat_vec(&self.x, beta);
        z.iter().zip(&self.y).map(|(z, y)| y * z).collect()
    }

    /// Fraction of samples whose predicted sign disagrees with the label
    /// (a zero score counts as an error).
    pub fn classification_error(&self, beta: &[f64]) -> f64 {
        let wrong = self.margins(beta).iter().filter(|&&m| m <= 0.0).count();
        wrong as f64 / self.n() as f64
    }

    fn ridge(&self, beta: &[f64]) -> f64 {
        0.5 * self.lambda * beta.iter().map(|b| b * b).sum::<f64>()
    }
}

struct LogisticLine<'a> {
    p: &'a LogisticL2Problem,
    beta: &'a [f64],
    margins: Vec<f64>,
    sq_norm: f64,
    base: f64,
}

impl LineOracle for LogisticLine<'_> {
    fn base_value(&self) -> f64 {
        self.base
    }

    fn eval(&self, j: usize, alpha: f64) -> LinePoint {
        let p = self.p;
        let n = p.n() as f64;
        let col = p.x.column(j);
        let (mut loss, mut slope, mut curv) = (0.0, 0.0, 0.0);
        for ((m, y), x) in self.margins.iter().zip(&p.y).zip(col.iter()) {
            let m = m + alpha * y * x;
            loss += softplus(-m);
            let s = sigmoid(-m);
            slope -= y * x * s;
            curv += x * x * s * (1.0 - s);
        }
        let bj = self.beta[j];
        LinePoint {
            value: loss / n + 0.5 * p.lambda * (self.sq_norm + 2.0 * alpha * bj + alpha * alpha),
            slope: slope / n + p.lambda * (bj + alpha),
            curvature: Some(curv / n + p.lambda),
        }
    }
}

impl Objective for LogisticL2Problem {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn value(&self, beta: &[f64]) -> f64 {
        let loss: f64 = self.margins(beta).iter().map(|&m| softplus(-m)).sum();
        loss / self.n() as f64 + self.ridge(beta)
    }

    fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let n = self.n() as f64;
        let weights: DVector<f64> = DVector::from_iterator(
            self.n(),
            self.margins(beta)
                .iter()
                .zip(&self.y)
                .map(|(&m, &y)| -y * sigmoid(-m) / n),
        );
        let mut g = self.x.tr_mul(&weights);
        for (gj, bj) in g.iter_mut().zip(beta) {
            *gj += self.lambda * bj;
        }
        g.as_slice().to_vec()
    }

    fn line_oracle<'a>(&'a self, beta: &'a [f64]) -> Box<dyn LineOracle + 'a> {
        let margins = self.margins(beta);
        let sq_norm = beta.iter().map(|b| b * b).sum::<f64>();
        let base = margins.iter().map(|&m| softplus(-m)).sum::<f64>() / self.n() as f64
            + 0.5 * self.lambda * sq_norm;
        Box::new(LogisticLine {
            p: self,
            beta,
            margins,
            sq_norm,
            base,
        })
    }

    fn kind(&self) -> &'static str {
        "logistic"
    }

    fn restricted_hessian(&self, beta: &[f64], support: &[usize]) -> Option<DMatrix<f64>> {
        let n = self.n() as f64;
        let margins = self.margins(beta);
        let mut xf = self.x.select_columns(support);
        let mut weighted = xf.clone();
        for (i, &m) in margins.iter().enumerate() {
            let s = sigmoid(m);
            let w = s * (1.0 - s) / n;
            weighted.row_mut(i).scale_mut(w);
        }
        xf = xf.tr_mul(&weighted);
        for k in 0..support.len() {
            xf[(k, k)] += self.lambda;
        }
        Some(xf)
    }

    fn has_restricted_newton(&self) -> bool {
        true
    }
}
