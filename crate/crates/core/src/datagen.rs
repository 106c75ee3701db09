//! Synthetic instance generators and sparse classification file I/O.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::crf::ChainDataset;
use crate::error::{Error, Result};
use crate::objectives::{LeastSquaresProblem, LogisticL2Problem};
use crate::types::{DenseVector, Rng, SupportSet};

/// Two equal Gaussian classes centered at `±beta_star`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticSyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub k_bar: usize,
    pub beta_norm: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for LogisticSyntheticSpec {
    fn default() -> Self {
        Self {
            n: 100,
            d: 500,
            k_bar: 5,
            beta_norm: 5.0,
            lambda: 0.01,
            seed: 0,
        }
    }
}

impl LogisticSyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k_bar == 0 || self.k_bar > self.d {
            return Err(Error::InvalidInput(format!(
                "need 1 <= k_bar <= d, got k_bar={} d={}",
                self.k_bar, self.d
            )));
        }
        if self.n == 0 || !self.n.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!(
                "n must be positive and even, got {}",
                self.n
            )));
        }
        if !(self.beta_norm > 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::InvalidInput(
                "beta_norm must be > 0 and lambda >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// `y = X beta_star + sigma * noise` with Gaussian `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresSyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub k_bar: usize,
    pub noise_sigma: f64,
    pub normalize_columns: bool,
    pub seed: u64,
}

impl Default for LeastSquaresSyntheticSpec {
    fn default() -> Self {
        Self {
            n: 128,
            d: 256,
            k_bar: 8,
            noise_sigma: 0.0,
            normalize_columns: true,
            seed: 0,
        }
    }
}

impl LeastSquaresSyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.k_bar > self.d {
            return Err(Error::InvalidInput(format!(
                "need n, d >= 1 and k_bar <= d, got n={} d={} k_bar={}",
                self.n, self.d, self.k_bar
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidInput("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// A planted instance together with its generating coefficients.
#[derive(Debug, Clone)]
pub struct Planted<P> {
    pub problem: P,
    pub beta_star: DenseVector,
    pub support: SupportSet,
}

/// Planted support uniform without replacement, nonzeros `U[0,1]` rescaled
/// to `||beta_star|| = beta_norm`; the first `n/2` rows are `N(beta_star, I)`
/// labeled `+1`, the rest `N(-beta_star, I)` labeled `-1`.
pub fn gen_logistic(spec: &LogisticSyntheticSpec) -> Result<Planted<LogisticL2Problem>> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let support = rng.choose_k(spec.d, spec.k_bar);
    let mut beta = vec![0.0; spec.d];
    for &j in &support {
        beta[j] = rng.uniform();
    }
    let norm = beta.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut beta {
            *v *= spec.beta_norm / norm;
        }
    }
    let half = spec.n / 2;
    let mut x = DMatrix::zeros(spec.n, spec.d);
    let mut y = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let label = if i < half { 1.0 } else { -1.0 };
        for j in 0..spec.d {
            x[(i, j)] = label * beta[j] + rng.normal();
        }
        y.push(label);
    }
    Ok(Planted {
        problem: LogisticL2Problem::new(x, y, spec.lambda)?,
        beta_star: DenseVector::new(beta)?,
        support: SupportSet::from_indices(spec.d, support)?,
    })
}

/// Standard Gaussian design (columns scaled to unit norm when requested),
/// planted nonzeros `±U[1,2]` on a uniform support, Gaussian noise.
pub fn gen_least_squares(spec: &LeastSquaresSyntheticSpec) -> Result<Planted<LeastSquaresProblem>> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let mut x = DMatrix::from_fn(spec.n, spec.d, |_, _| rng.normal());
    if spec.normalize_columns {
        for mut c in x.column_iter_mut() {
            let norm = c.norm();
            if norm > 0.0 {
                c /= norm;
            }
        }
    }
    let support = rng.choose_k(spec.d, spec.k_bar);
    let mut beta = vec![0.0; spec.d];
    for &j in &support {
        beta[j] = rng.sign() * rng.uniform_range(1.0, 2.0);
    }
    let mut y = vec![0.0; spec.n];
    for &j in &support {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += x[(i, j)] * beta[j];
        }
    }
    if spec.noise_sigma > 0.0 {
        for yi in &mut y {
            *yi += spec.noise_sigma * rng.normal();
        }
    }
    Ok(Planted {
        problem: LeastSquaresProblem::new(x, y)?,
        beta_star: DenseVector::new(beta)?,
        support: SupportSet::from_indices(spec.d, support)?,
    })
}

/// Sampler for labeled chains with tunable sequential and observational signal.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSyntheticSpec {
    pub length: usize,
    pub channels: usize,
    pub states: usize,
    pub labels: usize,
    pub transition_strength: f64,
    pub emission_strength: f64,
    pub seed: u64,
}

impl Default for ChainSyntheticSpec {
    fn default() -> Self {
        Self {
            length: 800,
            channels: 4,
            states: 5,
            labels: 4,
            transition_strength: 2.0,
            emission_strength: 3.0,
            seed: 0,
        }
    }
}

/// State favored by `label` on `channel`.
pub fn preferred_state(label: usize, channel: usize, states: usize) -> usize {
    (label * (channel + 1) + channel) % states
}

/// One chain of `length` positions.
///
/// Labels follow a Markov chain with a uniform start and
/// `P(l' | l) ∝ exp(transition_strength * [l' == l])`. Observation `c` at a
/// position with label `l` takes state `s` with probability
/// `∝ exp(emission_strength / (c + 1) * [s == preferred_state(l, c)])`,
/// so lower channels carry more signal.
pub fn gen_chain(spec: &ChainSyntheticSpec) -> Result<ChainDataset> {
    let &ChainSyntheticSpec {
        length,
        channels,
        states,
        labels,
        transition_strength,
        emission_strength,
        seed,
    } = spec;
    if length == 0 || channels == 0 || states == 0 || labels == 0 {
        return Err(Error::InvalidInput("chain sizes must be positive".into()));
    }
    if !transition_strength.is_finite() || !emission_strength.is_finite() {
        return Err(Error::InvalidInput("chain strengths must be finite".into()));
    }
    let mut rng = Rng::new(seed);
    let mut ys = Vec::with_capacity(length);
    let mut obs = Vec::with_capacity(length * channels);
    let mut logits_l = vec![0.0; labels];
    let mut logits_s = vec![0.0; states];
    for t in 0..length {
        let label = if t == 0 {
            rng.below(labels)
        } else {
            let prev = ys[t - 1];
            for (l, v) in logits_l.iter_mut().enumerate() {
                *v = if l == prev { transition_strength } else { 0.0 };
            }
            rng.categorical_logits(&logits_l)
        };
        ys.push(label);
        for c in 0..channels {
            let pref = preferred_state(label, c, states);
            let w = emission_strength / (c + 1) as f64;
            for (s, v) in logits_s.iter_mut().enumerate() {
                *v = if s == pref { w } else { 0.0 };
            }
            obs.push(rng.categorical_logits(&logits_s));
        }
    }
    let mut data = ChainDataset::new(channels, states, labels)?;
    data.push(obs, ys)?;
    Ok(data)
}

pub fn read_chain_file(path: impl AsRef<Path>) -> Result<ChainDataset> {
    ChainDataset::parse_text(&std::fs::read_to_string(path)?)
}

pub fn write_chain_file(path: impl AsRef<Path>, data: &ChainDataset) -> Result<()> {
    Ok(std::fs::write(path, data.to_text())?)
}

/// Dense samples read from a sparse `label index:value ...` file.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseClassification {
    pub dim: usize,
    /// Row-major `n x dim`.
    pub rows: Vec<f64>,
    /// Labels in `{-1, +1}`.
    pub labels: Vec<f64>,
}

impl SparseClassification {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn into_problem(self, lambda: f64) -> Result<LogisticL2Problem> {
        LogisticL2Problem::from_rows(self.dim, &self.rows, self.labels, lambda)
    }

    /// Pads or truncates rows to `dim` columns.
    pub fn with_dim(&self, dim: usize) -> Self {
        let mut rows = vec![0.0; self.n() * dim];
        let keep = dim.min(self.dim);
        for i in 0..self.n() {
            rows[i * dim..i * dim + keep].copy_from_slice(&self.row(i)[..keep]);
        }
        Self {
            dim,
            rows,
            labels: self.labels.clone(),
        }
    }
}

fn parse_label(tok: &str, line_no: usize) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::MalformedLine {
        line_no,
        reason: format!("bad label {tok:?}"),
    })?;
    if v == 1.0 {
        Ok(1.0)
    } else if v == -1.0 || v == 0.0 {
        Ok(-1.0)
    } else {
        Err(Error::MalformedLine {
            line_no,
            reason: format!("label {tok:?} is not one of -1, 0, +1"),
        })
    }
}

/// Parses the sparse text format with 1-based feature indices.
///
/// With `dim` given, indices beyond it are rejected; otherwise the
/// dimension is the largest index seen. Labels `0` map to `-1`. Blank
/// lines and lines starting with `#` are skipped; line numbers are 1-based.
pub fn parse_sparse_text(text: &str, dim: Option<usize>) -> Result<SparseClassification> {
    let mut labels = Vec::new();
    let mut entries: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_index = 0;
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        let label = parse_label(toks.next().unwrap_or_default(), line_no)?;
        let mut row = Vec::new();
        for tok in toks {
            let (i, v) = tok.split_once(':').ok_or_else(|| Error::MalformedLine {
                line_no,
                reason: format!("expected index:value, got {tok:?}"),
            })?;
            let index: usize = i.parse().map_err(|_| Error::MalformedLine {
                line_no,
                reason: format!("bad index {i:?}"),
            })?;
            let value: f64 = v.parse().map_err(|_| Error::MalformedLine {
                line_no,
                reason: format!("bad value {v:?}"),
            })?;
            if index == 0 {
                return Err(Error::MalformedLine {
                    line_no,
                    reason: "feature indices are 1-based".into(),
                });
            }
            if !value.is_finite() {
                return Err(Error::MalformedLine {
                    line_no,
                    reason: format!("non-finite value {v:?}"),
                });
            }
            if let Some(d) = dim {
                if index > d {
                    return Err(Error::IndexOutOfDeclaredRange {
                        line_no,
                        index,
                        dim: d,
                    });
                }
            }
            max_index = max_index.max(index);
            row.push((index - 1, value));
        }
        labels.push(label);
        entries.push(row);
    }
    let dim = dim.unwrap_or(max_index);
    let mut rows = vec![0.0; labels.len() * dim];
    for (i, row) in entries.iter().enumerate() {
        for &(j, v) in row {
            rows[i * dim + j] = v;
        }
    }
    Ok(SparseClassification { dim, rows, labels })
}

pub fn parse_sparse_classification(
    path: impl AsRef<Path>,
    dim: Option<usize>,
) -> Result<SparseClassification> {
    parse_sparse_text(&std::fs::read_to_string(path)?, dim)
}

/// Serializes nonzero entries with shortest round-trip decimals.
pub fn sparse_to_text(data: &SparseClassification) -> String {
    let mut out = String::new();
    for i in 0..data.n() {
        out.push_str(if data.labels[i] > 0.0 { "+1" } else { "-1" });
        for (j, &v) in data.row(i).iter().enumerate() {
            if v != 0.0 {
                let _ = write!(out, " {}:{}", j + 1, v);
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_sparse_classification(
    path: impl AsRef<Path>,
    data: &SparseClassification,
) -> Result<()> {
    Ok(std::fs::write(path, sparse_to_text(data))?)
}
