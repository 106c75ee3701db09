//! Linear-chain CRF negative log-likelihood with sum-product inference.
//!
//! Position 0 carries observation (unary) features only; transition
//! features `(prev, next)` apply between positions `t-1` and `t` for
//! `t >= 1`. All inference runs in log space.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::objectives::{check_dim, GenericLine, LineOracle, Objective};

/// Enumeration cap for the brute-force oracles.
pub const BRUTE_FORCE_LIMIT: f64 = 1e6;

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// One labelled sequence. `observations` is `T x D`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainSequence {
    observations: Vec<usize>,
    labels: Vec<usize>,
}

impl ChainSequence {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn observation(&self, t: usize, channel: usize, channels: usize) -> usize {
        self.observations[t * channels + channel]
    }

    pub fn observation_row(&self, t: usize, channels: usize) -> &[usize] {
        &self.observations[t * channels..(t + 1) * channels]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainDataset {
    sequences: Vec<ChainSequence>,
    channels: usize,
    states: usize,
    labels: usize,
}

impl ChainDataset {
    pub fn new(channels: usize, states: usize, labels: usize) -> Result<Self> {
        if channels == 0 || states == 0 || labels == 0 {
            return Err(Error::InvalidInput(
                "channels, states and labels must be positive".into(),
            ));
        }
        Ok(Self {
            sequences: Vec::new(),
            channels,
            states,
            labels,
        })
    }

    /// Appends a sequence; `observations` is `T x D` row-major.
    pub fn push(&mut self, observations: Vec<usize>, labels: Vec<usize>) -> Result<()> {
        let t = labels.len();
        if t == 0 {
            return Err(Error::InvalidInput("sequence length must be >= 1".into()));
        }
        check_dim(t * self.channels, observations.len())?;
        if let Some(&s) = observations.iter().find(|&&s| s >= self.states) {
            return Err(Error::InvalidInput(format!(
                "observation {s} >= state count {}",
                self.states
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= self.labels) {
            return Err(Error::InvalidInput(format!(
                "label {l} >= label count {}",
                self.labels
            )));
        }
        self.sequences.push(ChainSequence {
            observations,
            labels,
        });
        Ok(())
    }

    pub fn sequences(&self) -> &[ChainSequence] {
        &self.sequences
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn label_count(&self) -> usize {
        self.labels
    }

    pub fn total_positions(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }

    /// Text form: per sequence a header `T D S L`, `T` lines of `D`
    /// observations, one line of `T` labels; sequences separated by a blank line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, seq) in self.sequences.iter().enumerate() {
            if k > 0 {
                out.push('\n');
            }
            let _ = writeln!(
                out,
                "{} {} {} {}",
                seq.len(),
                self.channels,
                self.states,
                self.labels
            );
            for t in 0..seq.len() {
                let row: Vec<String> = seq
                    .observation_row(t, self.channels)
                    .iter()
                    .map(|v| v.to_string())
                    .collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
            let labels: Vec<String> = seq.labels.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", labels.join(" "));
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .peekable();
        let mut dataset: Option<ChainDataset> = None;
        let malformed = |line_no: usize, reason: String| Error::MalformedLine { line_no, reason };
        let ints = |line_no: usize, line: &str| -> Result<Vec<usize>> {
            line.split_whitespace()
                .map(|tok| {
                    tok.parse::<usize>()
                        .map_err(|e| malformed(line_no, format!("{tok:?}: {e}")))
                })
                .collect()
        };
        loop {
            while matches!(lines.peek(), Some((_, l)) if l.is_empty()) {
                lines.next();
            }
            let Some((line_no, header)) = lines.next() else {
                break;
            };
            let h = ints(line_no, header)?;
            if h.len() != 4 {
                return Err(malformed(line_no, "header must be `T D S L`".into()));
            }
            let (t, d, s, l) = (h[0], h[1], h[2], h[3]);
            let ds = match &mut dataset {
                Some(ds) => {
                    if (ds.channels, ds.states, ds.labels) != (d, s, l) {
                        return Err(malformed(
                            line_no,
                            "D S L differ from the first sequence".into(),
                        ));
                    }
                    ds
                }
                None => dataset.insert(
                    ChainDataset::new(d, s, l).map_err(|e| malformed(line_no, e.to_string()))?,
                ),
            };
            let mut obs = Vec::with_capacity(t * d);
            for _ in 0..t {
                let (no, row) = lines
                    .next()
                    .ok_or_else(|| malformed(line_no, "truncated sequence".into()))?;
                let row = ints(no, row)?;
                if row.len() != d {
                    return Err(malformed(no, format!("expected {d} observations")));
                }
                obs.extend(row);
            }
            let (no, label_line) = lines
                .next()
                .ok_or_else(|| malformed(line_no, "missing label line".into()))?;
            let labels = ints(no, label_line)?;
            if labels.len() != t {
                return Err(malformed(no, format!("expected {t} labels")));
            }
            ds.push(obs, labels)
                .map_err(|e| malformed(no, e.to_string()))?;
        }
        dataset.ok_or_else(|| Error::InvalidInput("no sequences in chain file".into()))
    }
}

/// Parameter layout: one indicator per `(label, channel, state)` followed by
/// one per `(prev_label, label)` transition. Only the observation block is
/// sparsifiable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrfFeatureSpace {
    labels: usize,
    channels: usize,
    states: usize,
}

impl CrfFeatureSpace {
    pub fn new(labels: usize, channels: usize, states: usize) -> Self {
        Self {
            labels,
            channels,
            states,
        }
    }

    pub fn for_dataset(data: &ChainDataset) -> Self {
        Self::new(data.labels, data.channels, data.states)
    }

    pub fn observation_count(&self) -> usize {
        self.labels * self.channels * self.states
    }

    pub fn transition_count(&self) -> usize {
        self.labels * self.labels
    }

    pub fn len(&self) -> usize {
        self.observation_count() + self.transition_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn observation_index(&self, label: usize, channel: usize, state: usize) -> usize {
        (label * self.channels + channel) * self.states + state
    }

    pub fn transition_index(&self, prev: usize, next: usize) -> usize {
        self.observation_count() + prev * self.labels + next
    }

    pub fn is_sparsifiable(&self, m: usize) -> bool {
        m < self.observation_count()
    }

    /// Observation channel of a sparsifiable feature.
    pub fn channel_of(&self, m: usize) -> Option<usize> {
        self.is_sparsifiable(m)
            .then(|| (m / self.states) % self.channels)
    }

    /// `(label, channel, state)` of an observation feature.
    pub fn decode_observation(&self, m: usize) -> Option<(usize, usize, usize)> {
        self.is_sparsifiable(m).then(|| {
            let state = m % self.states;
            let rest = m / self.states;
            (rest / self.channels, rest % self.channels, state)
        })
    }
}

/// Posterior marginals for one sequence.
#[derive(Debug, Clone)]
pub struct Marginals {
    /// `T x L`, row-major.
    pub unary: Vec<f64>,
    /// `(T-1) x L x L`: `pairwise[t][a][b] = P(y_t = a, y_{t+1} = b)`.
    pub pairwise: Vec<f64>,
    pub labels: usize,
    pub log_partition: f64,
}

impl Marginals {
    pub fn unary_at(&self, t: usize, l: usize) -> f64 {
        self.unary[t * self.labels + l]
    }

    pub fn pairwise_at(&self, t: usize, a: usize, b: usize) -> f64 {
        self.pairwise[(t * self.labels + a) * self.labels + b]
    }
}

/// Negative log-likelihood of a chain CRF over a dataset.
#[derive(Debug, Clone)]
pub struct ChainCrfProblem {
    data: ChainDataset,
    features: CrfFeatureSpace,
    observed: Vec<f64>,
}

impl ChainCrfProblem {
    pub fn new(data: ChainDataset) -> Self {
        let features = CrfFeatureSpace::for_dataset(&data);
        let mut observed = vec![0.0; features.len()];
        for seq in &data.sequences {
            for t in 0..seq.len() {
                let y = seq.labels[t];
                for c in 0..data.channels {
                    observed
                        [features.observation_index(y, c, seq.observation(t, c, data.channels))] +=
                        1.0;
                }
                if t > 0 {
                    observed[features.transition_index(seq.labels[t - 1], y)] += 1.0;
                }
            }
        }
        Self {
            data,
            features,
            observed,
        }
    }

    pub fn data(&self) -> &ChainDataset {
        &self.data
    }

    pub fn features(&self) -> &CrfFeatureSpace {
        &self.features
    }

    /// Empirical feature counts over the training data.
    pub fn observed_counts(&self) -> &[f64] {
        &self.observed
    }

    fn sequence(&self, index: usize) -> Result<&ChainSequence> {
        self.data
            .sequences
            .get(index)
            .ok_or(Error::IndexOutOfRange {
                index,
                dim: self.data.sequences.len(),
            })
    }

    /// `T x L` unary log-potentials.
    fn unary_scores(&self, beta: &[f64], seq: &ChainSequence) -> Vec<f64> {
        let l = self.data.labels;
        let d = self.data.channels;
        let mut u = vec![0.0; seq.len() * l];
        for t in 0..seq.len() {
            let row = seq.observation_row(t, d);
            for y in 0..l {
                u[t * l + y] = row
                    .iter()
                    .enumerate()
                    .map(|(c, &s)| beta[self.features.observation_index(y, c, s)])
                    .sum();
            }
        }
        u
    }

    fn transition_scores<'b>(&self, beta: &'b [f64]) -> &'b [f64] {
        let off = self.features.observation_count();
        &beta[off..off + self.features.transition_count()]
    }

    /// Forward log-messages `alpha[t][y]`.
    fn forward(&self, unary: &[f64], trans: &[f64], len: usize) -> Vec<f64> {
        let l = self.data.labels;
        let mut alpha = vec![0.0; len * l];
        alpha[..l].copy_from_slice(&unary[..l]);
        let mut buf = vec![0.0; l];
        for t in 1..len {
            for y in 0..l {
                for p in 0..l {
                    buf[p] = alpha[(t - 1) * l + p] + trans[p * l + y];
                }
                alpha[t * l + y] = unary[t * l + y] + log_sum_exp(&buf);
            }
        }
        alpha
    }

    fn backward(&self, unary: &[f64], trans: &[f64], len: usize) -> Vec<f64> {
        let l = self.data.labels;
        let mut beta_msg = vec![0.0; len * l];
        let mut buf = vec![0.0; l];
        for t in (0..len.saturating_sub(1)).rev() {
            for y in 0..l {
                for n in 0..l {
                    buf[n] = trans[y * l + n] + unary[(t + 1) * l + n] + beta_msg[(t + 1) * l + n];
                }
                beta_msg[t * l + y] = log_sum_exp(&buf);
            }
        }
        beta_msg
    }

    fn log_partition_of(&self, beta: &[f64], seq: &ChainSequence) -> f64 {
        let l = self.data.labels;
        let u = self.unary_scores(beta, seq);
        let alpha = self.forward(&u, self.transition_scores(beta), seq.len());
        log_sum_exp(&alpha[(seq.len() - 1) * l..])
    }

    /// `log Z(X^i)` by the forward recursion.
    pub fn log_partition(&self, beta: &[f64], sequence_index: usize) -> Result<f64> {
        check_dim(self.features.len(), beta.len())?;
        Ok(self.log_partition_of(beta, self.sequence(sequence_index)?))
    }

    /// `log Z(X^i)` by enumerating all `L^T` label sequences.
    pub fn brute_force_log_partition(&self, beta: &[f64], sequence_index: usize) -> Result<f64> {
        check_dim(self.features.len(), beta.len())?;
        let seq = self.sequence(sequence_index)?;
        let scores = self.enumerate_scores(beta, seq)?;
        Ok(log_sum_exp(&scores))
    }

    /// Unary posteriors by enumeration (`T x L`, row-major). Test oracle.
    pub fn brute_force_unary_marginals(
        &self,
        beta: &[f64],
        sequence_index: usize,
    ) -> Result<Vec<f64>> {
        check_dim(self.features.len(), beta.len())?;
        let seq = self.sequence(sequence_index)?;
        let scores = self.enumerate_scores(beta, seq)?;
        let log_z = log_sum_exp(&scores);
        let l = self.data.labels;
        let mut out = vec![0.0; seq.len() * l];
        let mut path = vec![0usize; seq.len()];
        for score in scores {
            let w = (score - log_z).exp();
            for (t, &y) in path.iter().enumerate() {
                out[t * l + y] += w;
            }
            advance_path(&mut path, l);
        }
        Ok(out)
    }

    fn enumerate_scores(&self, beta: &[f64], seq: &ChainSequence) -> Result<Vec<f64>> {
        let l = self.data.labels;
        let count = (l as f64).powi(seq.len() as i32);
        if count > BRUTE_FORCE_LIMIT {
            return Err(Error::GuardViolation {
                count,
                limit: BRUTE_FORCE_LIMIT,
            });
        }
        let u = self.unary_scores(beta, seq);
        let trans = self.transition_scores(beta);
        let mut path = vec![0usize; seq.len()];
        let mut scores = Vec::with_capacity(count as usize);
        for _ in 0..count as usize {
            scores.push(path_score(&u, trans, &path, l));
            advance_path(&mut path, l);
        }
        Ok(scores)
    }

    pub fn marginals(&self, beta: &[f64], sequence_index: usize) -> Result<Marginals> {
        check_dim(self.features.len(), beta.len())?;
        Ok(self.marginals_of(beta, self.sequence(sequence_index)?))
    }

    fn marginals_of(&self, beta: &[f64], seq: &ChainSequence) -> Marginals {
        let l = self.data.labels;
        let len = seq.len();
        let u = self.unary_scores(beta, seq);
        let trans = self.transition_scores(beta);
        let alpha = self.forward(&u, trans, len);
        let back = self.backward(&u, trans, len);
        let log_z = log_sum_exp(&alpha[(len - 1) * l..]);
        let unary = alpha
            .iter()
            .zip(&back)
            .map(|(a, b)| (a + b - log_z).exp())
            .collect();
        let mut pairwise = vec![0.0; len.saturating_sub(1) * l * l];
        for t in 0..len.saturating_sub(1) {
            for a in 0..l {
                for b in 0..l {
                    pairwise[(t * l + a) * l + b] = (alpha[t * l + a]
                        + trans[a * l + b]
                        + u[(t + 1) * l + b]
                        + back[(t + 1) * l + b]
                        - log_z)
                        .exp();
                }
            }
        }
        Marginals {
            unary,
            pairwise,
            labels: l,
            log_partition: log_z,
        }
    }

    /// Score of the gold labelling of one sequence.
    fn gold_score(&self, beta: &[f64], seq: &ChainSequence) -> f64 {
        let u = self.unary_scores(beta, seq);
        path_score(
            &u,
            self.transition_scores(beta),
            &seq.labels,
            self.data.labels,
        )
    }

    /// Expected feature counts of one sequence, added into `acc`.
    fn accumulate_expected(&self, beta: &[f64], seq: &ChainSequence, acc: &mut [f64]) -> f64 {
        let l = self.data.labels;
        let d = self.data.channels;
        let m = self.marginals_of(beta, seq);
        for t in 0..seq.len() {
            let row = seq.observation_row(t, d);
            for y in 0..l {
                let p = m.unary[t * l + y];
                for (c, &s) in row.iter().enumerate() {
                    acc[self.features.observation_index(y, c, s)] += p;
                }
            }
        }
        let off = self.features.observation_count();
        for t in 0..seq.len().saturating_sub(1) {
            for k in 0..l * l {
                acc[off + k] += m.pairwise[t * l * l + k];
            }
        }
        m.log_partition
    }

    /// Most probable labelling of an observation matrix (`T x D`, row-major).
    pub fn decode(&self, beta: &[f64], seq: &ChainSequence) -> Vec<usize> {
        let l = self.data.labels;
        let len = seq.len();
        let u = self.unary_scores(beta, seq);
        let trans = self.transition_scores(beta);
        let mut score = u[..l].to_vec();
        let mut back = vec![0usize; len * l];
        for t in 1..len {
            let mut next = vec![0.0; l];
            for y in 0..l {
                let (arg, best) = (0..l).map(|p| (p, score[p] + trans[p * l + y])).fold(
                    (0, f64::NEG_INFINITY),
                    |acc, cur| if cur.1 > acc.1 { cur } else { acc },
                );
                next[y] = best + u[t * l + y];
                back[t * l + y] = arg;
            }
            score = next;
        }
        let mut y = (0..l).fold(0, |a, b| if score[b] > score[a] { b } else { a });
        let mut path = vec![0usize; len];
        for t in (0..len).rev() {
            path[t] = y;
            y = back[t * l + y];
        }
        path
    }

    /// Fraction of positions in `data` whose decoded label is wrong.
    pub fn label_error(&self, beta: &[f64], data: &ChainDataset) -> f64 {
        let (wrong, total) = data
            .sequences
            .iter()
            .map(|seq| {
                let pred = self.decode(beta, seq);
                (
                    pred.iter().zip(&seq.labels).filter(|(a, b)| a != b).count(),
                    seq.len(),
                )
            })
            .fold((0, 0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
        wrong as f64 / total.max(1) as f64
    }
}

fn path_score(unary: &[f64], trans: &[f64], path: &[usize], l: usize) -> f64 {
    let mut s = 0.0;
    for (t, &y) in path.iter().enumerate() {
        s += unary[t * l + y];
        if t > 0 {
            s += trans[path[t - 1] * l + y];
        }
    }
    s
}

/// Odometer increment over `{0..l}^T`, last position fastest.
fn advance_path(path: &mut [usize], l: usize) {
    for y in path.iter_mut().rev() {
        *y += 1;
        if *y < l {
            return;
        }
        *y = 0;
    }
}

impl Objective for ChainCrfProblem {
    fn dim(&self) -> usize {
        self.features.len()
    }

    fn value(&self, beta: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .data
            .sequences
            .par_iter()
            .map(|seq| self.log_partition_of(beta, seq) - self.gold_score(beta, seq))
            .collect();
        terms.iter().sum()
    }

    fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let dim = self.features.len();
        let parts: Vec<Vec<f64>> = self
            .data
            .sequences
            .par_iter()
            .map(|seq| {
                let mut acc = vec![0.0; dim];
                self.accumulate_expected(beta, seq, &mut acc);
                acc
            })
            .collect();
        let mut g: Vec<f64> = self.observed.iter().map(|c| -c).collect();
        for part in &parts {
            for (gi, pi) in g.iter_mut().zip(part) {
                *gi += pi;
            }
        }
        g
    }

    fn line_oracle<'a>(&'a self, beta: &'a [f64]) -> Box<dyn LineOracle + 'a> {
        Box::new(GenericLine::new(self, beta))
    }

    fn kind(&self) -> &'static str {
        "crf"
    }

    fn is_sparsifiable(&self, j: usize) -> bool {
        self.features.is_sparsifiable(j)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Rng;

    fn random_dataset(
        rng: &mut Rng,
        seqs: usize,
        t: usize,
        d: usize,
        s: usize,
        l: usize,
    ) -> ChainDataset {
        let mut ds = ChainDataset::new(d, s, l).unwrap();
        for _ in 0..seqs {
            let obs = (0..t * d).map(|_| rng.below(s)).collect();
            let labels = (0..t).map(|_| rng.below(l)).collect();
            ds.push(obs, labels).unwrap();
        }
        ds
    }

    fn random_beta(rng: &mut Rng, m: usize, scale: f64) -> Vec<f64> {
        (0..m).map(|_| scale * rng.normal()).collect()
    }

    #[test]
    fn uniform_potentials_give_t_log_l() {
        let mut rng = Rng::new(1);
        let p = ChainCrfProblem::new(random_dataset(&mut rng, 2, 5, 2, 3, 3));
        let zero = vec![0.0; p.dim()];
        assert!((p.log_partition(&zero, 0).unwrap() - 5.0 * 3f64.ln()).abs() < 1e-12);
        assert!((p.value(&zero) - 10.0 * 3f64.ln()).abs() < 1e-12);

        let p3 = ChainCrfProblem::new(random_dataset(&mut rng, 1, 3, 2, 3, 2));
        let z3 = vec![0.0; p3.dim()];
        assert!((p3.brute_force_log_partition(&z3, 0).unwrap() - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_label_chain_has_zero_nll_and_gradient() {
        let mut rng = Rng::new(2);
        let p = ChainCrfProblem::new(random_dataset(&mut rng, 3, 6, 2, 4, 1));
        let beta = random_beta(&mut rng, p.dim(), 1.0);
        assert!(p.value(&beta).abs() < 1e-12);
        assert!(p.gradient(&beta).iter().all(|g| g.abs() < 1e-12));
        let m = p.marginals(&beta, 0).unwrap();
        assert!(m
            .unary
            .iter()
            .chain(&m.pairwise)
            .all(|v| (v - 1.0).abs() < 1e-12));
        let seq = &p.data().sequences()[0];
        let u = p.unary_scores(&beta, seq);
        let gold = path_score(&u, p.transition_scores(&beta), seq.labels(), 1);
        assert!((p.log_partition(&beta, 0).unwrap() - gold).abs() < 1e-12);
    }

    #[test]
    fn single_position_partition_is_unary_lse() {
        let mut rng = Rng::new(3);
        let p = ChainCrfProblem::new(random_dataset(&mut rng, 1, 1, 3, 2, 4));
        let beta = random_beta(&mut rng, p.dim(), 1.0);
        let u = p.unary_scores(&beta, &p.data().sequences()[0]);
        assert!((p.brute_force_log_partition(&beta, 0).unwrap() - log_sum_exp(&u)).abs() < 1e-12);
        assert!((p.log_partition(&beta, 0).unwrap() - log_sum_exp(&u)).abs() < 1e-12);
    }

    #[test]
    fn forward_matches_enumeration() {
        let mut rng = Rng::new(4);
        let p = ChainCrfProblem::new(random_dataset(&mut rng, 2, 6, 2, 3, 4));
        for _ in 0..5 {
            let beta = random_beta(&mut rng, p.dim(), 1.5);
            for i in 0..2 {
                let a = p.log_partition(&beta, i).unwrap();
                let b = p.brute_force_log_partition(&beta, i).unwrap();
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn nll_matches_enumeration() {
        let mut rng = Rng::new(5);
        let p = ChainCrfProblem::new(random_dataset(&mut rng, 3, 5, 2, 3, 3));
        let beta = random_beta(&mut rng, p.dim(), 1.0);
        let mut brute = 0.0;
        for (i, seq) in p.data().sequences().iter().enumerate() {
            brute += p.brute_force_log_partition(&beta, i).unwrap() - p.gold_score(&beta, seq);
        }
        assert!((p.value(&beta) - brute).abs() < 1e-9);
    }

    #[test]
    fn marginals_are_normalized_and_consistent() {
        let mut rng = Rng::new(6);
        let p = ChainCrfProblem::new(random_dataset(&mut rng, 1, 7, 3, 3, 4));
        let zero = vec![0.0; p.dim()];
        let m0 = p.marginals(&zero, 0).unwrap();
        assert!(m0.unary.iter().all(|v| (v - 0.25).abs() < 1e-12));

        let beta = random_beta(&mut rng, p.dim(), 2.0);
        let m = p.marginals(&beta, 0).unwrap();
        for t in 0..7 {
            let row: f64 = (0..4).map(|l| m.unary_at(t, l)).sum();
            assert!((row - 1.0).abs() < 1e-10);
        }
        for t in 0..6 {
            let slice: f64 = (0..16).map(|k| m.pairwise[t * 16 + k]).sum();
            assert!((slice - 1.0).abs() < 1e-10);
            for a in 0..4 {
                let left: f64 = (0..4).map(|b| m.pairwise_at(t, a, b)).sum();
                assert!((left - m.unary_at(t, a)).abs() < 1e-9);
                let right: f64 = (0..4).map(|b| m.pairwise_at(t, b, a)).sum();
                assert!((right - m.unary_at(t + 1, a)).abs() < 1e-9);
            }
        }
        let brute = p.brute_force_unary_marginals(&beta, 0).unwrap();
        for (a, b) in m.unary.iter().zip(&brute) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_at_zero_uses_uniform_pairwise() {
        let mut rng = Rng::new(7);
        let (seqs, t, l) = (3, 5, 3);
        let p = ChainCrfProblem::new(random_dataset(&mut rng, seqs, t, 2, 3, l));
        let g = p.gradient(&vec![0.0; p.dim()]);
        let f = p.features();
        for a in 0..l {
            for b in 0..l {
                let m = f.transition_index(a, b);
                let expect = -p.observed_counts()[m] + ((t - 1) * seqs) as f64 / (l * l) as f64;
                assert!((g[m] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(8);
        let p = ChainCrfProblem::new(random_dataset(&mut rng, 2, 6, 2, 3, 3));
        let beta = random_beta(&mut rng, p.dim(), 0.7);
        let g = p.gradient(&beta);
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..p.dim() {
            let h = 1e-6 * (1.0 + beta[i].abs());
            let mut up = beta.clone();
            let mut dn = beta.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (p.value(&up) - p.value(&dn)) / (2.0 * h);
            err += (fd - g[i]).powi(2);
            scale += g[i] * g[i];
        }
        assert!(err.sqrt() / scale.sqrt().max(1.0) < 1e-5);
    }

    #[test]
    fn stable_for_large_weights() {
        let mut rng = Rng::new(9);
        let p = ChainCrfProblem::new(random_dataset(&mut rng, 1, 40, 4, 5, 4));
        let beta: Vec<f64> = (0..p.dim()).map(|_| 50.0 * rng.sign()).collect();
        assert!(p.value(&beta).is_finite());
        assert!(p.gradient(&beta).iter().all(|g| g.is_finite()));
    }

    #[test]
    fn brute_force_guard() {
        let mut rng = Rng::new(10);
        let p = ChainCrfProblem::new(random_dataset(&mut rng, 1, 11, 1, 2, 4));
        let zero = vec![0.0; p.dim()];
        assert!(matches!(
            p.brute_force_log_partition(&zero, 0),
            Err(Error::GuardViolation { .. })
        ));
        assert!(p.log_partition(&zero, 3).is_err());
    }

    #[test]
    fn feature_space_layout() {
        let f = CrfFeatureSpace::new(4, 4, 5);
        assert_eq!(f.observation_count(), 80);
        assert_eq!(f.transition_count(), 16);
        let mut seen = vec![false; f.len()];
        for l in 0..4 {
            for c in 0..4 {
                for s in 0..5 {
                    let m = f.observation_index(l, c, s);
                    assert!(f.is_sparsifiable(m) && !seen[m]);
                    assert_eq!(f.decode_observation(m), Some((l, c, s)));
                    assert_eq!(f.channel_of(m), Some(c));
                    seen[m] = true;
                }
            }
        }
        for a in 0..4 {
            for b in 0..4 {
                let m = f.transition_index(a, b);
                assert!(!f.is_sparsifiable(m) && !seen[m]);
                seen[m] = true;
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn chain_text_round_trip() {
        let mut rng = Rng::new(11);
        let ds = random_dataset(&mut rng, 3, 4, 2, 5, 3);
        let text = ds.to_text();
        assert_eq!(ChainDataset::parse_text(&text).unwrap(), ds);
        assert!(matches!(
            ChainDataset::parse_text("2 1 3 2\n0\n1\n0 5\n"),
            Err(Error::MalformedLine { line_no: 4, .. })
        ));
        assert!(ChainDataset::parse_text("2 1 3 2\n0\n").is_err());
    }

    #[test]
    fn decode_recovers_dominant_labels() {
        let mut ds = ChainDataset::new(1, 2, 2).unwrap();
        ds.push(vec![0, 1, 1, 0], vec![0, 1, 1, 0]).unwrap();
        let p = ChainCrfProblem::new(ds.clone());
        let f = p.features();
        let mut beta = vec![0.0; p.dim()];
        beta[f.observation_index(0, 0, 0)] = 3.0;
        beta[f.observation_index(1, 0, 1)] = 3.0;
        assert_eq!(p.decode(&beta, &ds.sequences()[0]), vec![0, 1, 1, 0]);
        assert_eq!(p.label_error(&beta, &ds), 0.0);
    }
}
