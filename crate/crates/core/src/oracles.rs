//! Local objectives and stochastic gradient oracles.
//!
//! Two families are supported:
//!
//! - non-convex logistic regression over a LIBSVM dataset split across
//!   agents, with the bounded regularizer `alpha * sum_k x_k^2 / (1 + x_k^2)`;
//! - heterogeneous quadratics `0.5 x^T A_i x + b_i^T x` whose stochastic
//!   gradients carry isotropic Gaussian noise with `E|noise|^2 = sigma^2`.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayViewMut1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("libsvm line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("agent {agent} out of range (n = {n})")]
    AgentOutOfRange { agent: usize, n: usize },
    #[error("agent {0} has an empty data partition")]
    EmptyPartition(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sparse feature vector with ascending 0-based indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseFeatures {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseFeatures {
    pub fn dot(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| v * x[i])
            .sum()
    }

    /// `out += scale * self`.
    pub fn add_scaled_to(&self, scale: f64, out: &mut ArrayViewMut1<'_, f64>) {
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] += scale * v;
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: SparseFeatures,
    /// +1 or -1.
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn parse_label(tok: &str) -> Option<f64> {
    let v: f64 = tok.parse().ok()?;
    if v == 1.0 {
        Some(1.0)
    } else if v == -1.0 || v == 0.0 {
        Some(-1.0)
    } else {
        None
    }
}

/// Reads `<label> <idx>:<val> ...` lines with 1-based indices.
///
/// Labels `{0, 1}` and `{-1, +1}` are both accepted and mapped to `{-1, +1}`.
/// Blank lines and lines starting with `#` are skipped; trailing `# ...`
/// comments are ignored.
pub fn parse_libsvm<R: BufRead>(reader: R, dim: usize) -> Result<Dataset, OracleError> {
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |msg: String| OracleError::Parse { line: line_no, msg };
        let mut toks = content.split_whitespace();
        let label_tok = toks.next().expect("non-empty line has a token");
        let label = parse_label(label_tok).ok_or_else(|| err(format!("bad label `{label_tok}`")))?;
        let mut pairs: Vec<(usize, f64)> = Vec::new();
        for tok in toks {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected idx:val, got `{tok}`")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(format!("bad feature index `{idx}`")))?;
            let val: f64 = val
                .parse()
                .map_err(|_| err(format!("bad feature value `{val}`")))?;
            if idx == 0 || idx > dim {
                return Err(err(format!("feature index {idx} outside [1, {dim}]")));
            }
            if !val.is_finite() {
                return Err(err(format!("non-finite feature value `{val}`")));
            }
            pairs.push((idx - 1, val));
        }
        pairs.sort_by_key(|p| p.0);
        if let Some(w) = pairs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(err(format!("duplicate feature index {}", w[0].0 + 1)));
        }
        let (indices, values) = pairs.into_iter().unzip();
        samples.push(Sample {
            features: SparseFeatures { indices, values },
            label,
        });
    }
    Ok(Dataset { dim, samples })
}

pub fn write_libsvm<W: Write>(data: &Dataset, mut out: W) -> std::io::Result<()> {
    for s in &data.samples {
        write!(out, "{}", if s.label > 0.0 { "+1" } else { "-1" })?;
        for (&i, &v) in s.features.indices.iter().zip(&s.features.values) {
            write!(out, " {}:{}", i + 1, v)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Separable-plus-noise binary classification data.
///
/// Each sample has `min(d, 14)` active features of equal value (unit-norm
/// rows, matching the sparsity of a9a); labels are the sign of the margin
/// under a hidden Gaussian weight vector, flipped with probability 0.1.
pub fn synthetic_dataset(m: usize, d: usize, seed: u64) -> Result<Dataset, OracleError> {
    if d == 0 {
        return Err(OracleError::InvalidParameter("dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let k = d.min(14);
    let value = 1.0 / (k as f64).sqrt();
    let samples = (0..m)
        .map(|_| {
            let mut indices = rand::seq::index::sample(&mut rng, d, k).into_vec();
            indices.sort_unstable();
            let margin: f64 = indices.iter().map(|&i| truth[i] * value).sum();
            let mut label = if margin >= 0.0 { 1.0 } else { -1.0 };
            if rng.random::<f64>() < 0.1 {
                label = -label;
            }
            Sample {
                features: SparseFeatures {
                    indices,
                    values: vec![value; k],
                },
                label,
            }
        })
        .collect();
    Ok(Dataset { dim: d, samples })
}

/// Disjoint per-agent sample index lists covering `0..m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    parts: Vec<Vec<usize>>,
}

impl Partition {
    pub fn n(&self) -> usize {
        self.parts.len()
    }

    pub fn part(&self, agent: usize) -> &[usize] {
        &self.parts[agent]
    }

    pub fn parts(&self) -> &[Vec<usize>] {
        &self.parts
    }
}

/// Seeded shuffle of `0..m` cut into `n` contiguous blocks; the first
/// `m mod n` blocks get one extra sample.
pub fn partition_even(m: usize, n: usize, seed: u64) -> Result<Partition, OracleError> {
    if n == 0 || m < n {
        return Err(OracleError::InvalidParameter(format!(
            "cannot split {m} samples across {n} agents"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = m / n;
    let extra = m % n;
    let mut parts = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let len = base + usize::from(i < extra);
        parts.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(Partition { parts })
}

#[derive(Debug, Clone)]
pub struct LogisticProblem {
    pub data: std::sync::Arc<Dataset>,
    pub partition: Partition,
    pub alpha: f64,
    // agent shards copied contiguously in partition order
    shards: Vec<Shard>,
}

/// One agent's samples in CSR layout.
#[derive(Debug, Clone, Default)]
struct Shard {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    labels: Vec<f64>,
}

impl Shard {
    fn new(data: &Dataset, part: &[usize]) -> Self {
        let mut s = Shard {
            offsets: vec![0],
            ..Default::default()
        };
        for &i in part {
            let f = &data.samples[i].features;
            s.indices.extend_from_slice(&f.indices);
            s.values.extend_from_slice(&f.values);
            s.offsets.push(s.indices.len());
            s.labels.push(data.samples[i].label);
        }
        s
    }

    fn len(&self) -> usize {
        self.labels.len()
    }

    /// `(y_r, a_r . x)` for row `r`.
    fn margin(&self, r: usize, x: ArrayView1<'_, f64>) -> f64 {
        let (lo, hi) = (self.offsets[r], self.offsets[r + 1]);
        let dot: f64 = self.indices[lo..hi]
            .iter()
            .zip(&self.values[lo..hi])
            .map(|(&j, &v)| v * x[j])
            .sum();
        self.labels[r] * dot
    }

    fn add_row(&self, r: usize, scale: f64, out: &mut ArrayViewMut1<'_, f64>) {
        let (lo, hi) = (self.offsets[r], self.offsets[r + 1]);
        for (&j, &v) in self.indices[lo..hi].iter().zip(&self.values[lo..hi]) {
            out[j] += scale * v;
        }
    }

    /// Adds `weight * grad ln(1 + exp(-y a.x))` for row `r`; returns the loss term.
    fn add_grad(&self, r: usize, x: ArrayView1<'_, f64>, weight: f64, out: &mut ArrayViewMut1<'_, f64>) -> f64 {
        let u = self.margin(r, x);
        self.add_row(r, -weight * self.labels[r] * logistic_weight(u), out);
        softplus(-u)
    }
}

/// Per-agent `0.5 x^T A_i x + b_i^T x` with additive gradient noise.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    pub a: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
    pub sigma: f64,
}

impl QuadraticProblem {
    /// Random heterogeneous instance: `A_i` diagonal with entries uniform in
    /// `[curvature.0, curvature.1]`, `b_i ~ N(0, spread^2 I)`.
    pub fn heterogeneous(
        n: usize,
        d: usize,
        sigma: f64,
        curvature: (f64, f64),
        spread: f64,
        seed: u64,
    ) -> Result<Self, OracleError> {
        if n == 0 || d == 0 {
            return Err(OracleError::InvalidParameter("n and d must be positive".into()));
        }
        if !(0.0 <= curvature.0 && curvature.0 <= curvature.1) {
            return Err(OracleError::InvalidParameter(format!(
                "curvature range {curvature:?} is not a nonnegative interval"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for _ in 0..n {
            let diag = Array1::from_shape_fn(d, |_| rng.random_range(curvature.0..=curvature.1));
            a.push(Array2::from_diag(&diag));
            b.push(Array1::from_shape_fn(d, |_| spread * rng.sample::<f64, _>(StandardNormal)));
        }
        Ok(Self { a, b, sigma })
    }
}

#[derive(Debug, Clone)]
pub enum OracleKind {
    LogisticNonconvex(LogisticProblem),
    QuadraticHeterogeneous(QuadraticProblem),
}

/// A family of local objectives `f_i`, one per agent.
#[derive(Debug, Clone)]
pub struct OracleSpec {
    pub kind: OracleKind,
    /// Known gradient Lipschitz constant, if any.
    pub smoothness: Option<f64>,
}

fn softplus(t: f64) -> f64 {
    // ln(1 + e^t)
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `1 / (1 + e^u)`.
fn logistic_weight(u: f64) -> f64 {
    if u >= 0.0 {
        let e = (-u).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + u.exp())
    }
}

impl OracleSpec {
    pub fn logistic(data: Dataset, n: usize, alpha: f64, partition_seed: u64) -> Result<Self, OracleError> {
        if !(alpha >= 0.0) {
            return Err(OracleError::InvalidParameter(format!("alpha = {alpha} must be >= 0")));
        }
        let partition = partition_even(data.len(), n, partition_seed)?;
        let shards = partition.parts().iter().map(|p| Shard::new(&data, p)).collect();
        Ok(Self {
            kind: OracleKind::LogisticNonconvex(LogisticProblem {
                data: std::sync::Arc::new(data),
                partition,
                alpha,
                shards,
            }),
            smoothness: None,
        })
    }

    pub fn quadratic(problem: QuadraticProblem) -> Result<Self, OracleError> {
        if !(problem.sigma >= 0.0) {
            return Err(OracleError::InvalidParameter(format!(
                "sigma = {} must be >= 0",
                problem.sigma
            )));
        }
        if problem.a.is_empty() || problem.a.len() != problem.b.len() {
            return Err(OracleError::InvalidParameter(
                "need one (A_i, b_i) pair per agent".into(),
            ));
        }
        let d = problem.b[0].len();
        for (a, b) in problem.a.iter().zip(&problem.b) {
            if a.dim() != (d, d) || b.len() != d {
                return Err(OracleError::Shape {
                    expected: d,
                    got: b.len(),
                });
            }
            let asym = a
                .indexed_iter()
                .map(|((i, j), v)| (v - a[[j, i]]).abs())
                .fold(0.0, f64::max);
            if asym > 1e-12 {
                return Err(OracleError::InvalidParameter("A_i must be symmetric".into()));
            }
        }
        Ok(Self {
            kind: OracleKind::QuadraticHeterogeneous(problem),
            smoothness: None,
        })
    }

    pub fn with_smoothness(mut self, l: f64) -> Self {
        self.smoothness = Some(l);
        self
    }

    pub fn n_agents(&self) -> usize {
        match &self.kind {
            OracleKind::LogisticNonconvex(p) => p.partition.n(),
            OracleKind::QuadraticHeterogeneous(p) => p.a.len(),
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            OracleKind::LogisticNonconvex(p) => p.data.dim,
            OracleKind::QuadraticHeterogeneous(p) => p.b[0].len(),
        }
    }

    /// Gradient Lipschitz bound: the supplied value, else a heuristic
    /// (`max |a|^2 / 4 + 2 alpha` for logistic, largest Gershgorin radius of
    /// the `A_i` for quadratics).
    pub fn smoothness_estimate(&self) -> f64 {
        if let Some(l) = self.smoothness {
            return l;
        }
        match &self.kind {
            OracleKind::LogisticNonconvex(p) => {
                let max_row = p
                    .data
                    .samples
                    .iter()
                    .map(|s| s.features.norm_sq())
                    .fold(0.0, f64::max);
                max_row / 4.0 + 2.0 * p.alpha
            }
            OracleKind::QuadraticHeterogeneous(p) => p
                .a
                .iter()
                .flat_map(|a| a.rows().into_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).collect::<Vec<_>>())
                .fold(0.0, f64::max),
        }
    }

    fn check(&self, x: ArrayView1<'_, f64>, agent: usize) -> Result<(), OracleError> {
        let d = self.dim();
        if x.len() != d {
            return Err(OracleError::Shape {
                expected: d,
                got: x.len(),
            });
        }
        let n = self.n_agents();
        if agent >= n {
            return Err(OracleError::AgentOutOfRange { agent, n });
        }
        Ok(())
    }

    pub fn local_loss(&self, x: ArrayView1<'_, f64>, agent: usize) -> Result<f64, OracleError> {
        self.check(x, agent)?;
        Ok(match &self.kind {
            OracleKind::LogisticNonconvex(p) => {
                let shard = &p.shards[agent];
                let data_term = (0..shard.len()).map(|r| softplus(-shard.margin(r, x))).sum::<f64>()
                    / shard.len() as f64;
                data_term + regularizer(x, p.alpha)
            }
            OracleKind::QuadraticHeterogeneous(p) => {
                0.5 * x.dot(&p.a[agent].dot(&x)) + p.b[agent].dot(&x)
            }
        })
    }

    /// Exact gradient of `f_agent`.
    pub fn local_grad(&self, x: ArrayView1<'_, f64>, agent: usize) -> Result<Array1<f64>, OracleError> {
        let mut out = Array1::zeros(self.dim());
        self.local_grad_into(x, agent, out.view_mut())?;
        Ok(out)
    }

    /// Writes the exact gradient of `f_agent` into `out`.
    pub fn local_grad_into(
        &self,
        x: ArrayView1<'_, f64>,
        agent: usize,
        mut out: ArrayViewMut1<'_, f64>,
    ) -> Result<(), OracleError> {
        self.check(x, agent)?;
        match &self.kind {
            OracleKind::LogisticNonconvex(p) => {
                let shard = &p.shards[agent];
                if shard.len() == 0 {
                    return Err(OracleError::EmptyPartition(agent));
                }
                out.fill(0.0);
                let inv = 1.0 / shard.len() as f64;
                for r in 0..shard.len() {
                    shard.add_grad(r, x, inv, &mut out);
                }
                add_regularizer_grad(x, p.alpha, &mut out);
            }
            OracleKind::QuadraticHeterogeneous(p) => {
                out.assign(&p.a[agent].dot(&x));
                out += &p.b[agent];
            }
        }
        Ok(())
    }

    /// Unbiased stochastic gradient of `f_agent`.
    ///
    /// Logistic: mean over `batch` indices drawn with replacement from the
    /// agent's partition, plus the exact regularizer gradient; a batch equal
    /// to the partition size sweeps the partition instead of sampling.
    /// Quadratic: exact gradient plus `N(0, sigma^2 / d)` per coordinate.
    pub fn stochastic_grad<R: Rng + ?Sized>(
        &self,
        x: ArrayView1<'_, f64>,
        agent: usize,
        batch: usize,
        rng: &mut R,
    ) -> Result<Array1<f64>, OracleError> {
        let mut out = Array1::zeros(self.dim());
        self.stochastic_grad_into(x, agent, batch, rng, out.view_mut())?;
        Ok(out)
    }

    pub fn stochastic_grad_into<R: Rng + ?Sized>(
        &self,
        x: ArrayView1<'_, f64>,
        agent: usize,
        batch: usize,
        rng: &mut R,
        mut out: ArrayViewMut1<'_, f64>,
    ) -> Result<(), OracleError> {
        self.check(x, agent)?;
        if batch == 0 {
            return Err(OracleError::InvalidParameter("batch must be >= 1".into()));
        }
        match &self.kind {
            OracleKind::LogisticNonconvex(p) => {
                let shard = &p.shards[agent];
                if shard.len() == 0 {
                    return Err(OracleError::EmptyPartition(agent));
                }
                if batch == shard.len() {
                    return self.local_grad_into(x, agent, out);
                }
                out.fill(0.0);
                let inv = 1.0 / batch as f64;
                for _ in 0..batch {
                    shard.add_grad(rng.random_range(0..shard.len()), x, inv, &mut out);
                }
                add_regularizer_grad(x, p.alpha, &mut out);
            }
            OracleKind::QuadraticHeterogeneous(p) => {
                self.local_grad_into(x, agent, out.view_mut())?;
                if p.sigma > 0.0 {
                    let scale = p.sigma / (x.len() as f64).sqrt();
                    for v in out.iter_mut() {
                        *v += scale * rng.sample::<f64, _>(StandardNormal);
                    }
                }
            }
        }
        Ok(())
    }

    /// `F(x) = (1/n) sum_i f_i(x)`.
    pub fn global_loss(&self, x: ArrayView1<'_, f64>) -> Result<f64, OracleError> {
        let n = self.n_agents();
        let mut total = 0.0;
        for i in 0..n {
            total += self.local_loss(x, i)?;
        }
        Ok(total / n as f64)
    }

    /// `(F(x), grad F(x))` in one pass over the data.
    pub fn global_loss_and_grad(&self, x: ArrayView1<'_, f64>) -> Result<(f64, Array1<f64>), OracleError> {
        let OracleKind::LogisticNonconvex(p) = &self.kind else {
            return Ok((self.global_loss(x)?, self.global_grad(x)?));
        };
        let n = self.n_agents();
        self.check(x, 0)?;
        let mut grad = Array1::zeros(self.dim());
        let mut loss = 0.0;
        for agent in 0..n {
            let shard = &p.shards[agent];
            if shard.len() == 0 {
                return Err(OracleError::EmptyPartition(agent));
            }
            let inv = 1.0 / (shard.len() * n) as f64;
            let mut local = 0.0;
            let mut view = grad.view_mut();
            for r in 0..shard.len() {
                local += shard.add_grad(r, x, inv, &mut view);
            }
            loss += local / shard.len() as f64;
        }
        add_regularizer_grad(x, p.alpha, &mut grad.view_mut());
        Ok((loss / n as f64 + regularizer(x, p.alpha), grad))
    }

    /// `grad F(x) = (1/n) sum_i grad f_i(x)`.
    pub fn global_grad(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>, OracleError> {
        let n = self.n_agents();
        let mut total = Array1::zeros(self.dim());
        let mut buf = Array1::zeros(self.dim());
        for i in 0..n {
            self.local_grad_into(x, i, buf.view_mut())?;
            total += &buf;
        }
        total /= n as f64;
        Ok(total)
    }
}

fn regularizer(x: ArrayView1<'_, f64>, alpha: f64) -> f64 {
    x.iter().map(|&v| alpha * v * v / (1.0 + v * v)).sum()
}

fn add_regularizer_grad(x: ArrayView1<'_, f64>, alpha: f64, out: &mut ArrayViewMut1<'_, f64>) {
    if alpha == 0.0 {
        return;
    }
    for (o, &v) in out.iter_mut().zip(x.iter()) {
        let q = 1.0 + v * v;
        *o += 2.0 * alpha * v / (q * q);
    }
}

// grad of ln(1 + exp(-y a.x)) is -y a / (1 + exp(y a.x))
#[cfg(test)]
fn add_sample_grad(sample: &Sample, x: ArrayView1<'_, f64>, weight: f64, out: &mut ArrayViewMut1<'_, f64>) {
    let y = sample.label;
    let s = logistic_weight(y * sample.features.dot(x));
    sample.features.add_scaled_to(-weight * y * s, out);
}

/// Central differences `(f(x + h e_k) - f(x - h e_k)) / 2h`.
pub fn finite_diff_grad<F>(f: F, x: ArrayView1<'_, f64>, h: f64) -> Array1<f64>
where
    F: Fn(ArrayView1<'_, f64>) -> f64,
{
    let mut probe = x.to_owned();
    Array1::from_shape_fn(x.len(), |k| {
        let orig = probe[k];
        probe[k] = orig + h;
        let up = f(probe.view());
        probe[k] = orig - h;
        let down = f(probe.view());
        probe[k] = orig;
        (up - down) / (2.0 * h)
    })
}
