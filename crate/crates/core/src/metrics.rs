//! Per-iteration error metrics and multi-seed aggregation.
//!
//! Error metrics use Frobenius norms. The weighted norms that appear in
//! contraction arguments are equivalent up to constant factors, so zero sets
//! and decay rates agree; absolute values differ by those constants.
//! Metrics always use exact gradients, regardless of the oracle noise.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use thiserror::Error;

use crate::algorithms::AlgoState;
use crate::oracles::{OracleError, OracleSpec};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("records must have strictly increasing k (got {got} after {last})")]
    NonMonotonic { last: usize, got: usize },
    #[error("cannot aggregate: {0}")]
    Aggregation(String),
    #[error("trace csv line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Column order of the per-seed CSV schema.
pub const CSV_HEADER: &str =
    "k,eta,lambda,f_bar,grad_norm_sq,e_x,e_v,e_m,e_momentum_energy,cons_residual";

/// Names of the aggregated fields, in CSV order.
pub const METRIC_FIELDS: [&str; 7] = [
    "f_bar",
    "grad_norm_sq",
    "e_x",
    "e_v",
    "e_m",
    "e_momentum_energy",
    "cons_residual",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub eta: f64,
    pub lambda: f64,
    /// `F(x_bar)`.
    pub f_bar: f64,
    /// `|grad F(x_bar)|^2`.
    pub grad_norm_sq: f64,
    /// Consensus error `|X - 1 x_bar^T|_F^2`.
    pub e_x: f64,
    /// Tracking error `|V - pi_c 1^T V|_F^2`.
    pub e_v: f64,
    /// Momentum error `|M - grad F(X)|_F^2`.
    pub e_m: f64,
    /// `|m_bar_{k-1}|^2`, zero at `k = 0`.
    pub e_momentum_energy: f64,
    /// `|v_bar - m_bar|_inf`.
    pub cons_residual: f64,
}

impl IterationRecord {
    pub fn values(&self) -> [f64; 7] {
        [
            self.f_bar,
            self.grad_norm_sq,
            self.e_x,
            self.e_v,
            self.e_m,
            self.e_momentum_energy,
            self.cons_residual,
        ]
    }

    fn csv_line(&self) -> String {
        let mut line = format!("{},{:.16e},{:.16e}", self.k, self.eta, self.lambda);
        for v in self.values() {
            let _ = write!(line, ",{v:.16e}");
        }
        line
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTrace {
    pub algo: String,
    pub config_digest: String,
    pub seed: u64,
    pub records: Vec<IterationRecord>,
}

impl MetricsTrace {
    pub fn new(algo: &str, config_digest: &str, seed: u64) -> Self {
        Self {
            algo: algo.to_string(),
            config_digest: config_digest.to_string(),
            seed,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, rec: IterationRecord) -> Result<(), MetricsError> {
        if let Some(last) = self.records.last() {
            if rec.k <= last.k {
                return Err(MetricsError::NonMonotonic {
                    last: last.k,
                    got: rec.k,
                });
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn record_at(&self, k: usize) -> Option<&IterationRecord> {
        self.records
            .binary_search_by_key(&k, |r| r.k)
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(200 * (self.records.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.csv_line());
            out.push('\n');
        }
        out
    }

    /// Parses the per-seed CSV schema back into records.
    pub fn from_csv(text: &str, algo: &str, config_digest: &str, seed: u64) -> Result<Self, MetricsError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            _ => {
                return Err(MetricsError::Parse {
                    line: 1,
                    msg: "missing or unexpected header".into(),
                })
            }
        }
        let mut trace = Self::new(algo, config_digest, seed);
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| MetricsError::Parse { line: i + 1, msg };
            let toks: Vec<&str> = line.split(',').collect();
            if toks.len() != 10 {
                return Err(err(format!("expected 10 columns, found {}", toks.len())));
            }
            let k: usize = toks[0].parse().map_err(|_| err(format!("bad k `{}`", toks[0])))?;
            let mut vals = [0.0; 9];
            for (slot, tok) in vals.iter_mut().zip(&toks[1..]) {
                *slot = tok.parse().map_err(|_| err(format!("bad number `{tok}`")))?;
            }
            trace.push(IterationRecord {
                k,
                eta: vals[0],
                lambda: vals[1],
                f_bar: vals[2],
                grad_norm_sq: vals[3],
                e_x: vals[4],
                e_v: vals[5],
                e_m: vals[6],
                e_momentum_energy: vals[7],
                cons_residual: vals[8],
            })?;
        }
        Ok(trace)
    }

    /// Mean of `grad_norm_sq` over records with `k >= horizon * (1 - fraction)`.
    pub fn tail_mean_grad_norm_sq(&self, fraction: f64) -> Option<f64> {
        let last_k = self.records.last()?.k;
        let start = ((last_k as f64) * (1.0 - fraction)).ceil() as usize;
        let tail: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.k >= start)
            .map(|r| r.grad_norm_sq)
            .collect();
        if tail.is_empty() {
            None
        } else {
            Some(tail.iter().sum::<f64>() / tail.len() as f64)
        }
    }
}

fn check_rows(what: &str, a: ArrayView2<'_, f64>, weights_len: usize) -> Result<(), MetricsError> {
    if a.nrows() != weights_len {
        return Err(MetricsError::Shape(format!(
            "{what} has {} rows, weight vector has length {weights_len}",
            a.nrows()
        )));
    }
    Ok(())
}

/// `w^T X`.
pub fn weighted_average(x: ArrayView2<'_, f64>, weights: ArrayView1<'_, f64>) -> Result<Array1<f64>, MetricsError> {
    check_rows("X", x, weights.len())?;
    Ok(x.t().dot(&weights))
}

/// `|X - 1 (pi_r^T X)|_F^2`.
pub fn consensus_error(x: ArrayView2<'_, f64>, pi_r: ArrayView1<'_, f64>) -> Result<f64, MetricsError> {
    let avg = weighted_average(x, pi_r)?;
    Ok(x.outer_iter()
        .map(|row| row.iter().zip(avg.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum())
}

/// `|V - pi_c (1^T V)|_F^2`.
pub fn tracking_error(v: ArrayView2<'_, f64>, pi_c: ArrayView1<'_, f64>) -> Result<f64, MetricsError> {
    check_rows("V", v, pi_c.len())?;
    let total = v.sum_axis(Axis(0));
    Ok(v.outer_iter()
        .zip(pi_c.iter())
        .map(|(row, &p)| {
            row.iter()
                .zip(total.iter())
                .map(|(a, t)| (a - p * t) * (a - p * t))
                .sum::<f64>()
        })
        .sum())
}

/// `|M - grad F(X)|_F^2` with row `i` of `grad F(X)` the exact gradient of
/// `f_i` at `x_i`.
pub fn momentum_error(
    m: ArrayView2<'_, f64>,
    x: ArrayView2<'_, f64>,
    oracle: &OracleSpec,
) -> Result<f64, MetricsError> {
    if m.dim() != x.dim() || x.nrows() != oracle.n_agents() {
        return Err(MetricsError::Shape(format!(
            "M is {:?}, X is {:?}, oracle has {} agents",
            m.dim(),
            x.dim(),
            oracle.n_agents()
        )));
    }
    let mut buf = Array1::zeros(x.ncols());
    let mut total = 0.0;
    for (i, (mrow, xrow)) in m.outer_iter().zip(x.outer_iter()).enumerate() {
        oracle.local_grad_into(xrow, i, buf.view_mut())?;
        total += mrow.iter().zip(buf.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total)
}

/// `|(1/n) sum_i grad f_i(x_bar)|^2` with `x_bar = w^T X`.
pub fn grad_norm_at_consensus(
    x: ArrayView2<'_, f64>,
    weights: ArrayView1<'_, f64>,
    oracle: &OracleSpec,
) -> Result<f64, MetricsError> {
    let xbar = weighted_average(x, weights)?;
    let g = oracle.global_grad(xbar.view())?;
    Ok(g.dot(&g))
}

/// `|v_bar - m_bar|_inf` with uniform averages.
pub fn conservation_residual(v: ArrayView2<'_, f64>, m: ArrayView2<'_, f64>) -> f64 {
    let n = v.nrows() as f64;
    v.sum_axis(Axis(0))
        .iter()
        .zip(m.sum_axis(Axis(0)).iter())
        .map(|(a, b)| ((a - b) / n).abs())
        .fold(0.0, f64::max)
}

fn uniform_mean(a: &Array2<f64>) -> Array1<f64> {
    a.mean_axis(Axis(0)).expect("non-empty state")
}

/// Builds [`IterationRecord`]s from algorithm states.
#[derive(Debug, Clone)]
pub struct Recorder {
    consensus_weights: Array1<f64>,
    tracker_weights: Array1<f64>,
    prev_mbar: Array1<f64>,
}

impl Recorder {
    pub fn new(consensus_weights: Array1<f64>, tracker_weights: Array1<f64>, dim: usize) -> Self {
        Self {
            consensus_weights,
            tracker_weights,
            prev_mbar: Array1::zeros(dim),
        }
    }

    /// Remembers `m_bar` of the state about to be replaced.
    pub fn advance(&mut self, state: &AlgoState) {
        self.prev_mbar = uniform_mean(&state.m);
    }

    pub fn record(
        &self,
        state: &AlgoState,
        eta: f64,
        lambda: f64,
        oracle: &OracleSpec,
    ) -> Result<IterationRecord, MetricsError> {
        let e_momentum_energy = self.prev_mbar.dot(&self.prev_mbar);
        if state.centralized {
            let x = state.x.row(0);
            let (f_bar, g) = oracle.global_loss_and_grad(x)?;
            let diff = &state.m.row(0) - &g;
            return Ok(IterationRecord {
                k: state.k,
                eta,
                lambda,
                f_bar,
                grad_norm_sq: g.dot(&g),
                e_x: 0.0,
                e_v: 0.0,
                e_m: diff.dot(&diff),
                e_momentum_energy,
                cons_residual: 0.0,
            });
        }
        let xbar = weighted_average(state.x.view(), self.consensus_weights.view())?;
        let (f_bar, g) = oracle.global_loss_and_grad(xbar.view())?;
        Ok(IterationRecord {
            k: state.k,
            eta,
            lambda,
            f_bar,
            grad_norm_sq: g.dot(&g),
            e_x: consensus_error(state.x.view(), self.consensus_weights.view())?,
            e_v: tracking_error(state.v.view(), self.tracker_weights.view())?,
            e_m: momentum_error(state.m.view(), state.x.view(), oracle)?,
            e_momentum_energy,
            cons_residual: conservation_residual(state.v.view(), state.m.view()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRecord {
    pub k: usize,
    pub eta: f64,
    pub lambda: f64,
    pub mean: [f64; 7],
    pub std: [f64; 7],
}

/// Pointwise mean and sample standard deviation across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateTrace {
    pub algo: String,
    pub count: usize,
    pub records: Vec<AggregateRecord>,
}

impl AggregateTrace {
    pub fn csv_header() -> String {
        let mut h = String::from("k,eta,lambda");
        for f in METRIC_FIELDS {
            let _ = write!(h, ",{f}_mean,{f}_std");
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::csv_header();
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},{:.16e},{:.16e}", r.k, r.eta, r.lambda);
            for (m, s) in r.mean.iter().zip(&r.std) {
                let _ = write!(out, ",{m:.16e},{s:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn record_at(&self, k: usize) -> Option<&AggregateRecord> {
        self.records.iter().find(|r| r.k == k)
    }
}

pub fn aggregate(traces: &[MetricsTrace]) -> Result<AggregateTrace, MetricsError> {
    let first = traces
        .first()
        .ok_or_else(|| MetricsError::Aggregation("no traces".into()))?;
    let ks: Vec<usize> = first.records.iter().map(|r| r.k).collect();
    for t in &traces[1..] {
        if t.records.len() != ks.len() || t.records.iter().zip(&ks).any(|(r, &k)| r.k != k) {
            return Err(MetricsError::Aggregation(format!(
                "seed {} has a different recording schedule than seed {}",
                t.seed, first.seed
            )));
        }
    }
    let count = traces.len();
    let records = ks
        .iter()
        .enumerate()
        .map(|(idx, &k)| {
            let mut mean = [0.0; 7];
            let mut std = [0.0; 7];
            for f in 0..7 {
                let vals: Vec<f64> = traces.iter().map(|t| t.records[idx].values()[f]).collect();
                let mu = vals.iter().sum::<f64>() / count as f64;
                mean[f] = mu;
                std[f] = if count > 1 {
                    (vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (count - 1) as f64).sqrt()
                } else {
                    0.0
                };
            }
            AggregateRecord {
                k,
                eta: first.records[idx].eta,
                lambda: first.records[idx].lambda,
                mean,
                std,
            }
        })
        .collect();
    Ok(AggregateTrace {
        algo: first.algo.clone(),
        count,
        records,
    })
}
