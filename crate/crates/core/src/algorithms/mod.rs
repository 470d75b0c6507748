//! Iteration kernels for momentum-tracking push-pull (SMTPP) and baselines.
//!
//! All kernels take the current [`AlgoState`] by reference and return the
//! next one, so a round reads only iteration-`k` values (double buffering).
//! Agent `i`'s stochastic gradient at iteration `k` always comes from
//! `RngStreams::stream(i, k)`; iteration 0 is the initial sample.
//!
//! Recursions (rows of `X` are agents, `G(.)` samples one gradient per agent):
//!
//! ```text
//! SMTPP        X' = R (X - eta V)      M' = (1 - lambda) M + lambda G(X')
//!              V' = C V + M' - M
//! STPP         X' = R (X - eta V)      V' = C V + G(X') - G_prev
//! SGP          U' = C (U - eta G(Z))   w' = C w          Z' = U' / w'
//! Push-DIGing  U' = C (U - eta Y)      w' = C w          Z' = U' / w'
//!              Y' = C Y + G(Z') - G_prev
//! CSGDM        x' = x - eta m          m' = (1 - lambda) m + lambda mean_i g_i(x')
//! ```
//!
//! STPP keeps its last tracked gradient in the momentum slot, so with zero
//! initial trackers it coincides with SMTPP at `lambda = 1`. For SGP the
//! momentum and tracker slots both hold the raw gradients just applied. The
//! centralized method stores a single `1 x d` model.

mod rng;
mod schedule;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use thiserror::Error;

use crate::metrics::{MetricsError, MetricsTrace, Recorder};
use crate::mixing::{ColStochasticMatrix, MixingPair, RowStochasticMatrix};
use crate::oracles::{OracleError, OracleSpec};

pub use rng::RngStreams;
pub use schedule::{eta_upper_bound, HyperParams, StepSchedule};

/// Push-sum weights below this are treated as degenerate.
pub const PUSH_SUM_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AlgoError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { iteration: usize, what: &'static str },
    #[error("push-sum weight of agent {agent} fell to {weight:e} at iteration {iteration}")]
    PushSumDegenerate {
        iteration: usize,
        agent: usize,
        weight: f64,
    },
    #[error("oracle failure at iteration {iteration}: {source}")]
    Oracle {
        iteration: usize,
        #[source]
        source: OracleError,
    },
    #[error("metrics failure at iteration {iteration}: {source}")]
    Metrics {
        iteration: usize,
        #[source]
        source: MetricsError,
    },
}

/// Initial tracker for STPP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrackerInit {
    /// `v_0 = 0`, matching the momentum-tracking initialisation.
    #[default]
    Zero,
    /// `v_0 = g_0`, classical gradient tracking.
    Gradient,
}

/// Momentum rule for the centralized baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MomentumRule {
    /// `m' = (1 - lambda) m + lambda g`.
    #[default]
    Ema,
    /// `m' = (1 - lambda) m + g`.
    HeavyBall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Smtpp,
    Stpp { init: TrackerInit },
    Sgp,
    PushDiging,
    Csgdm { momentum: MomentumRule },
}

impl Algorithm {
    pub const NAMES: [&'static str; 5] = ["smtpp", "stpp", "sgp", "push_diging", "csgdm"];

    pub fn id(&self) -> &'static str {
        match self {
            Self::Smtpp => "smtpp",
            Self::Stpp { .. } => "stpp",
            Self::Sgp => "sgp",
            Self::PushDiging => "push_diging",
            Self::Csgdm { .. } => "csgdm",
        }
    }

    /// Parses an algorithm id with default variant options.
    pub fn from_id(id: &str) -> Option<Self> {
        Some(match id {
            "smtpp" => Self::Smtpp,
            "stpp" => Self::Stpp {
                init: TrackerInit::Zero,
            },
            "sgp" => Self::Sgp,
            "push_diging" => Self::PushDiging,
            "csgdm" => Self::Csgdm {
                momentum: MomentumRule::Ema,
            },
            _ => return None,
        })
    }

    /// Uses a pull matrix R and push matrix C.
    pub fn is_push_pull(&self) -> bool {
        matches!(self, Self::Smtpp | Self::Stpp { .. })
    }

    /// Uses push-sum de-biasing over C only.
    pub fn is_push_sum(&self) -> bool {
        matches!(self, Self::Sgp | Self::PushDiging)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PushSum {
    /// Un-normalised iterates.
    pub numerators: Array2<f64>,
    pub weights: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgoState {
    pub k: usize,
    /// Models, one row per agent (de-biased for push-sum methods).
    pub x: Array2<f64>,
    pub m: Array2<f64>,
    pub v: Array2<f64>,
    /// Most recent stochastic gradients.
    pub g_prev: Array2<f64>,
    pub push_sum: Option<PushSum>,
    /// Single shared model instead of one per agent.
    pub centralized: bool,
}

impl AlgoState {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn check_finite(&self) -> Result<(), AlgoError> {
        let fields: [(&'static str, &Array2<f64>); 4] = [
            ("model", &self.x),
            ("momentum", &self.m),
            ("tracker", &self.v),
            ("gradient", &self.g_prev),
        ];
        for (what, a) in fields {
            if !a.iter().all(|v| v.is_finite()) {
                return Err(AlgoError::NonFinite {
                    iteration: self.k,
                    what,
                });
            }
        }
        Ok(())
    }
}

fn broadcast_rows(x0: ArrayView1<'_, f64>, n: usize) -> Array2<f64> {
    x0.broadcast((n, x0.len()))
        .expect("row broadcast")
        .to_owned()
}

fn check_x0(x0: ArrayView1<'_, f64>, oracle: &OracleSpec) -> Result<(), AlgoError> {
    if x0.len() != oracle.dim() {
        return Err(AlgoError::Shape(format!(
            "x0 has length {}, oracle dimension is {}",
            x0.len(),
            oracle.dim()
        )));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(AlgoError::NonFinite {
            iteration: 0,
            what: "model",
        });
    }
    Ok(())
}

fn check_eta(eta: f64) -> Result<(), AlgoError> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(AlgoError::InvalidParameter(format!("step size {eta} must be positive")))
    }
}

fn check_matrix(n_matrix: usize, state: &AlgoState) -> Result<(), AlgoError> {
    if n_matrix != state.n_rows() {
        return Err(AlgoError::Shape(format!(
            "mixing matrix is {n_matrix}x{n_matrix}, state has {} agents",
            state.n_rows()
        )));
    }
    Ok(())
}

/// One stochastic gradient per agent, agent `i` evaluated at row `i`.
pub fn sample_gradients(
    oracle: &OracleSpec,
    points: ArrayView2<'_, f64>,
    batch: usize,
    streams: &RngStreams,
    iteration: usize,
) -> Result<Array2<f64>, AlgoError> {
    if points.nrows() != oracle.n_agents() {
        return Err(AlgoError::Shape(format!(
            "{} rows for {} agents",
            points.nrows(),
            oracle.n_agents()
        )));
    }
    let mut out = Array2::zeros(points.dim());
    for (i, (row, out_row)) in points.outer_iter().zip(out.outer_iter_mut()).enumerate() {
        let mut rng = streams.stream(i, iteration);
        oracle
            .stochastic_grad_into(row, i, batch, &mut rng, out_row)
            .map_err(|source| AlgoError::Oracle { iteration, source })?;
    }
    Ok(out)
}

fn mean_gradient(
    oracle: &OracleSpec,
    x: ArrayView1<'_, f64>,
    batch: usize,
    streams: &RngStreams,
    iteration: usize,
) -> Result<Array2<f64>, AlgoError> {
    let n = oracle.n_agents();
    let points = broadcast_rows(x, n);
    let g = sample_gradients(oracle, points.view(), batch, streams, iteration)?;
    let mean = g.sum_axis(Axis(0)) / n as f64;
    Ok(mean.insert_axis(Axis(0)))
}

/// SMTPP start: identical models, zero momentum and trackers. The initial
/// gradient sample is kept for logging only.
pub fn smtpp_init(
    x0: ArrayView1<'_, f64>,
    oracle: &OracleSpec,
    batch: usize,
    streams: &RngStreams,
) -> Result<AlgoState, AlgoError> {
    check_x0(x0, oracle)?;
    let x = broadcast_rows(x0, oracle.n_agents());
    let g0 = sample_gradients(oracle, x.view(), batch, streams, 0)?;
    let zeros = Array2::zeros(x.dim());
    Ok(AlgoState {
        k: 0,
        x,
        m: zeros.clone(),
        v: zeros,
        g_prev: g0,
        push_sum: None,
        centralized: false,
    })
}

/// One SMTPP round: pull, sample at the new models, momentum, push.
#[allow(clippy::too_many_arguments)]
pub fn smtpp_step(
    state: &AlgoState,
    r: &RowStochasticMatrix,
    c: &ColStochasticMatrix,
    eta: f64,
    lambda: f64,
    oracle: &OracleSpec,
    batch: usize,
    streams: &RngStreams,
) -> Result<AlgoState, AlgoError> {
    check_eta(eta)?;
    schedule::check_lambda(lambda)?;
    check_matrix(r.n(), state)?;
    check_matrix(c.n(), state)?;
    let k = state.k + 1;
    let x = r.matrix().dot(&(&state.x - &(&state.v * eta)));
    let g = sample_gradients(oracle, x.view(), batch, streams, k)?;
    let m = &state.m * (1.0 - lambda) + &g * lambda;
    let v = c.matrix().dot(&state.v) + &(&m - &state.m);
    let next = AlgoState {
        k,
        x,
        m,
        v,
        g_prev: g,
        push_sum: None,
        centralized: false,
    };
    next.check_finite()?;
    Ok(next)
}

/// STPP start. The momentum slot holds the last tracked gradient: zero for
/// [`TrackerInit::Zero`], `g_0` for [`TrackerInit::Gradient`].
pub fn stpp_init(
    x0: ArrayView1<'_, f64>,
    oracle: &OracleSpec,
    batch: usize,
    streams: &RngStreams,
    init: TrackerInit,
) -> Result<AlgoState, AlgoError> {
    let mut state = smtpp_init(x0, oracle, batch, streams)?;
    if init == TrackerInit::Gradient {
        state.m = state.g_prev.clone();
        state.v = state.g_prev.clone();
    }
    Ok(state)
}

pub fn stpp_step(
    state: &AlgoState,
    r: &RowStochasticMatrix,
    c: &ColStochasticMatrix,
    eta: f64,
    oracle: &OracleSpec,
    batch: usize,
    streams: &RngStreams,
) -> Result<AlgoState, AlgoError> {
    check_eta(eta)?;
    check_matrix(r.n(), state)?;
    check_matrix(c.n(), state)?;
    let k = state.k + 1;
    let x = r.matrix().dot(&(&state.x - &(&state.v * eta)));
    let g = sample_gradients(oracle, x.view(), batch, streams, k)?;
    let v = c.matrix().dot(&state.v) + &(&g - &state.m);
    let next = AlgoState {
        k,
        x,
        m: g.clone(),
        v,
        g_prev: g,
        push_sum: None,
        centralized: false,
    };
    next.check_finite()?;
    Ok(next)
}

fn push_sum_init(
    x0: ArrayView1<'_, f64>,
    oracle: &OracleSpec,
    batch: usize,
    streams: &RngStreams,
) -> Result<AlgoState, AlgoError> {
    check_x0(x0, oracle)?;
    let n = oracle.n_agents();
    let x = broadcast_rows(x0, n);
    let g0 = sample_gradients(oracle, x.view(), batch, streams, 0)?;
    Ok(AlgoState {
        k: 0,
        x: x.clone(),
        m: g0.clone(),
        v: g0.clone(),
        g_prev: g0,
        push_sum: Some(PushSum {
            numerators: x,
            weights: Array1::ones(n),
        }),
        centralized: false,
    })
}

/// SGP start: push-sum weights all one.
pub fn sgp_init(
    x0: ArrayView1<'_, f64>,
    oracle: &OracleSpec,
    batch: usize,
    streams: &RngStreams,
) -> Result<AlgoState, AlgoError> {
    push_sum_init(x0, oracle, batch, streams)
}

/// Push-DIGing start: `w_0 = 1`, `y_0 = g_0`.
pub fn push_diging_init(
    x0: ArrayView1<'_, f64>,
    oracle: &OracleSpec,
    batch: usize,
    streams: &RngStreams,
) -> Result<AlgoState, AlgoError> {
    push_sum_init(x0, oracle, batch, streams)
}

fn debias(numerators: &Array2<f64>, weights: &Array1<f64>, iteration: usize) -> Result<Array2<f64>, AlgoError> {
    if let Some((agent, &weight)) = weights
        .iter()
        .enumerate()
        .find(|(_, &w)| !(w >= PUSH_SUM_FLOOR))
    {
        return Err(AlgoError::PushSumDegenerate {
            iteration,
            agent,
            weight,
        });
    }
    Ok(numerators / &weights.view().insert_axis(Axis(1)))
}

fn push_sum_of(state: &AlgoState) -> Result<&PushSum, AlgoError> {
    state
        .push_sum
        .as_ref()
        .ok_or_else(|| AlgoError::InvalidParameter("state has no push-sum weights".into()))
}

/// One SGP round: gradient at the de-biased iterate, then push.
pub fn sgp_step(
    state: &AlgoState,
    c: &ColStochasticMatrix,
    eta: f64,
    oracle: &OracleSpec,
    batch: usize,
    streams: &RngStreams,
) -> Result<AlgoState, AlgoError> {
    check_eta(eta)?;
    check_matrix(c.n(), state)?;
    let ps = push_sum_of(state)?;
    let k = state.k + 1;
    let g = sample_gradients(oracle, state.x.view(), batch, streams, k)?;
    let numerators = c.matrix().dot(&(&ps.numerators - &(&g * eta)));
    let weights = c.matrix().dot(&ps.weights);
    let x = debias(&numerators, &weights, k)?;
    let next = AlgoState {
        k,
        x,
        m: g.clone(),
        v: g.clone(),
        g_prev: g,
        push_sum: Some(PushSum { numerators, weights }),
        centralized: false,
    };
    next.check_finite()?;
    Ok(next)
}

/// One Push-DIGing round.
pub fn push_diging_step(
    state: &AlgoState,
    c: &ColStochasticMatrix,
    eta: f64,
    oracle: &OracleSpec,
    batch: usize,
    streams: &RngStreams,
) -> Result<AlgoState, AlgoError> {
    check_eta(eta)?;
    check_matrix(c.n(), state)?;
    let ps = push_sum_of(state)?;
    let k = state.k + 1;
    let cm = c.matrix();
    let numerators = cm.dot(&(&ps.numerators - &(&state.v * eta)));
    let weights = cm.dot(&ps.weights);
    let x = debias(&numerators, &weights, k)?;
    let g = sample_gradients(oracle, x.view(), batch, streams, k)?;
    let v = cm.dot(&state.v) + &(&g - &state.g_prev);
    let next = AlgoState {
        k,
        x,
        m: g.clone(),
        v,
        g_prev: g,
        push_sum: Some(PushSum { numerators, weights }),
        centralized: false,
    };
    next.check_finite()?;
    Ok(next)
}

/// Centralized momentum SGD start: `m_0 = 0`.
pub fn csgdm_init(
    x0: ArrayView1<'_, f64>,
    oracle: &OracleSpec,
    batch: usize,
    streams: &RngStreams,
) -> Result<AlgoState, AlgoError> {
    check_x0(x0, oracle)?;
    let x = x0.to_owned().insert_axis(Axis(0));
    let g0 = mean_gradient(oracle, x0, batch, streams, 0)?;
    let zeros = Array2::zeros(x.dim());
    Ok(AlgoState {
        k: 0,
        x,
        m: zeros.clone(),
        v: zeros,
        g_prev: g0,
        push_sum: None,
        centralized: true,
    })
}

/// One centralized round: move along the momentum, then average every
/// agent's stochastic gradient at the new point into it.
pub fn csgdm_step(
    state: &AlgoState,
    eta: f64,
    lambda: f64,
    rule: MomentumRule,
    oracle: &OracleSpec,
    batch: usize,
    streams: &RngStreams,
) -> Result<AlgoState, AlgoError> {
    check_eta(eta)?;
    schedule::check_lambda(lambda)?;
    if !state.centralized {
        return Err(AlgoError::InvalidParameter("csgdm needs a centralized state".into()));
    }
    let k = state.k + 1;
    let x = &state.x - &(&state.m * eta);
    let g = mean_gradient(oracle, x.row(0), batch, streams, k)?;
    let m = match rule {
        MomentumRule::Ema => &state.m * (1.0 - lambda) + &g * lambda,
        MomentumRule::HeavyBall => &state.m * (1.0 - lambda) + &g,
    };
    let next = AlgoState {
        k,
        x,
        v: m.clone(),
        m,
        g_prev: g,
        push_sum: None,
        centralized: true,
    };
    next.check_finite()?;
    Ok(next)
}

/// Everything a run needs besides the seed.
#[derive(Debug, Clone)]
pub struct RunSetup<'a> {
    pub algo: Algorithm,
    /// R and C for push-pull methods; only C is used by push-sum methods.
    /// Ignored by the centralized baseline.
    pub mixing: Option<&'a MixingPair>,
    pub oracle: &'a OracleSpec,
    pub hyper: HyperParams,
    pub x0: Array1<f64>,
    pub record_every: usize,
    pub config_digest: String,
}

impl RunSetup<'_> {
    fn validate(&self) -> Result<(), AlgoError> {
        self.hyper.validate()?;
        if self.record_every == 0 {
            return Err(AlgoError::InvalidParameter("record_every must be >= 1".into()));
        }
        let n = self.oracle.n_agents();
        match (self.algo, self.mixing) {
            (Algorithm::Csgdm { .. }, _) => Ok(()),
            (_, None) => Err(AlgoError::InvalidParameter(format!(
                "{} needs mixing matrices",
                self.algo.id()
            ))),
            (_, Some(mix)) if mix.n() != n => Err(AlgoError::Shape(format!(
                "mixing matrices are {0}x{0}, oracle has {n} agents",
                mix.n()
            ))),
            _ => Ok(()),
        }
    }

    /// Weights defining the network-average model: the pull Perron vector for
    /// push-pull methods, uniform otherwise.
    pub fn consensus_weights(&self) -> Array1<f64> {
        match (self.algo.is_push_pull(), self.mixing) {
            (true, Some(mix)) => mix.perron.pi_r.clone(),
            _ => {
                let n = if self.algo.is_push_sum() || self.algo.is_push_pull() {
                    self.oracle.n_agents()
                } else {
                    1
                };
                Array1::from_elem(n, 1.0 / n as f64)
            }
        }
    }

    fn tracker_weights(&self) -> Array1<f64> {
        match (self.algo, self.mixing) {
            (Algorithm::Csgdm { .. }, _) | (_, None) => Array1::ones(1),
            (_, Some(mix)) => mix.perron.pi_c.clone(),
        }
    }
}

/// Steps one run forward and records metrics on the configured cadence.
pub struct Runner<'a> {
    setup: &'a RunSetup<'a>,
    streams: RngStreams,
    state: AlgoState,
    recorder: Recorder,
    trace: MetricsTrace,
}

impl<'a> Runner<'a> {
    pub fn new(setup: &'a RunSetup<'a>, seed: u64) -> Result<Self, AlgoError> {
        setup.validate()?;
        let streams = RngStreams::new(seed);
        let batch = setup.hyper.batch;
        let x0 = setup.x0.view();
        let oracle = setup.oracle;
        let state = match setup.algo {
            Algorithm::Smtpp => smtpp_init(x0, oracle, batch, &streams)?,
            Algorithm::Stpp { init } => stpp_init(x0, oracle, batch, &streams, init)?,
            Algorithm::Sgp => sgp_init(x0, oracle, batch, &streams)?,
            Algorithm::PushDiging => push_diging_init(x0, oracle, batch, &streams)?,
            Algorithm::Csgdm { .. } => csgdm_init(x0, oracle, batch, &streams)?,
        };
        let recorder = Recorder::new(setup.consensus_weights(), setup.tracker_weights(), setup.oracle.dim());
        let trace = MetricsTrace::new(setup.algo.id(), &setup.config_digest, seed);
        let mut runner = Self {
            setup,
            streams,
            state,
            recorder,
            trace,
        };
        runner.record()?;
        Ok(runner)
    }

    pub fn state(&self) -> &AlgoState {
        &self.state
    }

    pub fn trace(&self) -> &MetricsTrace {
        &self.trace
    }

    fn record(&mut self) -> Result<(), AlgoError> {
        let k = self.state.k;
        let due = k.is_multiple_of(self.setup.record_every) || k == self.setup.hyper.horizon;
        if due {
            let (eta, lambda) = self.setup.hyper.params_at(k);
            let rec = self
                .recorder
                .record(&self.state, eta, lambda, self.setup.oracle)
                .map_err(|source| AlgoError::Metrics { iteration: k, source })?;
            self.trace
                .push(rec)
                .map_err(|source| AlgoError::Metrics { iteration: k, source })?;
        }
        Ok(())
    }

    /// Advances one iteration and records if due.
    pub fn step(&mut self) -> Result<(), AlgoError> {
        let setup = self.setup;
        let (eta, lambda) = setup.hyper.params_at(self.state.k);
        let batch = setup.hyper.batch;
        let oracle = setup.oracle;
        let s = &self.streams;
        let next = match (setup.algo, setup.mixing) {
            (Algorithm::Smtpp, Some(mix)) => {
                smtpp_step(&self.state, &mix.r, &mix.c, eta, lambda, oracle, batch, s)?
            }
            (Algorithm::Stpp { .. }, Some(mix)) => {
                stpp_step(&self.state, &mix.r, &mix.c, eta, oracle, batch, s)?
            }
            (Algorithm::Sgp, Some(mix)) => sgp_step(&self.state, &mix.c, eta, oracle, batch, s)?,
            (Algorithm::PushDiging, Some(mix)) => {
                push_diging_step(&self.state, &mix.c, eta, oracle, batch, s)?
            }
            (Algorithm::Csgdm { momentum }, _) => {
                csgdm_step(&self.state, eta, lambda, momentum, oracle, batch, s)?
            }
            (algo, None) => {
                return Err(AlgoError::InvalidParameter(format!(
                    "{} needs mixing matrices",
                    algo.id()
                )))
            }
        };
        self.recorder.advance(&self.state);
        self.state = next;
        self.record()
    }

    pub fn into_trace(self) -> MetricsTrace {
        self.trace
    }
}

/// Runs `hyper.horizon` iterations and returns the recorded trace.
pub fn run(setup: &RunSetup<'_>, seed: u64) -> Result<MetricsTrace, AlgoError> {
    let mut runner = Runner::new(setup, seed)?;
    for _ in 0..setup.hyper.horizon {
        runner.step()?;
    }
    Ok(runner.into_trace())
}
