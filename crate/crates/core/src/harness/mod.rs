//! Experiment orchestration: graph diagnostics, seeded runs, sweeps and
//! output files.
//!
//! Output layout of a run directory:
//!
//! ```text
//! seed_<s>.csv     one per seed, columns of metrics::CSV_HEADER
//! aggregate.csv    mean and sample std across seeds per recorded k
//! summary.json     final and tail statistics, mixing diagnostics, config echo
//! ```
//!
//! A sweep writes `sweep.csv` plus one run directory `cell_<i>/` per grid
//! cell. Exit codes used by the binary: 0 success, 1 I/O or other failure,
//! 2 configuration error, 3 assumption failure, 4 numeric failure.

pub mod config;

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array1;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::algorithms::{run, AlgoError, Algorithm, RunSetup};
use crate::graph::{extract_in_tree, extract_spanning_tree, DirectedGraph, GraphError};
use crate::metrics::{aggregate, AggregateTrace, MetricsError, MetricsTrace};
use crate::mixing::{MixingError, MixingPair};
use crate::oracles::{
    parse_libsvm, synthetic_dataset, write_libsvm, OracleError, OracleSpec, QuadraticProblem,
};

pub use config::{
    load_config, ConfigError, GraphMode, OracleChoice, RunConfig, ScheduleKind, TopologyConfig, TopologyKind,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("graph error: {0}")]
    Graph(#[from] GraphError),
    #[error("mixing error: {0}")]
    Mixing(#[from] MixingError),
    #[error("oracle error: {0}")]
    Oracle(#[from] OracleError),
    #[error("metrics error: {0}")]
    Metrics(#[from] MetricsError),
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("{algo} with seed {seed} failed: {source}")]
    Run {
        algo: &'static str,
        seed: u64,
        #[source]
        source: AlgoError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Assumption(_) => 3,
            Self::Run {
                source: AlgoError::NonFinite { .. } | AlgoError::PushSumDegenerate { .. },
                ..
            } => 4,
            Self::Run {
                source: AlgoError::InvalidParameter(_),
                ..
            } => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads an edge-list file.
pub fn read_graph(path: &Path) -> Result<DirectedGraph, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(DirectedGraph::parse_edge_list(&text)?)
}

/// Roots `r` such that `r` reaches every node in `g_r` and every node
/// reaches `r` in `g_c`.
pub fn common_roots(g_r: &DirectedGraph, g_c: &DirectedGraph) -> Vec<usize> {
    let pull = g_r.spanning_roots();
    let push = g_c.reverse().spanning_roots();
    pull.into_iter().filter(|r| push.contains(r)).collect()
}

/// Topology plus the (G_R, G_C) pair push-pull methods run on.
#[derive(Debug, Clone)]
pub struct Graphs {
    pub topology: DirectedGraph,
    pub pull: DirectedGraph,
    pub push: DirectedGraph,
}

pub fn resolve_graphs(t: &TopologyConfig) -> Result<Graphs, HarnessError> {
    let topology = t.spec()?.build()?;
    if let (Some(p), Some(q)) = (&t.pull_graph_file, &t.push_graph_file) {
        let pull = read_graph(p)?;
        let push = read_graph(q)?;
        if pull.n() != topology.n() || push.n() != topology.n() {
            return Err(HarnessError::Assumption(format!(
                "pull/push graphs have {}/{} nodes, topology has {}",
                pull.n(),
                push.n(),
                topology.n()
            )));
        }
        return Ok(Graphs { topology, pull, push });
    }
    let (pull, push) = match t.mode {
        GraphMode::Full => (topology.clone(), topology.clone()),
        GraphMode::SpanningTrees => {
            if t.root >= topology.n() {
                return Err(ConfigError::Value {
                    key: "root".into(),
                    line: None,
                    msg: format!("root {} out of range for {} nodes", t.root, topology.n()),
                }
                .into());
            }
            let pull = extract_spanning_tree(&topology, t.root).map_err(|e| no_root(&topology, t.root, e))?;
            let push = extract_in_tree(&topology, t.root).map_err(|e| no_root(&topology, t.root, e))?;
            (pull, push)
        }
    };
    Ok(Graphs { topology, pull, push })
}

fn no_root(g: &DirectedGraph, root: usize, e: GraphError) -> HarnessError {
    if common_roots(g, g).is_empty() {
        HarnessError::Assumption("no common spanning-tree root".into())
    } else {
        HarnessError::Assumption(format!("root {root} does not span the topology in both directions: {e}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingDiagnostics {
    pub n: usize,
    pub pull_edges: usize,
    pub push_edges: usize,
    pub common_roots: Vec<usize>,
    pub row_sum_residual: f64,
    pub col_sum_residual: f64,
    pub min_diag_r: f64,
    pub min_diag_c: f64,
    pub support_match: bool,
    pub perron_residual_r: f64,
    pub perron_residual_c: f64,
    pub perron_positive: bool,
    pub rho_r: f64,
    pub rho_r_converged: bool,
    pub rho_c: f64,
    pub rho_c_converged: bool,
    pub c_pi: f64,
}

impl MixingDiagnostics {
    pub fn new(g_r: &DirectedGraph, g_c: &DirectedGraph, pair: &MixingPair) -> Self {
        let p = &pair.perron;
        Self {
            n: pair.n(),
            pull_edges: g_r.edge_count(),
            push_edges: g_c.edge_count(),
            common_roots: common_roots(g_r, g_c),
            row_sum_residual: pair.r.sum_residual(),
            col_sum_residual: pair.c.sum_residual(),
            min_diag_r: pair.r.min_diagonal(),
            min_diag_c: pair.c.min_diagonal(),
            support_match: pair.r.support_matches(g_r) && pair.c.support_matches(g_c),
            perron_residual_r: p.residual_r,
            perron_residual_c: p.residual_c,
            perron_positive: p.strictly_positive(),
            rho_r: p.rho_r.rho,
            rho_r_converged: p.rho_r.converged,
            rho_c: p.rho_c.rho,
            rho_c_converged: p.rho_c.converged,
            c_pi: p.c_pi,
        }
    }

    fn write_lines(&self, f: &mut fmt::Formatter<'_>, title: &str) -> fmt::Result {
        writeln!(f, "[{title}]")?;
        writeln!(f, "  edges (pull / push)     {} / {}", self.pull_edges, self.push_edges)?;
        writeln!(f, "  common roots            {}", fmt_roots(&self.common_roots))?;
        writeln!(f, "  row / col sum residual  {:.3e} / {:.3e}", self.row_sum_residual, self.col_sum_residual)?;
        writeln!(f, "  min diagonal (R / C)    {:.4} / {:.4}", self.min_diag_r, self.min_diag_c)?;
        writeln!(f, "  support matches graphs  {}", self.support_match)?;
        writeln!(
            f,
            "  Perron residual (R / C) {:.3e} / {:.3e}",
            self.perron_residual_r, self.perron_residual_c
        )?;
        writeln!(f, "  Perron vectors positive {}", self.perron_positive)?;
        writeln!(f, "  rho_R                   {:.6}{}", self.rho_r, unconverged(self.rho_r_converged))?;
        writeln!(f, "  rho_C                   {:.6}{}", self.rho_c, unconverged(self.rho_c_converged))?;
        writeln!(f, "  c_pi                    {:.6}", self.c_pi)
    }
}

fn unconverged(ok: bool) -> &'static str {
    if ok {
        ""
    } else {
        " (estimate not converged)"
    }
}

fn fmt_roots(r: &[usize]) -> String {
    match r.len() {
        0 => "none".into(),
        1..=8 => r.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
        k => format!("{k} nodes"),
    }
}

/// Result of `check-graph`.
#[derive(Debug, Clone, Serialize)]
pub struct GraphReport {
    pub topology: String,
    pub n: usize,
    pub edges: usize,
    pub strongly_connected: bool,
    pub spanning_roots: Vec<usize>,
    pub mode: String,
    /// Pair used by push-pull methods.
    pub push_pull: Option<MixingDiagnostics>,
    /// Full topology for both matrices, as used by the push-sum baselines.
    pub full: Option<MixingDiagnostics>,
    pub failures: Vec<String>,
}

impl GraphReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for GraphReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "topology                  {} (n = {}, {} edges)", self.topology, self.n, self.edges)?;
        writeln!(f, "strongly connected        {}", self.strongly_connected)?;
        writeln!(f, "spanning-tree roots       {}", fmt_roots(&self.spanning_roots))?;
        writeln!(f, "push-pull graphs          {}", self.mode)?;
        if let Some(d) = &self.push_pull {
            d.write_lines(f, "push-pull pair")?;
        }
        if let Some(d) = &self.full {
            d.write_lines(f, "full topology")?;
        }
        if self.passed() {
            writeln!(f, "PASS")
        } else {
            for r in &self.failures {
                writeln!(f, "FAIL {r}")?;
            }
            Ok(())
        }
    }
}

// Tolerances of the structural checks.
const SUM_TOL: f64 = 1e-12;
const PERRON_CHECK_TOL: f64 = 1e-10;

fn pair_failures(label: &str, d: &MixingDiagnostics) -> Vec<String> {
    let mut out = vec![];
    if d.common_roots.is_empty() {
        out.push(format!("{label}: no common spanning-tree root"));
    }
    if d.row_sum_residual > SUM_TOL || d.col_sum_residual > SUM_TOL {
        out.push(format!("{label}: stochasticity residual above {SUM_TOL:e}"));
    }
    if d.min_diag_r <= 0.0 || d.min_diag_c <= 0.0 {
        out.push(format!("{label}: non-positive diagonal"));
    }
    if !d.support_match {
        out.push(format!("{label}: matrix support differs from graph"));
    }
    if d.perron_residual_r > PERRON_CHECK_TOL || d.perron_residual_c > PERRON_CHECK_TOL {
        out.push(format!("{label}: Perron residual above {PERRON_CHECK_TOL:e}"));
    }
    if d.c_pi.is_nan() || d.c_pi <= 0.0 {
        out.push(format!("{label}: c_pi is not positive"));
    }
    out
}

/// Builds graphs and mixing matrices and checks the spanning-tree assumption.
pub fn check_graph(t: &TopologyConfig) -> Result<GraphReport, HarnessError> {
    let topology = t.spec()?.build()?;
    let mut failures = vec![];
    let full = match MixingPair::from_graphs(&topology, &topology) {
        Ok(pair) => Some(MixingDiagnostics::new(&topology, &topology, &pair)),
        Err(e) => {
            failures.push(format!("full topology: {e}"));
            None
        }
    };
    let push_pull = match resolve_graphs(t) {
        Ok(g) => match MixingPair::from_graphs(&g.pull, &g.push) {
            Ok(pair) => Some(MixingDiagnostics::new(&g.pull, &g.push, &pair)),
            Err(e) => {
                failures.push(format!("push-pull pair: {e}"));
                None
            }
        },
        Err(HarnessError::Assumption(msg)) => {
            failures.push(msg);
            None
        }
        Err(e) => return Err(e),
    };
    if let Some(d) = &push_pull {
        failures.extend(pair_failures("push-pull pair", d));
    }
    if t.mode == GraphMode::Full || t.pull_graph_file.is_some() {
        // the full pair is what runs; nothing extra to check
    } else if let Some(d) = &full {
        // baselines need the full topology to mix
        failures.extend(pair_failures("full topology", d));
    }
    failures.dedup();
    Ok(GraphReport {
        topology: t.kind.name().into(),
        n: topology.n(),
        edges: topology.edge_count(),
        strongly_connected: topology.is_strongly_connected(),
        spanning_roots: topology.spanning_roots(),
        mode: if t.pull_graph_file.is_some() {
            "explicit files".into()
        } else {
            t.mode.name().into()
        },
        push_pull,
        full,
        failures,
    })
}

/// Builds the gradient oracle for `n` agents.
pub fn build_oracle(o: &config::OracleConfig, n: usize) -> Result<OracleSpec, HarnessError> {
    match o.kind {
        OracleChoice::Logistic => {
            let data = match &o.data_path {
                Some(p) => {
                    let f = fs::File::open(p).map_err(io_err(p))?;
                    parse_libsvm(std::io::BufReader::new(f), o.dim)?
                }
                None => synthetic_dataset(o.synth_samples, o.dim, o.data_seed)?,
            };
            Ok(OracleSpec::logistic(data, n, o.alpha, o.partition_seed)?)
        }
        OracleChoice::Quadratic => {
            let problem = QuadraticProblem::heterogeneous(
                n,
                o.quad_dim,
                o.sigma,
                (o.curvature_min, o.curvature_max),
                o.spread,
                o.quad_seed,
            )?;
            Ok(OracleSpec::quadratic(problem)?)
        }
    }
}

/// One point of a sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    #[serde(serialize_with = "ser_algo")]
    pub algo: Algorithm,
    pub lambda: f64,
    /// Explicit step size; `None` keeps the configured one.
    pub eta: Option<f64>,
    pub coupling_c: f64,
}

fn ser_algo<S: serde::Serializer>(a: &Algorithm, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(a.id())
}

impl Cell {
    fn from_config(cfg: &RunConfig) -> Self {
        Self {
            algo: cfg.algo,
            lambda: cfg.schedule.lambda,
            eta: None,
            coupling_c: cfg.schedule.coupling_c,
        }
    }

    fn schedule(&self, cfg: &RunConfig) -> config::ScheduleConfig {
        let mut s = cfg.schedule.clone();
        s.lambda = self.lambda;
        s.coupling_c = self.coupling_c;
        if let Some(eta) = self.eta {
            s.eta = eta;
            s.algo_eta.clear();
        }
        s
    }
}

/// Per-cell results over all seeds.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub traces: Vec<MetricsTrace>,
    pub aggregate: AggregateTrace,
    pub diagnostics: Option<MixingDiagnostics>,
}

impl CellResult {
    /// Mean and sample std across seeds of the tail-averaged `grad_norm_sq`.
    pub fn tail_stats(&self, fraction: f64) -> (f64, f64) {
        let vals: Vec<f64> = self
            .traces
            .iter()
            .filter_map(|t| t.tail_mean_grad_norm_sq(fraction))
            .collect();
        mean_std(&vals)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mu = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mu, var.sqrt())
}

/// Shared inputs for every job of one config.
struct Prepared {
    oracle: OracleSpec,
    push_pull: Option<(MixingPair, MixingDiagnostics)>,
    full: Option<(MixingPair, MixingDiagnostics)>,
    digest: String,
}

fn config_digest(cfg: &RunConfig) -> String {
    // output location and worker count do not affect results
    let mut canonical = cfg.clone();
    canonical.output = None;
    canonical.workers = 1;
    Sha256::digest(canonical.echo().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn assumption_check(label: &str, d: &MixingDiagnostics) -> Result<(), HarnessError> {
    match pair_failures(label, d).into_iter().next() {
        Some(msg) => Err(HarnessError::Assumption(msg)),
        None => Ok(()),
    }
}

fn prepare(cfg: &RunConfig, algos: &[Algorithm]) -> Result<Prepared, HarnessError> {
    let graphs = resolve_graphs(&cfg.topology)?;
    let n = graphs.topology.n();
    let push_pull = if algos.iter().any(|a| a.is_push_pull()) {
        let pair = MixingPair::from_graphs(&graphs.pull, &graphs.push)?;
        let d = MixingDiagnostics::new(&graphs.pull, &graphs.push, &pair);
        assumption_check("push-pull pair", &d)?;
        Some((pair, d))
    } else {
        None
    };
    let full = if algos.iter().any(|a| a.is_push_sum()) {
        let g = &graphs.topology;
        let pair = MixingPair::from_graphs(g, g)?;
        let d = MixingDiagnostics::new(g, g, &pair);
        assumption_check("full topology", &d)?;
        Some((pair, d))
    } else {
        None
    };
    Ok(Prepared {
        oracle: build_oracle(&cfg.oracle, n)?,
        push_pull,
        full,
        digest: config_digest(cfg),
    })
}

impl Prepared {
    fn mixing_for(&self, algo: Algorithm) -> Option<&(MixingPair, MixingDiagnostics)> {
        if algo.is_push_pull() {
            self.push_pull.as_ref()
        } else if algo.is_push_sum() {
            self.full.as_ref()
        } else {
            None
        }
    }
}

fn run_cells(cfg: &RunConfig, cells: &[Cell]) -> Result<Vec<CellResult>, HarnessError> {
    let algos: Vec<Algorithm> = cells.iter().map(|c| c.algo).collect();
    let prep = Arc::new(prepare(cfg, &algos)?);
    let n = prep.oracle.n_agents();
    let dim = prep.oracle.dim();
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| HarnessError::Io {
            path: PathBuf::from("<thread pool>"),
            source: std::io::Error::other(e),
        })?;
    let traces: Vec<Result<MetricsTrace, HarnessError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, seed)| {
                let cell = &cells[c];
                let setup = RunSetup {
                    algo: cell.algo,
                    mixing: prep.mixing_for(cell.algo).map(|(p, _)| p),
                    oracle: &prep.oracle,
                    hyper: cell.schedule(cfg).hyper(cell.algo, n),
                    x0: Array1::zeros(dim),
                    record_every: cfg.record_every,
                    config_digest: prep.digest.clone(),
                };
                run(&setup, seed).map_err(|source| HarnessError::Run {
                    algo: cell.algo.id(),
                    seed,
                    source,
                })
            })
            .collect()
    });
    let mut traces = traces.into_iter();
    let mut out = Vec::with_capacity(cells.len());
    for cell in cells {
        let t = traces
            .by_ref()
            .take(cfg.seeds.len())
            .collect::<Result<Vec<_>, _>>()?;
        let aggregate = aggregate(&t)?;
        out.push(CellResult {
            cell: *cell,
            traces: t,
            aggregate,
            diagnostics: prep.mixing_for(cell.algo).map(|(_, d)| d.clone()),
        });
    }
    Ok(out)
}

/// Outcome of `run`.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config_echo: String,
    pub config_digest: String,
    pub tail_fraction: f64,
    pub cell: CellResult,
    pub wall_time_s: f64,
}

fn validate_run(cfg: &RunConfig) -> Result<(), HarnessError> {
    if cfg.seeds.is_empty() {
        return Err(ConfigError::Missing("seeds".into()).into());
    }
    Ok(())
}

/// Runs every seed of the configured algorithm.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentResult, HarnessError> {
    validate_run(cfg)?;
    let start = Instant::now();
    let mut cells = run_cells(cfg, &[Cell::from_config(cfg)])?;
    Ok(ExperimentResult {
        config_echo: cfg.echo(),
        config_digest: config_digest(cfg),
        tail_fraction: cfg.tail_fraction,
        cell: cells.remove(0),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    algo: &'a str,
    config_digest: &'a str,
    seeds: Vec<u64>,
    final_k: usize,
    final_f_bar_mean: f64,
    final_f_bar_std: f64,
    final_grad_norm_sq_mean: f64,
    final_grad_norm_sq_std: f64,
    tail_fraction: f64,
    tail_grad_norm_sq_mean: f64,
    tail_grad_norm_sq_std: f64,
    wall_time_s: f64,
    cell: &'a Cell,
    mixing: Option<&'a MixingDiagnostics>,
    config: &'a str,
}

impl ExperimentResult {
    fn summary_json(&self) -> String {
        let c = &self.cell;
        let last = c.aggregate.records.last();
        let pick = |f: usize| last.map_or((f64::NAN, f64::NAN), |r| (r.mean[f], r.std[f]));
        let (fb, fb_s) = pick(0);
        let (gn, gn_s) = pick(1);
        let (tm, ts) = c.tail_stats(self.tail_fraction);
        let s = Summary {
            algo: c.cell.algo.id(),
            config_digest: &self.config_digest,
            seeds: c.traces.iter().map(|t| t.seed).collect(),
            final_k: last.map_or(0, |r| r.k),
            final_f_bar_mean: fb,
            final_f_bar_std: fb_s,
            final_grad_norm_sq_mean: gn,
            final_grad_norm_sq_std: gn_s,
            tail_fraction: self.tail_fraction,
            tail_grad_norm_sq_mean: tm,
            tail_grad_norm_sq_std: ts,
            wall_time_s: self.wall_time_s,
            cell: &c.cell,
            mixing: c.diagnostics.as_ref(),
            config: &self.config_echo,
        };
        let mut out = serde_json::to_string_pretty(&s).expect("summary serializes");
        out.push('\n');
        out
    }

    /// Writes per-seed CSVs, the aggregate CSV and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
        let mut files: Vec<(String, String)> = self
            .cell
            .traces
            .iter()
            .map(|t| (format!("seed_{}.csv", t.seed), t.to_csv()))
            .collect();
        files.push(("aggregate.csv".into(), self.cell.aggregate.to_csv()));
        files.push(("summary.json".into(), self.summary_json()));
        write_all(dir, &files)
    }
}

/// Outcome of `sweep`.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<ExperimentResult>,
    pub tail_fraction: f64,
}

/// Cartesian grid over the sweep keys; unspecified axes keep the base value.
pub fn sweep_cells(cfg: &RunConfig) -> Result<Vec<Cell>, HarnessError> {
    let sw = &cfg.sweep;
    if sw.is_empty() {
        return Err(ConfigError::Missing("sweep_algo, sweep_lambda, sweep_eta or sweep_coupling_c".into()).into());
    }
    let algos = if sw.algos.is_empty() { vec![cfg.algo] } else { sw.algos.clone() };
    let lambdas = if sw.lambdas.is_empty() {
        vec![cfg.schedule.lambda]
    } else {
        sw.lambdas.clone()
    };
    let etas: Vec<Option<f64>> = if sw.etas.is_empty() {
        vec![None]
    } else {
        sw.etas.iter().map(|&e| Some(e)).collect()
    };
    let cs = if sw.coupling_cs.is_empty() {
        vec![cfg.schedule.coupling_c]
    } else {
        sw.coupling_cs.clone()
    };
    let mut cells = vec![];
    for &algo in &algos {
        for &lambda in &lambdas {
            for &eta in &etas {
                for &coupling_c in &cs {
                    cells.push(Cell {
                        algo,
                        lambda,
                        eta,
                        coupling_c,
                    });
                }
            }
        }
    }
    Ok(cells)
}

/// Runs every grid cell with the shared seed list.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepResult, HarnessError> {
    validate_run(cfg)?;
    let cells = sweep_cells(cfg)?;
    let start = Instant::now();
    let results = run_cells(cfg, &cells)?;
    let wall = start.elapsed().as_secs_f64();
    let echo = cfg.echo();
    let digest = config_digest(cfg);
    Ok(SweepResult {
        cells: results
            .into_iter()
            .map(|cell| ExperimentResult {
                config_echo: echo.clone(),
                config_digest: digest.clone(),
                tail_fraction: cfg.tail_fraction,
                cell,
                wall_time_s: wall,
            })
            .collect(),
        tail_fraction: cfg.tail_fraction,
    })
}

impl SweepResult {
    pub const TABLE_HEADER: &'static str = "cell,algo,lambda,eta0,coupling_c,tail_grad_norm_sq_mean,tail_grad_norm_sq_std";

    /// One row per cell: tail-averaged `grad_norm_sq` across seeds.
    pub fn table(&self) -> String {
        let mut out = String::from(Self::TABLE_HEADER);
        out.push('\n');
        for (i, r) in self.cells.iter().enumerate() {
            let (m, s) = r.cell.tail_stats(self.tail_fraction);
            let eta0 = r.cell.aggregate.records.first().map_or(f64::NAN, |x| x.eta);
            let c = &r.cell.cell;
            out.push_str(&format!(
                "{i},{},{:.16e},{:.16e},{:.16e},{m:.16e},{s:.16e}\n",
                c.algo.id(),
                c.lambda,
                eta0,
                c.coupling_c
            ));
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
        let mut written = vec![];
        let result = (|| {
            for (i, r) in self.cells.iter().enumerate() {
                written.extend(r.write(&dir.join(format!("cell_{i}")))?);
            }
            written.extend(write_all(dir, &[("sweep.csv".into(), self.table())])?);
            Ok(())
        })();
        match result {
            Ok(()) => Ok(written),
            Err(e) => {
                remove_all(&written);
                Err(e)
            }
        }
    }
}

/// Writes a synthetic LIBSVM dataset.
pub fn gen_data(samples: usize, dim: usize, seed: u64, path: &Path) -> Result<(), HarnessError> {
    let data = synthetic_dataset(samples, dim, seed)?;
    let mut buf = Vec::new();
    write_libsvm(&data, &mut buf).map_err(io_err(path))?;
    write_atomic(path, &buf)
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    res.map_err(io_err(path))
}

fn remove_all(paths: &[PathBuf]) {
    for p in paths {
        let _ = fs::remove_file(p);
    }
}

fn write_all(dir: &Path, files: &[(String, String)]) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = vec![];
    for (name, content) in files {
        let path = dir.join(name);
        if let Err(e) = write_atomic(&path, content.as_bytes()) {
            remove_all(&written);
            return Err(e);
        }
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn cfg(text: &str) -> RunConfig {
        RunConfig::parse(text, Path::new("/")).unwrap()
    }

    fn topo(kind: &str, n: usize) -> TopologyConfig {
        cfg(&format!("horizon = 1\ntopology = {kind}\nnodes = {n}\n")).topology
    }

    #[test]
    fn exponential_mixes_faster_than_ring() {
        let mut e = topo("exponential", 20);
        let mut r = topo("ring", 20);
        e.mode = GraphMode::Full;
        r.mode = GraphMode::Full;
        let e = check_graph(&e).unwrap();
        let r = check_graph(&r).unwrap();
        assert!(e.passed() && r.passed(), "{e}\n{r}");
        let (de, dr) = (e.full.unwrap(), r.full.unwrap());
        assert!(de.rho_c < dr.rho_c);
    }

    #[test]
    fn single_node_passes_trivially() {
        let rep = check_graph(&topo("ring", 1)).unwrap();
        assert!(rep.passed(), "{rep}");
        let d = rep.push_pull.unwrap();
        assert_eq!(d.rho_r, 0.0);
        assert_eq!(d.rho_c, 0.0);
        assert!((d.c_pi - 1.0).abs() < 1e-15);
    }

    #[test]
    fn disconnected_graph_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.txt");
        fs::write(&path, "n 4\n0 1\n1 0\n2 3\n3 2\n").unwrap();
        let t = cfg(&format!("horizon = 1\ntopology = custom\ngraph_file = {}\n", path.display())).topology;
        let rep = check_graph(&t).unwrap();
        assert!(!rep.passed());
        assert!(rep.to_string().contains("no common spanning-tree root"), "{rep}");
    }

    #[test]
    fn spanning_tree_pair_uses_topology_edges() {
        let t = topo("multi_sub_ring", 20);
        let g = resolve_graphs(&t).unwrap();
        assert!(g.pull.edges().all(|(a, b)| g.topology.has_edge(a, b)));
        assert!(g.push.edges().all(|(a, b)| g.topology.has_edge(a, b)));
        assert_eq!(g.pull.edge_count(), 19);
        assert_eq!(g.push.edge_count(), 19);
        assert_eq!(common_roots(&g.pull, &g.push), vec![0]);
    }

    #[test]
    fn sweep_grid_shapes() {
        let c = cfg("horizon = 1\nsweep_algo = smtpp,sgp\nsweep_lambda = 0.05,0.1\n");
        assert_eq!(sweep_cells(&c).unwrap().len(), 4);
        assert!(matches!(
            sweep_cells(&cfg("horizon = 1")),
            Err(HarnessError::Config(_))
        ));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(HarnessError::Config(ConfigError::Missing("x".into())).exit_code(), 2);
        assert_eq!(HarnessError::Assumption("x".into()).exit_code(), 3);
        let e = HarnessError::Run {
            algo: "smtpp",
            seed: 1,
            source: AlgoError::NonFinite {
                iteration: 3,
                what: "x",
            },
        };
        assert_eq!(e.exit_code(), 4);
        assert!(e.to_string().contains("seed 1") && e.to_string().contains("iteration 3"));
    }
}
