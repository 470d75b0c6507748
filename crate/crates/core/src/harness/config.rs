//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are skipped.
//! Every key below is optional except `horizon`. List values are
//! comma-separated.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `topology` | `multi_sub_ring` | `ring`, `multi_sub_ring`, `exponential`, `complete`, `custom` |
//! | `nodes` | `20` | number of agents (ignored for `custom`) |
//! | `sub_rings` | `4` | sub-ring count for `multi_sub_ring` |
//! | `root` | `0` | spanning-tree root |
//! | `graph_file` | | edge list for `custom` |
//! | `pull_graph_file`, `push_graph_file` | | explicit G_R / G_C edge lists (both or neither) |
//! | `graph_mode` | `spanning_trees` | push-pull graphs: `spanning_trees` or `full` |
//! | `algo` | `smtpp` | `smtpp`, `stpp`, `sgp`, `push_diging`, `csgdm` |
//! | `stpp_init` | `zero` | `zero` or `gradient` |
//! | `csgdm_momentum` | `ema` | `ema` or `heavy_ball` |
//! | `schedule` | `constant` | `constant`, `stepped_decay`, `coupled`, `horizon_optimal` |
//! | `eta` | `0.1` | step size (initial step size for `stepped_decay`) |
//! | `algo_eta` | | per-algorithm overrides, e.g. `sgp:0.2,stpp:0.2` |
//! | `lambda` | `0.1` | momentum coefficient |
//! | `decay_factor`, `decay_period` | `0.1`, `300` | stepped decay |
//! | `coupling_c` | `10` | `eta = c * lambda^2` for `coupled` |
//! | `c_eta`, `c_lambda` | `1`, `1` | constants of `horizon_optimal` |
//! | `batch` | `1` | minibatch size |
//! | `horizon` | required | iteration count |
//! | `oracle` | `logistic` | `logistic` or `quadratic` |
//! | `data_path` | | LIBSVM file; synthetic data when absent |
//! | `dim` | `123` | logistic feature dimension |
//! | `alpha` | `0.01` | non-convex regulariser weight |
//! | `synth_samples`, `data_seed` | `32561`, `0` | synthetic stand-in |
//! | `partition_seed` | `0` | sample-to-agent shuffle |
//! | `quad_dim`, `sigma`, `quad_seed` | `10`, `1`, `0` | quadratic oracle |
//! | `curvature_min`, `curvature_max`, `spread` | `0.5`, `1.5`, `1` | quadratic oracle |
//! | `seeds` | `1,2,3,4,5` | one run per seed |
//! | `record_every` | `1` | metric cadence |
//! | `output` | | output directory |
//! | `workers` | `1` | concurrent jobs |
//! | `tail_fraction` | `0.2` | floor window (fraction of records) |
//! | `sweep_algo`, `sweep_lambda`, `sweep_eta`, `sweep_coupling_c` | | sweep grids |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::algorithms::{Algorithm, HyperParams, MomentumRule, StepSchedule, TrackerInit};
use crate::graph::TopologySpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("{}`{key}`: {msg}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Value {
        key: String,
        line: Option<usize>,
        msg: String,
    },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("cannot read config {path}: {msg}")]
    Io { path: PathBuf, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyKind {
    Ring,
    MultiSubRing,
    Exponential,
    Complete,
    Custom,
}

impl TopologyKind {
    pub const NAMES: [&'static str; 5] = ["ring", "multi_sub_ring", "exponential", "complete", "custom"];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Ring => "ring",
            Self::MultiSubRing => "multi_sub_ring",
            Self::Exponential => "exponential",
            Self::Complete => "complete",
            Self::Custom => "custom",
        }
    }
}

impl FromStr for TopologyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "ring" => Self::Ring,
            "multi_sub_ring" => Self::MultiSubRing,
            "exponential" => Self::Exponential,
            "complete" => Self::Complete,
            "custom" => Self::Custom,
            _ => return Err(format!("unknown topology `{s}`; valid: {}", Self::NAMES.join(", "))),
        })
    }
}

/// How push-pull methods derive (G_R, G_C) from the topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GraphMode {
    /// Out-tree from the root for G_R, in-tree to the root for G_C.
    #[default]
    SpanningTrees,
    Full,
}

impl GraphMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SpanningTrees => "spanning_trees",
            Self::Full => "full",
        }
    }
}

impl FromStr for GraphMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "spanning_trees" => Ok(Self::SpanningTrees),
            "full" => Ok(Self::Full),
            _ => Err(format!("unknown graph_mode `{s}`; valid: spanning_trees, full")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    pub nodes: usize,
    pub sub_rings: usize,
    pub root: usize,
    pub graph_file: Option<PathBuf>,
    pub pull_graph_file: Option<PathBuf>,
    pub push_graph_file: Option<PathBuf>,
    pub mode: GraphMode,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            kind: TopologyKind::MultiSubRing,
            nodes: 20,
            sub_rings: 4,
            root: 0,
            graph_file: None,
            pull_graph_file: None,
            push_graph_file: None,
            mode: GraphMode::SpanningTrees,
        }
    }
}

impl TopologyConfig {
    /// Resolves to a buildable spec, reading the edge list for `custom`.
    pub fn spec(&self) -> Result<TopologySpec, super::HarnessError> {
        Ok(match self.kind {
            TopologyKind::Ring => TopologySpec::Ring { n: self.nodes },
            TopologyKind::MultiSubRing => TopologySpec::MultiSubRing {
                n: self.nodes,
                sub_rings: self.sub_rings,
                root: self.root,
            },
            TopologyKind::Exponential => TopologySpec::Exponential { n: self.nodes },
            TopologyKind::Complete => TopologySpec::Complete { n: self.nodes },
            TopologyKind::Custom => {
                let path = self.graph_file.as_ref().ok_or_else(|| ConfigError::Missing("graph_file".into()))?;
                TopologySpec::Custom {
                    graph: super::read_graph(path)?,
                }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    SteppedDecay,
    Coupled,
    HorizonOptimal,
}

impl ScheduleKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::SteppedDecay => "stepped_decay",
            Self::Coupled => "coupled",
            Self::HorizonOptimal => "horizon_optimal",
        }
    }
}

impl FromStr for ScheduleKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "constant" => Self::Constant,
            "stepped_decay" => Self::SteppedDecay,
            "coupled" => Self::Coupled,
            "horizon_optimal" => Self::HorizonOptimal,
            _ => {
                return Err(format!(
                    "unknown schedule `{s}`; valid: constant, stepped_decay, coupled, horizon_optimal"
                ))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub eta: f64,
    pub algo_eta: BTreeMap<String, f64>,
    pub lambda: f64,
    pub decay_factor: f64,
    pub decay_period: usize,
    pub coupling_c: f64,
    pub c_eta: f64,
    pub c_lambda: f64,
    pub batch: usize,
    pub horizon: usize,
}

impl ScheduleConfig {
    /// Step size for `algo`, honouring `algo_eta` overrides.
    pub fn eta_for(&self, algo: Algorithm) -> f64 {
        self.algo_eta.get(algo.id()).copied().unwrap_or(self.eta)
    }

    pub fn hyper(&self, algo: Algorithm, n: usize) -> HyperParams {
        let eta = self.eta_for(algo);
        let schedule = match self.kind {
            ScheduleKind::Constant => StepSchedule::Constant { eta },
            ScheduleKind::SteppedDecay => StepSchedule::SteppedDecay {
                eta0: eta,
                factor: self.decay_factor,
                period: self.decay_period,
            },
            ScheduleKind::Coupled => StepSchedule::TheoryCoupled {
                c: self.coupling_c,
                lambda: self.lambda,
            },
            ScheduleKind::HorizonOptimal => StepSchedule::HorizonOptimal {
                n,
                horizon: self.horizon,
                c_eta: self.c_eta,
                c_lambda: self.c_lambda,
            },
        };
        HyperParams {
            schedule,
            lambda: self.lambda,
            batch: self.batch,
            horizon: self.horizon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleChoice {
    Logistic,
    Quadratic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub kind: OracleChoice,
    pub data_path: Option<PathBuf>,
    pub dim: usize,
    pub alpha: f64,
    pub synth_samples: usize,
    pub data_seed: u64,
    pub partition_seed: u64,
    pub quad_dim: usize,
    pub sigma: f64,
    pub quad_seed: u64,
    pub curvature_min: f64,
    pub curvature_max: f64,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepConfig {
    pub algos: Vec<Algorithm>,
    pub lambdas: Vec<f64>,
    pub etas: Vec<f64>,
    pub coupling_cs: Vec<f64>,
}

impl SweepConfig {
    pub fn is_empty(&self) -> bool {
        self.algos.is_empty() && self.lambdas.is_empty() && self.etas.is_empty() && self.coupling_cs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub topology: TopologyConfig,
    pub algo: Algorithm,
    pub schedule: ScheduleConfig,
    pub oracle: OracleConfig,
    pub seeds: Vec<u64>,
    pub record_every: usize,
    pub output: Option<PathBuf>,
    pub workers: usize,
    pub tail_fraction: f64,
    pub sweep: SweepConfig,
}

const KEYS: [&str; 44] = [
    "topology",
    "nodes",
    "sub_rings",
    "root",
    "graph_file",
    "pull_graph_file",
    "push_graph_file",
    "graph_mode",
    "algo",
    "stpp_init",
    "csgdm_momentum",
    "schedule",
    "eta",
    "algo_eta",
    "lambda",
    "decay_factor",
    "decay_period",
    "coupling_c",
    "c_eta",
    "c_lambda",
    "batch",
    "horizon",
    "oracle",
    "data_path",
    "dim",
    "alpha",
    "synth_samples",
    "data_seed",
    "partition_seed",
    "quad_dim",
    "sigma",
    "quad_seed",
    "curvature_min",
    "curvature_max",
    "spread",
    "seeds",
    "record_every",
    "output",
    "workers",
    "tail_fraction",
    "sweep_algo",
    "sweep_lambda",
    "sweep_eta",
    "sweep_coupling_c",
];

fn is_known(key: &str) -> bool {
    KEYS.contains(&key)
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                msg: format!("expected `key = value`, got `{content}`"),
            })?;
            let key = key.trim();
            if !is_known(key) {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                });
            }
            if map.insert(key.to_string(), (line, value.trim().to_string())).is_some() {
                return Err(ConfigError::DuplicateKey {
                    line,
                    key: key.to_string(),
                });
            }
        }
        Ok(Self { map })
    }

    fn err(&self, key: &str, msg: impl Into<String>) -> ConfigError {
        ConfigError::Value {
            key: key.to_string(),
            line: self.map.get(key).map(|(l, _)| *l),
            msg: msg.into(),
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|(_, v)| v.as_str())
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| self.err(key, format!("cannot parse `{v}`: {e}"))),
        }
    }

    fn required<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key).ok_or_else(|| ConfigError::Missing(key.to_string()))?;
        v.parse().map_err(|e| self.err(key, format!("cannot parse `{v}`: {e}")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.raw(key) else { return Ok(None) };
        let items: Vec<&str> = v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if items.is_empty() {
            return Err(self.err(key, "empty list"));
        }
        items
            .into_iter()
            .map(|s| s.parse().map_err(|e| self.err(key, format!("cannot parse `{s}`: {e}"))))
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
    }

    fn path(&self, key: &str, base: &Path) -> Option<PathBuf> {
        self.raw(key).map(|v| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        })
    }
}

fn parse_algorithm(s: &str, init: TrackerInit, momentum: MomentumRule) -> Result<Algorithm, String> {
    Ok(match Algorithm::from_id(s) {
        Some(Algorithm::Stpp { .. }) => Algorithm::Stpp { init },
        Some(Algorithm::Csgdm { .. }) => Algorithm::Csgdm { momentum },
        Some(a) => a,
        None => {
            return Err(format!(
                "unknown algorithm `{s}`; valid: {}",
                Algorithm::NAMES.join(", ")
            ))
        }
    })
}

fn check(entries: &Entries, key: &str, ok: bool, msg: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(entries.err(key, msg))
    }
}

impl RunConfig {
    /// Parses config text. Relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let e = Entries::parse(text)?;

        let kind: TopologyKind = e.get("topology", TopologyKind::MultiSubRing)?;
        let graph_file = e.path("graph_file", base);
        if kind == TopologyKind::Custom && graph_file.is_none() {
            return Err(ConfigError::Missing("graph_file".into()));
        }
        let topology = TopologyConfig {
            kind,
            nodes: e.get("nodes", 20)?,
            sub_rings: e.get("sub_rings", 4)?,
            root: e.get("root", 0)?,
            graph_file,
            pull_graph_file: e.path("pull_graph_file", base),
            push_graph_file: e.path("push_graph_file", base),
            mode: e.get("graph_mode", GraphMode::SpanningTrees)?,
        };
        check(&e, "nodes", topology.nodes >= 1, "must be >= 1")?;
        check(&e, "sub_rings", topology.sub_rings >= 1, "must be >= 1")?;
        if topology.pull_graph_file.is_some() != topology.push_graph_file.is_some() {
            return Err(e.err(
                "pull_graph_file",
                "pull_graph_file and push_graph_file must be given together",
            ));
        }

        let init = match e.raw("stpp_init").unwrap_or("zero") {
            "zero" => TrackerInit::Zero,
            "gradient" => TrackerInit::Gradient,
            other => return Err(e.err("stpp_init", format!("unknown value `{other}`; valid: zero, gradient"))),
        };
        let momentum = match e.raw("csgdm_momentum").unwrap_or("ema") {
            "ema" => MomentumRule::Ema,
            "heavy_ball" => MomentumRule::HeavyBall,
            other => {
                return Err(e.err(
                    "csgdm_momentum",
                    format!("unknown value `{other}`; valid: ema, heavy_ball"),
                ))
            }
        };
        let algo = parse_algorithm(e.raw("algo").unwrap_or("smtpp"), init, momentum).map_err(|m| e.err("algo", m))?;

        let mut algo_eta = BTreeMap::new();
        if let Some(v) = e.raw("algo_eta") {
            for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let (name, val) = item
                    .split_once(':')
                    .ok_or_else(|| e.err("algo_eta", format!("expected `algo:eta`, got `{item}`")))?;
                let name = name.trim();
                if Algorithm::from_id(name).is_none() {
                    return Err(e.err(
                        "algo_eta",
                        format!("unknown algorithm `{name}`; valid: {}", Algorithm::NAMES.join(", ")),
                    ));
                }
                let val: f64 = val
                    .trim()
                    .parse()
                    .map_err(|err| e.err("algo_eta", format!("cannot parse `{val}`: {err}")))?;
                check(&e, "algo_eta", val > 0.0 && val.is_finite(), "step sizes must be positive")?;
                algo_eta.insert(name.to_string(), val);
            }
        }

        let schedule = ScheduleConfig {
            kind: e.get("schedule", ScheduleKind::Constant)?,
            eta: e.get("eta", 0.1)?,
            algo_eta,
            lambda: e.get("lambda", 0.1)?,
            decay_factor: e.get("decay_factor", 0.1)?,
            decay_period: e.get("decay_period", 300)?,
            coupling_c: e.get("coupling_c", 10.0)?,
            c_eta: e.get("c_eta", 1.0)?,
            c_lambda: e.get("c_lambda", 1.0)?,
            batch: e.get("batch", 1)?,
            horizon: e.required("horizon")?,
        };
        check(&e, "eta", schedule.eta > 0.0 && schedule.eta.is_finite(), "must be positive")?;
        check(
            &e,
            "lambda",
            schedule.lambda > 0.0 && schedule.lambda <= 1.0,
            "momentum coefficient must lie in (0, 1]",
        )?;
        check(
            &e,
            "decay_factor",
            schedule.decay_factor > 0.0 && schedule.decay_factor < 1.0,
            "must lie in (0, 1)",
        )?;
        check(&e, "decay_period", schedule.decay_period >= 1, "must be >= 1")?;
        check(&e, "coupling_c", schedule.coupling_c > 0.0, "must be positive")?;
        check(&e, "c_eta", schedule.c_eta > 0.0, "must be positive")?;
        check(&e, "c_lambda", schedule.c_lambda > 0.0, "must be positive")?;
        check(&e, "batch", schedule.batch >= 1, "must be >= 1")?;

        let oracle = OracleConfig {
            kind: match e.raw("oracle").unwrap_or("logistic") {
                "logistic" => OracleChoice::Logistic,
                "quadratic" => OracleChoice::Quadratic,
                other => {
                    return Err(e.err("oracle", format!("unknown oracle `{other}`; valid: logistic, quadratic")))
                }
            },
            data_path: e.path("data_path", base),
            dim: e.get("dim", 123)?,
            alpha: e.get("alpha", 0.01)?,
            synth_samples: e.get("synth_samples", 32561)?,
            data_seed: e.get("data_seed", 0)?,
            partition_seed: e.get("partition_seed", 0)?,
            quad_dim: e.get("quad_dim", 10)?,
            sigma: e.get("sigma", 1.0)?,
            quad_seed: e.get("quad_seed", 0)?,
            curvature_min: e.get("curvature_min", 0.5)?,
            curvature_max: e.get("curvature_max", 1.5)?,
            spread: e.get("spread", 1.0)?,
        };
        check(&e, "dim", oracle.dim >= 1, "must be >= 1")?;
        check(&e, "alpha", oracle.alpha >= 0.0, "must be non-negative")?;
        check(&e, "quad_dim", oracle.quad_dim >= 1, "must be >= 1")?;
        check(&e, "sigma", oracle.sigma >= 0.0 && oracle.sigma.is_finite(), "must be non-negative")?;
        check(
            &e,
            "curvature_min",
            oracle.curvature_min > 0.0 && oracle.curvature_min <= oracle.curvature_max,
            "need 0 < curvature_min <= curvature_max",
        )?;
        if let Some(p) = &oracle.data_path {
            check(&e, "data_path", p.exists(), &format!("{} does not exist", p.display()))?;
        }
        for key in ["graph_file", "pull_graph_file", "push_graph_file"] {
            if let Some(p) = e.path(key, base) {
                check(&e, key, p.exists(), &format!("{} does not exist", p.display()))?;
            }
        }

        let seeds = e.list("seeds")?.unwrap_or_else(|| vec![1, 2, 3, 4, 5]);
        let record_every = e.get("record_every", 1)?;
        check(&e, "record_every", record_every >= 1, "must be >= 1")?;
        let workers = e.get("workers", 1)?;
        check(&e, "workers", workers >= 1, "must be >= 1")?;
        let tail_fraction: f64 = e.get("tail_fraction", 0.2)?;
        check(
            &e,
            "tail_fraction",
            tail_fraction > 0.0 && tail_fraction <= 1.0,
            "must lie in (0, 1]",
        )?;

        let sweep_algos = match e.raw("sweep_algo") {
            None => vec![],
            Some(_) => e
                .list::<String>("sweep_algo")?
                .unwrap_or_default()
                .iter()
                .map(|s| parse_algorithm(s, init, momentum))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|m| e.err("sweep_algo", m))?,
        };
        let sweep = SweepConfig {
            algos: sweep_algos,
            lambdas: e.list("sweep_lambda")?.unwrap_or_default(),
            etas: e.list("sweep_eta")?.unwrap_or_default(),
            coupling_cs: e.list("sweep_coupling_c")?.unwrap_or_default(),
        };
        check(
            &e,
            "sweep_lambda",
            sweep.lambdas.iter().all(|&l| l > 0.0 && l <= 1.0),
            "momentum coefficient must lie in (0, 1]",
        )?;
        check(&e, "sweep_eta", sweep.etas.iter().all(|&v| v > 0.0), "must be positive")?;
        check(
            &e,
            "sweep_coupling_c",
            sweep.coupling_cs.iter().all(|&v| v > 0.0),
            "must be positive",
        )?;

        Ok(Self {
            topology,
            algo,
            schedule,
            oracle,
            seeds,
            record_every,
            output: e.path("output", base),
            workers,
            tail_fraction,
            sweep,
        })
    }

    /// Canonical text form listing every key; `parse(echo())` reproduces `self`.
    pub fn echo(&self) -> String {
        fn list<T: std::fmt::Display>(v: &[T]) -> String {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        }
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let t = &self.topology;
        kv("topology", t.kind.name().into());
        kv("nodes", t.nodes.to_string());
        kv("sub_rings", t.sub_rings.to_string());
        kv("root", t.root.to_string());
        for (key, p) in [
            ("graph_file", &t.graph_file),
            ("pull_graph_file", &t.pull_graph_file),
            ("push_graph_file", &t.push_graph_file),
        ] {
            if let Some(p) = p {
                kv(key, p.display().to_string());
            }
        }
        kv("graph_mode", t.mode.name().into());
        kv("algo", self.algo.id().into());
        let (init, momentum) = match self.algo {
            Algorithm::Stpp { init } => (init, MomentumRule::Ema),
            Algorithm::Csgdm { momentum } => (TrackerInit::Zero, momentum),
            _ => (
                self.sweep
                    .algos
                    .iter()
                    .find_map(|a| match a {
                        Algorithm::Stpp { init } => Some(*init),
                        _ => None,
                    })
                    .unwrap_or_default(),
                self.sweep
                    .algos
                    .iter()
                    .find_map(|a| match a {
                        Algorithm::Csgdm { momentum } => Some(*momentum),
                        _ => None,
                    })
                    .unwrap_or_default(),
            ),
        };
        kv(
            "stpp_init",
            match init {
                TrackerInit::Zero => "zero",
                TrackerInit::Gradient => "gradient",
            }
            .into(),
        );
        kv(
            "csgdm_momentum",
            match momentum {
                MomentumRule::Ema => "ema",
                MomentumRule::HeavyBall => "heavy_ball",
            }
            .into(),
        );
        let h = &self.schedule;
        kv("schedule", h.kind.name().into());
        kv("eta", h.eta.to_string());
        if !h.algo_eta.is_empty() {
            kv(
                "algo_eta",
                h.algo_eta
                    .iter()
                    .map(|(k, v)| format!("{k}:{v}"))
                    .collect::<Vec<_>>()
                    .join(","),
            );
        }
        kv("lambda", h.lambda.to_string());
        kv("decay_factor", h.decay_factor.to_string());
        kv("decay_period", h.decay_period.to_string());
        kv("coupling_c", h.coupling_c.to_string());
        kv("c_eta", h.c_eta.to_string());
        kv("c_lambda", h.c_lambda.to_string());
        kv("batch", h.batch.to_string());
        kv("horizon", h.horizon.to_string());
        let o = &self.oracle;
        kv(
            "oracle",
            match o.kind {
                OracleChoice::Logistic => "logistic",
                OracleChoice::Quadratic => "quadratic",
            }
            .into(),
        );
        if let Some(p) = &o.data_path {
            kv("data_path", p.display().to_string());
        }
        kv("dim", o.dim.to_string());
        kv("alpha", o.alpha.to_string());
        kv("synth_samples", o.synth_samples.to_string());
        kv("data_seed", o.data_seed.to_string());
        kv("partition_seed", o.partition_seed.to_string());
        kv("quad_dim", o.quad_dim.to_string());
        kv("sigma", o.sigma.to_string());
        kv("quad_seed", o.quad_seed.to_string());
        kv("curvature_min", o.curvature_min.to_string());
        kv("curvature_max", o.curvature_max.to_string());
        kv("spread", o.spread.to_string());
        kv("seeds", list(&self.seeds));
        kv("record_every", self.record_every.to_string());
        if let Some(p) = &self.output {
            kv("output", p.display().to_string());
        }
        kv("workers", self.workers.to_string());
        kv("tail_fraction", self.tail_fraction.to_string());
        let sw = &self.sweep;
        if !sw.algos.is_empty() {
            kv("sweep_algo", sw.algos.iter().map(|a| a.id()).collect::<Vec<_>>().join(","));
        }
        if !sw.lambdas.is_empty() {
            kv("sweep_lambda", list(&sw.lambdas));
        }
        if !sw.etas.is_empty() {
            kv("sweep_eta", list(&sw.etas));
        }
        if !sw.coupling_cs.is_empty() {
            kv("sweep_coupling_c", list(&sw.coupling_cs));
        }
        s
    }
}

/// Reads and parses a config file; relative paths inside resolve against
/// the file's directory.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    RunConfig::parse(&text, base)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::parse(text, Path::new("/"))
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse("topology = multi_sub_ring\nalgo = smtpp\noracle = logistic\nhorizon = 100\n").unwrap();
        assert_eq!(c.schedule.eta, 0.1);
        assert_eq!(c.schedule.lambda, 0.1);
        assert_eq!(c.schedule.batch, 1);
        assert_eq!(c.record_every, 1);
        assert_eq!(c.seeds, vec![1, 2, 3, 4, 5]);
        assert_eq!(c.tail_fraction, 0.2);
        assert_eq!(c.topology.mode, GraphMode::SpanningTrees);
    }

    #[test]
    fn range_and_value_errors() {
        let err = parse("horizon = 10\nlambda = 1.5\n").unwrap_err();
        assert!(matches!(&err, ConfigError::Value { key, line: Some(2), .. } if key == "lambda"), "{err}");

        let err = parse("algo = smptp\nhorizon = 1").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1") && msg.contains("push_diging") && msg.contains("smtpp"), "{msg}");

        let err = parse("horizon = 1\nfoo = 3\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::UnknownKey {
                line: 2,
                key: "foo".into()
            }
        );

        assert_eq!(parse("eta = 0.1").unwrap_err(), ConfigError::Missing("horizon".into()));
        assert!(matches!(parse("horizon = ten").unwrap_err(), ConfigError::Value { .. }));
        assert!(matches!(parse("horizon = 1\nseeds = ").unwrap_err(), ConfigError::Value { .. }));
        assert!(matches!(parse("horizon = 1\nsweep_lambda = ,").unwrap_err(), ConfigError::Value { .. }));
        assert!(matches!(
            parse("horizon = 1\nhorizon = 2").unwrap_err(),
            ConfigError::DuplicateKey { line: 2, .. }
        ));
        assert!(matches!(parse("horizon").unwrap_err(), ConfigError::Syntax { line: 1, .. }));
        assert!(matches!(
            parse("horizon = 1\ndata_path = /definitely/not/here.libsvm").unwrap_err(),
            ConfigError::Value { .. }
        ));
    }

    #[test]
    fn comments_and_overrides() {
        let c = parse(
            "# reference settings\nhorizon = 900 # iterations\nschedule = stepped_decay\nalgo_eta = sgp:0.2, stpp:0.2\nsweep_algo = smtpp,stpp,sgp\nstpp_init = gradient\n",
        )
        .unwrap();
        assert_eq!(c.schedule.horizon, 900);
        assert_eq!(c.schedule.eta_for(Algorithm::Sgp), 0.2);
        assert_eq!(c.schedule.eta_for(Algorithm::Smtpp), 0.1);
        assert_eq!(
            c.sweep.algos[1],
            Algorithm::Stpp {
                init: TrackerInit::Gradient
            }
        );
    }

    #[test]
    fn echo_round_trips() {
        let texts = [
            "horizon = 5",
            "horizon = 7\ntopology = ring\nnodes = 6\ngraph_mode = full\nalgo = csgdm\ncsgdm_momentum = heavy_ball\nseeds = 3\noracle = quadratic\nsigma = 0.25\nsweep_lambda = 0.05,0.1\nschedule = coupled\ncoupling_c = 12.5\noutput = out\n",
            "horizon = 9\nalgo_eta = sgp:0.2,push_diging:0.2\nsweep_algo = smtpp,stpp,sgp,push_diging\nstpp_init = gradient\ntail_fraction = 0.3\nlambda = 0.123456789012345678",
        ];
        for text in texts {
            let a = parse(text).unwrap();
            let echo = a.echo();
            let b = parse(&echo).unwrap();
            assert_eq!(a, b, "{echo}");
            assert_eq!(echo, b.echo());
        }
    }
}
