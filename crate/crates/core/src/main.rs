use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use smtpp::harness::{
    check_graph, gen_data, load_config, run_experiment, run_sweep, GraphMode, HarnessError, RunConfig,
    TopologyConfig, TopologyKind,
};

/// Decentralized stochastic optimization simulator over directed graphs.
#[derive(Parser)]
#[command(name = "smtpp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build graphs and mixing matrices and report spectral diagnostics.
    CheckGraph(CheckGraphArgs),
    /// Run one algorithm for every configured seed.
    Run(RunArgs),
    /// Run the Cartesian grid given by the sweep_* keys.
    Sweep(RunArgs),
    /// Write a synthetic LIBSVM classification dataset.
    GenData(GenDataArgs),
}

#[derive(Args)]
struct CheckGraphArgs {
    /// Config file; its topology keys are used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind)]
    topology: Option<TopologyKind>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    sub_rings: Option<usize>,
    #[arg(long)]
    root: Option<usize>,
    #[arg(long)]
    graph_file: Option<PathBuf>,
    /// spanning_trees or full
    #[arg(long, value_parser = parse_mode)]
    mode: Option<GraphMode>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    record_every: Option<usize>,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 32561)]
    samples: usize,
    #[arg(long, default_value_t = 123)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_kind(s: &str) -> Result<TopologyKind, String> {
    s.parse()
}

fn parse_mode(s: &str) -> Result<GraphMode, String> {
    s.parse()
}

fn config_error(key: &str, msg: &str) -> HarnessError {
    HarnessError::Config(smtpp::harness::ConfigError::Value {
        key: key.into(),
        line: None,
        msg: msg.into(),
    })
}

fn check_graph_cmd(a: CheckGraphArgs) -> Result<bool, HarnessError> {
    let mut t = match &a.config {
        Some(p) => load_config(p)?.topology,
        None => TopologyConfig::default(),
    };
    if let Some(k) = a.topology {
        t.kind = k;
    }
    if let Some(n) = a.nodes {
        t.nodes = n;
    }
    if let Some(s) = a.sub_rings {
        t.sub_rings = s;
    }
    if let Some(r) = a.root {
        t.root = r;
    }
    if let Some(g) = a.graph_file {
        t.graph_file = Some(g);
    }
    if let Some(m) = a.mode {
        t.mode = m;
    }
    if t.nodes == 0 {
        return Err(config_error("nodes", "must be >= 1"));
    }
    let report = check_graph(&t)?;
    print!("{report}");
    Ok(report.passed())
}

fn load_run_config(a: &RunArgs) -> Result<(RunConfig, PathBuf), HarnessError> {
    let mut cfg = load_config(&a.config)?;
    if let Some(w) = a.workers {
        if w == 0 {
            return Err(config_error("workers", "must be >= 1"));
        }
        cfg.workers = w;
    }
    if let Some(r) = a.record_every {
        if r == 0 {
            return Err(config_error("record_every", "must be >= 1"));
        }
        cfg.record_every = r;
    }
    if let Some(o) = &a.out {
        cfg.output = Some(o.clone());
    }
    let out = cfg
        .output
        .clone()
        .ok_or_else(|| config_error("output", "no output directory; set `output` or pass --out"))?;
    Ok((cfg, out))
}

fn run_cmd(a: RunArgs) -> Result<(), HarnessError> {
    let (cfg, out) = load_run_config(&a)?;
    let result = run_experiment(&cfg)?;
    let files = result.write(&out)?;
    let (tail, tail_std) = result.cell.tail_stats(cfg.tail_fraction);
    if let Some(last) = result.cell.aggregate.records.last() {
        println!(
            "{}: k = {}, grad_norm_sq = {:.6e} +/- {:.3e}, tail mean = {:.6e} +/- {:.3e}",
            cfg.algo.id(),
            last.k,
            last.mean[1],
            last.std[1],
            tail,
            tail_std
        );
    }
    println!("wrote {} files to {}", files.len(), out.display());
    Ok(())
}

fn sweep_cmd(a: RunArgs) -> Result<(), HarnessError> {
    let (cfg, out) = load_run_config(&a)?;
    let result = run_sweep(&cfg)?;
    result.write(&out)?;
    print!("{}", result.table());
    println!("wrote {} cells to {}", result.cells.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::CheckGraph(a) => check_graph_cmd(a).map(|ok| if ok { 0 } else { 3 }),
        Command::Run(a) => run_cmd(a).map(|_| 0),
        Command::Sweep(a) => sweep_cmd(a).map(|_| 0),
        Command::GenData(a) => gen_data(a.samples, a.dim, a.seed, &a.out).map(|_| 0),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
