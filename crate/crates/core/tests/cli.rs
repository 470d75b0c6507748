use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use smtpp::harness::{load_config, run_experiment, run_sweep, RunConfig};
use smtpp::metrics::MetricsTrace;
use smtpp::oracles::parse_libsvm;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_smtpp"))
}

fn run_bin(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = "topology = multi_sub_ring\nnodes = 20\noracle = logistic\nsynth_samples = 2000\n\
                     dim = 30\nhorizon = 40\n";

fn csv_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    names
}

#[test]
fn gen_data_is_parseable_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.libsvm");
    let b = dir.path().join("b.libsvm");
    for p in [&a, &b] {
        let out = run_bin(&["gen-data", "--samples", "100", "--dim", "10", "--seed", "7", "--out", p.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 100);
    let data = parse_libsvm(text.as_bytes(), 10).unwrap();
    assert!(data.samples.iter().all(|s| s.label == 1.0 || s.label == -1.0));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn check_graph_reports_and_exit_codes() {
    let out = run_bin(&["check-graph", "--topology", "exponential", "--nodes", "20"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("PASS") && text.contains("rho_C") && text.contains("c_pi"), "{text}");

    let out = run_bin(&["check-graph", "--topology", "ring", "--nodes", "1"]);
    assert_eq!(out.status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let g = write_config(dir.path(), "g.txt", "n 4\n0 1\n1 0\n2 3\n3 2\n");
    let out = run_bin(&["check-graph", "--topology", "custom", "--graph-file", g.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("no common spanning-tree root"));

    let cfg = write_config(dir.path(), "c.cfg", "horizon = 1\ntopology = ring\nnodes = 7\n");
    let out = run_bin(&["check-graph", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("n = 7"));
}

#[test]
fn run_writes_six_csvs_and_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.cfg", SMALL);
    let (o1, o2) = (dir.path().join("o1"), dir.path().join("o2"));
    let out = run_bin(&["run", "--config", cfg.to_str().unwrap(), "--out", o1.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run_bin(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        o2.to_str().unwrap(),
        "--workers",
        "3",
    ]);
    assert!(out.status.success());
    let names = csv_files(&o1);
    assert_eq!(names.len(), 6);
    assert!(names.contains(&"aggregate.csv".to_string()));
    for n in &names {
        assert_eq!(fs::read(o1.join(n)).unwrap(), fs::read(o2.join(n)).unwrap(), "{n}");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(o1.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["algo"], "smtpp");
    assert_eq!(summary["final_k"], 40);
    assert!(summary["final_grad_norm_sq_mean"].as_f64().unwrap() > 0.0);
    assert!(summary["mixing"]["c_pi"].as_f64().unwrap() > 0.0);
}

#[test]
fn csv_round_trips_to_in_memory_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), "run.cfg", &format!("{SMALL}seeds = 3,4\nrecord_every = 7\n"));
    let cfg = load_config(&cfg_path).unwrap();
    let result = run_experiment(&cfg).unwrap();
    result.write(&dir.path().join("out")).unwrap();
    for t in &result.cell.traces {
        let text = fs::read_to_string(dir.path().join("out").join(format!("seed_{}.csv", t.seed))).unwrap();
        let back = MetricsTrace::from_csv(&text, &t.algo, &t.config_digest, t.seed).unwrap();
        assert_eq!(&back, t);
        let ks: Vec<usize> = back.records.iter().map(|r| r.k).collect();
        assert_eq!(ks, vec![0, 7, 14, 21, 28, 35, 40]);
    }
}

#[test]
fn horizon_zero_has_single_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.cfg", &SMALL.replace("horizon = 40", "horizon = 0"));
    let out_dir = dir.path().join("o");
    let out = run_bin(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    for n in csv_files(&out_dir) {
        assert_eq!(fs::read_to_string(out_dir.join(&n)).unwrap().lines().count(), 2, "{n}");
    }
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("o");
    for (body, needle) in [
        ("horizon = 10\nlambda = 1.5\n", "lambda"),
        ("horizon = 10\nalgo = smptp\n", "push_diging"),
        ("horizon = 10\nbogus = 1\n", "bogus"),
        ("eta = 0.1\n", "horizon"),
    ] {
        let cfg = write_config(dir.path(), "bad.cfg", body);
        let out = run_bin(&["run", "--config", cfg.to_str().unwrap(), "--out", o.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "{body}");
        assert!(String::from_utf8_lossy(&out.stderr).contains(needle), "{body}");
    }
    assert!(!o.exists());
}

#[test]
fn divergence_exits_with_code_four_and_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let body = "topology = ring\nnodes = 5\ngraph_mode = full\noracle = quadratic\nquad_dim = 3\n\
                eta = 1000\nhorizon = 5000\nseeds = 1,2\n";
    let cfg = write_config(dir.path(), "div.cfg", body);
    let o = dir.path().join("o");
    let out = run_bin(&["run", "--config", cfg.to_str().unwrap(), "--out", o.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("seed") && err.contains("iteration"), "{err}");
    assert!(!o.exists() || fs::read_dir(&o).unwrap().next().is_none());
}

#[test]
fn singleton_sweep_matches_run() {
    let base = RunConfig::parse(&format!("{SMALL}seeds = 1,2\n"), Path::new("/")).unwrap();
    let mut sweep = base.clone();
    sweep.sweep.lambdas = vec![0.1];
    sweep.sweep.etas = vec![0.1];
    let single = run_experiment(&base).unwrap();
    let grid = run_sweep(&sweep).unwrap();
    assert_eq!(grid.cells.len(), 1);
    for (a, b) in single.cell.traces.iter().zip(&grid.cells[0].cell.traces) {
        assert_eq!(a.to_csv(), b.to_csv());
    }
}

#[test]
fn sweep_cli_writes_comparison_table() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{SMALL}seeds = 1\nsweep_algo = smtpp,sgp\n");
    let cfg = write_config(dir.path(), "sw.cfg", &body);
    let o = dir.path().join("o");
    let out = run_bin(&["sweep", "--config", cfg.to_str().unwrap(), "--out", o.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(o.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].contains(",smtpp,") && rows[2].contains(",sgp,"));
    assert!(o.join("cell_1").join("seed_1.csv").exists());

    let cfg = write_config(dir.path(), "empty.cfg", SMALL);
    let out = run_bin(&["sweep", "--config", cfg.to_str().unwrap(), "--out", o.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_configs_parse_and_round_trip() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let again = RunConfig::parse(&cfg.echo(), Path::new("/")).unwrap();
        assert_eq!(cfg, again);
        seen += 1;
    }
    assert!(seen >= 3);
}
