use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const QUADRATIC: &str = r#"
[population.quadratic]
dim = 4
clients = 6
gamma = 0.5

[schedule]
k_bar = 3

[run]
cycle_epochs = 8
clients_per_round = 1
eta = 0.05
seed = 4
"#;

fn cycfed(args: &[&str], out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cycfed"));
    cmd.args(args).env_remove("CYCFED_OUT");
    if let Some(dir) = out {
        cmd.arg("--out").arg(dir);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &TempDir, text: &str) -> PathBuf {
    let path = dir.path().join("config.in.toml");
    fs::write(&path, text).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Rows of a CSV file, asserting a header and equal field counts.
fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_path(path).unwrap();
    let width = reader.headers().unwrap().len();
    reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            assert_eq!(r.len(), width);
            r.iter().map(str::to_string).collect()
        })
        .collect()
}

#[test]
fn run_writes_one_row_per_round() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, QUADRATIC);
    let out = dir.path().join("out");
    let o = cycfed(&["run", "--config", config.to_str().unwrap()], Some(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(csv_rows(&out.join("runlog.csv")).len(), 24);
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("final_loss_gap:"));
    assert!(summary.contains("warnings: none"));
}

#[test]
fn theorem_step_below_bound_is_flagged() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, &QUADRATIC.replace("eta = 0.05", "eta = \"theorem\""));
    let out = dir.path().join("out");
    let o = cycfed(&["run", "--config", config.to_str().unwrap()], Some(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("below_theorem_bound"), "{summary}");
    assert!(!summary.contains("eta_theorem: none"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, QUADRATIC);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        assert!(cycfed(&["run", "--config", config.to_str().unwrap()], Some(out)).status.success());
    }
    assert_eq!(fs::read(a.join("runlog.csv")).unwrap(), fs::read(b.join("runlog.csv")).unwrap());
    let c = dir.path().join("c");
    let o = cycfed(&["--seed", "99", "run", "--config", config.to_str().unwrap()], Some(&c));
    assert!(o.status.success());
    assert_ne!(fs::read(a.join("runlog.csv")).unwrap(), fs::read(c.join("runlog.csv")).unwrap());
}

#[test]
fn sweep_aggregates_over_seeds() {
    let dir = TempDir::new().unwrap();
    let base = QUADRATIC.replace("clients = 6", "clients = 12");
    let text = format!("{base}\n[sweep]\nk_bar = [1, 2, 3, 6]\nseeds = [0, 1, 2]\n");
    let config = write_config(&dir, &text);
    let out = dir.path().join("out");
    let o = cycfed(&["--jobs", "2", "sweep", "--config", config.to_str().unwrap()], Some(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("12 of 12 cells"));
    assert_eq!(fs::read_dir(out.join("cells")).unwrap().count(), 12);
    let cells = csv_rows(&out.join("cells.csv"));
    assert_eq!(cells.len(), 12);
    let sweep = csv_rows(&out.join("sweep.csv"));
    assert_eq!(sweep.len(), 4);
    for row in &sweep {
        assert_eq!(row[2], "3");
        let k_bar = &row[0];
        let gaps: Vec<f64> = cells
            .iter()
            .filter(|c| &c[0] == k_bar)
            .map(|c| c[4].parse().unwrap())
            .collect();
        let mean: f64 = row[4].parse().unwrap();
        assert!((mean - gaps.iter().sum::<f64>() / 3.0).abs() <= 1e-12 * mean.abs().max(1.0));
        let min: f64 = row[5].parse().unwrap();
        let max: f64 = row[6].parse().unwrap();
        assert!(min <= mean && mean <= max);
    }
}

#[test]
fn sweep_without_lists_behaves_as_run() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, QUADRATIC);
    let out = dir.path().join("out");
    let o = cycfed(&["sweep", "--config", config.to_str().unwrap()], Some(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("runlog.csv").exists());
    assert!(!out.join("sweep.csv").exists());
}

#[test]
fn output_dir_falls_back_to_environment() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, QUADRATIC);
    let out = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_cycfed"))
        .args(["run", "--config", config.to_str().unwrap()])
        .env("CYCFED_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("summary.txt").exists());
}

#[test]
fn config_errors_exit_one_with_field() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, &QUADRATIC.replace("gamma = 0.5", "gamma = 0.5\nbeta = 1.0"));
    let o = cycfed(&["run", "--config", config.to_str().unwrap()], Some(dir.path()));
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("beta") && err.contains("line"), "{err}");

    let config = write_config(&dir, &QUADRATIC.replace("k_bar = 3", "k_bar = 4"));
    let o = cycfed(&["run", "--config", config.to_str().unwrap()], Some(dir.path()));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("schedule.k_bar"));
}

#[test]
fn divergence_exits_two() {
    let dir = TempDir::new().unwrap();
    let text = QUADRATIC.replace("eta = 0.05", "eta = 10.0").replace("cycle_epochs = 8", "cycle_epochs = 50");
    let config = write_config(&dir, &text);
    let o = cycfed(&["run", "--config", config.to_str().unwrap()], Some(&dir.path().join("out")));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn verify_exit_codes_follow_results() {
    let o = cycfed(&["verify", "wor"], None);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).matches("PASS").count(), 4);
    let o = cycfed(&["verify", "reductions"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    // the partial-cycle GD ordering fails on part of its grid
    let o = cycfed(&["verify", "costs"], None);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("FAIL GD cost with 1 < K̄ < M/N"));
    assert_eq!(cycfed(&["verify", "nonsense"], None).status.code(), Some(1));
}

#[test]
fn cost_reports_and_verdicts() {
    let o = cycfed(&["cost", "-M", "12", "-N", "2", "--k-bar", "6", "--gamma", "1"], None);
    assert!(o.status.success());
    assert!(stdout(&o).contains("C_GD(K̄=6) = 0\n"));

    let args = [
        "cost", "-M", "3", "-N", "2", "--alpha", "0.2", "--gamma", "0.5", "--nu-bar", "0.4", "--components", "4",
    ];
    let o = cycfed(&args, None);
    assert!(o.status.success());
    assert!(stdout(&o).contains("SSGD beats LocalRR: true"));

    let o = cycfed(&["cost", "-M", "12", "-N", "2", "--partial-cycle-grid"], None);
    assert!(stdout(&o).contains("holds: false (199 of 841 points violate)"));

    let o = cycfed(&["cost", "-M", "12", "-N", "2", "--csv"], None);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());

    assert_eq!(cycfed(&["cost", "-M", "12", "-N", "2", "--k-bar", "5"], None).status.code(), Some(1));
    assert_eq!(cycfed(&["cost", "-M", "2", "-N", "3"], None).status.code(), Some(1));
}
