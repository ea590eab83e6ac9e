//! `cycfed`: run, sweep, verify and cost subcommands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use cycfed::analysis::cost::{cost_gd, cost_report, cost_sgd, CostInputs, CostReport};
use cycfed::engine::{run, theoretical_step_size, RunConfig, RunLog};
use cycfed::schedule::CycleSchedule;
use cycfed::verify::{partial_cycle_sweep, run_suite, Suite};
use cycfed::Population;

use config::{Built, Cell, EtaSetting, ExperimentConfig};

#[derive(Parser)]
#[command(name = "cycfed", version, about = "Cyclic client participation simulator")]
struct Cli {
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory; overrides the config's output.dir.
    #[arg(long, global = true, env = "CYCFED_OUT")]
    out: Option<PathBuf>,
    /// Run seed; overrides run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one run and write runlog.csv and summary.txt.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Execute every cell of the sweep grid and write sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a named verification suite.
    Verify {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(Suite::NAMES))]
        suite: String,
    },
    /// Evaluate the cost models and their predicted orderings.
    Cost(CostArgs),
}

#[derive(Args)]
struct CostArgs {
    /// Number of clients M.
    #[arg(long = "clients", short = 'M')]
    clients: usize,
    /// Clients per round N.
    #[arg(long = "per-round", short = 'N')]
    per_round: usize,
    /// Number of groups for the dominant-term costs; must divide M.
    #[arg(long)]
    k_bar: Option<usize>,
    /// Components per client B.
    #[arg(long, default_value_t = 1)]
    components: usize,
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// Defaults to gamma + alpha.
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    nu_bar: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 1)]
    tau: usize,
    #[arg(long, default_value_t = 0.01)]
    eps: f64,
    #[arg(long, default_value_t = 1.0)]
    c_unit: f64,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    /// Also sweep every (M ≤ 60, N ≥ 2, 1 < K̄ < M/N) for the partial-cycle GD ordering.
    #[arg(long)]
    partial_cycle_grid: bool,
    /// Print the report as a CSV header and row.
    #[arg(long)]
    csv: bool,
}

/// Failure classes and their exit codes.
enum Failure {
    Config(anyhow::Error),
    Diverged(anyhow::Error),
    Verify(usize),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Diverged(_) => 2,
            Failure::Verify(_) => 3,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

fn main() -> ExitCode {
    // usage errors are configuration errors; 2 is reserved for divergence
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: --jobs: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Run { config } => cmd_run(&cli, config),
        Command::Sweep { config } => cmd_sweep(&cli, config),
        Command::Verify { suite } => cmd_verify(suite),
        Command::Cost(args) => cmd_cost(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(e) => eprintln!("error: {e:#}"),
                Failure::Diverged(e) => eprintln!("diverged: {e:#}"),
                Failure::Verify(n) => eprintln!("{n} check(s) failed"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn load(cli: &Cli, path: &Path) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("cycfed-out"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), config.to_toml()?).context("writing config.toml")?;
    Ok((config, out))
}

/// Engine failures that come from the divergence guard.
fn classify(e: cycfed::Error) -> Failure {
    match e {
        cycfed::Error::Diverged { .. } => Failure::Diverged(anyhow!(e)),
        other => Failure::Config(anyhow!(other)),
    }
}

/// Resolves the step size and runs one cell.
fn execute(config: &ExperimentConfig, pop: &Built, cell: Cell) -> Result<RunLog, Failure> {
    let dyn_pop = pop.as_dyn();
    let schedule = CycleSchedule::new(dyn_pop.groups().to_vec(), config.schedule.order, cell.seed).map_err(classify)?;
    let n = config.run.clients_per_round;
    let mut warnings = Vec::new();
    let (eta, eta_theorem) = match config.run.eta {
        EtaSetting::Value(eta) => (eta, None),
        EtaSetting::Keyword(_) => {
            let Built::Quadratic(q) = pop else {
                return Err(Failure::Config(anyhow!("run.eta: \"theorem\" needs a quadratic population")));
            };
            let s = theoretical_step_size(
                config.run.mode,
                q.constants(),
                q.num_clients(),
                cell.k_bar,
                n,
                config.run.local_steps,
                config.components(),
                cell.rounds,
            )
            .map_err(classify)?;
            if s.below_bound {
                warnings.push(format!(
                    "below_theorem_bound: T = {} is below the covered horizon {:.1}",
                    cell.rounds, s.min_rounds
                ));
            }
            (s.eta_local, Some(s.eta_theorem))
        }
    };
    let run_config = RunConfig {
        mode: config.run.mode,
        eta,
        cycle_epochs: cell.rounds / cell.k_bar,
        clients_per_round: n,
        local_steps: config.run.local_steps,
        minibatch: config.run.minibatch,
        seed: cell.seed,
        record_iterates: config.output.iterates,
        initial: None,
    };
    let mut log = run(dyn_pop, &schedule, &run_config).map_err(classify)?;
    log.eta_theorem = eta_theorem;
    log.warnings.extend(warnings);
    Ok(log)
}

fn write_runlog(log: &RunLog, path: &Path) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    log.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn write_iterates(log: &RunLog, path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = log.iterates.first().map_or(0, |v| v.len());
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|j| format!("w{j}")));
    w.write_record(&header)?;
    for (t, v) in log.iterates.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(v.iter().map(|x| format!("{x:?}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn summary_text(config: &ExperimentConfig, pop: &Built, cell: Cell, log: &RunLog) -> String {
    let mut s = String::new();
    let last = log.records.last();
    let _ = writeln!(s, "population: {}", pop.kind());
    let _ = writeln!(s, "mode: {}", log.mode);
    let _ = writeln!(s, "clients: {}", config.clients());
    let _ = writeln!(s, "k_bar: {}", cell.k_bar);
    let _ = writeln!(s, "clients_per_round: {}", config.run.clients_per_round);
    let _ = writeln!(s, "rounds: {}", log.rounds());
    let _ = writeln!(s, "seed: {}", cell.seed);
    let _ = writeln!(s, "eta_local: {:?}", log.eta_local);
    match log.eta_theorem {
        Some(e) => {
            let _ = writeln!(s, "eta_theorem: {e:?}");
        }
        None => {
            let _ = writeln!(s, "eta_theorem: none");
        }
    }
    let label = if log.loss_is_gap { "final_loss_gap" } else { "final_loss" };
    let _ = writeln!(s, "initial_{}: {:?}", label.trim_start_matches("final_"), log.initial_loss_gap);
    let _ = writeln!(s, "{label}: {:?}", log.final_loss_gap());
    let _ = writeln!(s, "final_grad_norm: {:?}", last.map_or(f64::NAN, |r| r.grad_norm));
    let _ = writeln!(s, "gradient_evaluations: {}", log.total_evals());
    let _ = writeln!(s, "max_aggregation_discrepancy: {:e}", log.max_aggregation_discrepancy);
    if log.warnings.is_empty() {
        let _ = writeln!(s, "warnings: none");
    } else {
        for w in &log.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
    }
    s
}

fn cmd_run(cli: &Cli, path: &Path) -> Result<(), Failure> {
    let (config, out) = load(cli, path)?;
    let cell = config.base_cell();
    let pop = config.build_population(cell.k_bar)?;
    let log = execute(&config, &pop, cell)?;
    if config.output.runlog {
        write_runlog(&log, &out.join("runlog.csv"))?;
    }
    if config.output.iterates {
        write_iterates(&log, &out.join("iterates.csv"))?;
    }
    let summary = summary_text(&config, &pop, cell, &log);
    fs::write(out.join("summary.txt"), &summary).context("writing summary.txt")?;
    print!("{summary}");
    Ok(())
}

fn cmd_sweep(cli: &Cli, path: &Path) -> Result<(), Failure> {
    let (config, out) = load(cli, path)?;
    if config.sweep.is_empty() {
        return cmd_run(cli, path);
    }
    let cells = config.cells();
    let mut k_bars: Vec<usize> = cells.iter().map(|c| c.k_bar).collect();
    k_bars.dedup();
    let pops: BTreeMap<usize, Built> = k_bars
        .iter()
        .map(|&k| Ok((k, config.build_population(k)?)))
        .collect::<anyhow::Result<_>>()?;
    let cell_dir = out.join("cells");
    fs::create_dir_all(&cell_dir).context("creating cells directory")?;
    let results: Vec<(Cell, Result<f64, String>)> = cells
        .par_iter()
        .map(|&cell| {
            let outcome = execute(&config, &pops[&cell.k_bar], cell)
                .map_err(|f| match f {
                    Failure::Config(e) | Failure::Diverged(e) => format!("{e:#}"),
                    Failure::Verify(_) => unreachable!("runs do not verify"),
                })
                .and_then(|log| {
                    if config.output.runlog {
                        let name = format!("kbar{}_rounds{}_seed{}.csv", cell.k_bar, cell.rounds, cell.seed);
                        write_runlog(&log, &cell_dir.join(name)).map_err(|e| format!("{e:#}"))?;
                    }
                    Ok(log.final_loss_gap())
                });
            (cell, outcome)
        })
        .collect();
    write_sweep(&out, &results)?;
    let ok = results.iter().filter(|(_, r)| r.is_ok()).count();
    println!("{ok} of {} cells succeeded; results in {}", results.len(), out.display());
    if ok == 0 {
        return Err(Failure::Diverged(anyhow!("every sweep cell failed; see cells.csv")));
    }
    Ok(())
}

fn write_sweep(out: &Path, results: &[(Cell, Result<f64, String>)]) -> anyhow::Result<()> {
    let mut cells = csv::Writer::from_path(out.join("cells.csv"))?;
    cells.write_record(["k_bar", "rounds", "seed", "status", "final_loss_gap", "message"])?;
    let mut groups: BTreeMap<(usize, usize), (Vec<f64>, usize)> = BTreeMap::new();
    for (cell, r) in results {
        let entry = groups.entry((cell.k_bar, cell.rounds)).or_default();
        let (status, value, message) = match r {
            Ok(v) => {
                entry.0.push(*v);
                ("ok", format!("{v:?}"), String::new())
            }
            Err(m) => {
                entry.1 += 1;
                ("failed", String::new(), m.clone())
            }
        };
        cells.write_record([
            cell.k_bar.to_string(),
            cell.rounds.to_string(),
            cell.seed.to_string(),
            status.to_string(),
            value,
            message,
        ])?;
    }
    cells.flush()?;
    let mut sweep = csv::Writer::from_path(out.join("sweep.csv"))?;
    sweep.write_record(["k_bar", "rounds", "seeds", "failed", "mean_final_loss_gap", "min_final_loss_gap", "max_final_loss_gap"])?;
    for ((k_bar, rounds), (values, failed)) in &groups {
        let (mean, min, max) = if values.is_empty() {
            (String::new(), String::new(), String::new())
        } else {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (format!("{mean:?}"), format!("{min:?}"), format!("{max:?}"))
        };
        sweep.write_record([
            k_bar.to_string(),
            rounds.to_string(),
            values.len().to_string(),
            failed.to_string(),
            mean,
            min,
            max,
        ])?;
    }
    sweep.flush()?;
    Ok(())
}

fn cmd_verify(suite: &str) -> Result<(), Failure> {
    let suite: Suite = suite.parse().map_err(|e| anyhow!("{e}"))?;
    let checks = run_suite(suite).map_err(|e| anyhow!(e))?;
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    if failed > 0 {
        return Err(Failure::Verify(failed));
    }
    Ok(())
}

fn cmd_cost(a: &CostArgs) -> Result<(), Failure> {
    let m = a.clients;
    let n = a.per_round;
    if n == 0 || n > m {
        return Err(anyhow!("need 1 ≤ N ≤ M, got M = {m}, N = {n}").into());
    }
    if let Some(k) = a.k_bar {
        let gd = cost_gd(a.eps, a.c_unit, m, k, n, a.gamma).map_err(|e| anyhow!("--k-bar: {e}"))?;
        let gd1 = cost_gd(a.eps, a.c_unit, m, 1, n, a.gamma).map_err(|e| anyhow!(e))?;
        let sgd = cost_sgd(a.eps, a.c_unit, m, k, n, a.gamma, a.sigma2, a.tau).map_err(|e| anyhow!(e))?;
        let sgd1 = cost_sgd(a.eps, a.c_unit, m, 1, n, a.gamma, a.sigma2, a.tau).map_err(|e| anyhow!(e))?;
        println!("dominant-term costs at K̄ = {k}");
        println!("  C_GD(K̄={k}) = {gd}");
        println!("  C_GD(K̄=1) = {gd1}");
        println!("  C_SGD(K̄={k}) = {sgd}");
        println!("  C_SGD(K̄=1) = {sgd1}");
    }
    let mut x = CostInputs::new(a.eps, m as f64, n as f64, a.components).with_heterogeneity(a.gamma, a.alpha, a.nu_bar);
    if let Some(nu) = a.nu {
        x.nu = nu;
    }
    x.c_unit = a.c_unit;
    x.sigma2 = a.sigma2;
    x.tau = a.tau;
    x.mu = a.mu;
    x.kappa = a.kappa;
    let report = cost_report(&x).map_err(|e| anyhow!(e))?;
    if a.csv {
        println!("{}", CostReport::csv_header());
        println!("{}", report.csv_row());
    } else {
        print!("{report}");
        let lookup = |label: &str| report.cost(label).unwrap_or(f64::NAN);
        println!("SSGD beats LocalRR: {}", lookup("SSGD@K̄") < lookup("LocalRR"));
        println!("SSGD beats GD: {}", lookup("SSGD@K̄") < lookup("GD@K̄"));
        println!("SGD at K̄ = M/N no worse than K̄ = 1: {}", lookup("SGD@K̄") <= lookup("SGD@1"));
    }
    if a.partial_cycle_grid {
        let (bad, total, boundary_bad) = partial_cycle_sweep().map_err(|e| anyhow!(e))?;
        println!(
            "GD cost with 1 < K̄ < M/N above K̄ = 1 over M ≤ 60 holds: {} ({bad} of {total} points violate)",
            bad == 0
        );
        println!("GD cost vanishes at K̄ = M/N holds: {}", boundary_bad == 0);
    }
    Ok(())
}
