//! Self-configuring verification suites at fixed desk scale.
//!
//! Every check reports what it measured against a threshold; nothing here
//! panics on a failed comparison.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::analysis::cost::{
    cost_gd, cost_local_rr, cost_sgd, cost_ssgd_full_cycle, cost_gd_full_cycle, local_rr_threshold,
    shuffling_condition, CostInputs,
};
use crate::analysis::decomposition::{decompose_cycle, expected_cycle_check};
use crate::analysis::rate::sign_changes_per_cycle;
use crate::analysis::wor::wor_variance_check;
use crate::engine::{run, Mode, RunConfig};
use crate::error::invalid;
use crate::experiments::{
    logistic_final_loss, loss_trajectory, oscillation_spec, LogisticTrack, RateExperiment,
};
use crate::quadratic::{make_population, ClientQuadratic, QuadraticComponent, QuadraticPopulation, QuadraticSpec};
use crate::schedule::{CycleSchedule, OrderMode, RngStream, StreamRng};
use crate::{Matrix, Population, Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Decomposition,
    Wor,
    Reductions,
    Costs,
    Rates,
    /// Logistic-track ordering and within-cycle oscillation.
    Qualitative,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 7] = ["decomposition", "wor", "reductions", "costs", "rates", "qualitative", "all"];
}

impl FromStr for Suite {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "decomposition" => Self::Decomposition,
            "wor" => Self::Wor,
            "reductions" => Self::Reductions,
            "costs" => Self::Costs,
            "rates" => Self::Rates,
            "qualitative" => Self::Qualitative,
            "all" => Self::All,
            other => {
                return Err(invalid(format!(
                    "unknown suite {other:?}, expected one of {}",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    /// Human-readable pass condition on `measured`.
    pub threshold: String,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, measured: f64, threshold: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            measured,
            threshold: threshold.into(),
            detail: String::new(),
        }
    }

    fn detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: measured {:.6e} (need {})", self.name, self.measured, self.threshold)?;
        if !self.detail.is_empty() {
            write!(f, " [{}]", self.detail)?;
        }
        Ok(())
    }
}

pub fn run_suite(suite: Suite) -> Result<Vec<Check>> {
    match suite {
        Suite::Decomposition => decomposition_suite(),
        Suite::Wor => wor_suite(),
        Suite::Reductions => reductions_suite(),
        Suite::Costs => costs_suite(),
        Suite::Rates => rates_suite(),
        Suite::Qualitative => qualitative_suite(),
        Suite::All => {
            let mut all = Vec::new();
            for s in [
                Suite::Decomposition,
                Suite::Wor,
                Suite::Reductions,
                Suite::Costs,
                Suite::Rates,
                Suite::Qualitative,
            ] {
                all.extend(run_suite(s)?);
            }
            Ok(all)
        }
    }
}

fn gaussian_vector(d: usize, rng: &mut StreamRng) -> Vector {
    Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `A Aᵀ / d + shift · I` with Gaussian `A`.
fn random_spd(d: usize, shift: f64, rng: &mut StreamRng) -> Matrix {
    let a = Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    &a * a.transpose() / d as f64 + Matrix::identity(d, d) * shift
}

/// Clients with independent random Hessians and linear terms, grouped in
/// contiguous blocks.
pub fn random_quadratic_population(d: usize, clients: usize, k_bar: usize, seed: u64) -> Result<QuadraticPopulation> {
    if k_bar == 0 || !clients.is_multiple_of(k_bar) {
        return Err(invalid(format!("K̄ = {k_bar} must divide M = {clients}")));
    }
    let mut rng = RngStream::new(seed).rng();
    let mut list = Vec::with_capacity(clients);
    for m in 0..clients {
        let h = random_spd(d, 0.5, &mut rng);
        let b = gaussian_vector(d, &mut rng);
        list.push(ClientQuadratic::new(m, vec![QuadraticComponent::new(h, b, 0.0)?])?);
    }
    let g = clients / k_bar;
    let groups = (0..k_bar).map(|i| (i * g..(i + 1) * g).collect()).collect();
    QuadraticPopulation::from_clients(list, groups)
}

/// Cycle decomposition on 20 random configurations and the exhaustive
/// expectation identity.
pub fn decomposition_suite() -> Result<Vec<Check>> {
    let mut rng = RngStream::new(2024).rng();
    let mut worst: f64 = 0.0;
    let mut worst_case = String::new();
    for case in 0..20u64 {
        let d = [2, 3, 5][rng.random_range(0..3)];
        let m = [6, 12][rng.random_range(0..2)];
        let k = [2, 3][rng.random_range(0..2)];
        let n = rng.random_range(1..=2);
        let pop = random_quadratic_population(d, m, k, 100 + case)?;
        let schedule = CycleSchedule::new(pop.groups().to_vec(), OrderMode::Identity, case)?;
        let mut sel_rng = RngStream::new(case).rng();
        let selected: Vec<Vec<usize>> = (1..=k)
            .map(|i| schedule.select_round_clients(1, i, n, &mut sel_rng))
            .collect::<Result<_>>()?;
        let w0 = gaussian_vector(d, &mut rng) * 2.0;
        let eta_sum = 0.1 / n as f64;
        let rel = decompose_cycle(&pop, &w0, &selected, eta_sum)?.relative_residual();
        if rel >= worst {
            worst = rel;
            worst_case = format!("d={d} M={m} K̄={k} N={n}");
        }
    }
    let mut checks = vec![Check::new("cycle decomposition residual (20 configs)", worst <= 1e-9, worst, "≤ 1e-9 relative")
        .detail(format!("worst case {worst_case}"))];

    let pop = random_quadratic_population(3, 6, 3, 7)?;
    let schedule = CycleSchedule::new(pop.groups().to_vec(), OrderMode::Identity, 0)?;
    let w0 = Vector::from_vec(vec![0.7, -1.1, 0.4]);
    let check = expected_cycle_check(&pop, &schedule, &w0, 1, 0.08)?;
    checks.push(
        Check::new(
            "expectation identity (M=6, K̄=3, N=1)",
            check.max_abs_error <= 1e-10,
            check.max_abs_error,
            "≤ 1e-10 absolute",
        )
        .detail(format!("{} outcomes", check.outcomes)),
    );
    Ok(checks)
}

/// The without-replacement variance lemma on four `(K, N)` pairs.
pub fn wor_suite() -> Result<Vec<Check>> {
    let mut rng = RngStream::new(11).rng();
    let mut checks = Vec::new();
    for (k, n) in [(4, 2), (5, 3), (6, 2), (8, 4)] {
        let xs: Vec<Vector> = (0..k).map(|_| gaussian_vector(3, &mut rng)).collect();
        let c = wor_variance_check(&xs, n)?;
        let rel = c.relative_error();
        checks.push(
            Check::new(format!("WOR variance K={k} N={n}"), rel <= 1e-12, rel, "≤ 1e-12 relative")
                .detail(format!("lhs {:.12e}, rhs {:.12e}, {} subsets", c.lhs, c.rhs, c.subsets)),
        );
    }
    Ok(checks)
}

fn iterates(pop: &dyn Population, schedule: &CycleSchedule, config: &RunConfig) -> Result<Vec<Vector>> {
    let config = RunConfig {
        record_iterates: true,
        ..config.clone()
    };
    Ok(run(pop, schedule, &config)?.iterates)
}

/// Bitwise agreement of SSGD with `B = 1` and full-batch single-step SGD with
/// GD over 50 rounds.
pub fn reductions_suite() -> Result<Vec<Check>> {
    let spec = QuadraticSpec::homogeneous(4, 6, 2, vec![1.0, 2.0, 3.0, 5.0], 3).with_heterogeneity(0.4, 0.3, 0.0);
    let pop = make_population(&spec)?;
    let schedule = CycleSchedule::new(pop.groups().to_vec(), OrderMode::Identity, 0)?;
    let base = RunConfig {
        mode: Mode::Gd,
        eta: 0.05,
        cycle_epochs: 25,
        clients_per_round: 1,
        seed: 5,
        ..RunConfig::default()
    };
    let gd = iterates(&pop, &schedule, &base)?;
    let ssgd = iterates(&pop, &schedule, &RunConfig { mode: Mode::Ssgd, ..base.clone() })?;
    let sgd = iterates(
        &pop,
        &schedule,
        &RunConfig {
            mode: Mode::Sgd,
            local_steps: 1,
            minibatch: None,
            ..base.clone()
        },
    )?;
    let mismatch = |other: &[Vector]| gd.iter().zip(other).filter(|(a, b)| a != b).count() as f64;
    let rounds = gd.len() - 1;
    let ms = mismatch(&ssgd);
    let mg = mismatch(&sgd);
    Ok(vec![
        Check::new("SSGD with B=1 equals GD", ms == 0.0 && ssgd.len() == gd.len(), ms, "0 differing iterates")
            .detail(format!("{rounds} rounds")),
        Check::new("SGD with τ=1, full batch equals GD", mg == 0.0 && sgd.len() == gd.len(), mg, "0 differing iterates")
            .detail(format!("{rounds} rounds")),
    ])
}

/// Loss-gap ratios `gap_{t+1}/gap_t` predicted by the eigen-decomposition of
/// the averaged Hessian for `w_{t+1} − w* = (I − ηH)(w_t − w*)`.
pub fn spectral_gap_ratios(hessian: &Matrix, e0: &Vector, eta: f64, rounds: usize) -> Vec<f64> {
    let eig = hessian.clone().symmetric_eigen();
    let coeffs = eig.eigenvectors.transpose() * e0;
    let gap = |t: i32| -> f64 {
        eig.eigenvalues
            .iter()
            .zip(coeffs.iter())
            .map(|(&l, &c)| l * (1.0 - eta * l).powi(2 * t) * c * c)
            .sum::<f64>()
    };
    (0..rounds as i32).map(|t| gap(t + 1) / gap(t)).collect()
}

/// Full participation in a single group contracts the loss gap by exactly the
/// spectral factor of the GD map.
pub fn contraction_check() -> Result<Check> {
    let spec = QuadraticSpec::homogeneous(4, 6, 1, vec![1.0, 2.0, 3.0, 4.0], 8).with_heterogeneity(0.5, 0.0, 0.0);
    let pop = make_population(&spec)?;
    let schedule = CycleSchedule::new(pop.groups().to_vec(), OrderMode::Identity, 0)?;
    let eta = 0.1;
    let rounds = 30;
    let w0 = Vector::from_vec(vec![1.0, -2.0, 0.5, 1.5]);
    let config = RunConfig {
        mode: Mode::Gd,
        eta,
        cycle_epochs: rounds,
        clients_per_round: 6,
        initial: Some(w0.clone()),
        ..RunConfig::default()
    };
    let log = run(&pop, &schedule, &config)?;
    let mut gaps = vec![log.initial_loss_gap];
    gaps.extend(log.loss_series());
    let e0 = &w0 - &pop.constants().w_star;
    let predicted = spectral_gap_ratios(pop.mean_hessian(), &e0, eta, rounds);
    let worst = (5..rounds)
        .map(|t| (gaps[t + 1] / gaps[t] - predicted[t]).abs())
        .fold(0.0, f64::max);
    Ok(
        Check::new("exponential contraction at K̄=1, N=M", worst <= 1e-8, worst, "≤ 1e-8 after round 5")
            .detail(format!("asymptotic factor {:.6}", predicted[rounds - 1])),
    )
}

fn slope_check(name: &str, exp: &RateExperiment, lo: f64, hi: f64) -> Result<Check> {
    let out = exp.run()?;
    let s = out.fit.slope;
    let threshold = if lo == f64::NEG_INFINITY {
        format!("≤ {hi}")
    } else {
        format!("in [{lo}, {hi}]")
    };
    Ok(Check::new(name, s >= lo && s <= hi, s, threshold).detail(out.fit.to_string()))
}

/// Final loss gap at `rounds` for minibatches `1` and `2` on one population,
/// each averaged over `replicates` selection seeds.
pub fn minibatch_pair(population_seed: u64, rounds: usize, replicates: u64) -> Result<(f64, f64)> {
    let mut out = [0.0; 2];
    for (slot, b) in out.iter_mut().zip([1usize, 2]) {
        let mut exp = RateExperiment::sgd_family(b, population_seed);
        exp.seeds = (0..replicates).collect();
        let pop = exp.population()?;
        *slot = exp.run_horizon(&pop, rounds)?.mean_gap;
    }
    Ok((out[0], out[1]))
}

/// Rate exponents of the GD regimes and of local SGD, plus the exact
/// contraction check.
pub fn rates_suite() -> Result<Vec<Check>> {
    let mut checks = vec![contraction_check()?];
    checks.push(slope_check(
        "GD slope, γ=0, α=0.3, K̄=3",
        &RateExperiment::gd_family(0.0, 0.3, 3),
        f64::NEG_INFINITY,
        -1.7,
    )?);
    checks.push(slope_check(
        "GD slope, γ=0.5, α=0, K̄=3",
        &RateExperiment::gd_family(0.5, 0.0, 3),
        -1.35,
        -0.65,
    )?);
    checks.push(slope_check(
        "GD slope, γ=0.5, K̄=M/N=6",
        &RateExperiment::gd_family(0.5, 0.0, 6),
        f64::NEG_INFINITY,
        -1.7,
    )?);
    checks.push(slope_check(
        "SGD slope, γ=α=0, σ²>0, K̄=M/N",
        &RateExperiment::sgd_family(1, 0),
        -1.35,
        -0.65,
    )?);
    let mut wins = 0;
    for seed in 0..5 {
        let (one, two) = minibatch_pair(seed, 768, 32)?;
        if two < one {
            wins += 1;
        }
    }
    checks.push(
        Check::new("doubling the minibatch lowers the final gap", wins >= 4, wins as f64, "≥ 4 of 5 seeds")
            .detail("T = 768"),
    );
    Ok(checks)
}

/// `cost_gd(K̄) > cost_gd(1)` over every valid `(M ≤ 60, N ≥ 2, 1 < K̄ < M/N)`
/// and `cost_gd = 0` at `K̄ = M/N`. Returns `(violations, total, boundary
/// violations)`.
pub fn partial_cycle_sweep() -> Result<(usize, usize, usize)> {
    let (mut bad, mut total, mut boundary_bad) = (0, 0, 0);
    for m in 2..=60usize {
        for n in 2..=m {
            for k in 1..=m {
                if m % k != 0 || n > m / k {
                    continue;
                }
                if k * n == m {
                    if cost_gd(0.01, 1.0, m, k, n, 1.0)? != 0.0 {
                        boundary_bad += 1;
                    }
                } else if k > 1 {
                    total += 1;
                    if cost_gd(0.01, 1.0, m, k, n, 1.0)? <= cost_gd(0.01, 1.0, m, 1, n, 1.0)? {
                        bad += 1;
                    }
                }
            }
        }
    }
    Ok((bad, total, boundary_bad))
}

fn cost_grid_point(rng: &mut StreamRng) -> (usize, usize) {
    let n = rng.random_range(1..=8usize);
    let k = rng.random_range(1..=10usize);
    (n * k, n)
}

/// Exhaustive and randomized checks of the cost comparisons.
pub fn costs_suite() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let (bad, total, boundary_bad) = partial_cycle_sweep()?;
    checks.push(
        Check::new(
            "GD cost with 1 < K̄ < M/N exceeds K̄ = 1 (M ≤ 60)",
            bad == 0,
            bad as f64,
            "0 violations",
        )
        .detail(format!("{bad} of {total} points violate")),
    );
    checks.push(Check::new(
        "GD cost vanishes at K̄ = M/N",
        boundary_bad == 0,
        boundary_bad as f64,
        "0 violations",
    ));

    let mut rng = RngStream::new(77).rng();
    let mut sgd_bad = 0;
    for _ in 0..1000 {
        let (m, n) = cost_grid_point(&mut rng);
        let k = m / n;
        let sigma2 = rng.random_range(0.01..2.0);
        let tau = rng.random_range(1..=8usize);
        let floor = (m as f64 * sigma2 / (n as f64 * tau as f64)).sqrt();
        let gamma = floor * rng.random_range(1.0..3.0);
        let eps = rng.random_range(1e-4..1e-1);
        if cost_sgd(eps, 1.0, m, k, n, gamma, sigma2, tau)? > cost_sgd(eps, 1.0, m, 1, n, gamma, sigma2, tau)? {
            sgd_bad += 1;
        }
    }
    checks.push(Check::new(
        "SGD cost at K̄ = M/N ≤ K̄ = 1 when γ² ≥ Mσ²/(Nτ)",
        sgd_bad == 0,
        sgd_bad as f64,
        "0 of 1000 violations",
    ));

    let mut rr_bad = 0;
    let mut accepted = 0;
    while accepted < 1000 {
        let x = random_full_cycle_inputs(&mut rng);
        if !(x.clients > local_rr_threshold(&x)) {
            continue;
        }
        accepted += 1;
        if cost_ssgd_full_cycle(&x)? >= cost_local_rr(&x)? {
            rr_bad += 1;
        }
    }
    checks.push(Check::new(
        "SSGD at K̄ = M/N beats local RR above the population threshold",
        rr_bad == 0,
        rr_bad as f64,
        "0 of 1000 violations",
    ));

    let mut shuffle_bad = 0;
    let mut accepted = 0;
    while accepted < 1000 {
        let mut x = random_full_cycle_inputs(&mut rng);
        // the shuffling condition only orders the costs when K̄ ≥ √M
        let n = x.per_round;
        let k = rng.random_range(n as usize..=12) as f64;
        x.clients = n * k;
        x.k_bar = k;
        if shuffling_condition(&x) != Some(true) {
            continue;
        }
        accepted += 1;
        if cost_ssgd_full_cycle(&x)? >= cost_gd_full_cycle(&x)? {
            shuffle_bad += 1;
        }
    }
    checks.push(Check::new(
        "shuffling condition implies SSGD beats GD at K̄ = M/N (K̄ ≥ N)",
        shuffle_bad == 0,
        shuffle_bad as f64,
        "0 of 1000 violations",
    ));
    Ok(checks)
}

/// Random full-cycle inputs with unit `μ` and `κ` and `ν = γ + α`.
pub fn random_full_cycle_inputs(rng: &mut StreamRng) -> CostInputs {
    let (m, n) = cost_grid_point(rng);
    let b = rng.random_range(2..=64usize);
    let gamma = rng.random_range(0.0..0.3);
    let alpha = rng.random_range(0.0..0.3);
    let nu_bar = rng.random_range(0.0..0.5);
    let eps = rng.random_range(1e-4..1e-1);
    CostInputs::new(eps, m as f64, n as f64, b).with_heterogeneity(gamma, alpha, nu_bar)
}

/// Mean over `seeds` of the final-loss improvement from `K̄ = 1` to
/// `K̄ = M/N`, and how many seeds improved.
pub fn logistic_improvement(concentration: f64, seeds: &[u64]) -> Result<(f64, usize)> {
    let mut sum = 0.0;
    let mut wins = 0;
    for &seed in seeds {
        let track = LogisticTrack::standard(concentration, seed);
        let single = logistic_final_loss(&track, 1, 2, LOGISTIC_ROUNDS, LOGISTIC_ETA)?;
        let full = logistic_final_loss(&track, 10, 2, LOGISTIC_ROUNDS, LOGISTIC_ETA)?;
        let gain = single - full;
        sum += gain;
        if gain > 0.0 {
            wins += 1;
        }
    }
    Ok((sum / seeds.len() as f64, wins))
}

pub const LOGISTIC_ROUNDS: usize = 200;
pub const LOGISTIC_ETA: f64 = 0.5;
pub const OSCILLATION_ETA: f64 = 0.05;
pub const OSCILLATION_CYCLES: usize = 60;

/// Sign changes per cycle-epoch over the last five cycle-epochs at `K̄ = 6`
/// and after regrouping the same clients into one group.
pub fn oscillation_counts(seed: u64) -> Result<(f64, f64)> {
    let pop = make_population(&oscillation_spec(seed))?;
    let (cyclic, _) = loss_trajectory(&pop, 6, 2, OSCILLATION_ETA, OSCILLATION_CYCLES, seed)?;
    let (single, _) = loss_trajectory(&pop, 1, 2, OSCILLATION_ETA, OSCILLATION_CYCLES * 6, seed)?;
    Ok((sign_changes_per_cycle(&cyclic, 6, 5)?, sign_changes_per_cycle(&single, 1, 5)?))
}

pub fn qualitative_suite() -> Result<Vec<Check>> {
    let seeds: Vec<u64> = (0..5).collect();
    let (skewed, wins) = logistic_improvement(0.5, &seeds)?;
    let (mild, _) = logistic_improvement(2.0, &seeds)?;
    let (cyclic, single) = oscillation_counts(0)?;
    Ok(vec![
        Check::new("logistic: K̄ = M/N beats K̄ = 1 at concentration 0.5", wins >= 4, wins as f64, "≥ 4 of 5 seeds")
            .detail(format!("mean improvement {skewed:.5}")),
        Check::new(
            "logistic: improvement shrinks at concentration 2.0",
            mild < skewed,
            skewed - mild,
            "> 0",
        )
        .detail(format!("mean improvement {mild:.5} vs {skewed:.5}")),
        Check::new(
            "oscillation: sign changes per cycle at K̄ = 6",
            cyclic >= 3.0 && single < cyclic,
            cyclic,
            "≥ K̄/2 = 3 and above the K̄ = 1 count",
        )
        .detail(format!("K̄ = 1 count {single:.2}")),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_parse() {
        for name in Suite::NAMES {
            assert!(name.parse::<Suite>().is_ok());
        }
        assert!("rate".parse::<Suite>().is_err());
    }

    #[test]
    fn fast_suites_pass() {
        for suite in [Suite::Decomposition, Suite::Wor, Suite::Reductions] {
            for c in run_suite(suite).unwrap() {
                assert!(c.passed, "{c}");
            }
        }
        let c = contraction_check().unwrap();
        assert!(c.passed, "{c}");
    }

    #[test]
    fn random_population_is_consistent() {
        let pop = random_quadratic_population(3, 6, 2, 1).unwrap();
        assert_eq!(pop.groups().len(), 2);
        assert!(pop.constants().mu > 0.0);
        assert!(random_quadratic_population(3, 6, 4, 1).is_err());
    }

    #[test]
    fn check_display_marks_status() {
        let c = Check::new("x", false, 1.5, "≤ 1");
        assert!(c.to_string().starts_with("FAIL x"));
    }
}
