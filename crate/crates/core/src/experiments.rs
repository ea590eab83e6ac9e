//! Standard desk-scale experiment families.
//!
//! Each builder returns plain configuration values so callers can inspect or
//! tweak them before running.

use std::sync::Arc;

use crate::analysis::rate::{fit_rate, RateFit};
use crate::datasets::{
    dirichlet_partition, group_by_label_affinity, make_gaussian_mixture, GroupingMode, LogisticPopulation,
};
use crate::engine::{run, theoretical_step_size, Mode, RunConfig, RunLog};
use crate::error::invalid;
use crate::quadratic::{make_population, QuadraticPopulation, QuadraticSpec};
use crate::schedule::{CycleSchedule, OrderMode};
use crate::{Population, Result};

/// Horizons used for rate fits: five doublings from 192 rounds.
pub const RATE_HORIZONS: [usize; 5] = [192, 384, 768, 1536, 3072];

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect(),
    }
}

/// Step-size rule for a family of runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// The prescription for the run's mode and horizon.
    Theorem,
    Fixed(f64),
}

/// Final loss gap as a function of the horizon `T` for one population.
#[derive(Debug, Clone)]
pub struct RateExperiment {
    pub spec: QuadraticSpec,
    pub per_round: usize,
    pub mode: Mode,
    pub local_steps: usize,
    pub minibatch: Option<usize>,
    pub horizons: Vec<usize>,
    /// Selection seeds; the final gap is averaged over them.
    pub seeds: Vec<u64>,
    pub step: StepRule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatePoint {
    pub rounds: usize,
    pub mean_gap: f64,
    pub min_gap: f64,
    pub max_gap: f64,
    pub eta_local: f64,
    pub below_bound: bool,
}

#[derive(Debug, Clone)]
pub struct RateOutcome {
    pub points: Vec<RatePoint>,
    pub fit: RateFit,
}

impl RateExperiment {
    /// Local GD on `M = 12` quadratic clients, `N = 2` per round, over
    /// [`RATE_HORIZONS`] with the prescribed step size.
    pub fn gd_family(gamma: f64, alpha: f64, k_bar: usize) -> Self {
        let spec = QuadraticSpec::homogeneous(8, 12, k_bar, linspace(1.0, 4.0, 8), 1).with_heterogeneity(gamma, alpha, 0.0);
        Self {
            spec,
            per_round: 2,
            mode: Mode::Gd,
            local_steps: 1,
            minibatch: None,
            horizons: RATE_HORIZONS.to_vec(),
            seeds: (0..30).collect(),
            step: StepRule::Theorem,
        }
    }

    /// Local SGD with identical clients whose only noise is minibatch
    /// sampling over 16 components, with `K̄ = M/N = 6`.
    pub fn sgd_family(minibatch: usize, population_seed: u64) -> Self {
        let spec = QuadraticSpec::homogeneous(8, 12, 6, linspace(1.0, 4.0, 8), population_seed)
            .with_components(16)
            .with_heterogeneity(0.0, 0.0, 1.0);
        Self {
            spec,
            per_round: 2,
            mode: Mode::Sgd,
            local_steps: 4,
            minibatch: Some(minibatch),
            horizons: RATE_HORIZONS.to_vec(),
            seeds: (0..256).collect(),
            step: StepRule::Theorem,
        }
    }

    pub fn population(&self) -> Result<QuadraticPopulation> {
        make_population(&self.spec)
    }

    /// Runs every horizon and seed, then fits the power law.
    pub fn run(&self) -> Result<RateOutcome> {
        let pop = self.population()?;
        let points = self
            .horizons
            .iter()
            .map(|&t| self.run_horizon(&pop, t))
            .collect::<Result<Vec<_>>>()?;
        let fit = fit_rate(&points.iter().map(|p| (p.rounds as f64, p.mean_gap)).collect::<Vec<_>>())?;
        Ok(RateOutcome { points, fit })
    }

    /// Final gap averaged over the seeds at one horizon.
    pub fn run_horizon(&self, pop: &QuadraticPopulation, rounds: usize) -> Result<RatePoint> {
        let k_bar = self.spec.groups;
        if !rounds.is_multiple_of(k_bar) {
            return Err(invalid(format!("horizon {rounds} is not a multiple of K̄ = {k_bar}")));
        }
        let schedule = CycleSchedule::new(pop.groups().to_vec(), OrderMode::Identity, 0)?;
        let (eta, below_bound) = match self.step {
            StepRule::Fixed(eta) => (eta, false),
            StepRule::Theorem => {
                let s = theoretical_step_size(
                    self.mode,
                    pop.constants(),
                    pop.num_clients(),
                    k_bar,
                    self.per_round,
                    self.local_steps,
                    pop.num_components(0),
                    rounds,
                )?;
                (s.eta_local, s.below_bound)
            }
        };
        let mut gaps = Vec::with_capacity(self.seeds.len());
        for &seed in &self.seeds {
            let config = RunConfig {
                mode: self.mode,
                eta,
                cycle_epochs: rounds / k_bar,
                clients_per_round: self.per_round,
                local_steps: self.local_steps,
                minibatch: self.minibatch,
                seed,
                record_iterates: false,
                initial: None,
            };
            gaps.push(run(pop, &schedule, &config)?.final_loss_gap());
        }
        let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
        Ok(RatePoint {
            rounds,
            mean_gap,
            min_gap: gaps.iter().copied().fold(f64::INFINITY, f64::min),
            max_gap: gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            eta_local: eta,
            below_bound,
        })
    }
}

/// Quadratic population with strong inter-group heterogeneity used to show
/// within-cycle oscillation: `M = 12`, six groups, `γ = 0`, `α = 2`.
pub fn oscillation_spec(seed: u64) -> QuadraticSpec {
    QuadraticSpec::homogeneous(8, 12, 6, linspace(1.0, 10.0, 8), seed).with_heterogeneity(0.0, 2.0, 0.0)
}

/// Loss sequence (initial value first) of a fixed-step GD run on `pop`
/// regrouped into `k_bar` groups.
pub fn loss_trajectory(
    pop: &dyn Population,
    k_bar: usize,
    per_round: usize,
    eta: f64,
    cycle_epochs: usize,
    seed: u64,
) -> Result<(Vec<f64>, RunLog)> {
    let schedule = CycleSchedule::chunked(&pop.client_order(), k_bar, OrderMode::Identity, seed)?;
    let config = RunConfig {
        mode: Mode::Gd,
        eta,
        cycle_epochs,
        clients_per_round: per_round,
        seed,
        ..RunConfig::default()
    };
    let log = run(pop, &schedule, &config)?;
    let mut series = Vec::with_capacity(log.rounds() + 1);
    series.push(log.initial_loss_gap);
    series.extend(log.loss_series());
    Ok((series, log))
}

/// Synthetic classification track: Gaussian-mixture data split across
/// clients by a Dirichlet label partition.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticTrack {
    pub classes: usize,
    pub dim: usize,
    pub samples: usize,
    pub separation: f64,
    pub clients: usize,
    pub concentration: f64,
    pub components: usize,
    pub l2: f64,
    pub seed: u64,
}

impl LogisticTrack {
    pub fn standard(concentration: f64, seed: u64) -> Self {
        Self {
            classes: 10,
            dim: 10,
            samples: 2000,
            separation: 3.0,
            clients: 20,
            concentration,
            components: 1,
            l2: 0.01,
            seed,
        }
    }

    /// Builds the population grouped into `k_bar` groups.
    pub fn population(&self, k_bar: usize, grouping: GroupingMode) -> Result<LogisticPopulation> {
        let ds = Arc::new(make_gaussian_mixture(
            self.classes,
            self.dim,
            self.samples,
            self.separation,
            self.seed,
        )?);
        let shards = dirichlet_partition(&ds, self.clients, self.concentration, self.components, self.seed)?;
        let groups = group_by_label_affinity(&ds, &shards, k_bar, grouping, self.seed)?;
        LogisticPopulation::new(ds, shards, groups, self.l2)
    }
}

/// Final training loss of a fixed-step GD run on the track.
pub fn logistic_final_loss(
    track: &LogisticTrack,
    k_bar: usize,
    per_round: usize,
    rounds: usize,
    eta: f64,
) -> Result<f64> {
    if !rounds.is_multiple_of(k_bar) {
        return Err(invalid(format!("horizon {rounds} is not a multiple of K̄ = {k_bar}")));
    }
    let pop = track.population(k_bar, GroupingMode::LabelSorted)?;
    let schedule = CycleSchedule::new(pop.groups().to_vec(), OrderMode::Identity, track.seed)?;
    let config = RunConfig {
        mode: Mode::Gd,
        eta,
        cycle_epochs: rounds / k_bar,
        clients_per_round: per_round,
        seed: track.seed,
        ..RunConfig::default()
    };
    let log = run(&pop, &schedule, &config)?;
    pop.loss(&log.final_model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_endpoints() {
        assert_eq!(linspace(1.0, 4.0, 4), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(linspace(2.0, 5.0, 1), vec![2.0]);
        assert!(linspace(0.0, 1.0, 0).is_empty());
    }

    #[test]
    fn horizons_must_fit_cycles() {
        let exp = RateExperiment::gd_family(0.0, 0.3, 3);
        let pop = exp.population().unwrap();
        assert!(exp.run_horizon(&pop, 100).is_err());
        let p = exp.run_horizon(&pop, 96).unwrap();
        assert!(p.mean_gap >= 0.0 && p.min_gap <= p.max_gap);
    }

    #[test]
    fn families_build() {
        assert!(RateExperiment::sgd_family(2, 0).population().is_ok());
        assert!(make_population(&oscillation_spec(0)).is_ok());
        let track = LogisticTrack {
            samples: 400,
            ..LogisticTrack::standard(1.0, 0)
        };
        let pop = track.population(10, GroupingMode::LabelSorted).unwrap();
        assert_eq!(pop.groups().len(), 10);
    }
}
