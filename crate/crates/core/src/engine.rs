//! The federated loop under cyclic participation.
//!
//! For every cycle-epoch `k` and every round `i` within it, the server samples
//! `N` clients from the group available at `i`, each client starts from the
//! current global model and runs its local procedure, and the server replaces
//! the global model by the plain mean of the returned models.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::quadratic::PopulationConstants;
use crate::schedule::{draw_permutation, round_to_indices, CycleSchedule, RngStream, StreamRng, StreamTag};
use crate::{Error, Population, Result, Vector};

/// Norm beyond which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Relative tolerance for the per-round agreement between model averaging and
/// the update-increment form of the server step.
pub const AGGREGATION_TOLERANCE: f64 = 1e-12;

/// Local procedure run by every selected client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// One full-gradient step.
    #[default]
    Gd,
    /// `τ` minibatch steps.
    Sgd,
    /// One pass over the `B` components in a fresh random order.
    Ssgd,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Gd => "gd",
            Mode::Sgd => "sgd",
            Mode::Ssgd => "ssgd",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gd" => Ok(Mode::Gd),
            "sgd" => Ok(Mode::Sgd),
            "ssgd" => Ok(Mode::Ssgd),
            other => Err(invalid(format!("unknown mode {other:?}; expected gd, sgd or ssgd"))),
        }
    }
}

/// Parameters of one run. Fields that the chosen mode does not use are kept
/// for the record but otherwise ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    /// Local step size.
    pub eta: f64,
    /// Number of cycle-epochs `K`.
    pub cycle_epochs: usize,
    /// Clients sampled per round `N`.
    pub clients_per_round: usize,
    /// Local steps `τ` (SGD).
    pub local_steps: usize,
    /// Minibatch size `b` (SGD). `None` uses every sample unit.
    pub minibatch: Option<usize>,
    pub seed: u64,
    pub record_iterates: bool,
    /// Starting model; zero when absent.
    pub initial: Option<Vector>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Gd,
            eta: 0.01,
            cycle_epochs: 1,
            clients_per_round: 1,
            local_steps: 1,
            minibatch: None,
            seed: 0,
            record_iterates: false,
            initial: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.eta.is_finite() || self.eta < 0.0 {
            return Err(invalid(format!("step size must be finite and non-negative, got {}", self.eta)));
        }
        if self.clients_per_round == 0 {
            return Err(invalid("clients per round must be positive"));
        }
        if self.mode == Mode::Sgd {
            if self.local_steps == 0 {
                return Err(invalid("local steps must be positive"));
            }
            if self.minibatch == Some(0) {
                return Err(invalid("minibatch must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 0-based global round.
    pub t: usize,
    /// 1-based cycle-epoch.
    pub k: usize,
    /// 1-based round within the cycle-epoch.
    pub i: usize,
    pub clients: Vec<usize>,
    /// `F(w) − F*` after the round, or `F(w)` when the optimum is unknown.
    pub loss_gap: f64,
    pub grad_norm: f64,
    /// Cumulative local gradient evaluations.
    pub evals: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub mode: Mode,
    pub records: Vec<RoundRecord>,
    /// Initial model followed by the model after every round, when requested.
    pub iterates: Vec<Vector>,
    pub initial_loss_gap: f64,
    pub final_model: Vector,
    /// Whether `loss_gap` is measured against a known optimum.
    pub loss_is_gap: bool,
    pub eta_local: f64,
    /// Prescribed step size this run was derived from, if any.
    pub eta_theorem: Option<f64>,
    pub warnings: Vec<String>,
    /// Largest relative disagreement between the averaged model and the
    /// increment-form update over all rounds.
    pub max_aggregation_discrepancy: f64,
    pub group_order: Vec<usize>,
}

impl RunLog {
    pub fn rounds(&self) -> usize {
        self.records.len()
    }

    pub fn final_loss_gap(&self) -> f64 {
        self.records.last().map_or(self.initial_loss_gap, |r| r.loss_gap)
    }

    pub fn total_evals(&self) -> u64 {
        self.records.last().map_or(0, |r| r.evals)
    }

    pub fn loss_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss_gap).collect()
    }

    /// CSV with header `t,k,i,clients,loss_gap,grad_norm,evals`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,k,i,clients,loss_gap,grad_norm,evals")?;
        for r in &self.records {
            let clients: Vec<String> = r.clients.iter().map(usize::to_string).collect();
            writeln!(
                out,
                "{},{},{},{},{:?},{:?},{}",
                r.t,
                r.k,
                r.i,
                clients.join(";"),
                r.loss_gap,
                r.grad_norm,
                r.evals
            )?;
        }
        Ok(())
    }
}

fn step(w: &Vector, g: &Vector, eta: f64) -> Vector {
    w - g * eta
}

fn guard(w: &Vector, round: usize) -> Result<()> {
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::Diverged {
            round,
            reason: "non-finite model".into(),
        });
    }
    let norm = w.norm();
    if norm > DIVERGENCE_NORM {
        return Err(Error::Diverged {
            round,
            reason: format!("model norm {norm:e} exceeds {DIVERGENCE_NORM:e}"),
        });
    }
    Ok(())
}

/// One local GD step: `w − η ∇F_m(w)`.
pub fn local_update_gd(pop: &dyn Population, m: usize, w: &Vector, eta: f64) -> Result<Vector> {
    let g = pop.client_gradient(m, w)?;
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("client gradient"));
    }
    Ok(step(w, &g, eta))
}

/// `tau` sequential minibatch steps with fresh without-replacement draws.
pub fn local_update_sgd(
    pop: &dyn Population,
    m: usize,
    w: &Vector,
    eta: f64,
    tau: usize,
    minibatch: usize,
    rng: &mut StreamRng,
) -> Result<Vector> {
    if tau == 0 {
        return Err(invalid("local steps must be positive"));
    }
    let mut local = w.clone();
    for _ in 0..tau {
        let g = pop.minibatch_gradient(m, &local, minibatch, rng)?;
        local = step(&local, &g, eta);
        if local.iter().any(|x| !x.is_finite()) || local.norm() > DIVERGENCE_NORM {
            return Err(Error::NonFinite("local iterate"));
        }
    }
    Ok(local)
}

/// One pass over the client's components in the order `pi`.
pub fn local_update_ssgd(
    pop: &dyn Population,
    m: usize,
    w: &Vector,
    eta: f64,
    pi: &[usize],
) -> Result<Vector> {
    let b = pop.num_components(m);
    let mut seen = vec![false; b];
    if pi.len() != b || pi.iter().any(|&l| l >= b || std::mem::replace(&mut seen[l], true)) {
        return Err(invalid(format!("order must be a permutation of 0..{b}")));
    }
    let mut local = w.clone();
    for &l in pi {
        let g = pop.component_gradient(m, l, &local)?;
        local = step(&local, &g, eta);
        if local.iter().any(|x| !x.is_finite()) || local.norm() > DIVERGENCE_NORM {
            return Err(Error::NonFinite("local iterate"));
        }
    }
    Ok(local)
}

/// Mean of the client models, summed in the order given.
pub fn aggregate(models: &[Vector]) -> Result<Vector> {
    let first = models.first().ok_or_else(|| invalid("nothing to aggregate"))?;
    let mut acc = first.clone();
    for w in &models[1..] {
        acc += w;
    }
    Ok(acc / models.len() as f64)
}

/// Randomness and local settings shared by every round of a run.
struct LocalPlan<'a> {
    mode: Mode,
    eta: f64,
    tau: usize,
    minibatch: Option<usize>,
    root: &'a RngStream,
}

impl LocalPlan<'_> {
    fn update(&self, pop: &dyn Population, m: usize, w: &Vector, k: usize, i: usize) -> Result<Vector> {
        match self.mode {
            Mode::Gd => local_update_gd(pop, m, w, self.eta),
            Mode::Sgd => {
                let batch = self.minibatch.unwrap_or_else(|| pop.num_sample_units(m));
                let mut rng = self
                    .root
                    .at(&[StreamTag::LocalSteps as u64, k as u64, i as u64, m as u64])
                    .rng();
                local_update_sgd(pop, m, w, self.eta, self.tau, batch, &mut rng)
            }
            Mode::Ssgd => {
                let mut rng = self.root.at(&[StreamTag::Permutation as u64, k as u64, m as u64]).rng();
                let pi = draw_permutation(pop.num_components(m), &mut rng);
                local_update_ssgd(pop, m, w, self.eta, &pi)
            }
        }
    }

    fn evals(&self, pop: &dyn Population, clients: &[usize]) -> u64 {
        match self.mode {
            Mode::Gd => clients.len() as u64,
            Mode::Sgd => (clients.len() * self.tau) as u64,
            Mode::Ssgd => clients.iter().map(|&m| pop.num_components(m) as u64).sum(),
        }
    }
}

/// Server step from `w`: local updates followed by averaging. Returns the new
/// model and its relative disagreement with `w + mean(w_m − w)`.
fn server_round(
    pop: &dyn Population,
    plan: &LocalPlan<'_>,
    w: &Vector,
    clients: &[usize],
    k: usize,
    i: usize,
) -> Result<(Vector, f64)> {
    let models = clients
        .iter()
        .map(|&m| plan.update(pop, m, w, k, i))
        .collect::<Result<Vec<_>>>()?;
    let averaged = aggregate(&models)?;
    let increments: Vec<Vector> = models.iter().map(|wm| wm - w).collect();
    let delta = aggregate(&increments)?;
    let incremental = w + &delta;
    let scale = 1.0 + w.norm() + delta.norm();
    let discrepancy = (&averaged - &incremental).amax() / scale;
    if discrepancy > AGGREGATION_TOLERANCE {
        return Err(invalid(format!(
            "model averaging and increment update disagree by {discrepancy:e} in round ({k},{i})"
        )));
    }
    Ok((averaged, discrepancy))
}

fn metric(pop: &dyn Population, w: &Vector) -> Result<f64> {
    match pop.loss_gap(w) {
        Some(gap) => Ok(gap),
        None => pop.loss(w),
    }
}

/// Runs `K·K̄` rounds of the federated loop.
pub fn run(pop: &dyn Population, schedule: &CycleSchedule, config: &RunConfig) -> Result<RunLog> {
    config.validate()?;
    if schedule.num_clients() != pop.num_clients() {
        return Err(Error::DimensionMismatch {
            expected: pop.num_clients(),
            got: schedule.num_clients(),
        });
    }
    if config.clients_per_round > schedule.group_size() {
        return Err(invalid(format!(
            "clients per round {} exceeds group size {}",
            config.clients_per_round,
            schedule.group_size()
        )));
    }
    let mut w = match &config.initial {
        Some(w0) => {
            if w0.len() != pop.dim() {
                return Err(Error::DimensionMismatch {
                    expected: pop.dim(),
                    got: w0.len(),
                });
            }
            w0.clone()
        }
        None => Vector::zeros(pop.dim()),
    };
    let root = RngStream::new(config.seed);
    let plan = LocalPlan {
        mode: config.mode,
        eta: config.eta,
        tau: config.local_steps,
        minibatch: config.minibatch,
        root: &root,
    };
    let k_bar = schedule.k_bar();
    let rounds = config.cycle_epochs * k_bar;
    let mut log = RunLog {
        mode: config.mode,
        records: Vec::with_capacity(rounds),
        iterates: Vec::new(),
        initial_loss_gap: metric(pop, &w)?,
        final_model: w.clone(),
        loss_is_gap: pop.optimum_value().is_some(),
        eta_local: config.eta,
        eta_theorem: None,
        warnings: Vec::new(),
        max_aggregation_discrepancy: 0.0,
        group_order: schedule.order().to_vec(),
    };
    if config.record_iterates {
        log.iterates.push(w.clone());
    }
    let mut evals = 0u64;
    for t in 0..rounds {
        let (k, i) = round_to_indices(t, k_bar);
        let mut rng = root.at(&[StreamTag::Selection as u64, k as u64, i as u64]).rng();
        let clients = schedule.select_round_clients(k, i, config.clients_per_round, &mut rng)?;
        let (next, discrepancy) = server_round(pop, &plan, &w, &clients, k, i)?;
        guard(&next, t)?;
        w = next;
        evals += plan.evals(pop, &clients);
        log.max_aggregation_discrepancy = log.max_aggregation_discrepancy.max(discrepancy);
        log.records.push(RoundRecord {
            t,
            k,
            i,
            clients,
            loss_gap: metric(pop, &w)?,
            grad_norm: pop.gradient(&w)?.norm(),
            evals,
        });
        if config.record_iterates {
            log.iterates.push(w.clone());
        }
    }
    log.final_model = w;
    Ok(log)
}

/// One cycle-epoch of local GD with the participants of each round fixed in
/// advance. Returns the model after every round, starting with `w0`.
pub fn gd_cycle_with_selections(
    pop: &dyn Population,
    w0: &Vector,
    selections: &[Vec<usize>],
    eta: f64,
) -> Result<Vec<Vector>> {
    let root = RngStream::new(0);
    let plan = LocalPlan {
        mode: Mode::Gd,
        eta,
        tau: 1,
        minibatch: None,
        root: &root,
    };
    let mut trajectory = vec![w0.clone()];
    for (r, clients) in selections.iter().enumerate() {
        if clients.is_empty() {
            return Err(invalid("every round needs at least one client"));
        }
        let prev = trajectory.last().expect("non-empty");
        let (next, _) = server_round(pop, &plan, prev, clients, 1, r + 1)?;
        trajectory.push(next);
    }
    Ok(trajectory)
}

/// Prescribed step size and the horizon condition attached to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSize {
    /// Step size in the sum-aggregation convention.
    pub eta_theorem: f64,
    /// Equivalent step for the engine's mean aggregation.
    pub eta_local: f64,
    /// Smallest horizon `T` for which the prescription is covered.
    pub min_rounds: f64,
    /// Set when the requested `T` is below `min_rounds`.
    pub below_bound: bool,
}

/// Step size prescribed for `mode` at horizon `T = rounds`.
///
/// GD uses `ln(M T² / K̄²) / (μ N T)` and SGD additionally divides by `τ`; both
/// are stated for sum aggregation, so the local step is `N` times larger. SSGD
/// uses `ln(M B T² / K̄²) / (μ B T)` unchanged. The horizon condition is
/// `T ≥ c κ K̄ ln(·)` with `c = 7` for GD and `c = 10` otherwise.
#[allow(clippy::too_many_arguments)]
pub fn theoretical_step_size(
    mode: Mode,
    constants: &PopulationConstants,
    clients: usize,
    k_bar: usize,
    per_round: usize,
    tau: usize,
    components: usize,
    rounds: usize,
) -> Result<StepSize> {
    let mu = constants.mu;
    let kappa = constants.kappa();
    if !(mu > 0.0) || !kappa.is_finite() || kappa < 1.0 - 1e-12 {
        return Err(invalid(format!("need μ > 0 and finite κ ≥ 1, got μ={mu}, κ={kappa}")));
    }
    if clients == 0 || k_bar == 0 || per_round == 0 || rounds == 0 {
        return Err(invalid("M, K̄, N and T must be positive"));
    }
    let t = rounds as f64;
    let m = clients as f64;
    let kb = k_bar as f64;
    let n = per_round as f64;
    let (log_term, eta_theorem, factor) = match mode {
        Mode::Gd => {
            let l = (m * t * t / (kb * kb)).ln();
            (l, l / (mu * n * t), 7.0)
        }
        Mode::Sgd => {
            if tau == 0 {
                return Err(invalid("local steps must be positive"));
            }
            let l = (m * t * t / (kb * kb)).ln();
            (l, l / (tau as f64 * mu * n * t), 10.0)
        }
        Mode::Ssgd => {
            if components == 0 {
                return Err(invalid("components must be positive"));
            }
            let b = components as f64;
            let l = (m * b * t * t / (kb * kb)).ln();
            (l, l / (mu * b * t), 10.0)
        }
    };
    if !(eta_theorem > 0.0) {
        return Err(invalid("horizon too short for a positive step size"));
    }
    let eta_local = match mode {
        Mode::Gd | Mode::Sgd => n * eta_theorem,
        Mode::Ssgd => eta_theorem,
    };
    let min_rounds = factor * kappa * kb * log_term;
    Ok(StepSize {
        eta_theorem,
        eta_local,
        min_rounds,
        below_bound: t < min_rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadratic::{make_population, ClientQuadratic, QuadraticComponent, QuadraticPopulation, QuadraticSpec};
    use crate::schedule::OrderMode;
    use crate::Matrix;

    fn pop(b: usize, g: f64, a: f64, nb: f64) -> QuadraticPopulation {
        let s = QuadraticSpec::homogeneous(5, 6, 3, vec![1.0, 2.0, 4.0, 3.0, 1.5], 5)
            .with_components(b)
            .with_heterogeneity(g, a, nb);
        make_population(&s).unwrap()
    }

    fn schedule(p: &QuadraticPopulation) -> CycleSchedule {
        CycleSchedule::new(p.groups().to_vec(), OrderMode::Identity, 0).unwrap()
    }

    fn config(mode: Mode) -> RunConfig {
        RunConfig {
            mode,
            eta: 0.1,
            cycle_epochs: 4,
            clients_per_round: 1,
            seed: 3,
            record_iterates: true,
            ..RunConfig::default()
        }
    }

    #[test]
    fn zero_step_keeps_model() {
        let p = pop(1, 0.3, 0.2, 0.0);
        let w = Vector::from_vec(vec![1.0, -2.0, 0.5, 0.4, -0.6]);
        assert_eq!(local_update_gd(&p, 0, &w, 0.0).unwrap(), w);
    }

    #[test]
    fn hand_step_on_identity_hessian() {
        let comp = QuadraticComponent::new(Matrix::identity(2, 2), Vector::zeros(2), 0.0).unwrap();
        let client = ClientQuadratic::new(0, vec![comp]).unwrap();
        let p = QuadraticPopulation::from_clients(vec![client], vec![vec![0]]).unwrap();
        let out = local_update_gd(&p, 0, &Vector::from_vec(vec![2.0, 0.0]), 0.5).unwrap();
        assert_eq!(out, Vector::from_vec(vec![1.0, 0.0]));
    }

    #[test]
    fn full_participation_round_is_global_gd_step() {
        let p = pop(1, 0.4, 0.3, 0.0);
        let s = CycleSchedule::chunked(&(0..6).collect::<Vec<_>>(), 1, OrderMode::Identity, 0).unwrap();
        let w0 = Vector::from_vec(vec![0.3, -0.1, 0.7, 0.4, -0.6]);
        let cfg = RunConfig {
            eta: 0.2,
            cycle_epochs: 1,
            clients_per_round: 6,
            initial: Some(w0.clone()),
            record_iterates: true,
            ..RunConfig::default()
        };
        let log = run(&p, &s, &cfg).unwrap();
        let expected = &w0 - p.global_gradient(&w0) * 0.2;
        assert!((&log.final_model - expected).amax() < 1e-14);
    }

    #[test]
    fn two_sgd_steps_expand_in_closed_form() {
        let p = pop(1, 0.3, 0.2, 0.0);
        let w = Vector::from_vec(vec![0.5, 1.0, -1.0, 0.4, -0.6]);
        let eta = 0.1;
        let mut rng = RngStream::new(1).rng();
        let out = local_update_sgd(&p, 2, &w, eta, 2, 1, &mut rng).unwrap();
        let h = p.client(2).unwrap().mean_hessian().clone();
        let b = p.client(2).unwrap().mean_linear().clone();
        let two = Matrix::identity(5, 5) * 2.0 - &h * eta;
        let expected = &w - (two * (&h * &w - b)) * eta;
        assert!((out - expected).amax() < 1e-13);
    }

    #[test]
    fn ssgd_order_changes_result_by_second_order_term() {
        let p = pop(2, 0.0, 0.0, 0.5);
        let w = Vector::from_vec(vec![0.2, 0.1, -0.3, 0.4, -0.6]);
        let eta = 0.05;
        let a = local_update_ssgd(&p, 0, &w, eta, &[0, 1]).unwrap();
        let b = local_update_ssgd(&p, 0, &w, eta, &[1, 0]).unwrap();
        let c = p.client(0).unwrap();
        let h = c.mean_hessian();
        let z0 = c.components()[0].linear();
        let z1 = c.components()[1].linear();
        // order (0,1) minus order (1,0) is η² H (b_1 − b_0)
        let expected = h * (z1 - z0) * (eta * eta);
        assert!(expected.norm() > 1e-6);
        assert!((&a - &b - expected).amax() < 1e-14);
        assert!(local_update_ssgd(&p, 0, &w, eta, &[0, 0]).is_err());
    }

    #[test]
    fn identical_components_make_order_irrelevant() {
        let p = pop(3, 0.2, 0.1, 0.0);
        let w = Vector::from_vec(vec![0.2, 0.1, -0.3, 0.4, -0.6]);
        let a = local_update_ssgd(&p, 1, &w, 0.1, &[0, 1, 2]).unwrap();
        let b = local_update_ssgd(&p, 1, &w, 0.1, &[2, 0, 1]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reduction_chain_is_exact() {
        let p = pop(1, 0.3, 0.2, 0.0);
        let s = schedule(&p);
        let gd = run(&p, &s, &config(Mode::Gd)).unwrap();
        let ssgd = run(&p, &s, &config(Mode::Ssgd)).unwrap();
        let sgd = run(&p, &s, &RunConfig { local_steps: 1, ..config(Mode::Sgd) }).unwrap();
        assert_eq!(gd.iterates, ssgd.iterates);
        assert_eq!(gd.iterates, sgd.iterates);
    }

    #[test]
    fn zero_variance_sgd_ignores_seed() {
        let p = pop(4, 0.3, 0.2, 0.0);
        let s = schedule(&p);
        let cfg = RunConfig {
            local_steps: 3,
            minibatch: Some(1),
            clients_per_round: 2,
            ..config(Mode::Sgd)
        };
        // groups have two clients, so selection is deterministic as well
        let a = run(&p, &s, &cfg).unwrap();
        let b = run(&p, &s, &RunConfig { seed: 99, ..cfg }).unwrap();
        assert_eq!(a.iterates, b.iterates);
    }

    #[test]
    fn empty_horizon_returns_initial_model() {
        let p = pop(1, 0.3, 0.2, 0.0);
        let w0 = Vector::from_vec(vec![1.0, 2.0, 3.0, 0.4, -0.6]);
        let cfg = RunConfig {
            cycle_epochs: 0,
            initial: Some(w0.clone()),
            ..config(Mode::Gd)
        };
        let log = run(&p, &schedule(&p), &cfg).unwrap();
        assert!(log.records.is_empty());
        assert_eq!(log.final_model, w0);
    }

    #[test]
    fn runs_are_deterministic() {
        let p = pop(4, 0.3, 0.2, 0.2);
        let s = schedule(&p);
        for mode in [Mode::Gd, Mode::Sgd, Mode::Ssgd] {
            let cfg = RunConfig {
                minibatch: Some(2),
                local_steps: 2,
                ..config(mode)
            };
            assert_eq!(run(&p, &s, &cfg).unwrap(), run(&p, &s, &cfg).unwrap());
        }
    }

    #[test]
    fn evaluation_counts_follow_mode() {
        let p = pop(4, 0.3, 0.2, 0.2);
        let s = schedule(&p);
        let base = RunConfig {
            clients_per_round: 2,
            local_steps: 3,
            minibatch: Some(2),
            ..config(Mode::Gd)
        };
        let rounds = 12u64;
        for (mode, per_round) in [(Mode::Gd, 2u64), (Mode::Sgd, 6), (Mode::Ssgd, 8)] {
            let log = run(&p, &s, &RunConfig { mode, ..base.clone() }).unwrap();
            assert_eq!(log.rounds(), 12);
            assert_eq!(log.total_evals(), rounds * per_round);
            for (t, r) in log.records.iter().enumerate() {
                assert_eq!(r.t, t);
                assert_eq!(r.evals, (t as u64 + 1) * per_round);
            }
        }
    }

    #[test]
    fn gd_on_identical_clients_is_monotone() {
        let p = pop(1, 0.0, 0.0, 0.0);
        let s = schedule(&p);
        let cfg = RunConfig {
            eta: 1.0 / p.constants().l,
            cycle_epochs: 10,
            initial: Some(Vector::from_vec(vec![3.0, -2.0, 1.0, 0.4, -0.6])),
            ..config(Mode::Gd)
        };
        let log = run(&p, &s, &cfg).unwrap();
        let mut prev = log.initial_loss_gap;
        for r in &log.records {
            assert!(r.loss_gap <= prev);
            prev = r.loss_gap;
        }
    }

    #[test]
    fn divergence_is_reported() {
        let p = pop(1, 0.0, 0.0, 0.0);
        let cfg = RunConfig {
            eta: 5.0,
            cycle_epochs: 200,
            initial: Some(Vector::from_element(5, 1.0)),
            ..config(Mode::Gd)
        };
        assert!(matches!(run(&p, &schedule(&p), &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn theorem_step_size_example() {
        let mut c = pop(1, 0.0, 0.0, 0.0).constants().clone();
        c.mu = 1.0;
        c.l = 1.0;
        let s = theoretical_step_size(Mode::Gd, &c, 12, 3, 4, 1, 1, 300).unwrap();
        let expected = (12.0f64 * 300.0 * 300.0 / 9.0).ln() / 1200.0;
        assert!((s.eta_theorem - expected).abs() < 1e-15);
        assert!((s.eta_theorem - 9.746e-3).abs() < 1e-5);
        assert_eq!(s.eta_local, 4.0 * s.eta_theorem);
        let sgd = theoretical_step_size(Mode::Sgd, &c, 12, 3, 4, 1, 1, 300).unwrap();
        assert_eq!(sgd.eta_theorem, s.eta_theorem);
    }

    #[test]
    fn horizon_warning_tracks_condition_number() {
        let mut c = pop(1, 0.0, 0.0, 0.0).constants().clone();
        c.mu = 1.0;
        c.l = 1.0;
        let t = 300;
        let ok = theoretical_step_size(Mode::Gd, &c, 12, 3, 4, 1, 1, t).unwrap();
        assert!(!ok.below_bound);
        c.l = 2.0;
        let short = theoretical_step_size(Mode::Gd, &c, 12, 3, 4, 1, 1, t).unwrap();
        assert!(short.below_bound);
        c.mu = 0.0;
        assert!(theoretical_step_size(Mode::Gd, &c, 12, 3, 4, 1, 1, t).is_err());
    }

    #[test]
    fn csv_has_one_row_per_round() {
        let p = pop(1, 0.3, 0.2, 0.0);
        let log = run(&p, &schedule(&p), &RunConfig { clients_per_round: 2, ..config(Mode::Gd) }).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,k,i,clients,loss_gap,grad_norm,evals");
        assert_eq!(lines.len(), 13);
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields.len(), 7);
        assert_eq!(fields[3].split(';').count(), 2);
        assert_eq!(fields[4].parse::<f64>().unwrap(), log.records[0].loss_gap);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("SSGD".parse::<Mode>().unwrap(), Mode::Ssgd);
        assert!("adam".parse::<Mode>().is_err());
        assert_eq!(Mode::Sgd.to_string(), "sgd");
    }
}
