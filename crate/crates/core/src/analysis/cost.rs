//! Total-cost models for reaching a target error, up to a shared constant.
//!
//! Every expression takes the per-round cost `c` as its only proportionality
//! knob, so comparisons between them are comparisons at equal hidden
//! constants.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::Result;

/// Sampling-variance factor `(g − N) / (g − 1)` for `N` of `g = M/K̄` clients
/// drawn without replacement. Defined as 0 when `N = g`, including `g = 1`.
pub fn finite_population_factor(clients: usize, k_bar: usize, per_round: usize) -> Result<f64> {
    if k_bar == 0 || !clients.is_multiple_of(k_bar) {
        return Err(invalid(format!("{k_bar} groups do not divide {clients} clients")));
    }
    let g = clients / k_bar;
    if per_round == 0 || per_round > g {
        return Err(invalid(format!("clients per round {per_round} must lie in 1..={g}")));
    }
    if per_round == g {
        return Ok(0.0);
    }
    Ok((g - per_round) as f64 / (g - 1) as f64)
}

fn check_common(eps: f64, c_unit: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(invalid("target error must be positive"));
    }
    if !(c_unit > 0.0) || !c_unit.is_finite() {
        return Err(invalid("per-round cost must be positive"));
    }
    Ok(())
}

/// Dominant-term cost of local GD: `c K̄ γ² / (ε N) · (g − N)/(g − 1)`.
pub fn cost_gd(eps: f64, c_unit: f64, clients: usize, k_bar: usize, per_round: usize, gamma: f64) -> Result<f64> {
    check_common(eps, c_unit)?;
    let f = finite_population_factor(clients, k_bar, per_round)?;
    Ok(c_unit * k_bar as f64 * gamma * gamma / (eps * per_round as f64) * f)
}

/// Local-SGD cost: the GD term plus `c σ² K̄ / (ε N τ)`.
#[allow(clippy::too_many_arguments)]
pub fn cost_sgd(
    eps: f64,
    c_unit: f64,
    clients: usize,
    k_bar: usize,
    per_round: usize,
    gamma: f64,
    sigma2: f64,
    tau: usize,
) -> Result<f64> {
    if tau == 0 {
        return Err(invalid("local steps must be positive"));
    }
    let gd = cost_gd(eps, c_unit, clients, k_bar, per_round, gamma)?;
    Ok(gd + c_unit * sigma2 * k_bar as f64 / (eps * per_round as f64 * tau as f64))
}

/// Parameters of the full-cycle cost comparison, which fixes `K̄ = M/N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostInputs {
    pub eps: f64,
    pub c_unit: f64,
    pub clients: f64,
    pub per_round: f64,
    pub k_bar: f64,
    pub components: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub nu: f64,
    pub nu_bar: f64,
    pub sigma2: f64,
    pub tau: usize,
    pub mu: f64,
    pub kappa: f64,
}

impl CostInputs {
    /// Inputs with `K̄ = M/N`, unit constants and no stochastic noise.
    pub fn new(eps: f64, clients: f64, per_round: f64, components: usize) -> Self {
        Self {
            eps,
            c_unit: 1.0,
            clients,
            per_round,
            k_bar: clients / per_round,
            components,
            gamma: 0.0,
            alpha: 0.0,
            nu: 0.0,
            nu_bar: 0.0,
            sigma2: 0.0,
            tau: 1,
            mu: 1.0,
            kappa: 1.0,
        }
    }

    /// Sets `γ`, `α`, `ν̄` and `ν = γ + α`.
    pub fn with_heterogeneity(mut self, gamma: f64, alpha: f64, nu_bar: f64) -> Self {
        self.gamma = gamma;
        self.alpha = alpha;
        self.nu_bar = nu_bar;
        self.nu = gamma + alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_common(self.eps, self.c_unit)?;
        if !(self.clients >= 1.0) || !(self.per_round >= 1.0) || self.per_round > self.clients {
            return Err(invalid("need 1 ≤ N ≤ M"));
        }
        let full = self.clients / self.per_round;
        if (self.k_bar - full).abs() > 1e-12 * full {
            return Err(invalid(format!(
                "full-cycle comparison needs K̄ = M/N = {full}, got {}",
                self.k_bar
            )));
        }
        if self.components == 0 || self.tau == 0 {
            return Err(invalid("components and local steps must be positive"));
        }
        let params = [self.gamma, self.alpha, self.nu, self.nu_bar, self.sigma2];
        if params.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(invalid("heterogeneity and variance constants must be non-negative"));
        }
        if !(self.mu > 0.0) || !(self.kappa >= 1.0) {
            return Err(invalid("need μ > 0 and κ ≥ 1"));
        }
        Ok(())
    }

    fn root_b(&self) -> f64 {
        (self.components as f64).sqrt()
    }

    /// Weight `κ/√μ` on the heterogeneity terms.
    fn condition_weight(&self) -> f64 {
        self.kappa / self.mu.sqrt()
    }
}

/// Local GD with `K̄ = M/N`: `c/√ε · (K̄/√M + (κ/√μ) K̄ α)`.
pub fn cost_gd_full_cycle(x: &CostInputs) -> Result<f64> {
    x.validate()?;
    let tail = x.condition_weight() * x.k_bar * x.alpha;
    Ok(x.c_unit / x.eps.sqrt() * (x.k_bar / x.clients.sqrt() + tail))
}

/// Local shuffled SGD with `K̄ = M/N`:
/// `c/√ε · (K̄/√(MB) + (κ/√μ)(ν + K̄α + ν̄/√B))`.
pub fn cost_ssgd_full_cycle(x: &CostInputs) -> Result<f64> {
    x.validate()?;
    let rb = x.root_b();
    let tail = x.condition_weight() * (x.nu + x.k_bar * x.alpha + x.nu_bar / rb);
    Ok(x.c_unit / x.eps.sqrt() * (x.k_bar / (x.clients * x.components as f64).sqrt() + tail))
}

/// Full-participation local reshuffling: `K̄ c/√ε · (1/√(MB) + ν + ν̄/√B)`.
pub fn cost_local_rr(x: &CostInputs) -> Result<f64> {
    x.validate()?;
    let rb = x.root_b();
    Ok(x.k_bar * x.c_unit / x.eps.sqrt()
        * (1.0 / (x.clients * x.components as f64).sqrt() + x.nu + x.nu_bar / rb))
}

/// `1 − 1/√B − ν − ν̄/√B > 0`, the condition under which shuffled local
/// passes beat a single local GD step. `None` when `B = 1`, where the two
/// procedures coincide.
pub fn shuffling_condition(x: &CostInputs) -> Option<bool> {
    if x.components <= 1 {
        return None;
    }
    let rb = x.root_b();
    Some(1.0 - 1.0 / rb - x.nu - x.nu_bar / rb > 0.0)
}

/// `N (1 + α / (γ + ν̄/√B))`; populations larger than this favour cyclic
/// shuffled SGD over local reshuffling. Infinite when `γ = ν̄ = 0 < α`.
pub fn local_rr_threshold(x: &CostInputs) -> f64 {
    let denom = x.gamma + x.nu_bar / x.root_b();
    if x.alpha == 0.0 {
        x.per_round
    } else if denom == 0.0 {
        f64::INFINITY
    } else {
        x.per_round * (1.0 + x.alpha / denom)
    }
}

/// One predicted comparison and the direct numeric outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub comparison: String,
    /// Outcome implied by the closed-form condition, `None` when the condition
    /// does not apply.
    pub predicted: Option<bool>,
    /// Outcome of evaluating both costs.
    pub observed: bool,
    /// Name of the condition that produced `predicted`.
    pub rule: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub c_unit: f64,
    pub epsilon: f64,
    /// `(label, cost)` in a fixed order: `GD@K̄`, `GD@1`, `SGD@K̄`, `SGD@1`,
    /// `SSGD@K̄`, `LocalRR`.
    pub costs: Vec<(String, f64)>,
    pub verdicts: Vec<Verdict>,
    /// Set when `B = 1`, where shuffled SGD reduces to GD.
    pub degenerate: bool,
    pub local_rr_threshold: f64,
}

impl CostReport {
    pub fn cost(&self, label: &str) -> Option<f64> {
        self.costs.iter().find(|(l, _)| l == label).map(|(_, c)| *c)
    }

    pub fn csv_header() -> &'static str {
        "epsilon,c_unit,gd_full,gd_single,sgd_full,sgd_single,ssgd_full,local_rr,shuffling_condition,rr_threshold,degenerate"
    }

    pub fn csv_row(&self) -> String {
        let costs: Vec<String> = self.costs.iter().map(|(_, c)| format!("{c:?}")).collect();
        let cond = self
            .verdicts
            .first()
            .and_then(|v| v.predicted)
            .map_or("na".to_string(), |b| b.to_string());
        format!(
            "{:?},{:?},{},{},{:?},{}",
            self.epsilon,
            self.c_unit,
            costs.join(","),
            cond,
            self.local_rr_threshold,
            self.degenerate
        )
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "cost to reach eps = {} (per-round cost {})", self.epsilon, self.c_unit)?;
        for (label, c) in &self.costs {
            writeln!(f, "  {label:<8} {c:.6}")?;
        }
        if self.degenerate {
            writeln!(f, "  B = 1: shuffled SGD coincides with GD")?;
        }
        writeln!(f, "  local RR threshold on M: {:.6}", self.local_rr_threshold)?;
        for v in &self.verdicts {
            let predicted = v.predicted.map_or("n/a".to_string(), |b| b.to_string());
            writeln!(
                f,
                "  {}: predicted {predicted}, observed {} [{}]",
                v.comparison, v.observed, v.rule
            )?;
        }
        Ok(())
    }
}

/// Evaluates every cost at `K̄ = M/N` and at `K̄ = 1`, together with the
/// closed-form conditions that predict their ordering.
pub fn cost_report(x: &CostInputs) -> Result<CostReport> {
    x.validate()?;
    let gd_full = cost_gd_full_cycle(x)?;
    let ssgd_full = cost_ssgd_full_cycle(x)?;
    let local_rr = cost_local_rr(x)?;
    let m = x.clients;
    let n = x.per_round;
    // dominant terms with K̄ = M/N (zero GD term) and K̄ = 1
    let single_factor = if m > n { (m - n) / (m - 1.0) } else { 0.0 };
    let gd_single = x.c_unit * x.gamma * x.gamma / (x.eps * n) * single_factor;
    let sgd_noise = |k: f64| x.c_unit * x.sigma2 * k / (x.eps * n * x.tau as f64);
    let sgd_full = sgd_noise(x.k_bar);
    let sgd_single = gd_single + sgd_noise(1.0);
    let threshold = local_rr_threshold(x);
    let degenerate = x.components <= 1;
    let verdicts = vec![
        Verdict {
            comparison: "SSGD@K̄ < GD@K̄".into(),
            predicted: shuffling_condition(x),
            observed: ssgd_full < gd_full,
            rule: "shuffling condition 1 - 1/sqrt(B) - nu - nu_bar/sqrt(B) > 0".into(),
        },
        Verdict {
            comparison: "SSGD@K̄ < LocalRR".into(),
            predicted: Some(m > threshold),
            observed: ssgd_full < local_rr,
            rule: "population threshold M > N(1 + alpha/(gamma + nu_bar/sqrt(B)))".into(),
        },
        Verdict {
            comparison: "SGD@K̄ <= SGD@1".into(),
            predicted: (x.gamma * x.gamma >= m * x.sigma2 / (n * x.tau as f64)).then_some(true),
            observed: sgd_full <= sgd_single,
            rule: "variance dominance gamma^2 >= M sigma^2 / (N tau)".into(),
        },
    ];
    Ok(CostReport {
        c_unit: x.c_unit,
        epsilon: x.eps,
        costs: vec![
            ("GD@K̄".into(), gd_full),
            ("GD@1".into(), gd_single),
            ("SGD@K̄".into(), sgd_full),
            ("SGD@1".into(), sgd_single),
            ("SSGD@K̄".into(), ssgd_full),
            ("LocalRR".into(), local_rr),
        ],
        verdicts,
        degenerate,
        local_rr_threshold: threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn factor_edge_cases() {
        assert_eq!(finite_population_factor(12, 6, 2).unwrap(), 0.0);
        assert_eq!(finite_population_factor(4, 4, 1).unwrap(), 0.0);
        assert!((finite_population_factor(12, 1, 2).unwrap() - 10.0 / 11.0).abs() < 1e-15);
        assert!(finite_population_factor(12, 5, 2).is_err());
        assert!(finite_population_factor(12, 4, 4).is_err());
    }

    #[test]
    fn gd_cost_examples() {
        assert_eq!(cost_gd(0.1, 1.0, 12, 6, 2, 1.0).unwrap(), 0.0);
        assert_eq!(cost_gd(0.1, 1.0, 12, 2, 2, 0.0).unwrap(), 0.0);
        let one = cost_gd(0.1, 1.0, 12, 1, 2, 1.0).unwrap();
        let two = cost_gd(0.1, 1.0, 12, 2, 2, 1.0).unwrap();
        assert!((one - 5.0 * 10.0 / 11.0).abs() < 1e-12);
        assert!((two - 8.0).abs() < 1e-12);
        assert!(two > one);
        assert!(cost_gd(0.0, 1.0, 12, 2, 2, 1.0).is_err());
    }

    #[test]
    fn sgd_cost_examples() {
        assert_eq!(
            cost_sgd(0.1, 1.0, 12, 2, 2, 0.7, 0.0, 3).unwrap(),
            cost_gd(0.1, 1.0, 12, 2, 2, 0.7).unwrap()
        );
        let c = cost_sgd(0.1, 1.0, 12, 3, 4, 1.0, 4.0, 10).unwrap();
        assert!((c - 3.0).abs() < 1e-12);
    }

    #[test]
    fn shuffling_condition_without_heterogeneity() {
        let x = CostInputs::new(0.1, 12.0, 2.0, 4);
        assert_eq!(shuffling_condition(&x), Some(true));
        let single = CostInputs::new(0.1, 12.0, 2.0, 1);
        assert_eq!(shuffling_condition(&single), None);
        assert!(cost_report(&single).unwrap().degenerate);
    }

    #[test]
    fn local_rr_threshold_example() {
        let x = CostInputs::new(0.1, 3.0, 2.0, 4).with_heterogeneity(0.5, 0.2, 0.4);
        let t = local_rr_threshold(&x);
        assert!((t - 2.0 * (1.0 + 0.2 / 0.7)).abs() < 1e-12);
        assert!(3.0 > t);
        let report = cost_report(&x).unwrap();
        assert!(report.cost("SSGD@K̄").unwrap() < report.cost("LocalRR").unwrap());
        assert_eq!(report.verdicts[1].predicted, Some(true));
        assert!(report.verdicts[1].observed);
    }

    #[test]
    fn full_cycle_requires_matching_groups() {
        let mut x = CostInputs::new(0.1, 12.0, 2.0, 4);
        x.k_bar = 3.0;
        assert!(cost_report(&x).is_err());
    }

    #[test]
    fn report_formats() {
        let x = CostInputs::new(0.1, 12.0, 2.0, 4).with_heterogeneity(0.1, 0.05, 0.1);
        let r = cost_report(&x).unwrap();
        assert_eq!(r.costs.len(), 6);
        assert!(r.costs.iter().all(|(_, c)| c.is_finite() && *c >= 0.0));
        assert_eq!(r.csv_row().split(',').count(), CostReport::csv_header().split(',').count());
        assert!(r.to_string().contains("LocalRR"));
    }

    proptest! {
        #[test]
        fn group_ordering_matches_integer_arithmetic(m in 2usize..=60, n in 1usize..=20, gamma in 0.01f64..5.0) {
            for k in 1..=m {
                if m % k != 0 || m / k < n {
                    continue;
                }
                let many = cost_gd(0.1, 1.0, m, k, n, gamma).unwrap();
                let one = cost_gd(0.1, 1.0, m, 1, n, gamma).unwrap();
                // K̄ (M − N K̄)(M − 1) against (M − N)(M − K̄), cleared of denominators
                let (mi, ni, ki) = (m as i128, n as i128, k as i128);
                let lhs = ki * (mi - ni * ki) * (mi - 1);
                let rhs = (mi - ni) * (mi - ki);
                let exact = lhs.cmp(&rhs);
                if exact != std::cmp::Ordering::Equal {
                    prop_assert_eq!(many.partial_cmp(&one).unwrap(), exact, "M={} N={} K̄={}", m, n, k);
                }
            }
        }

        #[test]
        fn costs_positive_and_finite(
            n in 1u32..6, k in 1u32..10, b in 1usize..20,
            gamma in 0.0f64..2.0, alpha in 0.0f64..2.0, nu_bar in 0.0f64..2.0,
            eps in 1e-4f64..1.0,
        ) {
            let x = CostInputs::new(eps, (n * k) as f64, n as f64, b).with_heterogeneity(gamma, alpha, nu_bar);
            let r = cost_report(&x).unwrap();
            for (label, c) in &r.costs {
                prop_assert!(c.is_finite() && *c >= 0.0, "{label} = {c}");
            }
            prop_assert!(r.cost("SSGD@K̄").unwrap() > 0.0);
            prop_assert!(r.cost("LocalRR").unwrap() > 0.0);
        }
    }
}
