//! One cycle-epoch of local GD on quadratics, written as a gradient step at
//! the start of the cycle plus a second-order correction.
//!
//! With sum-convention step `η`, round gradients `q̄_i = Σ_{m∈S_i} ∇F_m(w0)`
//! and round Hessians `S̄_i = Σ_{m∈S_i} H_m`, the cycle satisfies
//!
//! ```text
//! w_K̄ − w0 = −η Σ_i q̄_i + η² r̄,
//! r̄ = Σ_{i=1}^{K̄−1} (I − ηS̄_K̄)…(I − ηS̄_{i+2}) S̄_{i+1} Σ_{j≤i} q̄_j.
//! ```

use itertools::Itertools;

use super::{binomial, CompensatedSum};
use crate::engine::gd_cycle_with_selections;
use crate::error::invalid;
use crate::quadratic::QuadraticPopulation;
use crate::schedule::CycleSchedule;
use crate::{Error, Matrix, Population, Result, Vector};

use super::wor::MAX_SUBSETS;

#[derive(Debug, Clone, PartialEq)]
pub struct CycleDecomposition {
    /// `−η Σ_i q̄_i`.
    pub linear_term: Vector,
    /// `η² r̄`.
    pub noise_term: Vector,
    pub reconstructed_delta: Vector,
    /// Displacement produced by the engine over the same selections.
    pub actual_delta: Vector,
    pub residual_norm: f64,
}

impl CycleDecomposition {
    /// Residual relative to the size of the actual displacement.
    pub fn relative_residual(&self) -> f64 {
        self.residual_norm / self.actual_delta.norm().max(f64::MIN_POSITIVE)
    }
}

fn round_terms(pop: &QuadraticPopulation, w0: &Vector, selected: &[Vec<usize>]) -> Result<(Vec<Vector>, Vec<Matrix>)> {
    let d = pop.dim();
    let mut qs = Vec::with_capacity(selected.len());
    let mut ss = Vec::with_capacity(selected.len());
    for clients in selected {
        let mut q = Vector::zeros(d);
        let mut s = Matrix::zeros(d, d);
        for &m in clients {
            let c = pop.client(m)?;
            q += c.gradient(w0);
            s += c.mean_hessian();
        }
        qs.push(q);
        ss.push(s);
    }
    Ok((qs, ss))
}

/// `r̄` from the round gradients and Hessians by the product formula.
pub fn correction_term(qs: &[Vector], ss: &[Matrix], eta: f64) -> Vector {
    let k_bar = qs.len();
    let d = qs.first().map_or(0, Vector::len);
    let mut r = Vector::zeros(d);
    let mut prefix = Vector::zeros(d);
    for i in 1..k_bar {
        prefix += &qs[i - 1];
        // S̄_{i+1} is ss[i]; the product runs over j = i+2..=K̄, larger j on the left
        let mut v = &ss[i] * &prefix;
        for s in ss.iter().take(k_bar).skip(i + 1) {
            v = &v - s * &v * eta;
        }
        r += v;
    }
    r
}

/// Splits one cycle of local GD from `w0` into its gradient and correction
/// parts and compares the sum with the engine's trajectory.
///
/// `eta_sum` is the sum-convention step; every round must select the same
/// number of clients `N` so the engine can run at `η_local = N · eta_sum`.
pub fn decompose_cycle(
    pop: &QuadraticPopulation,
    w0: &Vector,
    selected: &[Vec<usize>],
    eta_sum: f64,
) -> Result<CycleDecomposition> {
    if selected.is_empty() {
        return Err(invalid("need at least one round"));
    }
    let n = selected[0].len();
    if n == 0 || selected.iter().any(|s| s.len() != n) {
        return Err(invalid("every round must select the same positive number of clients"));
    }
    if w0.len() != pop.dim() {
        return Err(Error::DimensionMismatch {
            expected: pop.dim(),
            got: w0.len(),
        });
    }
    let (qs, ss) = round_terms(pop, w0, selected)?;
    let total_q = qs.iter().fold(Vector::zeros(w0.len()), |a, q| a + q);
    let linear_term = -total_q * eta_sum;
    let noise_term = correction_term(&qs, &ss, eta_sum) * (eta_sum * eta_sum);
    let reconstructed_delta = &linear_term + &noise_term;
    let trajectory = gd_cycle_with_selections(pop, w0, selected, eta_sum * n as f64)?;
    let actual_delta = trajectory.last().expect("non-empty trajectory") - w0;
    let residual_norm = (&reconstructed_delta - &actual_delta).norm();
    Ok(CycleDecomposition {
        linear_term,
        noise_term,
        reconstructed_delta,
        actual_delta,
        residual_norm,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationCheck {
    /// Engine end-of-cycle model averaged over every selection outcome.
    pub mean_model: Vector,
    /// `w0 − η K̄ N ∇F(w0) + η² E[r̄]`.
    pub predicted: Vector,
    pub outcomes: u128,
    pub max_abs_error: f64,
}

/// Averages the end-of-cycle model over every equiprobable selection of `n`
/// clients per group and compares it with the expected gradient step plus the
/// averaged correction.
pub fn expected_cycle_check(
    pop: &QuadraticPopulation,
    schedule: &CycleSchedule,
    w0: &Vector,
    n: usize,
    eta_sum: f64,
) -> Result<ExpectationCheck> {
    let g = schedule.group_size();
    if n == 0 || n > g {
        return Err(invalid(format!("clients per round {n} must lie in 1..={g}")));
    }
    let per_group = binomial(g, n);
    let outcomes = (0..schedule.k_bar()).try_fold(1u128, |acc, _| acc.checked_mul(per_group));
    let outcomes = match outcomes {
        Some(o) if o <= MAX_SUBSETS => o,
        Some(o) => return Err(Error::EnumerationTooLarge(o)),
        None => return Err(Error::EnumerationTooLarge(u128::MAX)),
    };
    let groups: Vec<Vec<usize>> = (1..=schedule.k_bar())
        .map(|i| schedule.group_at(i).map(<[usize]>::to_vec))
        .collect::<Result<_>>()?;
    let d = pop.dim();
    let mut model_sum = vec![CompensatedSum::default(); d];
    let mut r_sum = vec![CompensatedSum::default(); d];
    for selection in groups.iter().map(|grp| grp.iter().copied().combinations(n)).multi_cartesian_product() {
        let traj = gd_cycle_with_selections(pop, w0, &selection, eta_sum * n as f64)?;
        let end = traj.last().expect("non-empty trajectory");
        let (qs, ss) = round_terms(pop, w0, &selection)?;
        let r = correction_term(&qs, &ss, eta_sum);
        for j in 0..d {
            model_sum[j].add(end[j]);
            r_sum[j].add(r[j]);
        }
    }
    let count = outcomes as f64;
    let mean_model = Vector::from_iterator(d, model_sum.iter().map(|s| s.value() / count));
    let mean_r = Vector::from_iterator(d, r_sum.iter().map(|s| s.value() / count));
    let k_bar = schedule.k_bar() as f64;
    let predicted = w0 - pop.global_gradient(w0) * (eta_sum * k_bar * n as f64) + mean_r * (eta_sum * eta_sum);
    let max_abs_error = (&mean_model - &predicted).amax();
    Ok(ExpectationCheck {
        mean_model,
        predicted,
        outcomes,
        max_abs_error,
    })
}
