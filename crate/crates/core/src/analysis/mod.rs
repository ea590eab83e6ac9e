//! Exact identities, cost models and measurement tools for checking the
//! convergence theory numerically.

pub mod cost;
pub mod decomposition;
pub mod heterogeneity;
pub mod rate;
pub mod wor;

pub use cost::{cost_gd, cost_sgd, finite_population_factor, CostInputs, CostReport, Verdict};
pub use decomposition::{decompose_cycle, expected_cycle_check, CycleDecomposition, ExpectationCheck};
pub use heterogeneity::{estimate_heterogeneity, HeterogeneityEstimate};
pub use rate::{fit_power_law, fit_rate, sign_changes_per_cycle, RateFit};
pub use wor::{wor_variance_check, WorCheck};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl std::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// `n choose k` without overflow for the sizes the enumeration checks accept.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for j in 0..k {
        acc = acc * (n - j) as u128 / (j + 1) as u128;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let s: CompensatedSum = [1e16, 1.0, -1e16].into_iter().collect();
        assert_eq!(s.value(), 1.0);
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(5, 3), 10);
        assert_eq!(binomial(8, 4), 70);
        assert_eq!(binomial(3, 4), 0);
        assert_eq!(binomial(60, 30), 118_264_581_564_861_424);
    }
}
