//! Variance of the mean of a uniform without-replacement sample.

use itertools::Itertools;

use super::{binomial, CompensatedSum};
use crate::error::invalid;
use crate::{Error, Result, Vector};

/// Largest number of subsets the exact enumeration will visit.
pub const MAX_SUBSETS: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorCheck {
    /// `E‖mean(sample) − x̄‖²`, averaged over every size-`N` subset.
    pub lhs: f64,
    /// `(K − N) / (N K (K − 1)) · Σ_k ‖x_k − x̄‖²`.
    pub rhs: f64,
    pub subsets: u128,
}

impl WorCheck {
    pub fn relative_error(&self) -> f64 {
        let scale = self.lhs.abs().max(self.rhs.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.lhs - self.rhs).abs() / scale
        }
    }
}

fn mean_of(vectors: &[Vector], idx: impl Iterator<Item = usize>, count: usize) -> Vector {
    let mut acc = Vector::zeros(vectors[0].len());
    for k in idx {
        acc += &vectors[k];
    }
    acc / count as f64
}

/// Compares the enumerated variance of a without-replacement sample mean with
/// its closed form.
pub fn wor_variance_check(vectors: &[Vector], n: usize) -> Result<WorCheck> {
    let k = vectors.len();
    if k == 0 || n == 0 || n > k {
        return Err(invalid(format!("sample size {n} must lie in 1..={k}")));
    }
    let d = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: v.len(),
        });
    }
    let subsets = binomial(k, n);
    if subsets > MAX_SUBSETS {
        return Err(Error::EnumerationTooLarge(subsets));
    }
    let xbar = mean_of(vectors, 0..k, k);
    let lhs: CompensatedSum = (0..k)
        .combinations(n)
        .map(|s| (mean_of(vectors, s.into_iter(), n) - &xbar).norm_squared())
        .collect();
    let lhs = lhs.value() / subsets as f64;
    let rhs = if n == k {
        0.0
    } else {
        let spread: CompensatedSum = vectors.iter().map(|x| (x - &xbar).norm_squared()).collect();
        (k - n) as f64 / (n as f64 * k as f64 * (k - 1) as f64) * spread.value()
    };
    Ok(WorCheck { lhs, rhs, subsets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn basis(k: usize) -> Vec<Vector> {
        (0..k)
            .map(|j| {
                let mut e = Vector::zeros(k);
                e[j] = 1.0;
                e
            })
            .collect()
    }

    #[test]
    fn full_sample_has_no_variance() {
        let c = wor_variance_check(&basis(5), 5).unwrap();
        assert_eq!((c.lhs, c.rhs), (0.0, 0.0));
    }

    #[test]
    fn standard_basis_pair_sample() {
        let c = wor_variance_check(&basis(4), 2).unwrap();
        // each ‖e_k − x̄‖² = 3/4, so rhs = 2/24 · 3 = 1/4
        assert!((c.rhs - 0.25).abs() < 1e-15);
        assert!((c.lhs - c.rhs).abs() < 1e-12);
        assert_eq!(c.subsets, 6);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(wor_variance_check(&basis(3), 0).is_err());
        assert!(wor_variance_check(&basis(3), 4).is_err());
        let many: Vec<Vector> = (0..40).map(|j| Vector::from_element(1, j as f64)).collect();
        assert!(matches!(wor_variance_check(&many, 20), Err(Error::EnumerationTooLarge(_))));
    }

    proptest! {
        #[test]
        fn closed_form_matches_enumeration(
            k in 2usize..8,
            frac in 0.0f64..1.0,
            d in 1usize..4,
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let n = 1 + ((k - 1) as f64 * frac) as usize;
            let mut rng = crate::schedule::RngStream::new(seed).rng();
            let xs: Vec<Vector> = (0..k)
                .map(|_| Vector::from_fn(d, |_, _| rng.random_range(-3.0..3.0)))
                .collect();
            let c = wor_variance_check(&xs, n).unwrap();
            prop_assert!(c.relative_error() <= 1e-12, "{:?}", c);
        }
    }
}
