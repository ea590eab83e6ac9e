//! Empirical gradient-deviation constants of an arbitrary population.

use crate::error::invalid;
use crate::{Population, Result, Vector};

/// Minimum number of probe points.
pub const MIN_PROBES: usize = 5;

/// Largest observed gradient deviations over a probe set. These are lower
/// bounds on the true suprema.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeterogeneityEstimate {
    /// Client gradient vs. its group mean.
    pub gamma: f64,
    /// Group mean gradient vs. the global gradient.
    pub alpha: f64,
    /// Client gradient vs. the global gradient.
    pub nu: f64,
    /// Component gradient vs. its client gradient.
    pub nu_bar: f64,
    pub probes: usize,
}

pub fn estimate_heterogeneity(pop: &dyn Population, probes: &[Vector]) -> Result<HeterogeneityEstimate> {
    if probes.len() < MIN_PROBES {
        return Err(invalid(format!(
            "need at least {MIN_PROBES} probe points, got {}",
            probes.len()
        )));
    }
    let mut est = HeterogeneityEstimate {
        gamma: 0.0,
        alpha: 0.0,
        nu: 0.0,
        nu_bar: 0.0,
        probes: probes.len(),
    };
    for w in probes {
        let grads = (0..pop.num_clients())
            .map(|m| pop.client_gradient(m, w))
            .collect::<Result<Vec<_>>>()?;
        let global = grads.iter().fold(Vector::zeros(w.len()), |a, g| a + g) / grads.len() as f64;
        for group in pop.groups() {
            let mean = group.iter().fold(Vector::zeros(w.len()), |a, &m| a + &grads[m]) / group.len() as f64;
            est.alpha = est.alpha.max((&mean - &global).norm());
            for &m in group {
                est.gamma = est.gamma.max((&grads[m] - &mean).norm());
            }
        }
        for (m, g) in grads.iter().enumerate() {
            est.nu = est.nu.max((g - &global).norm());
            for l in 0..pop.num_components(m) {
                est.nu_bar = est.nu_bar.max((pop.component_gradient(m, l, w)? - g).norm());
            }
        }
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadratic::{make_population, QuadraticSpec};
    use crate::schedule::RngStream;
    use rand::Rng;

    fn probes(d: usize, count: usize, seed: u64) -> Vec<Vector> {
        let mut rng = RngStream::new(seed).rng();
        (0..count)
            .map(|_| Vector::from_fn(d, |_, _| rng.random_range(-5.0..5.0)))
            .collect()
    }

    #[test]
    fn shared_hessian_targets_are_recovered() {
        let spec = QuadraticSpec::homogeneous(6, 8, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2)
            .with_components(4)
            .with_heterogeneity(0.5, 0.2, 0.4);
        let pop = make_population(&spec).unwrap();
        let est = estimate_heterogeneity(&pop, &probes(6, 5, 1)).unwrap();
        assert!((est.gamma - 0.5).abs() < 1e-10);
        assert!((est.alpha - 0.2).abs() < 1e-10);
        assert!((est.nu_bar - 0.4).abs() < 1e-10);
        assert!(est.nu <= est.gamma + est.alpha + 1e-12);
    }

    #[test]
    fn homogeneous_population_estimates_zero() {
        let spec = QuadraticSpec::homogeneous(3, 4, 2, vec![1.0, 2.0, 3.0], 2);
        let pop = make_population(&spec).unwrap();
        let est = estimate_heterogeneity(&pop, &probes(3, 6, 3)).unwrap();
        assert_eq!((est.gamma, est.alpha, est.nu, est.nu_bar), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn too_few_probes_rejected() {
        let spec = QuadraticSpec::homogeneous(3, 4, 2, vec![1.0, 2.0, 3.0], 2);
        let pop = make_population(&spec).unwrap();
        assert!(estimate_heterogeneity(&pop, &probes(3, 4, 3)).is_err());
    }

    #[test]
    fn triangle_bound_holds_on_perturbed_population() {
        let mut spec = QuadraticSpec::homogeneous(5, 6, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0], 9)
            .with_components(2)
            .with_heterogeneity(0.3, 0.6, 0.1);
        spec.hessian_perturbation = 0.4;
        let pop = make_population(&spec).unwrap();
        let est = estimate_heterogeneity(&pop, &probes(5, 10, 4)).unwrap();
        assert!(est.nu <= est.gamma + est.alpha + 1e-12);
    }
}
