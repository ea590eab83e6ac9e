//! The client-objective abstraction the engine and analysis code run against.

use crate::schedule::StreamRng;
use crate::{Error, Result, Vector};

/// A finite population of client objectives `F_1, ..., F_M` whose average is
/// the global objective `F`.
///
/// Each client objective is the mean of `B` components (`F_m = (1/B) Σ F_{m,l}`)
/// and draws minibatches from a pool of sample units (components for
/// quadratics, data rows for logistic objectives).
pub trait Population: Send + Sync {
    /// Model dimension.
    fn dim(&self) -> usize;

    fn num_clients(&self) -> usize;

    /// Number of components `B` at client `m`.
    fn num_components(&self, m: usize) -> usize;

    /// Number of units a local-SGD minibatch is drawn from at client `m`.
    fn num_sample_units(&self, m: usize) -> usize;

    /// The population's native grouping, in traversal order.
    fn groups(&self) -> &[Vec<usize>];

    fn client_loss(&self, m: usize, w: &Vector) -> Result<f64>;

    fn client_gradient(&self, m: usize, w: &Vector) -> Result<Vector>;

    fn component_gradient(&self, m: usize, l: usize, w: &Vector) -> Result<Vector>;

    /// Gradient over `batch` sample units drawn uniformly without replacement.
    /// A batch covering every unit is the full client gradient.
    fn minibatch_gradient(
        &self,
        m: usize,
        w: &Vector,
        batch: usize,
        rng: &mut StreamRng,
    ) -> Result<Vector>;

    /// Minimum of the global objective, when known in closed form.
    fn optimum_value(&self) -> Option<f64> {
        None
    }

    /// `F(w) - F*` when the optimum is known.
    fn loss_gap(&self, w: &Vector) -> Option<f64> {
        let f_star = self.optimum_value()?;
        self.loss(w).ok().map(|f| f - f_star)
    }

    fn loss(&self, w: &Vector) -> Result<f64> {
        let m = self.num_clients();
        let mut total = 0.0;
        for c in 0..m {
            total += self.client_loss(c, w)?;
        }
        Ok(total / m as f64)
    }

    fn gradient(&self, w: &Vector) -> Result<Vector> {
        let m = self.num_clients();
        let mut acc = Vector::zeros(self.dim());
        for c in 0..m {
            acc += self.client_gradient(c, w)?;
        }
        Ok(acc / m as f64)
    }

    /// Clients in group order, the order used when regrouping into a
    /// different number of groups.
    fn client_order(&self) -> Vec<usize> {
        self.groups().iter().flatten().copied().collect()
    }
}

pub(crate) fn check_client(m: usize, len: usize) -> Result<()> {
    if m >= len {
        return Err(Error::IndexOutOfRange {
            what: "client",
            index: m,
            len,
        });
    }
    Ok(())
}

pub(crate) fn check_dim(w: &Vector, dim: usize) -> Result<()> {
    if w.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: w.len(),
        });
    }
    Ok(())
}
