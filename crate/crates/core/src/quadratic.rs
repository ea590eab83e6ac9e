//! Quadratic client populations with exactly known constants.
//!
//! Every component is `F_{m,l}(w) = ½ wᵀH w − b_{m,l}ᵀw + c`. With a Hessian
//! shared by all components, the differences between client, group and global
//! gradients are constant in `w`, so the heterogeneity constants are plain
//! norms of the linear-term offsets and can be dialled in exactly:
//!
//! ```text
//! b_{m,l} = b̄ + α·u_i + γ·s_m·v + ν̄·t_l·z
//! ```
//!
//! where the `u_i` are unit vectors (one per group) summing to zero inside a
//! `(K̄−1)`-dimensional subspace, `v` and `z` are further orthonormal
//! directions and `s_m`, `t_l` are mean-zero sign patterns with maximum
//! magnitude one.

use std::sync::Arc;

use nalgebra::SymmetricEigen;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::population::{check_client, check_dim, Population};
use crate::schedule::{RngStream, StreamRng, StreamTag};
use crate::{Error, Matrix, Result, Vector};

/// Relative tolerance used for symmetry and eigenvalue positivity checks.
const EIGEN_RTOL: f64 = 1e-10;

/// Number of random probes (in addition to `w*`) used to estimate the
/// heterogeneity constants when Hessians are not shared.
pub const ESTIMATION_PROBES: usize = 16;

#[derive(Debug, Clone)]
pub struct QuadraticComponent {
    hessian: Arc<Matrix>,
    linear: Vector,
    offset: f64,
}

impl QuadraticComponent {
    pub fn new(hessian: Matrix, linear: Vector, offset: f64) -> Result<Self> {
        validate_spd(&hessian)?;
        check_dim(&linear, hessian.nrows())?;
        Ok(Self {
            hessian: Arc::new(hessian),
            linear,
            offset,
        })
    }

    fn shared(hessian: Arc<Matrix>, linear: Vector, offset: f64) -> Self {
        Self {
            hessian,
            linear,
            offset,
        }
    }

    pub fn hessian(&self) -> &Matrix {
        &self.hessian
    }

    pub fn linear(&self) -> &Vector {
        &self.linear
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn value(&self, w: &Vector) -> f64 {
        0.5 * w.dot(&(self.hessian.as_ref() * w)) - self.linear.dot(w) + self.offset
    }

    pub fn gradient(&self, w: &Vector) -> Vector {
        self.hessian.as_ref() * w - &self.linear
    }
}

/// Client objective `F_m = (1/B) Σ_l F_{m,l}`.
#[derive(Debug, Clone)]
pub struct ClientQuadratic {
    client_index: usize,
    components: Vec<QuadraticComponent>,
    mean_hessian: Arc<Matrix>,
    mean_linear: Vector,
    mean_offset: f64,
}

impl ClientQuadratic {
    pub fn new(client_index: usize, components: Vec<QuadraticComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| invalid("a client needs at least one component"))?;
        let d = first.hessian.nrows();
        let b = components.len() as f64;
        let mut linear = Vector::zeros(d);
        let mut offset = 0.0;
        let shared = components
            .iter()
            .all(|c| Arc::ptr_eq(&c.hessian, &first.hessian));
        let mean_hessian = if shared {
            first.hessian.clone()
        } else {
            let mut h = Matrix::zeros(d, d);
            for c in &components {
                check_dim(&c.linear, d)?;
                h += c.hessian.as_ref();
            }
            Arc::new(h / b)
        };
        for c in &components {
            linear += &c.linear;
            offset += c.offset;
        }
        Ok(Self {
            client_index,
            components,
            mean_hessian,
            mean_linear: linear / b,
            mean_offset: offset / b,
        })
    }

    pub fn client_index(&self) -> usize {
        self.client_index
    }

    pub fn components(&self) -> &[QuadraticComponent] {
        &self.components
    }

    pub fn mean_hessian(&self) -> &Matrix {
        &self.mean_hessian
    }

    /// Mean of the component linear terms, the client's own `b_m`.
    pub fn mean_linear(&self) -> &Vector {
        &self.mean_linear
    }

    pub fn value(&self, w: &Vector) -> f64 {
        0.5 * w.dot(&(self.mean_hessian.as_ref() * w)) - self.mean_linear.dot(w) + self.mean_offset
    }

    pub fn gradient(&self, w: &Vector) -> Vector {
        self.mean_hessian.as_ref() * w - &self.mean_linear
    }
}

/// Construction parameters; a population is re-derivable from these alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    pub dim: usize,
    pub clients: usize,
    pub groups: usize,
    pub components: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub nu_bar: f64,
    pub spectrum: Vec<f64>,
    pub seed: u64,
    /// Relative per-client perturbation of the Hessian spectrum. Zero keeps
    /// the Hessian shared and the constants exact.
    #[serde(default)]
    pub hessian_perturbation: f64,
}

impl QuadraticSpec {
    /// Shared-Hessian spec with no heterogeneity.
    pub fn homogeneous(dim: usize, clients: usize, groups: usize, spectrum: Vec<f64>, seed: u64) -> Self {
        Self {
            dim,
            clients,
            groups,
            components: 1,
            gamma: 0.0,
            alpha: 0.0,
            nu_bar: 0.0,
            spectrum,
            seed,
            hessian_perturbation: 0.0,
        }
    }

    pub fn with_heterogeneity(mut self, gamma: f64, alpha: f64, nu_bar: f64) -> Self {
        self.gamma = gamma;
        self.alpha = alpha;
        self.nu_bar = nu_bar;
        self
    }

    pub fn with_components(mut self, components: usize) -> Self {
        self.components = components;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationConstants {
    /// Largest eigenvalue over all component Hessians.
    pub l: f64,
    /// Smallest eigenvalue of the averaged Hessian.
    pub mu: f64,
    pub gamma: f64,
    pub alpha: f64,
    /// `gamma + alpha`.
    pub nu: f64,
    pub nu_bar: f64,
    /// Single-component sampling variance, maximised over clients.
    pub sigma2: f64,
    pub f_star: f64,
    pub w_star: Vector,
    /// Set when the heterogeneity constants are sampled suprema over the probe
    /// set rather than exact values.
    pub estimated: bool,
}

impl PopulationConstants {
    pub fn kappa(&self) -> f64 {
        self.l / self.mu
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticPopulation {
    spec: QuadraticSpec,
    clients: Vec<ClientQuadratic>,
    groups: Vec<Vec<usize>>,
    shared_hessian: bool,
    mean_hessian: Matrix,
    mean_linear: Vector,
    mean_offset: f64,
    constants: PopulationConstants,
}

fn validate_spd(h: &Matrix) -> Result<()> {
    if !h.is_square() {
        return Err(invalid("Hessian must be square"));
    }
    let scale = h.amax().max(f64::MIN_POSITIVE);
    if (h - h.transpose()).amax() > 1e-12 * scale {
        return Err(invalid("Hessian must be symmetric"));
    }
    let eig = SymmetricEigen::new(h.clone());
    if eig.eigenvalues.min() <= EIGEN_RTOL * scale {
        return Err(invalid("Hessian must be positive definite"));
    }
    Ok(())
}

fn random_orthogonal(d: usize, rng: &mut StreamRng) -> Matrix {
    let g = Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col.neg_mut();
        }
    }
    q
}

/// Mean-zero sign pattern of length `count` with maximum magnitude one:
/// alternating `±1`, with a trailing zero when `count` is odd.
fn sign_pattern(j: usize, count: usize) -> f64 {
    if count % 2 == 1 && j == count - 1 {
        0.0
    } else if j.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// `k` unit vectors in `R^{k-1}` summing to zero: the centred standard basis of
/// `R^k` expressed in an orthonormal basis of the hyperplane `Σ x = 0`.
fn simplex_directions(k: usize) -> Vec<Vec<f64>> {
    if k < 2 {
        return vec![Vec::new(); k];
    }
    let kf = k as f64;
    let mut a = Matrix::identity(k, k);
    a.column_mut(0).fill(1.0 / kf.sqrt());
    let q = a.qr().q();
    (0..k)
        .map(|i| {
            let mut centred = Vector::from_element(k, -1.0 / kf);
            centred[i] += 1.0;
            let coords = q.transpose() * centred;
            let tail: Vec<f64> = coords.iter().skip(1).copied().collect();
            let norm = tail.iter().map(|x| x * x).sum::<f64>().sqrt();
            tail.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

fn symmetrize(h: Matrix) -> Matrix {
    (&h + h.transpose()) * 0.5
}

/// Builds a population realising the requested heterogeneity constants.
pub fn make_population(spec: &QuadraticSpec) -> Result<QuadraticPopulation> {
    let d = spec.dim;
    let (m, k_bar, b) = (spec.clients, spec.groups, spec.components);
    if k_bar == 0 || m == 0 || m % k_bar != 0 {
        return Err(invalid(format!(
            "number of groups {k_bar} must divide the number of clients {m}"
        )));
    }
    if b == 0 {
        return Err(invalid("components per client must be at least 1"));
    }
    if spec.spectrum.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: spec.spectrum.len(),
        });
    }
    if spec.spectrum.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(invalid("Hessian spectrum entries must be positive and finite"));
    }
    for (name, v) in [("gamma", spec.gamma), ("alpha", spec.alpha), ("nu_bar", spec.nu_bar)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(invalid(format!("{name} must be a finite non-negative number")));
        }
    }
    if !(0.0..1.0).contains(&spec.hessian_perturbation) {
        return Err(invalid("hessian_perturbation must lie in [0, 1)"));
    }
    let group_size = m / k_bar;
    if spec.alpha > 0.0 && k_bar < 2 {
        return Err(invalid("alpha > 0 needs at least two groups"));
    }
    if spec.gamma > 0.0 && group_size < 2 {
        return Err(invalid("gamma > 0 needs at least two clients per group"));
    }
    if spec.nu_bar > 0.0 && b < 2 {
        return Err(invalid("nu_bar > 0 needs at least two components"));
    }
    let directions = usize::from(spec.alpha > 0.0) * (k_bar - 1)
        + usize::from(spec.gamma > 0.0)
        + usize::from(spec.nu_bar > 0.0);
    if d < 2.max(directions) {
        return Err(invalid(format!(
            "dimension {d} too small: the requested offsets need {} orthogonal directions",
            2.max(directions)
        )));
    }

    let mut rng = RngStream::new(spec.seed).tagged(StreamTag::Construction).rng();
    let rotation = random_orthogonal(d, &mut rng);
    let basis = random_orthogonal(d, &mut rng);
    let b_bar = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));

    let mut next_col = 0;
    let group_dirs: Vec<Vector> = if spec.alpha > 0.0 {
        next_col = k_bar - 1;
        simplex_directions(k_bar)
            .into_iter()
            .map(|coords| {
                let mut u = Vector::zeros(d);
                for (r, c) in coords.iter().enumerate() {
                    u += basis.column(r) * *c;
                }
                u
            })
            .collect()
    } else {
        vec![Vector::zeros(d); k_bar]
    };
    let mut take_dir = |active: bool| {
        if active {
            let v = basis.column(next_col).into_owned();
            next_col += 1;
            v
        } else {
            Vector::zeros(d)
        }
    };
    let client_dir = take_dir(spec.gamma > 0.0);
    let component_dir = take_dir(spec.nu_bar > 0.0);

    let base_spectrum = Vector::from_vec(spec.spectrum.clone());
    let shared = spec.hessian_perturbation == 0.0;
    let shared_h = Arc::new(symmetrize(
        &rotation * Matrix::from_diagonal(&base_spectrum) * rotation.transpose(),
    ));

    let mut clients = Vec::with_capacity(m);
    let mut groups = vec![Vec::with_capacity(group_size); k_bar];
    for client in 0..m {
        let i = client / group_size;
        let j = client % group_size;
        groups[i].push(client);
        let hessian = if shared {
            shared_h.clone()
        } else {
            let scaled = base_spectrum.map(|s| {
                let u: f64 = rng.random_range(-1.0..=1.0);
                s * (1.0 + spec.hessian_perturbation * u)
            });
            Arc::new(symmetrize(
                &rotation * Matrix::from_diagonal(&scaled) * rotation.transpose(),
            ))
        };
        let client_linear = &b_bar
            + &group_dirs[i] * spec.alpha
            + &client_dir * (spec.gamma * sign_pattern(j, group_size));
        let components = (0..b)
            .map(|l| {
                let linear = &client_linear + &component_dir * (spec.nu_bar * sign_pattern(l, b));
                QuadraticComponent::shared(hessian.clone(), linear, 0.0)
            })
            .collect();
        clients.push(ClientQuadratic::new(client, components)?);
    }
    QuadraticPopulation::assemble(spec.clone(), clients, groups, shared)
}

impl QuadraticPopulation {
    /// Assembles a population from explicit clients and groups.
    pub fn from_clients(clients: Vec<ClientQuadratic>, groups: Vec<Vec<usize>>) -> Result<Self> {
        let m = clients.len();
        if m == 0 {
            return Err(invalid("population needs at least one client"));
        }
        let d = clients[0].mean_hessian.nrows();
        let first = clients[0].components[0].hessian.clone();
        let mut shared = true;
        for c in &clients {
            for comp in &c.components {
                check_dim(&comp.linear, d)?;
                if comp.hessian.nrows() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: comp.hessian.nrows(),
                    });
                }
                shared &= Arc::ptr_eq(&comp.hessian, &first) || comp.hessian.as_ref() == first.as_ref();
            }
        }
        crate::schedule::CycleSchedule::new(groups.clone(), Default::default(), 0)?;
        if groups.iter().map(Vec::len).sum::<usize>() != m {
            return Err(invalid("groups must cover every client"));
        }
        let spec = QuadraticSpec {
            dim: d,
            clients: m,
            groups: groups.len(),
            components: clients[0].components.len(),
            gamma: f64::NAN,
            alpha: f64::NAN,
            nu_bar: f64::NAN,
            spectrum: Vec::new(),
            seed: 0,
            hessian_perturbation: 0.0,
        };
        Self::assemble(spec, clients, groups, shared)
    }

    fn assemble(
        spec: QuadraticSpec,
        clients: Vec<ClientQuadratic>,
        groups: Vec<Vec<usize>>,
        shared_hessian: bool,
    ) -> Result<Self> {
        let d = clients[0].mean_hessian.nrows();
        let m = clients.len() as f64;
        let mut mean_hessian = Matrix::zeros(d, d);
        let mut mean_linear = Vector::zeros(d);
        let mut mean_offset = 0.0;
        for c in &clients {
            mean_hessian += c.mean_hessian.as_ref();
            mean_linear += &c.mean_linear;
            mean_offset += c.mean_offset;
        }
        let mean_hessian = symmetrize(mean_hessian / m);
        let mean_linear = mean_linear / m;
        let mean_offset = mean_offset / m;

        let mut pop = Self {
            spec,
            clients,
            groups,
            shared_hessian,
            mean_hessian,
            mean_linear,
            mean_offset,
            constants: PopulationConstants {
                l: 0.0,
                mu: 0.0,
                gamma: 0.0,
                alpha: 0.0,
                nu: 0.0,
                nu_bar: 0.0,
                sigma2: 0.0,
                f_star: 0.0,
                w_star: Vector::zeros(d),
                estimated: !shared_hessian,
            },
        };
        pop.constants = pop.compute_constants()?;
        Ok(pop)
    }

    fn compute_constants(&self) -> Result<PopulationConstants> {
        let mut l = 0.0f64;
        let mut seen: Vec<*const Matrix> = Vec::new();
        for c in &self.clients {
            for comp in &c.components {
                let ptr = Arc::as_ptr(&comp.hessian);
                if seen.contains(&ptr) {
                    continue;
                }
                seen.push(ptr);
                let eig = SymmetricEigen::new(comp.hessian.as_ref().clone());
                l = l.max(eig.eigenvalues.max());
            }
        }
        let eig = SymmetricEigen::new(self.mean_hessian.clone());
        let mu = eig.eigenvalues.min();
        if !(mu > EIGEN_RTOL * l) {
            return Err(Error::Singular);
        }
        let chol = self.mean_hessian.clone().cholesky().ok_or(Error::Singular)?;
        let w_star = chol.solve(&self.mean_linear);
        let f_star = self.global_value(&w_star);

        let probes = if self.shared_hessian {
            vec![w_star.clone()]
        } else {
            self.estimation_probes(&w_star)
        };
        let (mut gamma, mut alpha, mut nu_bar) = (0.0f64, 0.0f64, 0.0f64);
        for w in &probes {
            let (g, a, nb) = self.deviations_at(w);
            gamma = gamma.max(g);
            alpha = alpha.max(a);
            nu_bar = nu_bar.max(nb);
        }
        let sigma2 = self
            .clients
            .iter()
            .map(|c| {
                c.components
                    .iter()
                    .map(|comp| (&comp.linear - &c.mean_linear).norm_squared())
                    .sum::<f64>()
                    / c.components.len() as f64
            })
            .fold(0.0, f64::max);
        Ok(PopulationConstants {
            l,
            mu,
            gamma,
            alpha,
            nu: gamma + alpha,
            nu_bar,
            sigma2,
            f_star,
            w_star,
            estimated: !self.shared_hessian,
        })
    }

    /// Probe set for estimated constants: `w*` plus [`ESTIMATION_PROBES`]
    /// Gaussian points at scale `1 + ‖w*‖` around it.
    pub fn estimation_probes(&self, w_star: &Vector) -> Vec<Vector> {
        let d = self.dim();
        let scale = 1.0 + w_star.norm();
        let mut rng = RngStream::new(self.spec.seed)
            .tagged(StreamTag::Construction)
            .child(1)
            .rng();
        let mut probes = vec![w_star.clone()];
        for _ in 0..ESTIMATION_PROBES {
            let g = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            probes.push(w_star + g * scale);
        }
        probes
    }

    /// (intra-group, inter-group, intra-client) maxima at one point.
    fn deviations_at(&self, w: &Vector) -> (f64, f64, f64) {
        let global = self.global_gradient(w);
        let grads: Vec<Vector> = self.clients.iter().map(|c| c.gradient(w)).collect();
        let (mut gamma, mut alpha, mut nu_bar) = (0.0f64, 0.0f64, 0.0f64);
        for g in &self.groups {
            let mean = g.iter().fold(Vector::zeros(w.len()), |acc, &m| acc + &grads[m]) / g.len() as f64;
            alpha = alpha.max((&mean - &global).norm());
            for &m in g {
                gamma = gamma.max((&grads[m] - &mean).norm());
            }
        }
        for (c, g) in self.clients.iter().zip(&grads) {
            for comp in &c.components {
                nu_bar = nu_bar.max((comp.gradient(w) - g).norm());
            }
        }
        (gamma, alpha, nu_bar)
    }

    pub fn spec(&self) -> &QuadraticSpec {
        &self.spec
    }

    pub fn clients(&self) -> &[ClientQuadratic] {
        &self.clients
    }

    pub fn client(&self, m: usize) -> Result<&ClientQuadratic> {
        check_client(m, self.clients.len())?;
        Ok(&self.clients[m])
    }

    pub fn shared_hessian(&self) -> bool {
        self.shared_hessian
    }

    pub fn constants(&self) -> &PopulationConstants {
        &self.constants
    }

    /// Average Hessian `H̄` of the global objective.
    pub fn mean_hessian(&self) -> &Matrix {
        &self.mean_hessian
    }

    pub fn mean_linear(&self) -> &Vector {
        &self.mean_linear
    }

    pub fn global_value(&self, w: &Vector) -> f64 {
        0.5 * w.dot(&(&self.mean_hessian * w)) - self.mean_linear.dot(w) + self.mean_offset
    }

    pub fn global_gradient(&self, w: &Vector) -> Vector {
        &self.mean_hessian * w - &self.mean_linear
    }

    /// Single-component stochastic gradient at client `m`.
    pub fn stochastic_gradient(&self, m: usize, w: &Vector, rng: &mut StreamRng) -> Result<Vector> {
        self.minibatch_gradient(m, w, 1, rng)
    }

    /// Variance of a `batch`-component minibatch gradient drawn without
    /// replacement: `σ² (B − b) / (b (B − 1))`.
    pub fn minibatch_variance(&self, batch: usize) -> Result<f64> {
        minibatch_variance(self.constants.sigma2, self.clients[0].components.len(), batch)
    }
}

/// Without-replacement minibatch variance for a pool of `pool` units with
/// single-unit variance `sigma2`.
pub fn minibatch_variance(sigma2: f64, pool: usize, batch: usize) -> Result<f64> {
    if batch == 0 || batch > pool {
        return Err(invalid(format!("minibatch {batch} must lie in 1..={pool}")));
    }
    if batch == pool {
        return Ok(0.0);
    }
    Ok(sigma2 * (pool - batch) as f64 / (batch as f64 * (pool - 1) as f64))
}

impl Population for QuadraticPopulation {
    fn dim(&self) -> usize {
        self.mean_hessian.nrows()
    }

    fn num_clients(&self) -> usize {
        self.clients.len()
    }

    fn num_components(&self, m: usize) -> usize {
        self.clients.get(m).map_or(0, |c| c.components.len())
    }

    fn num_sample_units(&self, m: usize) -> usize {
        self.num_components(m)
    }

    fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    fn client_loss(&self, m: usize, w: &Vector) -> Result<f64> {
        check_dim(w, self.dim())?;
        Ok(self.client(m)?.value(w))
    }

    fn client_gradient(&self, m: usize, w: &Vector) -> Result<Vector> {
        check_dim(w, self.dim())?;
        Ok(self.client(m)?.gradient(w))
    }

    fn component_gradient(&self, m: usize, l: usize, w: &Vector) -> Result<Vector> {
        check_dim(w, self.dim())?;
        let client = self.client(m)?;
        let comp = client.components.get(l).ok_or(Error::IndexOutOfRange {
            what: "component",
            index: l,
            len: client.components.len(),
        })?;
        Ok(comp.gradient(w))
    }

    fn minibatch_gradient(
        &self,
        m: usize,
        w: &Vector,
        batch: usize,
        rng: &mut StreamRng,
    ) -> Result<Vector> {
        check_dim(w, self.dim())?;
        let client = self.client(m)?;
        let pool = client.components.len();
        if batch == 0 || batch > pool {
            return Err(invalid(format!("minibatch {batch} must lie in 1..={pool}")));
        }
        if batch == pool {
            return Ok(client.gradient(w));
        }
        let mut picked = rand::seq::index::sample(rng, pool, batch).into_vec();
        picked.sort_unstable();
        let mut acc = Vector::zeros(w.len());
        for l in picked {
            acc += client.components[l].gradient(w);
        }
        Ok(acc / batch as f64)
    }

    fn optimum_value(&self) -> Option<f64> {
        Some(self.constants.f_star)
    }

    /// Evaluated as `½ (w − w*)ᵀ H̄ (w − w*)`, which avoids cancellation near
    /// the optimum.
    fn loss_gap(&self, w: &Vector) -> Option<f64> {
        if w.len() != self.dim() {
            return None;
        }
        let e = w - &self.constants.w_star;
        Some(0.5 * e.dot(&(&self.mean_hessian * &e)))
    }

    fn loss(&self, w: &Vector) -> Result<f64> {
        check_dim(w, self.dim())?;
        Ok(self.global_value(w))
    }

    fn gradient(&self, w: &Vector) -> Result<Vector> {
        check_dim(w, self.dim())?;
        Ok(self.global_gradient(w))
    }
}
