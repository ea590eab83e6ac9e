//! Synthetic labelled data, Dirichlet label partitioning and regularised
//! multinomial-logistic client objectives.

use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::population::{check_client, check_dim, Population};
use crate::schedule::{RngStream, StreamRng, StreamTag};
use crate::{Error, Matrix, Result, Vector};

/// Dirichlet redraws attempted before falling back to reassignment.
pub const MAX_PARTITION_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<usize>,
    classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        let mut seen = vec![false; classes];
        for &y in &labels {
            if y >= classes {
                return Err(Error::IndexOutOfRange {
                    what: "label",
                    index: y,
                    len: classes,
                });
            }
            seen[y] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(invalid("every class must appear at least once"));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Normalised label histogram over the given rows.
    pub fn label_distribution(&self, rows: &[usize]) -> Vec<f64> {
        let mut counts = vec![0.0; self.classes];
        for &r in rows {
            counts[self.labels[r]] += 1.0;
        }
        let n = rows.len().max(1) as f64;
        counts.iter_mut().for_each(|c| *c /= n);
        counts
    }
}

/// `n` points from `C` unit-variance spherical Gaussians whose means are
/// `separation` apart (exactly when `C ≤ d`), standardised per coordinate.
pub fn make_gaussian_mixture(
    classes: usize,
    dim: usize,
    samples: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes < 2 {
        return Err(invalid("need at least two classes"));
    }
    if samples < 10 * classes {
        return Err(invalid(format!(
            "need at least {} samples for {classes} classes",
            10 * classes
        )));
    }
    if dim == 0 || !separation.is_finite() || separation < 0.0 {
        return Err(invalid("dimension must be positive and separation non-negative"));
    }
    let mut rng = RngStream::new(seed).tagged(StreamTag::Construction).rng();
    let radius = separation / std::f64::consts::SQRT_2;
    let means: Vec<Vector> = if classes <= dim {
        let g = Matrix::from_fn(dim, classes, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = g.qr().q();
        (0..classes).map(|c| q.column(c) * radius).collect()
    } else {
        (0..classes)
            .map(|_| {
                let v = Vector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                v.normalize() * radius
            })
            .collect()
    };
    let mut labels: Vec<usize> = (0..samples).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let mut features = Matrix::zeros(samples, dim);
    for (r, &y) in labels.iter().enumerate() {
        for j in 0..dim {
            features[(r, j)] = means[y][j] + rng.sample::<f64, _>(StandardNormal);
        }
    }
    for j in 0..dim {
        let col = features.column(j);
        let mean = col.mean();
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / samples as f64;
        let sd = var.sqrt();
        let scale = if sd > 0.0 { 1.0 / sd } else { 1.0 };
        features.column_mut(j).apply(|x| *x = (*x - mean) * scale);
    }
    LabeledDataset::new(features, labels, classes)
}

/// Rows owned by one client, split into `B` contiguous components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientShard {
    indices: Vec<usize>,
    component_bounds: Vec<usize>,
}

impl ClientShard {
    pub fn new(indices: Vec<usize>, components: usize) -> Result<Self> {
        if components == 0 || indices.len() < components {
            return Err(invalid(format!(
                "a shard of {} rows cannot hold {components} non-empty components",
                indices.len()
            )));
        }
        let n = indices.len();
        let component_bounds = (0..=components).map(|l| l * n / components).collect();
        Ok(Self {
            indices,
            component_bounds,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn num_components(&self) -> usize {
        self.component_bounds.len() - 1
    }

    pub fn component_bounds(&self) -> &[usize] {
        &self.component_bounds
    }

    pub fn component(&self, l: usize) -> &[usize] {
        &self.indices[self.component_bounds[l]..self.component_bounds[l + 1]]
    }
}

/// Largest-remainder rounding of `total * weights` to integers summing to
/// `total`. Ties go to the lower index.
fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &j in order.iter().take(total.saturating_sub(assigned)) {
        counts[j] += 1;
    }
    counts
}

fn dirichlet_draw(gamma: &Gamma<f64>, clients: usize, rng: &mut StreamRng) -> Option<Vec<f64>> {
    let mut p: Vec<f64> = (0..clients).map(|_| gamma.sample(rng)).collect();
    let total: f64 = p.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    p.iter_mut().for_each(|x| *x /= total);
    Some(p)
}

/// Splits the dataset across `clients` with per-class proportions drawn from a
/// symmetric Dirichlet(`concentration`) and rounded by largest remainder.
///
/// Every client must end up with at least `components` rows. The whole draw is
/// repeated up to [`MAX_PARTITION_ATTEMPTS`] times; after that, short clients
/// take rows one at a time from the currently largest client.
pub fn dirichlet_partition(
    ds: &LabeledDataset,
    clients: usize,
    concentration: f64,
    components: usize,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    if !(concentration > 0.0) || !concentration.is_finite() {
        return Err(invalid("concentration must be positive and finite"));
    }
    if clients == 0 || components == 0 {
        return Err(invalid("clients and components must be positive"));
    }
    let n = ds.len();
    if n < clients * components {
        return Err(invalid(format!(
            "{n} samples cannot give {clients} clients {components} rows each"
        )));
    }
    let gamma = Gamma::new(concentration, 1.0).map_err(|e| invalid(e.to_string()))?;
    let stream = RngStream::new(seed).tagged(StreamTag::Partition);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes()];
    for (r, &y) in ds.labels().iter().enumerate() {
        by_class[y].push(r);
    }

    let mut assignment: Vec<Vec<usize>> = Vec::new();
    for attempt in 0..MAX_PARTITION_ATTEMPTS {
        let mut rng = stream.child(attempt as u64).rng();
        let mut shards: Vec<Vec<usize>> = vec![Vec::new(); clients];
        let mut ok = true;
        for rows in &by_class {
            let Some(p) = dirichlet_draw(&gamma, clients, &mut rng) else {
                ok = false;
                break;
            };
            let mut rows = rows.clone();
            rows.shuffle(&mut rng);
            let counts = largest_remainder(&p, rows.len());
            let mut start = 0;
            for (m, &c) in counts.iter().enumerate() {
                shards[m].extend_from_slice(&rows[start..start + c]);
                start += c;
            }
        }
        if !ok {
            continue;
        }
        let done = shards.iter().all(|s| s.len() >= components);
        assignment = shards;
        if done {
            break;
        }
    }
    if assignment.is_empty() {
        // every draw degenerated; start from an even split
        assignment = vec![Vec::new(); clients];
        for r in 0..n {
            assignment[r % clients].push(r);
        }
    }
    while let Some(short) = (0..clients).find(|&m| assignment[m].len() < components) {
        let donor = (0..clients)
            .max_by_key(|&m| (assignment[m].len(), std::cmp::Reverse(m)))
            .expect("at least one client");
        let row = assignment[donor].pop().expect("donor has rows");
        assignment[short].push(row);
    }

    let mut rng = stream.child(u64::MAX).rng();
    assignment
        .into_iter()
        .map(|mut rows| {
            rows.sort_unstable();
            rows.shuffle(&mut rng);
            ClientShard::new(rows, components)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupingMode {
    /// Seeded random permutation, then consecutive chunks.
    Random,
    /// Clients ordered by dominant label, then consecutive chunks.
    #[default]
    LabelSorted,
}

/// Most frequent label in a shard; ties go to the smaller label.
pub fn dominant_label(ds: &LabeledDataset, shard: &ClientShard) -> usize {
    let dist = ds.label_distribution(shard.indices());
    let mut best = 0;
    for (c, &p) in dist.iter().enumerate() {
        if p > dist[best] {
            best = c;
        }
    }
    best
}

/// Client order used for grouping: label-sorted or seeded random.
pub fn grouping_order(
    ds: &LabeledDataset,
    shards: &[ClientShard],
    mode: GroupingMode,
    seed: u64,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..shards.len()).collect();
    match mode {
        GroupingMode::LabelSorted => {
            order.sort_by_key(|&m| (dominant_label(ds, &shards[m]), m));
        }
        GroupingMode::Random => {
            let mut rng = RngStream::new(seed).tagged(StreamTag::Grouping).rng();
            order.shuffle(&mut rng);
        }
    }
    order
}

/// Assigns clients to `k_bar` equally sized groups.
pub fn group_by_label_affinity(
    ds: &LabeledDataset,
    shards: &[ClientShard],
    k_bar: usize,
    mode: GroupingMode,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let m = shards.len();
    if k_bar == 0 || !m.is_multiple_of(k_bar) {
        return Err(invalid(format!(
            "number of groups {k_bar} must divide the number of clients {m}"
        )));
    }
    let order = grouping_order(ds, shards, mode, seed);
    Ok(order.chunks(m / k_bar).map(<[usize]>::to_vec).collect())
}

/// Mean total-variation distance between the label distributions of all
/// client pairs.
pub fn mean_pairwise_tv(ds: &LabeledDataset, shards: &[ClientShard]) -> f64 {
    let dists: Vec<Vec<f64>> = shards.iter().map(|s| ds.label_distribution(s.indices())).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..dists.len() {
        for b in (a + 1)..dists.len() {
            total += 0.5 * dists[a].iter().zip(&dists[b]).map(|(x, y)| (x - y).abs()).sum::<f64>();
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

/// Writes `client,component,sample` rows for inspection.
pub fn write_shards_csv<W: Write>(shards: &[ClientShard], mut out: W) -> std::io::Result<()> {
    writeln!(out, "client,component,sample")?;
    for (m, s) in shards.iter().enumerate() {
        for l in 0..s.num_components() {
            for &r in s.component(l) {
                writeln!(out, "{m},{l},{r}")?;
            }
        }
    }
    Ok(())
}

/// Mean cross-entropy over `rows` plus `(λ/2)‖W‖²`, with its gradient.
///
/// `w` holds the `d × C` weight matrix in column-major order.
fn cross_entropy(
    ds: &LabeledDataset,
    rows: &[usize],
    w: &Vector,
    l2: f64,
    want_grad: bool,
) -> (f64, Option<Vector>) {
    let d = ds.dim();
    let c = ds.classes();
    let weights = nalgebra::DMatrixView::from_slice(w.as_slice(), d, c);
    let x = Matrix::from_fn(rows.len(), d, |r, j| ds.features[(rows[r], j)]);
    let mut scores = &x * weights;
    let mut loss = 0.0;
    for (r, &row) in rows.iter().enumerate() {
        let y = ds.labels[row];
        let mut s = scores.row_mut(r);
        let max = s.max();
        s.apply(|v| *v = (*v - max).exp());
        let z = s.sum();
        loss += z.ln() - s[y].ln();
        if want_grad {
            s /= z;
            s[y] -= 1.0;
        }
    }
    let n = rows.len() as f64;
    let loss = loss / n + 0.5 * l2 * w.norm_squared();
    let grad = want_grad.then(|| {
        let g = x.transpose() * scores / n;
        Vector::from_column_slice(g.as_slice()) + w * l2
    });
    (loss, grad)
}

/// Regularised multinomial-logistic loss over a fixed set of rows.
#[derive(Debug, Clone)]
pub struct LogisticObjective {
    dataset: Arc<LabeledDataset>,
    rows: Vec<usize>,
    l2: f64,
}

impl LogisticObjective {
    pub fn new(dataset: Arc<LabeledDataset>, rows: Vec<usize>, l2: f64) -> Result<Self> {
        if !(l2 > 0.0) {
            return Err(invalid("l2 strength must be positive"));
        }
        if rows.is_empty() {
            return Err(invalid("objective needs at least one row"));
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= dataset.len()) {
            return Err(Error::IndexOutOfRange {
                what: "row",
                index: r,
                len: dataset.len(),
            });
        }
        Ok(Self { dataset, rows, l2 })
    }

    pub fn dim(&self) -> usize {
        self.dataset.dim() * self.dataset.classes()
    }

    pub fn value(&self, w: &Vector) -> f64 {
        cross_entropy(&self.dataset, &self.rows, w, self.l2, false).0
    }

    pub fn gradient(&self, w: &Vector) -> Vector {
        cross_entropy(&self.dataset, &self.rows, w, self.l2, true)
            .1
            .expect("gradient requested")
    }

    pub fn value_and_gradient(&self, w: &Vector) -> (f64, Vector) {
        let (v, g) = cross_entropy(&self.dataset, &self.rows, w, self.l2, true);
        (v, g.expect("gradient requested"))
    }

    pub fn accuracy(&self, w: &Vector) -> f64 {
        accuracy(&self.dataset, &self.rows, w)
    }
}

fn accuracy(ds: &LabeledDataset, rows: &[usize], w: &Vector) -> f64 {
    let weights = nalgebra::DMatrixView::from_slice(w.as_slice(), ds.dim(), ds.classes());
    let correct = rows
        .iter()
        .filter(|&&r| {
            let scores = ds.features.row(r) * weights;
            scores.transpose().argmax().0 == ds.labels[r]
        })
        .count();
    correct as f64 / rows.len() as f64
}

/// Clients holding Dirichlet shards of one dataset.
///
/// `F_m` is the unweighted mean of its `B` component losses, each of which
/// carries the full regulariser, so `F_m = (1/B) Σ_l F_{m,l}` holds exactly.
#[derive(Debug, Clone)]
pub struct LogisticPopulation {
    dataset: Arc<LabeledDataset>,
    shards: Vec<ClientShard>,
    groups: Vec<Vec<usize>>,
    l2: f64,
}

impl LogisticPopulation {
    pub fn new(
        dataset: Arc<LabeledDataset>,
        shards: Vec<ClientShard>,
        groups: Vec<Vec<usize>>,
        l2: f64,
    ) -> Result<Self> {
        if !(l2 > 0.0) {
            return Err(invalid("l2 strength must be positive"));
        }
        if shards.is_empty() {
            return Err(invalid("population needs at least one client"));
        }
        let mut seen = vec![false; dataset.len()];
        for s in &shards {
            for &r in s.indices() {
                if r >= dataset.len() || seen[r] {
                    return Err(invalid(format!("row {r} is repeated or out of range")));
                }
                seen[r] = true;
            }
        }
        crate::schedule::CycleSchedule::new(groups.clone(), Default::default(), 0)?;
        if groups.iter().map(Vec::len).sum::<usize>() != shards.len() {
            return Err(invalid("groups must cover every client"));
        }
        Ok(Self {
            dataset,
            shards,
            groups,
            l2,
        })
    }

    pub fn dataset(&self) -> &LabeledDataset {
        &self.dataset
    }

    pub fn shards(&self) -> &[ClientShard] {
        &self.shards
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    /// Strong-convexity modulus of every client objective.
    pub fn mu(&self) -> f64 {
        self.l2
    }

    /// Objective over every row held by any client (sample-weighted).
    pub fn pooled_objective(&self) -> LogisticObjective {
        let rows = self.shards.iter().flat_map(|s| s.indices().iter().copied()).collect();
        LogisticObjective {
            dataset: self.dataset.clone(),
            rows,
            l2: self.l2,
        }
    }

    pub fn accuracy(&self, w: &Vector) -> f64 {
        self.pooled_objective().accuracy(w)
    }

    fn shard(&self, m: usize) -> Result<&ClientShard> {
        check_client(m, self.shards.len())?;
        Ok(&self.shards[m])
    }
}

impl Population for LogisticPopulation {
    fn dim(&self) -> usize {
        self.dataset.dim() * self.dataset.classes()
    }

    fn num_clients(&self) -> usize {
        self.shards.len()
    }

    fn num_components(&self, m: usize) -> usize {
        self.shards.get(m).map_or(0, ClientShard::num_components)
    }

    fn num_sample_units(&self, m: usize) -> usize {
        self.shards.get(m).map_or(0, ClientShard::len)
    }

    fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    fn client_loss(&self, m: usize, w: &Vector) -> Result<f64> {
        check_dim(w, self.dim())?;
        let shard = self.shard(m)?;
        let b = shard.num_components();
        let total: f64 = (0..b)
            .map(|l| cross_entropy(&self.dataset, shard.component(l), w, self.l2, false).0)
            .sum();
        Ok(total / b as f64)
    }

    fn client_gradient(&self, m: usize, w: &Vector) -> Result<Vector> {
        check_dim(w, self.dim())?;
        let shard = self.shard(m)?;
        let b = shard.num_components();
        let mut acc = Vector::zeros(w.len());
        for l in 0..b {
            acc += cross_entropy(&self.dataset, shard.component(l), w, self.l2, true)
                .1
                .expect("gradient requested");
        }
        Ok(acc / b as f64)
    }

    fn component_gradient(&self, m: usize, l: usize, w: &Vector) -> Result<Vector> {
        check_dim(w, self.dim())?;
        let shard = self.shard(m)?;
        if l >= shard.num_components() {
            return Err(Error::IndexOutOfRange {
                what: "component",
                index: l,
                len: shard.num_components(),
            });
        }
        Ok(cross_entropy(&self.dataset, shard.component(l), w, self.l2, true)
            .1
            .expect("gradient requested"))
    }

    fn minibatch_gradient(
        &self,
        m: usize,
        w: &Vector,
        batch: usize,
        rng: &mut StreamRng,
    ) -> Result<Vector> {
        check_dim(w, self.dim())?;
        let shard = self.shard(m)?;
        let pool = shard.len();
        if batch == 0 || batch > pool {
            return Err(invalid(format!("minibatch {batch} must lie in 1..={pool}")));
        }
        if batch == pool {
            return self.client_gradient(m, w);
        }
        let mut picked = rand::seq::index::sample(rng, pool, batch).into_vec();
        picked.sort_unstable();
        let rows: Vec<usize> = picked.into_iter().map(|p| shard.indices()[p]).collect();
        Ok(cross_entropy(&self.dataset, &rows, w, self.l2, true)
            .1
            .expect("gradient requested"))
    }
}
