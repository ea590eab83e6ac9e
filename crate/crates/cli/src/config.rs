//! Experiment configuration files. The schema is documented in
//! `docs/config.md`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use cycfed::datasets::{
    dirichlet_partition, group_by_label_affinity, make_gaussian_mixture, GroupingMode, LogisticPopulation,
};
use cycfed::engine::Mode;
use cycfed::experiments::linspace;
use cycfed::quadratic::{make_population, QuadraticPopulation, QuadraticSpec};
use cycfed::schedule::OrderMode;
use cycfed::Population;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub population: PopulationBlock,
    pub schedule: ScheduleBlock,
    pub run: RunBlock,
    #[serde(default, skip_serializing_if = "SweepBlock::is_empty")]
    pub sweep: SweepBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

/// Exactly one population kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PopulationBlock {
    Quadratic(QuadraticBlock),
    Dataset(DatasetBlock),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticBlock {
    pub dim: usize,
    pub clients: usize,
    #[serde(default = "one")]
    pub components: usize,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub nu_bar: f64,
    /// Hessian eigenvalues; evenly spaced on [1, 4] when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<Vec<f64>>,
    #[serde(default)]
    pub hessian_perturbation: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetBlock {
    pub classes: usize,
    pub dim: usize,
    pub samples: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
    pub clients: usize,
    pub concentration: f64,
    #[serde(default = "one")]
    pub components: usize,
    #[serde(default = "default_l2")]
    pub l2: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleBlock {
    pub k_bar: usize,
    #[serde(default)]
    pub order: OrderMode,
    /// Only used by dataset populations.
    #[serde(default)]
    pub grouping: GroupingMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EtaKeyword {
    Theorem,
}

/// A fixed local step size or the keyword `"theorem"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaSetting {
    Value(f64),
    Keyword(EtaKeyword),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    #[serde(default)]
    pub mode: Mode,
    /// `K`, the number of cycle-epochs.
    pub cycle_epochs: usize,
    /// `N`, clients per round.
    pub clients_per_round: usize,
    pub eta: EtaSetting,
    #[serde(default = "one")]
    pub local_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minibatch: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    #[serde(default)]
    pub k_bar: Vec<usize>,
    /// Total rounds `T`; each cell runs `T / K̄` cycle-epochs.
    #[serde(default)]
    pub rounds: Vec<usize>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

impl SweepBlock {
    pub fn is_empty(&self) -> bool {
        self.k_bar.is_empty() && self.rounds.is_empty() && self.seeds.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub runlog: bool,
    pub iterates: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            dir: None,
            runlog: true,
            iterates: false,
        }
    }
}

fn one() -> usize {
    1
}

fn default_separation() -> f64 {
    3.0
}

fn default_l2() -> f64 {
    0.01
}

/// One grid cell: everything that varies across a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub k_bar: usize,
    pub rounds: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn clients(&self) -> usize {
        match &self.population {
            PopulationBlock::Quadratic(q) => q.clients,
            PopulationBlock::Dataset(d) => d.clients,
        }
    }

    pub fn components(&self) -> usize {
        match &self.population {
            PopulationBlock::Quadratic(q) => q.components,
            PopulationBlock::Dataset(d) => d.components,
        }
    }

    pub fn base_cell(&self) -> Cell {
        Cell {
            k_bar: self.schedule.k_bar,
            rounds: self.run.cycle_epochs * self.schedule.k_bar,
            seed: self.run.seed,
        }
    }

    /// Cartesian product of the sweep lists, with empty lists falling back to
    /// the base run.
    pub fn cells(&self) -> Vec<Cell> {
        let base = self.base_cell();
        let k_bars = non_empty(&self.sweep.k_bar, base.k_bar);
        let rounds = if self.sweep.rounds.is_empty() {
            None
        } else {
            Some(self.sweep.rounds.clone())
        };
        let seeds = non_empty(&self.sweep.seeds, base.seed);
        let mut cells = Vec::new();
        for &k_bar in &k_bars {
            let horizons = rounds.clone().unwrap_or_else(|| vec![self.run.cycle_epochs * k_bar]);
            for &t in &horizons {
                for &seed in &seeds {
                    cells.push(Cell { k_bar, rounds: t, seed });
                }
            }
        }
        cells
    }

    /// Checks every referenced field before any computation.
    pub fn validate(&self) -> Result<()> {
        let m = self.clients();
        match &self.population {
            PopulationBlock::Quadratic(q) => {
                if q.dim == 0 || q.clients == 0 {
                    bail!("population.quadratic: dim and clients must be positive");
                }
                if let Some(s) = &q.spectrum {
                    if s.len() != q.dim {
                        bail!("population.quadratic.spectrum: expected {} eigenvalues, got {}", q.dim, s.len());
                    }
                }
            }
            PopulationBlock::Dataset(d) => {
                if d.classes < 2 || d.dim == 0 || d.samples == 0 || d.clients == 0 {
                    bail!("population.dataset: need classes ≥ 2 and positive dim, samples, clients");
                }
                if !(d.concentration > 0.0) {
                    bail!("population.dataset.concentration: must be positive");
                }
                if matches!(self.run.eta, EtaSetting::Keyword(_)) {
                    bail!("run.eta: \"theorem\" needs exact constants and is only available for quadratic populations");
                }
            }
        }
        if self.components() == 0 {
            bail!("population: components must be positive");
        }
        let n = self.run.clients_per_round;
        if n == 0 {
            bail!("run.clients_per_round: must be positive");
        }
        if self.run.cycle_epochs == 0 {
            bail!("run.cycle_epochs: must be positive");
        }
        if self.run.local_steps == 0 {
            bail!("run.local_steps: must be positive");
        }
        if let EtaSetting::Value(eta) = self.run.eta {
            if !eta.is_finite() || eta < 0.0 {
                bail!("run.eta: must be a non-negative number or \"theorem\", got {eta}");
            }
        }
        if let Some(b) = self.run.minibatch {
            if b == 0 || b > self.components() {
                bail!("run.minibatch: must lie in 1..={}", self.components());
            }
        }
        let mut k_bars = vec![self.schedule.k_bar];
        k_bars.extend(&self.sweep.k_bar);
        for (field, &k) in std::iter::once("schedule.k_bar")
            .chain(std::iter::repeat("sweep.k_bar"))
            .zip(&k_bars)
        {
            if k == 0 || !m.is_multiple_of(k) {
                bail!("{field}: {k} groups do not divide {m} clients");
            }
            if n > m / k {
                bail!("{field}: group size {} is smaller than run.clients_per_round = {n}", m / k);
            }
        }
        for &t in &self.sweep.rounds {
            for &k in k_bars.iter().skip(usize::from(!self.sweep.k_bar.is_empty())) {
                if t == 0 || t % k != 0 {
                    bail!("sweep.rounds: {t} is not a positive multiple of K̄ = {k}");
                }
            }
        }
        Ok(())
    }

    /// Builds the population grouped into `k_bar` groups.
    pub fn build_population(&self, k_bar: usize) -> Result<Built> {
        Ok(match &self.population {
            PopulationBlock::Quadratic(q) => {
                let spectrum = q.spectrum.clone().unwrap_or_else(|| linspace(1.0, 4.0, q.dim));
                let mut spec = QuadraticSpec::homogeneous(q.dim, q.clients, k_bar, spectrum, q.seed)
                    .with_components(q.components)
                    .with_heterogeneity(q.gamma, q.alpha, q.nu_bar);
                spec.hessian_perturbation = q.hessian_perturbation;
                Built::Quadratic(make_population(&spec).context("population.quadratic")?)
            }
            PopulationBlock::Dataset(d) => {
                let ds = Arc::new(
                    make_gaussian_mixture(d.classes, d.dim, d.samples, d.separation, d.seed)
                        .context("population.dataset")?,
                );
                let shards = dirichlet_partition(&ds, d.clients, d.concentration, d.components, d.seed)
                    .context("population.dataset")?;
                let groups = group_by_label_affinity(&ds, &shards, k_bar, self.schedule.grouping, d.seed)
                    .context("schedule.grouping")?;
                Built::Dataset(LogisticPopulation::new(ds, shards, groups, d.l2).context("population.dataset")?)
            }
        })
    }
}

fn non_empty<T: Copy>(list: &[T], fallback: T) -> Vec<T> {
    if list.is_empty() {
        vec![fallback]
    } else {
        list.to_vec()
    }
}

#[allow(clippy::large_enum_variant)]
pub enum Built {
    Quadratic(QuadraticPopulation),
    Dataset(LogisticPopulation),
}

impl Built {
    pub fn as_dyn(&self) -> &dyn Population {
        match self {
            Built::Quadratic(p) => p,
            Built::Dataset(p) => p,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Built::Quadratic(_) => "quadratic",
            Built::Dataset(_) => "dataset",
        }
    }
}
