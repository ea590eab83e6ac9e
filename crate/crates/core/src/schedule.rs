//! Cyclic participation structure and reproducible randomness.
//!
//! A [`CycleSchedule`] fixes the disjoint client groups and the order in which
//! the server visits them. Every random draw in a run comes from an
//! [`RngStream`] addressed by a path such as `(tag, k, i, m)`, so the draw for
//! a given round and client does not depend on which other streams were
//! consumed first.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::{Error, Result};

/// Generator handed out by [`RngStream::rng`].
pub type StreamRng = ChaCha8Rng;

/// Leading path element separating the different uses of randomness in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamTag {
    Selection = 1,
    LocalSteps = 2,
    Permutation = 3,
    Construction = 4,
    Partition = 5,
    Grouping = 6,
    Order = 7,
}

/// Counter-based random stream: a root seed plus a path of integers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    root: u64,
    path: Vec<u64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(root: u64) -> Self {
        Self {
            root,
            path: Vec::new(),
        }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// Stream one level below this one.
    pub fn child(&self, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push(index);
        Self {
            root: self.root,
            path,
        }
    }

    pub fn tagged(&self, tag: StreamTag) -> Self {
        self.child(tag as u64)
    }

    pub fn at(&self, indices: &[u64]) -> Self {
        let mut path = self.path.clone();
        path.extend_from_slice(indices);
        Self {
            root: self.root,
            path,
        }
    }

    /// 256-bit key derived from the root and the full path.
    fn key(&self) -> [u8; 32] {
        let mut state = splitmix64(self.root);
        for (depth, &p) in self.path.iter().enumerate() {
            state = splitmix64(state ^ splitmix64(p.wrapping_add((depth as u64 + 1) << 56)));
        }
        let mut key = [0u8; 32];
        let mut s = state;
        for chunk in key.chunks_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        key
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        ChaCha8Rng::from_seed(self.key())
    }
}

/// How the group traversal order is fixed at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderMode {
    /// `σ(1), ..., σ(K̄)` as given.
    #[default]
    Identity,
    /// A seeded permutation drawn once and kept for the whole run.
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleSchedule {
    groups: Vec<Vec<usize>>,
    order: Vec<usize>,
}

impl CycleSchedule {
    /// Validates that `groups` are non-empty, equally sized and pairwise
    /// disjoint, and that they cover `0..M`.
    pub fn new(groups: Vec<Vec<usize>>, order_mode: OrderMode, seed: u64) -> Result<Self> {
        if groups.is_empty() {
            return Err(invalid("schedule needs at least one group"));
        }
        let size = groups[0].len();
        if size == 0 {
            return Err(invalid("groups must be non-empty"));
        }
        let total: usize = groups.iter().map(Vec::len).sum();
        let mut seen = vec![false; total];
        for g in &groups {
            if g.len() != size {
                return Err(invalid(format!(
                    "groups must have equal size, found {} and {}",
                    size,
                    g.len()
                )));
            }
            for &m in g {
                if m >= total || seen[m] {
                    return Err(invalid(format!(
                        "groups must partition 0..{total}; client {m} is repeated or out of range"
                    )));
                }
                seen[m] = true;
            }
        }
        let mut groups = groups;
        for g in &mut groups {
            g.sort_unstable();
        }
        let mut order: Vec<usize> = (0..groups.len()).collect();
        if order_mode == OrderMode::Shuffled {
            let mut rng = RngStream::new(seed).tagged(StreamTag::Order).rng();
            order.shuffle(&mut rng);
        }
        Ok(Self { groups, order })
    }

    /// Splits `client_order` into `k_bar` consecutive chunks.
    pub fn chunked(
        client_order: &[usize],
        k_bar: usize,
        order_mode: OrderMode,
        seed: u64,
    ) -> Result<Self> {
        let m = client_order.len();
        if k_bar == 0 || !m.is_multiple_of(k_bar) {
            return Err(invalid(format!(
                "number of groups {k_bar} must divide the number of clients {m}"
            )));
        }
        let size = m / k_bar;
        let groups = client_order.chunks(size).map(<[usize]>::to_vec).collect();
        Self::new(groups, order_mode, seed)
    }

    /// Number of groups `K̄`.
    pub fn k_bar(&self) -> usize {
        self.groups.len()
    }

    pub fn group_size(&self) -> usize {
        self.groups[0].len()
    }

    pub fn num_clients(&self) -> usize {
        self.k_bar() * self.group_size()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Traversal order as indices into [`Self::groups`].
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Group available at round `i` (1-based) of every cycle-epoch.
    pub fn group_at(&self, i: usize) -> Result<&[usize]> {
        if i == 0 || i > self.k_bar() {
            return Err(Error::IndexOutOfRange {
                what: "round-in-cycle",
                index: i,
                len: self.k_bar(),
            });
        }
        Ok(&self.groups[self.order[i - 1]])
    }

    /// Draws the `N` participants of round `(k, i)` uniformly without
    /// replacement from the available group. The result is sorted by client
    /// index.
    pub fn select_round_clients(
        &self,
        k: usize,
        i: usize,
        n: usize,
        rng: &mut StreamRng,
    ) -> Result<Vec<usize>> {
        if k == 0 {
            return Err(invalid("cycle-epoch index is 1-based"));
        }
        let group = self.group_at(i)?;
        if n == 0 || n > group.len() {
            return Err(invalid(format!(
                "clients per round {n} must lie in 1..={}",
                group.len()
            )));
        }
        let mut picked: Vec<usize> = rand::seq::index::sample(rng, group.len(), n)
            .into_iter()
            .map(|j| group[j])
            .collect();
        picked.sort_unstable();
        Ok(picked)
    }
}

/// Uniform random permutation of `0..b` (Fisher–Yates).
pub fn draw_permutation(b: usize, rng: &mut StreamRng) -> Vec<usize> {
    let mut pi: Vec<usize> = (0..b).collect();
    pi.shuffle(rng);
    pi
}

/// Maps a 0-based global round `t` to the 1-based `(k, i)` pair.
pub fn round_to_indices(t: usize, k_bar: usize) -> (usize, usize) {
    assert!(k_bar > 0, "k_bar must be positive");
    (t / k_bar + 1, t % k_bar + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn fig1_schedule() -> CycleSchedule {
        let order: Vec<usize> = (0..12).collect();
        CycleSchedule::chunked(&order, 3, OrderMode::Identity, 0).unwrap()
    }

    #[test]
    fn round_indices() {
        assert_eq!(round_to_indices(0, 3), (1, 1));
        assert_eq!(round_to_indices(5, 3), (2, 3));
        let mut seen = std::collections::HashSet::new();
        for t in 0..(7 * 3) {
            assert!(seen.insert(round_to_indices(t, 3)));
        }
        assert_eq!(seen.len(), 21);
    }

    #[test]
    fn full_group_participation_returns_group() {
        let s = fig1_schedule();
        let stream = RngStream::new(3);
        for k in 1..4 {
            for i in 1..=3 {
                let mut rng = stream.at(&[k as u64, i as u64]).rng();
                let picked = s.select_round_clients(k, i, 4, &mut rng).unwrap();
                assert_eq!(picked, s.group_at(i).unwrap());
            }
        }
    }

    #[test]
    fn too_many_clients_rejected() {
        let s = fig1_schedule();
        let mut rng = RngStream::new(0).rng();
        assert!(s.select_round_clients(1, 1, 5, &mut rng).is_err());
        assert!(s.select_round_clients(1, 4, 1, &mut rng).is_err());
    }

    #[test]
    fn marginal_inclusion_is_half() {
        let s = fig1_schedule();
        let stream = RngStream::new(11);
        let draws = 10_000;
        let mut counts = [0usize; 4];
        for r in 0..draws {
            let mut rng = stream.child(r).rng();
            for m in s.select_round_clients(1, 1, 2, &mut rng).unwrap() {
                counts[m] += 1;
            }
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.5).abs() <= 0.02, "frequency {freq}");
        }
    }

    #[test]
    fn pairwise_inclusion_matches_hypergeometric() {
        let s = fig1_schedule();
        let stream = RngStream::new(5);
        let draws = 10_000;
        let mut pair = 0usize;
        for r in 0..draws {
            let mut rng = stream.child(r).rng();
            let picked = s.select_round_clients(1, 2, 2, &mut rng).unwrap();
            if picked.contains(&4) && picked.contains(&5) {
                pair += 1;
            }
        }
        // N(N-1) / (g(g-1)) with N = 2, g = 4.
        let p = 2.0 / 12.0;
        let freq = pair as f64 / draws as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((freq - p).abs() <= 3.0 * se, "pair frequency {freq}");
    }

    #[test]
    fn gap_between_appearances_is_at_least_k_bar() {
        let s = fig1_schedule();
        let stream = RngStream::new(9);
        let mut last = [None::<usize>; 12];
        let mut min_gap = usize::MAX;
        for t in 0..(5 * 3) {
            let (k, i) = round_to_indices(t, 3);
            let mut rng = stream.at(&[k as u64, i as u64]).rng();
            for m in s.select_round_clients(k, i, 2, &mut rng).unwrap() {
                if let Some(prev) = last[m] {
                    min_gap = min_gap.min(t - prev);
                }
                last[m] = Some(t);
            }
        }
        assert!(min_gap >= 3);
    }

    #[test]
    fn permutation_uniformity() {
        let stream = RngStream::new(1);
        let draws = 60_000u64;
        let mut counts = std::collections::HashMap::new();
        for r in 0..draws {
            let pi = draw_permutation(3, &mut stream.child(r).rng());
            *counts.entry(pi).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        for c in counts.values() {
            let f = *c as f64 / draws as f64;
            assert!((f - 1.0 / 6.0).abs() <= 0.01, "frequency {f}");
        }
    }

    #[test]
    fn permutation_degenerate_and_deterministic() {
        let stream = RngStream::new(77).at(&[1, 2, 3]);
        assert_eq!(draw_permutation(1, &mut stream.rng()), vec![0]);
        assert_eq!(
            draw_permutation(9, &mut stream.rng()),
            draw_permutation(9, &mut stream.rng())
        );
    }

    #[test]
    fn streams_are_path_addressed() {
        let root = RngStream::new(42);
        let a = root.at(&[2, 3]);
        let first: u64 = a.rng().random();
        // consuming an unrelated stream does not change `a`
        let mut other = root.at(&[1, 1]).rng();
        let _: u64 = other.random();
        assert_eq!(first, a.rng().random::<u64>());
        assert_ne!(first, root.at(&[3, 2]).rng().random::<u64>());
        assert_ne!(first, RngStream::new(43).at(&[2, 3]).rng().random::<u64>());
    }

    #[test]
    fn groups_validated() {
        assert!(CycleSchedule::new(vec![vec![0, 1], vec![1, 2]], OrderMode::Identity, 0).is_err());
        assert!(CycleSchedule::new(vec![vec![0, 1], vec![2]], OrderMode::Identity, 0).is_err());
        assert!(CycleSchedule::chunked(&[0, 1, 2, 3, 4], 2, OrderMode::Identity, 0).is_err());
        let single = CycleSchedule::chunked(&[0, 1, 2, 3], 1, OrderMode::Identity, 0).unwrap();
        assert_eq!(single.groups(), &[vec![0, 1, 2, 3]]);
    }

    #[test]
    fn shuffled_order_is_fixed_permutation() {
        let order: Vec<usize> = (0..12).collect();
        let a = CycleSchedule::chunked(&order, 6, OrderMode::Shuffled, 8).unwrap();
        let b = CycleSchedule::chunked(&order, 6, OrderMode::Shuffled, 8).unwrap();
        assert_eq!(a.order(), b.order());
        let mut sorted = a.order().to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..6).collect::<Vec<_>>());
    }
}
