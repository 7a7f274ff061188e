//! Offline datasets drawn i.i.d. from the behavior occupancy.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mdp::{occupancy_of_policy, GoalMdp, OccupancyMeasure, Policy};

/// One transition `(s, a, r, s', g)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    pub g: usize,
}

/// One initial pair `(s0, g0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitPair {
    pub s0: usize,
    pub g0: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OfflineDataset {
    pub records: Vec<Transition>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InitDataset {
    pub records: Vec<InitPair>,
}

impl OfflineDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Checks index ranges and that every reward matches `r(s;g)`.
    pub fn validate(&self, mdp: &GoalMdp) -> Result<()> {
        for (i, t) in self.records.iter().enumerate() {
            if t.s >= mdp.n_states() || t.s_next >= mdp.n_states() || t.a >= mdp.n_actions() || t.g >= mdp.n_goals() {
                return invalid(format!("record {i} has an out-of-range index"));
            }
            if t.r != mdp.reward(t.s, t.g) {
                return invalid(format!("record {i} reward {} differs from r(s;g)", t.r));
            }
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> OfflineDataset {
        OfflineDataset { records: indices.iter().map(|&i| self.records[i]).collect() }
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.records)
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        Ok(Self { records: read_jsonl(path)? })
    }
}

impl InitDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.records)
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        Ok(Self { records: read_jsonl(path)? })
    }
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut items = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line)?);
    }
    Ok(items)
}

/// Draws `n` transitions with `(s,a,g) ~ p(g) d^behavior(s,a;g)` and `s' ~ P(.|s,a)`,
/// then `n0` independent initial pairs `(s0 ~ rho, g0 ~ p)`.
///
/// Also returns the exact behavior occupancy the records were drawn from.
pub fn generate_dataset(
    mdp: &GoalMdp,
    behavior: &Policy,
    n: usize,
    n0: usize,
    seed: u64,
) -> Result<(OfflineDataset, InitDataset, OccupancyMeasure)> {
    if n == 0 || n0 == 0 {
        return invalid("dataset sizes must be positive");
    }
    if behavior.min_prob() <= 0.0 {
        return invalid("behavior policy must be strictly positive");
    }
    let mu = occupancy_of_policy(mdp, behavior)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let joint = mu.joint(mdp.goal_dist());
    let joint_index = weighted(&joint)?;
    let successors = (0..mdp.n_states() * mdp.n_actions())
        .map(|row| weighted(mdp.transition_row(row / mdp.n_actions(), row % mdp.n_actions())))
        .collect::<Result<Vec<_>>>()?;
    let (na, ng) = (mdp.n_actions(), mdp.n_goals());
    let records = (0..n)
        .map(|_| {
            let idx = joint_index.sample(&mut rng);
            let (g, sa) = (idx % ng, idx / ng);
            let (s, a) = (sa / na, sa % na);
            let s_next = successors[sa].sample(&mut rng);
            Transition { s, a, r: mdp.reward(s, g), s_next, g }
        })
        .collect();
    let init_index = weighted(mdp.init_dist())?;
    let goal_index = weighted(mdp.goal_dist())?;
    let inits = (0..n0)
        .map(|_| {
            let s0 = init_index.sample(&mut rng);
            let g0 = goal_index.sample(&mut rng);
            InitPair { s0, g0 }
        })
        .collect();
    Ok((OfflineDataset { records }, InitDataset { records: inits }, mu))
}

fn weighted(p: &[f64]) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(p).map_err(|e| Error::InvalidInput(format!("bad sampling weights: {e}")))
}

/// Index sets of a uniform random split into halves of sizes `floor(n/2)` and `ceil(n/2)`.
///
/// Indices within each half are kept in ascending order.
pub fn split_indices(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return invalid("need at least two records to split");
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut first = idx[..n / 2].to_vec();
    let mut second = idx[n / 2..].to_vec();
    first.sort_unstable();
    second.sort_unstable();
    Ok((first, second))
}

pub fn split_dataset(data: &OfflineDataset, seed: u64) -> Result<(OfflineDataset, OfflineDataset)> {
    let (a, b) = split_indices(data.len(), seed)?;
    Ok((data.subset(&a), data.subset(&b)))
}
