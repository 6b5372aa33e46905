//! Planted labeling rules and dataset splitting.
//!
//! A planted task fixes which categories actually matter and at what range:
//! label_i = base(category_i)
//!         + weight * sum of value_j over relevant-category regions j within
//!           `radius` of i
//!         + Gaussian noise,
//! where value_j is a fixed seeded linear probe of region j's embedding.
//! Because the contributing regions are recorded, retrieval quality can be
//! scored against ground truth.

use crate::bench::city::CategoryAssignment;
use crate::error::{Error, Result};
use crate::mix_seed;
use crate::retrieval::TaskSpec;
use crate::store::{euclidean_distance, RegionDatabase};
use rand::{seq::SliceRandom, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantedTask {
    pub name: String,
    /// Natural-language task statement for the retrieval prompt.
    pub task_text: String,
    pub relevant_categories: BTreeSet<String>,
    /// Per-category base level; absent categories default to 0.
    pub base_values: BTreeMap<String, f64>,
    /// Contribution radius in meters.
    pub radius: f64,
    /// Scale applied to the summed neighbor values.
    pub weight: f64,
    pub noise_sigma: f64,
    /// Seeds the linear probe that maps embeddings to scalar values.
    pub value_seed: u64,
}

impl PlantedTask {
    pub fn spec(&self) -> TaskSpec {
        TaskSpec { name: self.name.clone(), task_text: self.task_text.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Labels, planted ground truth, and (after [`split`]) the train/test
/// assignment, all keyed by region id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub task: String,
    pub labels: BTreeMap<u64, f64>,
    #[serde(default)]
    pub assignments: BTreeMap<u64, Split>,
    /// Ground-truth contributing regions per target.
    pub relevant: BTreeMap<u64, BTreeSet<u64>>,
}

impl LabeledDataset {
    pub fn ids_in(&self, split: Split) -> Vec<u64> {
        self.assignments
            .iter()
            .filter(|(_, &s)| s == split)
            .map(|(&id, _)| id)
            .collect()
    }
}

/// The fixed probe vector mapping an embedding to its scalar value.
pub fn value_probe(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut probe: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
    let norm = probe.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut probe {
            *v /= norm;
        }
    }
    probe
}

pub fn region_value(embedding: &[f32], probe: &[f64]) -> f64 {
    embedding.iter().zip(probe).map(|(&e, &p)| e as f64 * p).sum()
}

pub fn plant_labels(
    db: &RegionDatabase,
    categories: &CategoryAssignment,
    task: &PlantedTask,
    seed: u64,
) -> Result<LabeledDataset> {
    if task.relevant_categories.is_empty() {
        return Err(Error::Config("planted task needs at least one relevant category".into()));
    }
    if !(task.radius > 0.0) {
        return Err(Error::Config(format!("planted radius must be positive, got {}", task.radius)));
    }
    let probe = value_probe(db.dim(), task.value_seed);
    let mut noise_rng = rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(seed, 7));
    let noise = Normal::new(0.0, task.noise_sigma.max(1e-300)).unwrap();

    let mut labels = BTreeMap::new();
    let mut relevant = BTreeMap::new();
    for target in db.records() {
        let category = categories
            .by_id
            .get(&target.id)
            .ok_or_else(|| Error::Config(format!("region {} has no category", target.id)))?;
        let base = task.base_values.get(category).copied().unwrap_or(0.0);
        let mut contributors = BTreeSet::new();
        let mut sum = 0.0;
        for other in db.records() {
            if other.id == target.id {
                continue;
            }
            let cat = match categories.by_id.get(&other.id) {
                Some(c) => c,
                None => continue,
            };
            if !task.relevant_categories.contains(cat) {
                continue;
            }
            if euclidean_distance(target.centroid, other.centroid) <= task.radius {
                contributors.insert(other.id);
                sum += region_value(&other.embedding, &probe);
            }
        }
        let eps: f64 = if task.noise_sigma > 0.0 { noise.sample(&mut noise_rng) } else { 0.0 };
        labels.insert(target.id, base + task.weight * sum + eps);
        relevant.insert(target.id, contributors);
    }
    Ok(LabeledDataset {
        task: task.name.clone(),
        labels,
        assignments: BTreeMap::new(),
        relevant,
    })
}

/// Seeded train/test split: a shuffled permutation with the first
/// ceil(fraction * N) ids marked train.
pub fn split(dataset: &mut LabeledDataset, fraction: f64, seed: u64) -> Result<()> {
    if dataset.labels.len() < 2 {
        return Err(Error::Config("need at least 2 records to split".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let mut ids: Vec<u64> = dataset.labels.keys().copied().collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(seed, 11));
    ids.shuffle(&mut rng);
    let train_count = (fraction * ids.len() as f64).ceil() as usize;
    dataset.assignments = ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, if i < train_count { Split::Train } else { Split::Test }))
        .collect();
    Ok(())
}
