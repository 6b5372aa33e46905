//! Synthetic city generation.
//!
//! Regions sit on a regular grid. Each is assigned a category by a seeded
//! draw; its embedding is the category prototype plus Gaussian noise and its
//! description is the category template. Prototypes depend only on their own
//! seeds, so different city seeds reshuffle the map without moving the
//! category geometry in latent space.

use crate::error::{Error, Result};
use crate::mix_seed;
use crate::store::{GeoPoint, RegionDatabase, RegionRecord};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

fn default_proto_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryConfig {
    pub name: String,
    pub prototype_seed: u64,
    pub template: String,
    pub frequency: f64,
    /// Standard deviation of the prototype components. Small values give
    /// near-uniform softmax distributions (high entropy), large values give
    /// peaked ones (low entropy).
    #[serde(default = "default_proto_scale")]
    pub proto_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticCityConfig {
    pub rows: usize,
    pub cols: usize,
    /// Meters between neighboring centroids.
    pub spacing: f64,
    /// Embedding dimension.
    pub dim: usize,
    pub categories: Vec<CategoryConfig>,
    /// Per-component Gaussian noise added to the prototype.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticCityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows * self.cols < 2 {
            return Err(Error::Config("city needs at least 2 regions".into()));
        }
        if self.dim == 0 || self.spacing <= 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::Config("bad city dimensions".into()));
        }
        if self.categories.is_empty() {
            return Err(Error::Config("at least one category is required".into()));
        }
        let total: f64 = self.categories.iter().map(|c| c.frequency).sum();
        if (total - 1.0).abs() > 1e-9 || self.categories.iter().any(|c| c.frequency < 0.0) {
            return Err(Error::Config(format!("category frequencies must sum to 1, got {total}")));
        }
        Ok(())
    }
}

/// Which category each region was assigned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryAssignment {
    pub by_id: BTreeMap<u64, String>,
}

pub fn generate_city(cfg: &SyntheticCityConfig) -> Result<(RegionDatabase, CategoryAssignment)> {
    cfg.validate()?;
    let prototypes: Vec<Vec<f64>> = cfg
        .categories
        .iter()
        .map(|cat| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cat.prototype_seed);
            let normal = Normal::new(0.0, cat.proto_scale.max(1e-12)).unwrap();
            (0..cfg.dim).map(|_| normal.sample(&mut rng)).collect()
        })
        .collect();

    let mut assign_rng = rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1));
    let mut noise_rng = rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 2));
    let noise = Normal::new(0.0, cfg.noise_sigma.max(1e-300)).unwrap();

    let mut records = Vec::with_capacity(cfg.rows * cfg.cols);
    let mut by_id = BTreeMap::new();
    for row in 0..cfg.rows {
        for col in 0..cfg.cols {
            let id = (row * cfg.cols + col) as u64;
            let draw: f64 = assign_rng.gen_range(0.0..1.0);
            let mut acc = 0.0;
            let mut cat_index = cfg.categories.len() - 1;
            for (i, cat) in cfg.categories.iter().enumerate() {
                acc += cat.frequency;
                if draw < acc {
                    cat_index = i;
                    break;
                }
            }
            let cat = &cfg.categories[cat_index];
            let embedding: Vec<f32> = prototypes[cat_index]
                .iter()
                .map(|&p| {
                    let n: f64 = if cfg.noise_sigma > 0.0 { noise.sample(&mut noise_rng) } else { 0.0 };
                    (p + n) as f32
                })
                .collect();
            let centroid = GeoPoint::new(col as f64 * cfg.spacing, row as f64 * cfg.spacing);
            records.push(RegionRecord::new(id, centroid, embedding, cat.template.clone())?);
            by_id.insert(id, cat.name.clone());
        }
    }
    let db = RegionDatabase::build(cfg.dim, records)?;
    Ok((db, CategoryAssignment { by_id }))
}
