//! Region representation store.
//!
//! Houses one record per urban region — planar centroid, latent embedding,
//! text description, cached Shannon entropy — behind an immutable database
//! with exact spatial k-NN queries and a directory bundle format.

mod bundle;
mod kdtree;

pub use bundle::{load_bundle, save_bundle, BundleManifest};

use crate::error::{Error, Result};
use kdtree::KdTree;
use std::collections::HashMap;

/// Planar position in meters (east, north).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeoPoint {
    pub x: f64,
    pub y: f64,
}

impl GeoPoint {
    pub fn new(x: f64, y: f64) -> Self {
        GeoPoint { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Euclidean distance between two planar points.
pub fn euclidean_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

/// Shannon entropy of the softmax distribution of `embedding`, in nats.
///
/// Computes H = -sum p_i ln p_i with p = softmax(embedding), using
/// max-subtraction for stability. The result lies in [0, ln D].
pub fn region_entropy(embedding: &[f32]) -> Result<f64> {
    if embedding.is_empty() {
        return Err(Error::DimensionMismatch { expected: 1, got: 0 });
    }
    if embedding.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "embedding".into() });
    }
    let max = embedding.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let mut sum = 0.0f64;
    let mut weighted = 0.0f64; // sum of (z - max) * e^(z - max)
    for &v in embedding {
        let z = v as f64 - max;
        let e = z.exp();
        sum += e;
        weighted += z * e;
    }
    // H = ln(sum) - weighted/sum, clamped against rounding at the boundaries.
    let h = sum.ln() - weighted / sum;
    Ok(h.clamp(0.0, (embedding.len() as f64).ln()))
}

/// One urban region: identity, location, latent embedding, description,
/// and the cached entropy of the embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionRecord {
    pub id: u64,
    pub centroid: GeoPoint,
    pub embedding: Vec<f32>,
    pub description: String,
    pub entropy: f64,
}

impl RegionRecord {
    /// Builds a record, computing and caching the embedding entropy.
    pub fn new(id: u64, centroid: GeoPoint, embedding: Vec<f32>, description: String) -> Result<Self> {
        let entropy = region_entropy(&embedding)?;
        Ok(RegionRecord { id, centroid, embedding, description, entropy })
    }
}

/// A single invariant violation found by [`RegionDatabase::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub region: Option<u64>,
    pub reason: String,
}

/// Immutable collection of region records with a spatial index over
/// centroids. Safe to share across threads once constructed.
#[derive(Debug, Clone)]
pub struct RegionDatabase {
    dim: usize,
    records: Vec<RegionRecord>,
    by_id: HashMap<u64, usize>,
    index: KdTree,
}

impl RegionDatabase {
    /// Builds a database, rejecting any record that breaks an invariant.
    pub fn build(dim: usize, mut records: Vec<RegionRecord>) -> Result<Self> {
        records.sort_by_key(|r| r.id);
        for pair in records.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::DuplicateId(pair[0].id));
            }
        }
        for rec in &records {
            if rec.embedding.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: rec.embedding.len() });
            }
            if rec.embedding.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { context: format!("embedding of region {}", rec.id) });
            }
            if !rec.centroid.is_finite() {
                return Err(Error::NonFinite { context: format!("centroid of region {}", rec.id) });
            }
            if rec.description.is_empty() {
                return Err(Error::EmptyInput("region description"));
            }
            let computed = region_entropy(&rec.embedding)?;
            if (computed - rec.entropy).abs() > 1e-9 {
                return Err(Error::StaleEntropy { id: rec.id, cached: rec.entropy, computed });
            }
        }
        Ok(Self::new_unchecked(dim, records))
    }

    /// Assembles a database without checking invariants. Intended for
    /// [`validate`](Self::validate) tests and trusted ingestion paths.
    /// Records with non-finite centroids stay queryable by id but are left
    /// out of the spatial index.
    pub fn new_unchecked(dim: usize, mut records: Vec<RegionRecord>) -> Self {
        records.sort_by_key(|r| r.id);
        let by_id = records.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
        let points: Vec<(u64, f64, f64)> = records
            .iter()
            .filter(|r| r.centroid.is_finite())
            .map(|r| (r.id, r.centroid.x, r.centroid.y))
            .collect();
        let index = KdTree::build(&points);
        RegionDatabase { dim, records, by_id, index }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in ascending id order.
    pub fn records(&self) -> &[RegionRecord] {
        &self.records
    }

    pub fn get(&self, id: u64) -> Result<&RegionRecord> {
        self.by_id
            .get(&id)
            .map(|&i| &self.records[i])
            .ok_or(Error::UnknownRegion(id))
    }

    pub fn contains(&self, id: u64) -> bool {
        self.by_id.contains_key(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.records.iter().map(|r| r.id)
    }

    /// The k regions spatially closest to `target`, excluding the target
    /// itself, sorted ascending by (distance, id). Returns every other
    /// region when fewer than k exist.
    pub fn knn(&self, target: u64, k: usize) -> Result<Vec<u64>> {
        Ok(self.knn_with_distances(target, k)?.into_iter().map(|(id, _)| id).collect())
    }

    /// Same as [`knn`](Self::knn) but keeps the distances.
    pub fn knn_with_distances(&self, target: u64, k: usize) -> Result<Vec<(u64, f64)>> {
        let rec = self.get(target)?;
        if !rec.centroid.is_finite() {
            return Err(Error::NonFinite { context: format!("centroid of region {target}") });
        }
        Ok(self.index.nearest(rec.centroid.x, rec.centroid.y, k, target))
    }

    /// Re-checks every invariant and reports violations as data.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for rec in &self.records {
            if !seen.insert(rec.id) {
                out.push(Violation { region: Some(rec.id), reason: "duplicate id".into() });
            }
            if rec.embedding.len() != self.dim {
                out.push(Violation {
                    region: Some(rec.id),
                    reason: format!("embedding length {} != dim {}", rec.embedding.len(), self.dim),
                });
                continue;
            }
            if rec.embedding.iter().any(|v| !v.is_finite()) {
                out.push(Violation { region: Some(rec.id), reason: "non-finite embedding component".into() });
                continue;
            }
            if !rec.centroid.is_finite() {
                out.push(Violation { region: Some(rec.id), reason: "non-finite centroid coordinate".into() });
            }
            if rec.description.is_empty() {
                out.push(Violation { region: Some(rec.id), reason: "empty description".into() });
            }
            match region_entropy(&rec.embedding) {
                Ok(h) => {
                    if (h - rec.entropy).abs() > 1e-9 {
                        out.push(Violation {
                            region: Some(rec.id),
                            reason: format!("cached entropy {} differs from recomputed {}", rec.entropy, h),
                        });
                    }
                }
                Err(e) => out.push(Violation { region: Some(rec.id), reason: e.to_string() }),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid3(dim: usize) -> RegionDatabase {
        // 3x3 unit grid, ids 0..9 row-major.
        let mut recs = Vec::new();
        for r in 0..3u64 {
            for c in 0..3u64 {
                let id = r * 3 + c;
                recs.push(
                    RegionRecord::new(
                        id,
                        GeoPoint::new(c as f64, r as f64),
                        vec![0.1; dim],
                        format!("cell {id}"),
                    )
                    .unwrap(),
                );
            }
        }
        RegionDatabase::build(dim, recs).unwrap()
    }

    #[test]
    fn entropy_of_zeros_is_ln_d() {
        let h = region_entropy(&[0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((h - 4.0f64.ln()).abs() < 1e-12, "got {h}");
    }

    #[test]
    fn entropy_is_shift_invariant_for_constant_vectors() {
        for c in [-3.5f32, 0.0, 2.0, 17.25] {
            let h = region_entropy(&[c; 8]).unwrap();
            assert!((h - 8.0f64.ln()).abs() < 1e-12, "c={c} gave {h}");
        }
    }

    #[test]
    fn entropy_of_peaked_vector_matches_frozen_oracle_value() {
        // Frozen from a 60-digit softmax-entropy oracle for (10,0,0,0):
        // H = 0.0014980029292489210218...
        let h = region_entropy(&[10.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((h - 1.498_002_929_248_921e-3).abs() < 1e-15, "got {h:e}");
    }

    #[test]
    fn entropy_rejects_bad_input() {
        assert!(matches!(region_entropy(&[]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(region_entropy(&[1.0, f32::NAN]), Err(Error::NonFinite { .. })));
        assert!(matches!(region_entropy(&[f32::INFINITY]), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn distance_basics() {
        let o = GeoPoint::new(0.0, 0.0);
        assert_eq!(euclidean_distance(o, o), 0.0);
        assert_eq!(euclidean_distance(o, GeoPoint::new(3.0, 4.0)), 5.0);
        assert_eq!(
            euclidean_distance(GeoPoint::new(1.0, 1.0), GeoPoint::new(4.0, 5.0)),
            5.0
        );
    }

    #[test]
    fn knn_center_of_grid_returns_rook_neighbors() {
        let db = grid3(4);
        // Center is id 4; the four rook-adjacent cells are strictly closer
        // than the diagonals (1 < sqrt 2).
        assert_eq!(db.knn(4, 4).unwrap(), vec![1, 3, 5, 7]);
    }

    #[test]
    fn knn_k_zero_and_exhaustion() {
        let db = grid3(2);
        assert_eq!(db.knn(0, 0).unwrap(), Vec::<u64>::new());

        let two = RegionDatabase::build(
            2,
            vec![
                RegionRecord::new(7, GeoPoint::new(0.0, 0.0), vec![0.0, 0.0], "a".into()).unwrap(),
                RegionRecord::new(9, GeoPoint::new(5.0, 0.0), vec![0.0, 0.0], "b".into()).unwrap(),
            ],
        )
        .unwrap();
        assert_eq!(two.knn(7, 5).unwrap(), vec![9]);
    }

    #[test]
    fn knn_unknown_target_is_a_lookup_error() {
        let db = grid3(2);
        assert!(matches!(db.knn(99, 3), Err(Error::UnknownRegion(99))));
    }

    #[test]
    fn build_rejects_duplicates_and_mismatched_dims() {
        let a = RegionRecord::new(1, GeoPoint::new(0.0, 0.0), vec![0.0; 3], "a".into()).unwrap();
        let b = RegionRecord::new(1, GeoPoint::new(1.0, 0.0), vec![0.0; 3], "b".into()).unwrap();
        assert!(matches!(RegionDatabase::build(3, vec![a.clone(), b]), Err(Error::DuplicateId(1))));

        let short = RegionRecord::new(2, GeoPoint::new(0.0, 1.0), vec![0.0; 2], "c".into()).unwrap();
        assert!(matches!(
            RegionDatabase::build(3, vec![a, short]),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn validate_flags_stale_entropy_and_nan_coordinate() {
        let db = grid3(4);
        assert!(db.validate().is_empty());

        let mut bad = db.records().to_vec();
        bad[2].entropy += 1e-6;
        bad[5].centroid.x = f64::NAN;
        let db = RegionDatabase::new_unchecked(4, bad);
        let violations = db.validate();
        assert_eq!(violations.len(), 2);
        assert!(violations.iter().any(|v| v.region == Some(2) && v.reason.contains("entropy")));
        assert!(violations.iter().any(|v| v.region == Some(5) && v.reason.contains("centroid")));
    }
}
