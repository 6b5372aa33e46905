//! End-to-end experiment runner and ablation suites.
//!
//! One experiment: generate a city, plant labels, split, retrieve a context
//! set for every region, train the decoder on the train split, and report
//! MSE/MAE/R-squared on both splits plus retrieval precision against the
//! planted ground truth. Everything is a pure function of the seed bundle.

use crate::bench::city::{generate_city, CategoryAssignment, SyntheticCityConfig};
use crate::bench::metrics::{metrics, SplitMetrics};
use crate::bench::planted::{plant_labels, split, LabeledDataset, PlantedTask, Split};
use crate::error::{Error, Result};
use crate::mix_seed;
use crate::model::{
    predict_batch, train, AttentionConfig, GeoContext, Sample, TrainConfig, WeightingMode,
};
use crate::retrieval::{
    retrieve, HashEmbedder, MockLanguageModel, Mechanism, RetrievalConfig, TaskSpec,
};
use crate::store::RegionDatabase;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub city: SyntheticCityConfig,
    pub task: PlantedTask,
    pub retrieval: RetrievalConfig,
    pub model: AttentionConfig,
    pub train: TrainConfig,
    pub split_fraction: f64,
    pub label_seed: u64,
    pub split_seed: u64,
    /// Informational: the master seed this config was derived from.
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.city.validate()?;
        self.model.validate()?;
        if self.model.context_slots != self.retrieval.n + 1 {
            return Err(Error::Config(format!(
                "context_slots must equal n + 1 (model {} vs retrieval n {})",
                self.model.context_slots, self.retrieval.n
            )));
        }
        if self.city.dim != self.model.d_model {
            return Err(Error::Config(format!(
                "city embedding dim {} must match model d_model {}",
                self.city.dim, self.model.d_model
            )));
        }
        Ok(())
    }

    /// Derives every internal seed from `master`, so a single number pins
    /// the whole experiment.
    pub fn reseed(mut self, master: u64) -> Self {
        self.master_seed = master;
        self.city.seed = mix_seed(master, 0x01);
        self.label_seed = mix_seed(master, 0x02);
        self.split_seed = mix_seed(master, 0x03);
        self.retrieval.seed = mix_seed(master, 0x04);
        self.train.seed = mix_seed(master, 0x05);
        self
    }
}

/// One experiment's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mechanism: Mechanism,
    pub weighting: WeightingMode,
    pub seed: u64,
    /// SHA-256 over the city, labels, and split; rows of one ablation table
    /// must agree on it.
    pub data_hash: String,
    pub train: SplitMetrics,
    pub test: SplitMetrics,
    /// Mean fraction of retrieved regions that are planted contributors.
    pub precision_at_n: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub suite: String,
    pub rows: Vec<MetricsReport>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "suite,mechanism,weighting,seed,train_mse,train_mae,train_r2,test_mse,test_mae,test_r2,precision_at_n,data_hash\n",
        );
        for row in &self.rows {
            let precision = row
                .precision_at_n
                .map(|p| p.to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                self.suite,
                row.mechanism.as_str(),
                row.weighting.as_str(),
                row.seed,
                row.train.mse,
                row.train.mae,
                row.train.r2,
                row.test.mse,
                row.test.mae,
                row.test.r2,
                precision,
                row.data_hash,
            ));
        }
        out
    }
}

/// City + labels + split shared by every row of an ablation table.
struct PreparedData {
    db: RegionDatabase,
    dataset: LabeledDataset,
    data_hash: String,
    prototype: String,
}

fn prepare(cfg: &ExperimentConfig) -> Result<PreparedData> {
    cfg.validate()?;
    let (db, categories) = generate_city(&cfg.city)?;
    let mut dataset = plant_labels(&db, &categories, &cfg.task, cfg.label_seed)?;
    split(&mut dataset, cfg.split_fraction, cfg.split_seed)?;
    let data_hash = hash_data(&db, &categories, &dataset);
    let prototype = mock_prototype(&cfg.city, &cfg.task);
    Ok(PreparedData { db, dataset, data_hash, prototype })
}

/// The canned prototype the offline language model returns for this task:
/// the templates of the planted relevant categories.
fn mock_prototype(city: &SyntheticCityConfig, task: &PlantedTask) -> String {
    let mut parts: Vec<&str> = city
        .categories
        .iter()
        .filter(|c| task.relevant_categories.contains(&c.name))
        .map(|c| c.template.as_str())
        .collect();
    if parts.is_empty() {
        parts.push("urban context");
    }
    parts.join(" ")
}

fn hash_data(db: &RegionDatabase, categories: &CategoryAssignment, dataset: &LabeledDataset) -> String {
    let mut hasher = Sha256::new();
    for rec in db.records() {
        hasher.update(rec.id.to_le_bytes());
        hasher.update(rec.centroid.x.to_le_bytes());
        hasher.update(rec.centroid.y.to_le_bytes());
        for &v in &rec.embedding {
            hasher.update(v.to_le_bytes());
        }
        hasher.update(rec.description.as_bytes());
        hasher.update([0xff]);
        hasher.update(categories.by_id[&rec.id].as_bytes());
        hasher.update([0xfe]);
    }
    for (id, label) in &dataset.labels {
        hasher.update(id.to_le_bytes());
        hasher.update(label.to_le_bytes());
        let flag = match dataset.assignments.get(id) {
            Some(Split::Train) => 1u8,
            Some(Split::Test) => 2u8,
            None => 0u8,
        };
        hasher.update([flag]);
    }
    for (id, members) in &dataset.relevant {
        hasher.update(id.to_le_bytes());
        for m in members {
            hasher.update(m.to_le_bytes());
        }
        hasher.update([0xfd]);
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn run_prepared(data: &PreparedData, cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let client = MockLanguageModel::new().with_response(cfg.task.task_text.clone(), data.prototype.clone());
    let embedder = HashEmbedder::default();
    let task_spec: TaskSpec = cfg.task.spec();

    let ids: Vec<u64> = data.db.ids().collect();
    let mut samples = Vec::with_capacity(ids.len());
    let mut precision_sum = 0.0;
    let mut precision_count = 0usize;
    for &id in &ids {
        let ctx = retrieve(&data.db, id, &task_spec, &cfg.retrieval, &client, &embedder)?;
        if !ctx.entries.is_empty() {
            let relevant: &BTreeSet<u64> = &data.dataset.relevant[&id];
            let hits = ctx.entries.iter().filter(|e| relevant.contains(&e.id)).count();
            precision_sum += hits as f64 / ctx.entries.len() as f64;
            precision_count += 1;
        }
        let target = data.db.get(id)?;
        samples.push((id, Sample { geo: GeoContext::new(&target.embedding, &ctx)?, label: data.dataset.labels[&id] }));
    }

    let train_ids: BTreeSet<u64> = data.dataset.ids_in(Split::Train).into_iter().collect();
    let train_samples: Vec<Sample> =
        samples.iter().filter(|(id, _)| train_ids.contains(id)).map(|(_, s)| s.clone()).collect();
    let test_samples: Vec<Sample> =
        samples.iter().filter(|(id, _)| !train_ids.contains(id)).map(|(_, s)| s.clone()).collect();

    let outcome = train(&train_samples, &cfg.model, &cfg.train)?;
    let train_preds = predict_batch(&outcome.model, &train_samples)?;
    let test_preds = predict_batch(&outcome.model, &test_samples)?;
    let train_labels: Vec<f64> = train_samples.iter().map(|s| s.label).collect();
    let test_labels: Vec<f64> = test_samples.iter().map(|s| s.label).collect();

    Ok(MetricsReport {
        mechanism: cfg.retrieval.mechanism,
        weighting: cfg.model.weighting,
        seed: cfg.master_seed,
        data_hash: data.data_hash.clone(),
        train: metrics(&train_preds, &train_labels)?,
        test: metrics(&test_preds, &test_labels)?,
        precision_at_n: if precision_count > 0 {
            Some(precision_sum / precision_count as f64)
        } else {
            None
        },
    })
}

/// Runs one full experiment from its seed bundle.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let data = prepare(cfg)?;
    run_prepared(&data, cfg)
}

/// Four runs differing only in retrieval mechanism, sharing the city,
/// labels, and split.
pub fn ablate_retrieval(base: &ExperimentConfig) -> Result<AblationTable> {
    let data = prepare(base)?;
    let mut rows = Vec::new();
    for mechanism in Mechanism::ALL {
        let mut cfg = base.clone();
        cfg.retrieval.mechanism = mechanism;
        rows.push(run_prepared(&data, &cfg)?);
    }
    Ok(AblationTable { suite: "retrieval".into(), rows })
}

/// Four runs differing only in the attention weighting mode, with retrieval
/// fixed to task-aware.
pub fn ablate_weighting(base: &ExperimentConfig) -> Result<AblationTable> {
    let mut base = base.clone();
    base.retrieval.mechanism = Mechanism::TaskAware;
    let data = prepare(&base)?;
    let mut rows = Vec::new();
    for weighting in WeightingMode::ABLATION {
        let mut cfg = base.clone();
        cfg.model.weighting = weighting;
        rows.push(run_prepared(&data, &cfg)?);
    }
    Ok(AblationTable { suite: "weighting".into(), rows })
}

/// Repeats an ablation suite over several master seeds and concatenates the
/// rows in (seed, variant) order.
pub fn ablate_multi_seed(
    suite: &str,
    base: &ExperimentConfig,
    seeds: &[u64],
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for &seed in seeds {
        let cfg = base.clone().reseed(seed);
        let table = match suite {
            "retrieval" => ablate_retrieval(&cfg)?,
            "weighting" => ablate_weighting(&cfg)?,
            other => return Err(Error::Config(format!("unknown ablation suite '{other}'"))),
        };
        rows.extend(table.rows);
    }
    Ok(AblationTable { suite: suite.into(), rows })
}

/// Mean test R-squared and precision per variant of an ablation table.
pub fn summarize_by<K: Ord + Clone>(
    table: &AblationTable,
    key: impl Fn(&MetricsReport) -> K,
) -> Vec<(K, f64, Option<f64>)> {
    let mut grouped: std::collections::BTreeMap<K, (f64, f64, usize, usize)> =
        std::collections::BTreeMap::new();
    for row in &table.rows {
        let entry = grouped.entry(key(row)).or_insert((0.0, 0.0, 0, 0));
        entry.0 += row.test.r2;
        entry.2 += 1;
        if let Some(p) = row.precision_at_n {
            entry.1 += p;
            entry.3 += 1;
        }
    }
    grouped
        .into_iter()
        .map(|(k, (r2, prec, n, np))| {
            (k, r2 / n as f64, if np > 0 { Some(prec / np as f64) } else { None })
        })
        .collect()
}

/// The pinned desk-scale benchmark: a 12x12 grid at 500 m spacing with five
/// categories, k=24 candidates, n=8 retrieved, contribution radius 1500 m.
pub fn default_benchmark(master_seed: u64) -> ExperimentConfig {
    use crate::bench::city::CategoryConfig;
    // Prototype seeds are chosen so that (under the fixed value probe) the
    // two relevant categories carry similar positive values, residential is
    // value-neutral, and the decoy categories pair low entropy with large
    // off-signal values.
    let categories = vec![
        CategoryConfig {
            name: "transit".into(),
            prototype_seed: 101,
            template: "transit hub with bus stops rail platforms and commuter parking".into(),
            frequency: 0.10,
            proto_scale: 0.45,
        },
        CategoryConfig {
            name: "residential".into(),
            prototype_seed: 132,
            template: "dense residential blocks with apartments housing and schools".into(),
            frequency: 0.40,
            proto_scale: 0.45,
        },
        CategoryConfig {
            name: "commercial".into(),
            prototype_seed: 113,
            template: "commercial corridor with shops offices restaurants and retail".into(),
            frequency: 0.10,
            proto_scale: 0.45,
        },
        CategoryConfig {
            name: "industrial".into(),
            prototype_seed: 121,
            template: "industrial warehouses with freight logistics and storage depots".into(),
            frequency: 0.22,
            proto_scale: 2.4,
        },
        CategoryConfig {
            name: "park".into(),
            prototype_seed: 154,
            template: "large homogeneous park with green space trees and trails".into(),
            frequency: 0.18,
            proto_scale: 2.4,
        },
    ];
    let task = PlantedTask {
        name: "rideshare".into(),
        task_text: "ride-share demand".into(),
        relevant_categories: ["transit".to_string(), "commercial".to_string()]
            .into_iter()
            .collect(),
        base_values: [
            ("transit".to_string(), 1.2),
            ("residential".to_string(), 0.5),
            ("commercial".to_string(), 0.9),
            ("industrial".to_string(), 0.3),
            ("park".to_string(), 0.0),
        ]
        .into_iter()
        .collect(),
        radius: 1500.0,
        weight: 0.5,
        noise_sigma: 0.15,
        value_seed: 4242,
    };
    let city = SyntheticCityConfig {
        rows: 12,
        cols: 12,
        spacing: 500.0,
        dim: 32,
        categories,
        noise_sigma: 0.25,
        seed: 0,
    };
    let retrieval = RetrievalConfig {
        k: 24,
        n: 8,
        mechanism: Mechanism::TaskAware,
        lasso_lambda: 0.01,
        seed: 0,
    };
    let mut model = AttentionConfig::new(32, 4, 2, 9).unwrap();
    model.alpha = 0.5;
    let train = TrainConfig {
        learning_rate: 2e-3,
        epochs: 150,
        batch_size: 16,
        seed: 0,
        optimizer: crate::model::OptimizerKind::Adam,
        standardize_labels: true,
    };
    ExperimentConfig {
        city,
        task,
        retrieval,
        model,
        train,
        split_fraction: 0.8,
        label_seed: 0,
        split_seed: 0,
        master_seed: 0,
    }
    .reseed(master_seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_benchmark(master: u64) -> ExperimentConfig {
        let mut cfg = default_benchmark(master);
        cfg.city.rows = 6;
        cfg.city.cols = 6;
        cfg.train.epochs = 10;
        cfg.reseed(master)
    }

    #[test]
    fn identical_seed_bundles_give_byte_identical_reports() {
        let cfg = small_benchmark(7);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn bypass_and_none_reports_differ_only_by_flag() {
        let mut cfg = small_benchmark(11);
        cfg.model.weighting = WeightingMode::None;
        let none = run_experiment(&cfg).unwrap();
        cfg.model.weighting = WeightingMode::Bypass;
        let bypass = run_experiment(&cfg).unwrap();
        assert_eq!(none.train, bypass.train);
        assert_eq!(none.test, bypass.test);
        assert_eq!(none.data_hash, bypass.data_hash);
        assert_ne!(none.weighting, bypass.weighting);
    }

    #[test]
    fn ablation_rows_share_identical_data_hashes() {
        let cfg = small_benchmark(13);
        let retrieval = ablate_retrieval(&cfg).unwrap();
        assert_eq!(retrieval.rows.len(), 4);
        assert!(retrieval.rows.iter().all(|r| r.data_hash == retrieval.rows[0].data_hash));

        let weighting = ablate_weighting(&cfg).unwrap();
        assert_eq!(weighting.rows.len(), 4);
        assert!(weighting.rows.iter().all(|r| r.data_hash == weighting.rows[0].data_hash));
        assert!(weighting.rows.iter().all(|r| r.mechanism == Mechanism::TaskAware));
    }

    #[test]
    fn csv_has_one_line_per_row_plus_header() {
        let cfg = small_benchmark(17);
        let table = ablate_retrieval(&cfg).unwrap();
        let csv = table.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("suite,mechanism,"));
    }
}
