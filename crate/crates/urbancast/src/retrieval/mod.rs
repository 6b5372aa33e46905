//! Task-aware dependency retrieval.
//!
//! Candidates come from the target's spatial k-NN; the final context set is
//! chosen inside that candidate set by one of four mechanisms:
//!
//! - `task_aware` — a language model infers a prototype description of
//!   informative regions from a task prompt; candidates are ranked by cosine
//!   similarity between sentence embeddings of the prototype and each
//!   candidate's description, keeping the top n.
//! - `random` — a seeded uniform sample, the retrieval-ablation floor.
//! - `latent_similarity` — cosine similarity in embedding space.
//! - `sparse` — lasso regression of the target embedding on candidate
//!   embeddings; candidates with the largest nonzero coefficients win.

mod lasso;
mod llm;
mod text;

pub use lasso::{lasso_fit, LassoFit};
pub use llm::{
    build_prompt, infer_prototype, CachedClient, HttpChatClient, LanguageModelClient,
    MockLanguageModel, PrototypeQuery, PrototypeSource,
};
pub use text::{cosine_similarity, embed_text, HashEmbedder, HttpEmbedder, TextEmbedder};

use crate::error::Result;
use crate::mix_seed;
use crate::store::RegionDatabase;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// A forecasting task: a short identifier plus the natural-language text
/// inserted into the prompt's task slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub task_text: String,
}

/// How context regions are selected from the k-NN candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    TaskAware,
    Random,
    LatentSimilarity,
    Sparse,
}

impl Mechanism {
    pub const ALL: [Mechanism; 4] =
        [Mechanism::Random, Mechanism::LatentSimilarity, Mechanism::Sparse, Mechanism::TaskAware];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mechanism::TaskAware => "task_aware",
            Mechanism::Random => "random",
            Mechanism::LatentSimilarity => "latent_similarity",
            Mechanism::Sparse => "sparse",
        }
    }
}

/// Retrieval parameters. `k` bounds the spatial candidate set, `n` the
/// returned context size; when `k < n` the context simply has fewer entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub k: usize,
    pub n: usize,
    pub mechanism: Mechanism,
    pub lasso_lambda: f64,
    pub seed: u64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: 121,
            n: 81,
            mechanism: Mechanism::TaskAware,
            lasso_lambda: 0.01,
            seed: 0,
        }
    }
}

/// One retrieved context region.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEntry {
    pub id: u64,
    pub embedding: Vec<f32>,
    pub distance: f64,
    pub entropy: f64,
}

/// The ordered context set retrieved for one target region.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSet {
    pub target_id: u64,
    pub mechanism: Mechanism,
    pub entries: Vec<ContextEntry>,
}

impl ContextSet {
    pub fn ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.id).collect()
    }
}

/// Dispatches to the mechanism named in `cfg`.
pub fn retrieve(
    db: &RegionDatabase,
    target: u64,
    task: &TaskSpec,
    cfg: &RetrievalConfig,
    client: &dyn LanguageModelClient,
    embedder: &dyn TextEmbedder,
) -> Result<ContextSet> {
    match cfg.mechanism {
        Mechanism::TaskAware => retrieve_task_aware(db, target, task, cfg, client, embedder),
        Mechanism::Random => retrieve_random(db, target, cfg),
        Mechanism::LatentSimilarity => retrieve_latent_similarity(db, target, cfg),
        Mechanism::Sparse => retrieve_sparse(db, target, cfg),
    }
}

fn build_entries(db: &RegionDatabase, picked: &[(u64, f64)]) -> Result<Vec<ContextEntry>> {
    picked
        .iter()
        .map(|&(id, distance)| {
            let rec = db.get(id)?;
            Ok(ContextEntry { id, embedding: rec.embedding.clone(), distance, entropy: rec.entropy })
        })
        .collect()
}

/// Prototype-guided retrieval: rank k-NN candidates by semantic similarity
/// between the inferred prototype and each candidate's description, then
/// keep the top n (ties broken by ascending id).
pub fn retrieve_task_aware(
    db: &RegionDatabase,
    target: u64,
    task: &TaskSpec,
    cfg: &RetrievalConfig,
    client: &dyn LanguageModelClient,
    embedder: &dyn TextEmbedder,
) -> Result<ContextSet> {
    let candidates = db.knn_with_distances(target, cfg.k)?;
    let prompt = build_prompt(task, &db.get(target)?.description)?;
    let prototype = infer_prototype(client, &prompt)?;
    let proto_vec = embed_text(embedder, &prototype.text)?;

    // Descriptions repeat across regions; embed each distinct text once.
    let mut memo: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut scored = Vec::with_capacity(candidates.len());
    for &(id, distance) in &candidates {
        let description = db.get(id)?.description.as_str();
        let vec = match memo.get(description) {
            Some(v) => v,
            None => {
                let v = embed_text(embedder, description)?;
                memo.entry(description).or_insert(v)
            }
        };
        let score = cosine_similarity(&proto_vec, vec)?;
        scored.push((id, distance, score));
    }
    scored.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(cfg.n);
    let picked: Vec<(u64, f64)> = scored.iter().map(|&(id, d, _)| (id, d)).collect();
    Ok(ContextSet { target_id: target, mechanism: Mechanism::TaskAware, entries: build_entries(db, &picked)? })
}

/// Uniform sample of n candidates, deterministic in (seed, target).
/// Entries are sorted by ascending id.
pub fn retrieve_random(db: &RegionDatabase, target: u64, cfg: &RetrievalConfig) -> Result<ContextSet> {
    let candidates = db.knn_with_distances(target, cfg.k)?;
    let amount = cfg.n.min(candidates.len());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, target));
    let mut picked: Vec<(u64, f64)> = rand::seq::index::sample(&mut rng, candidates.len(), amount)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    picked.sort_by_key(|&(id, _)| id);
    Ok(ContextSet { target_id: target, mechanism: Mechanism::Random, entries: build_entries(db, &picked)? })
}

/// Top-n candidates by cosine similarity to the target embedding.
pub fn retrieve_latent_similarity(
    db: &RegionDatabase,
    target: u64,
    cfg: &RetrievalConfig,
) -> Result<ContextSet> {
    let candidates = db.knn_with_distances(target, cfg.k)?;
    let target_emb: Vec<f64> = db.get(target)?.embedding.iter().map(|&v| v as f64).collect();
    let mut scored = Vec::with_capacity(candidates.len());
    for &(id, distance) in &candidates {
        let emb: Vec<f64> = db.get(id)?.embedding.iter().map(|&v| v as f64).collect();
        let score = cosine_similarity(&target_emb, &emb)?;
        scored.push((id, distance, score));
    }
    scored.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(cfg.n);
    let picked: Vec<(u64, f64)> = scored.iter().map(|&(id, d, _)| (id, d)).collect();
    Ok(ContextSet {
        target_id: target,
        mechanism: Mechanism::LatentSimilarity,
        entries: build_entries(db, &picked)?,
    })
}

/// Lasso-sparse retrieval: regress the target embedding on candidate
/// embeddings, select the n candidates with the largest nonzero
/// |coefficient| (ties by id), and pad with the spatially nearest of the
/// rest when fewer than n survive the penalty.
pub fn retrieve_sparse(db: &RegionDatabase, target: u64, cfg: &RetrievalConfig) -> Result<ContextSet> {
    let candidates = db.knn_with_distances(target, cfg.k)?;
    let response: Vec<f64> = db.get(target)?.embedding.iter().map(|&v| v as f64).collect();
    let columns: Vec<Vec<f64>> = candidates
        .iter()
        .map(|&(id, _)| Ok(db.get(id)?.embedding.iter().map(|&v| v as f64).collect()))
        .collect::<Result<_>>()?;
    let fit = lasso_fit(&columns, &response, cfg.lasso_lambda)?;

    let mut ranked: Vec<usize> = (0..candidates.len())
        .filter(|&i| fit.coefficients[i] != 0.0)
        .collect();
    ranked.sort_by(|&a, &b| {
        fit.coefficients[b]
            .abs()
            .partial_cmp(&fit.coefficients[a].abs())
            .unwrap()
            .then(candidates[a].0.cmp(&candidates[b].0))
    });
    ranked.truncate(cfg.n);
    if ranked.len() < cfg.n.min(candidates.len()) {
        // Pad by distance order, skipping already-selected candidates.
        let chosen: std::collections::HashSet<usize> = ranked.iter().copied().collect();
        for i in 0..candidates.len() {
            if ranked.len() == cfg.n.min(candidates.len()) {
                break;
            }
            if !chosen.contains(&i) {
                ranked.push(i);
            }
        }
    }
    let picked: Vec<(u64, f64)> = ranked.iter().map(|&i| candidates[i]).collect();
    Ok(ContextSet { target_id: target, mechanism: Mechanism::Sparse, entries: build_entries(db, &picked)? })
}
