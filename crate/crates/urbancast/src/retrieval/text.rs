//! Text embedding for semantic matching.
//!
//! The retrieval protocol only needs unit-norm sentence vectors plus cosine
//! similarity, so the embedder is pluggable. The default offline
//! implementation hashes bag-of-words token counts into a fixed number of
//! buckets; an HTTP-backed embedder can stand in when a real endpoint is
//! available.

use crate::error::{Error, Result};

/// Produces fixed-length sentence embeddings. Implementations must be
/// deterministic for identical input text.
pub trait TextEmbedder: Send + Sync {
    /// Output dimension E.
    fn dim(&self) -> usize;
    /// Raw embedding of `text`. Callers normalize via [`embed_text`].
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Deterministic token-hashing bag-of-words embedder: lowercase, split on
/// non-alphanumerics, hash each token into one of `dim` buckets, count,
/// L2-normalize.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedder dimension must be positive");
        HashEmbedder { dim }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(256)
    }
}

/// FNV-1a, fixed so bucket assignment is stable across runs and platforms.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

impl TextEmbedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut counts = vec![0.0f64; self.dim];
        let lower = text.to_lowercase();
        for token in lower.split(|c: char| !c.is_alphanumeric()) {
            if token.is_empty() {
                continue;
            }
            let bucket = (fnv1a(token.as_bytes()) % self.dim as u64) as usize;
            counts[bucket] += 1.0;
        }
        Ok(counts)
    }
}

/// Embeds `text` and L2-normalizes the result to a unit vector.
pub fn embed_text(embedder: &dyn TextEmbedder, text: &str) -> Result<Vec<f64>> {
    if text.trim().is_empty() {
        return Err(Error::EmptyInput("text to embed"));
    }
    let mut v = embedder.embed(text)?;
    if v.len() != embedder.dim() {
        return Err(Error::DimensionMismatch { expected: embedder.dim(), got: v.len() });
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    for x in &mut v {
        *x /= norm;
    }
    Ok(v)
}

/// Cosine similarity, clamped to [-1, 1] against rounding.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Embedder backed by an embeddings endpoint. Vectors are L2-normalized on
/// receipt, so downstream cosine math is unaffected by server scaling.
pub struct HttpEmbedder {
    base_url: String,
    model: String,
    api_key: Option<String>,
    dim: usize,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, dim: usize, api_key: Option<String>) -> Self {
        HttpEmbedder {
            base_url: base_url.into(),
            model: model.into(),
            api_key,
            dim,
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl TextEmbedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let url = format!("{}/v1/embeddings", self.base_url.trim_end_matches('/'));
        let body = serde_json::json!({ "model": self.model, "input": [text] });
        let mut req = self.client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Error::LlmTransport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(Error::LlmStatus { status: status.as_u16(), body });
        }
        let value: serde_json::Value = resp.json().map_err(|e| Error::LlmTransport(e.to_string()))?;
        let raw = value["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| Error::LlmTransport("embedding response missing data[0].embedding".into()))?;
        let v: Vec<f64> = raw.iter().filter_map(|x| x.as_f64()).collect();
        if v.len() != raw.len() {
            return Err(Error::LlmTransport("non-numeric embedding component".into()));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_embedder_is_deterministic_and_unit_norm() {
        let e = HashEmbedder::default();
        let a = embed_text(&e, "park").unwrap();
        let b = embed_text(&e, "park").unwrap();
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn distinct_token_sets_are_not_fully_aligned() {
        let e = HashEmbedder::default();
        let a = embed_text(&e, "park").unwrap();
        let b = embed_text(&e, "industrial rail yard").unwrap();
        let cos = cosine_similarity(&a, &b).unwrap();
        // "park" occupies a single bucket; the three other tokens land in
        // buckets of their own (verified: no collision under FNV-1a % 256),
        // so the cosine is exactly 0.
        assert_eq!(cos, 0.0);
    }

    #[test]
    fn empty_text_is_rejected() {
        let e = HashEmbedder::default();
        assert!(matches!(embed_text(&e, ""), Err(Error::EmptyInput(_))));
        assert!(matches!(embed_text(&e, "  \t"), Err(Error::EmptyInput(_))));
        // Tokenizes to nothing: no direction to normalize.
        assert!(matches!(embed_text(&e, "!!!"), Err(Error::ZeroVector)));
    }

    #[test]
    fn cosine_closed_forms() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cosine_rejects_zero_and_mismatched_vectors() {
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
