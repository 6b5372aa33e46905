//! Prototype inference via a language model.
//!
//! For each (task, target region) pair a prompt is built from a fixed
//! template and sent to a chat-completion client; the response text is the
//! prototype description of regions expected to be informative. An offline
//! mock keeps tests hermetic, and responses can be cached on disk keyed by
//! prompt hash so repeated runs cost one request per prompt.

use crate::error::{Error, Result};
use crate::retrieval::TaskSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;

/// Where a prototype's text came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeSource {
    LanguageModel,
    CannedMock,
}

/// The inferred description of regions likely to inform a prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeQuery {
    pub text: String,
    pub source: PrototypeSource,
}

/// A chat-completion backend. Implementations must be safe to share across
/// threads; the mock must return identical text for identical prompts.
pub trait LanguageModelClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
    fn source(&self) -> PrototypeSource;
}

/// Renders the retrieval prompt for one task and one region description.
pub fn build_prompt(task: &TaskSpec, description: &str) -> Result<String> {
    if task.task_text.trim().is_empty() {
        return Err(Error::EmptyInput("task text"));
    }
    if description.trim().is_empty() {
        return Err(Error::EmptyInput("region description"));
    }
    Ok(format!(
        "To predict {} for a given target region described as follows: {}.\n\n\
         List the relevant urban features, buildings, land use or functions \
         nearby the target region that may provide useful contextual information.",
        task.task_text, description
    ))
}

/// Runs `prompt` through `client` and wraps the trimmed response.
pub fn infer_prototype(client: &dyn LanguageModelClient, prompt: &str) -> Result<PrototypeQuery> {
    if prompt.trim().is_empty() {
        return Err(Error::EmptyInput("prompt"));
    }
    let raw = client.complete(prompt)?;
    let text = raw.trim().to_string();
    if text.is_empty() {
        return Err(Error::LlmEmptyResponse);
    }
    Ok(PrototypeQuery { text, source: client.source() })
}

/// Offline stand-in: maps prompts to canned prototype texts by substring
/// match, in insertion order, with an optional fallback.
#[derive(Debug, Clone, Default)]
pub struct MockLanguageModel {
    entries: Vec<(String, String)>,
    fallback: Option<String>,
}

impl MockLanguageModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Respond with `response` whenever the prompt contains `needle`.
    pub fn with_response(mut self, needle: impl Into<String>, response: impl Into<String>) -> Self {
        self.entries.push((needle.into(), response.into()));
        self
    }

    pub fn with_fallback(mut self, response: impl Into<String>) -> Self {
        self.fallback = Some(response.into());
        self
    }
}

impl LanguageModelClient for MockLanguageModel {
    fn complete(&self, prompt: &str) -> Result<String> {
        for (needle, response) in &self.entries {
            if prompt.contains(needle.as_str()) {
                return Ok(response.clone());
            }
        }
        self.fallback.clone().ok_or(Error::LlmNoMatch)
    }

    fn source(&self) -> PrototypeSource {
        PrototypeSource::CannedMock
    }
}

/// Client for an OpenAI-style chat-completions endpoint.
pub struct HttpChatClient {
    base_url: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        HttpChatClient {
            base_url: base_url.into(),
            model: model.into(),
            api_key,
            client: reqwest::blocking::Client::new(),
        }
    }

    /// Reads endpoint and key from `URBANCAST_LLM_URL` / `URBANCAST_API_KEY`.
    /// Returns None when no URL is configured.
    pub fn from_env(model: impl Into<String>) -> Option<Self> {
        let url = std::env::var("URBANCAST_LLM_URL").ok()?;
        let key = std::env::var("URBANCAST_API_KEY").ok();
        Some(HttpChatClient::new(url, model, key))
    }
}

impl LanguageModelClient for HttpChatClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        let url = format!("{}/v1/chat/completions", self.base_url.trim_end_matches('/'));
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": 0,
        });
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
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(|s| s.to_string())
            .ok_or_else(|| Error::LlmTransport("response missing choices[0].message.content".into()))
    }

    fn source(&self) -> PrototypeSource {
        PrototypeSource::LanguageModel
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    prompt_sha256: String,
    response_text: String,
}

/// Caches completions keyed by prompt SHA-256, optionally persisted as
/// JSONL so later runs skip the network entirely.
pub struct CachedClient<C: LanguageModelClient> {
    inner: C,
    map: Mutex<HashMap<String, String>>,
    path: Option<PathBuf>,
}

impl<C: LanguageModelClient> CachedClient<C> {
    pub fn new(inner: C) -> Self {
        CachedClient { inner, map: Mutex::new(HashMap::new()), path: None }
    }

    /// Loads any existing cache file at `path` and appends future misses.
    pub fn with_cache_file(inner: C, path: PathBuf) -> Result<Self> {
        let mut map = HashMap::new();
        if path.exists() {
            for line in std::fs::read_to_string(&path)?.lines() {
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: CacheLine = serde_json::from_str(line)
                    .map_err(|e| Error::Bundle(format!("prototype cache line: {e}")))?;
                map.insert(parsed.prompt_sha256, parsed.response_text);
            }
        }
        Ok(CachedClient { inner, map: Mutex::new(map), path: Some(path) })
    }

    pub fn hits(&self) -> usize {
        self.map.lock().unwrap().len()
    }
}

fn prompt_key(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl<C: LanguageModelClient> LanguageModelClient for CachedClient<C> {
    fn complete(&self, prompt: &str) -> Result<String> {
        let key = prompt_key(prompt);
        if let Some(hit) = self.map.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let response = self.inner.complete(prompt)?;
        self.map.lock().unwrap().insert(key.clone(), response.clone());
        if let Some(path) = &self.path {
            let line = serde_json::to_string(&CacheLine {
                prompt_sha256: key,
                response_text: response.clone(),
            })?;
            let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(file, "{line}")?;
        }
        Ok(response)
    }

    fn source(&self) -> PrototypeSource {
        self.inner.source()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task() -> TaskSpec {
        TaskSpec { name: "rideshare".into(), task_text: "ride-share demand".into() }
    }

    #[test]
    fn prompt_matches_template_exactly() {
        let p = build_prompt(&task(), "dense residential blocks").unwrap();
        assert_eq!(
            p,
            "To predict ride-share demand for a given target region described as follows: \
             dense residential blocks.\n\nList the relevant urban features, buildings, \
             land use or functions nearby the target region that may provide useful \
             contextual information."
        );
        assert_eq!(p, build_prompt(&task(), "dense residential blocks").unwrap());
    }

    #[test]
    fn prompt_rejects_empty_slots() {
        let empty_task = TaskSpec { name: "x".into(), task_text: "".into() };
        assert!(matches!(build_prompt(&empty_task, "desc"), Err(Error::EmptyInput(_))));
        assert!(matches!(build_prompt(&task(), ""), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn mock_lookup_and_empty_response() {
        let mock = MockLanguageModel::new()
            .with_response("ride-share demand", "transit stops, dense housing, commercial corridors")
            .with_response("blank-task", "");
        let proto = infer_prototype(&mock, &build_prompt(&task(), "blocks").unwrap()).unwrap();
        assert_eq!(proto.text, "transit stops, dense housing, commercial corridors");
        assert_eq!(proto.source, PrototypeSource::CannedMock);

        let err = infer_prototype(&mock, "about blank-task here").unwrap_err();
        assert!(matches!(err, Error::LlmEmptyResponse));
        assert!(err.retryable());

        assert!(matches!(infer_prototype(&mock, "nothing known"), Err(Error::LlmNoMatch)));
    }

    #[test]
    fn transport_error_from_unreachable_endpoint() {
        let client = HttpChatClient::new("http://127.0.0.1:9", "m", None);
        let err = infer_prototype(&client, "hello").unwrap_err();
        assert!(matches!(err, Error::LlmTransport(_)), "{err:?}");
        assert!(err.retryable());
    }

    #[test]
    fn cache_round_trips_and_prevents_second_call() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let mock = MockLanguageModel::new().with_response("demand", "shops and stations");
        let cached = CachedClient::with_cache_file(mock, path.clone()).unwrap();
        assert_eq!(cached.complete("predict demand").unwrap(), "shops and stations");

        // A fresh cache over a client that knows nothing must hit the file.
        let empty = MockLanguageModel::new();
        let reloaded = CachedClient::with_cache_file(empty, path).unwrap();
        assert_eq!(reloaded.complete("predict demand").unwrap(), "shops and stations");
        assert!(reloaded.complete("different prompt").is_err());
    }
}
