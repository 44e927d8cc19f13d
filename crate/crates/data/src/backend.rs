use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DataError, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GenParams {
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self { max_tokens: 512, temperature: 0.7 }
    }
}

/// A completion service. Implementations must be shareable across the
/// generation worker threads.
pub trait CompletionBackend: Sync {
    fn complete(&self, prompt: &str, params: &GenParams) -> Result<String>;
}

/// File-backed deterministic backend: a JSON object mapping the sha256 hex
/// of a prompt to its canned completion. A `"default"` entry, when present,
/// answers any unknown prompt (still deterministically).
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    completions: HashMap<String, String>,
}

impl MockBackend {
    pub fn from_file(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let completions: HashMap<String, String> =
            serde_json::from_str(&raw).map_err(|e| DataError::BadRecord {
                line: e.line(),
                message: format!("mock completions file: {e}"),
            })?;
        Ok(Self { completions })
    }

    pub fn from_map(completions: HashMap<String, String>) -> Self {
        Self { completions }
    }

    /// The lookup key for a prompt.
    pub fn prompt_key(prompt: &str) -> String {
        let digest = Sha256::digest(prompt.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, prompt: &str, _params: &GenParams) -> Result<String> {
        let key = Self::prompt_key(prompt);
        if let Some(c) = self.completions.get(&key) {
            return Ok(c.clone());
        }
        if let Some(c) = self.completions.get("default") {
            return Ok(c.clone());
        }
        Err(DataError::MockMiss { key })
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

/// Remote backend: POSTs `{"prompt", "max_tokens", "temperature"}` as JSON
/// and expects `{"text": ...}` back. The bearer token, when set, is sent as
/// an Authorization header.
pub struct HttpBackend {
    url: String,
    auth_token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(url: String, auth_token: Option<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| DataError::Backend { message: e.to_string() })?;
        Ok(Self { url, auth_token, client })
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, prompt: &str, params: &GenParams) -> Result<String> {
        let body = CompletionRequest {
            prompt,
            max_tokens: params.max_tokens,
            temperature: params.temperature,
        };
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(token) = &self.auth_token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| DataError::Backend { message: e.to_string() })?;
        if !resp.status().is_success() {
            return Err(DataError::Backend {
                message: format!("status {}", resp.status()),
            });
        }
        let parsed: CompletionResponse = resp
            .json()
            .map_err(|e| DataError::Backend { message: format!("bad response body: {e}") })?;
        Ok(parsed.text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_lookup_hits_exact_key_before_default() {
        let mut map = HashMap::new();
        map.insert(MockBackend::prompt_key("hello"), "exact".to_string());
        map.insert("default".to_string(), "fallback".to_string());
        let mock = MockBackend::from_map(map);
        assert_eq!(mock.complete("hello", &GenParams::default()).unwrap(), "exact");
        assert_eq!(mock.complete("other", &GenParams::default()).unwrap(), "fallback");
    }

    #[test]
    fn mock_miss_without_default_errors_with_the_key() {
        let mock = MockBackend::from_map(HashMap::new());
        let err = mock.complete("hello", &GenParams::default()).unwrap_err();
        match err {
            DataError::MockMiss { key } => assert_eq!(key, MockBackend::prompt_key("hello")),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn same_prompt_same_key() {
        assert_eq!(MockBackend::prompt_key("abc"), MockBackend::prompt_key("abc"));
        assert_ne!(MockBackend::prompt_key("abc"), MockBackend::prompt_key("abd"));
    }
}
