//! Chat-completions client with retries and a content-addressed response
//! cache.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompt::Prompt;
use crate::tensorcore::checkpoint::write_atomic;

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("cache miss (offline) for prompt {0}")]
    OfflineMiss(String),
    #[error("request failed after {tries} tries: {last}")]
    Network { tries: u32, last: String },
    #[error("http status {0}")]
    Status(u16),
    #[error("empty completion for prompt {0}")]
    EmptyCompletion(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("cache {path}: {source}")]
    Cache {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token. Unset means no
    /// `Authorization` header.
    pub api_key_env: String,
    pub max_tries: u32,
    pub initial_backoff_ms: u64,
    pub timeout_secs: u64,
    /// Serve from the cache only.
    pub offline: bool,
    pub max_in_flight: usize,
    /// `None` disables spacing between requests.
    pub requests_per_minute: Option<u32>,
    pub max_tokens: u32,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: crate::datasets::GPT4V.into(),
            api_key_env: "GALLON_API_KEY".into(),
            max_tries: 5,
            initial_backoff_ms: 500,
            timeout_secs: 120,
            offline: false,
            max_in_flight: 4,
            requests_per_minute: None,
            max_tokens: 1024,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LlmResponse {
    pub text: String,
    pub model_name: String,
    pub token_usage: Option<TokenUsage>,
    pub cache_hit: bool,
    pub prompt_digest: String,
}

/// On-disk record `cache/{digest}.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub digest: String,
    pub model: String,
    pub prompt: String,
    pub response: String,
    pub token_usage: Option<TokenUsage>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Clone, Debug)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> ResponseCache {
        ResponseCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    /// Unreadable or corrupt entries count as misses.
    pub fn get(&self, digest: &str) -> Option<CacheEntry> {
        let bytes = std::fs::read(self.path(digest)).ok()?;
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(e) if e.digest == digest => Some(e),
            _ => {
                log::warn!("ignoring corrupt cache entry {digest}");
                None
            }
        }
    }

    pub fn put(&self, entry: &CacheEntry) -> Result<(), LlmError> {
        let path = self.path(&entry.digest);
        let bytes = serde_json::to_vec_pretty(entry).expect("cache entry serializes");
        write_atomic(&path, &bytes).map_err(|source| LlmError::Cache {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Retrying JSON POST shared by the chat and embedding clients. Retries
/// transport errors, 429 and 5xx with doubling backoff.
pub(crate) fn post_json_with_retry(
    agent: &ureq::Agent,
    url: &str,
    api_key_env: &str,
    body: &Value,
    max_tries: u32,
    initial_backoff: Duration,
    on_attempt: &dyn Fn(),
) -> Result<Value, LlmError> {
    let key = std::env::var(api_key_env).ok().filter(|k| !k.is_empty());
    let mut backoff = initial_backoff;
    let mut last = String::new();
    let tries = max_tries.max(1);
    for attempt in 1..=tries {
        on_attempt();
        let mut req = agent.post(url).header("Content-Type", "application/json");
        if let Some(k) = &key {
            req = req.header("Authorization", format!("Bearer {k}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                if status == 429 || status >= 500 {
                    last = format!("http status {status}");
                } else if status >= 400 {
                    return Err(LlmError::Status(status));
                } else {
                    return resp.body_mut().read_json::<Value>().map_err(|e| LlmError::Malformed(e.to_string()));
                }
            }
            Err(e) => last = e.to_string(),
        }
        if attempt < tries {
            log::warn!("attempt {attempt} failed ({last}); retrying in {backoff:?}");
            std::thread::sleep(backoff);
            backoff *= 2;
        }
    }
    Err(LlmError::Network { tries, last })
}

pub(crate) fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

pub struct LlmClient {
    config: ClientConfig,
    agent: ureq::Agent,
    network_calls: AtomicUsize,
    last_request: Mutex<Option<Instant>>,
}

impl LlmClient {
    pub fn new(config: ClientConfig) -> LlmClient {
        LlmClient {
            agent: agent(Duration::from_secs(config.timeout_secs)),
            config,
            network_calls: AtomicUsize::new(0),
            last_request: Mutex::new(None),
        }
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    /// HTTP attempts made so far, including failed ones.
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    fn pace(&self) {
        let Some(rpm) = self.config.requests_per_minute.filter(|&r| r > 0) else {
            return;
        };
        let gap = Duration::from_secs_f64(60.0 / rpm as f64);
        let mut last = self.last_request.lock().expect("pacing lock");
        if let Some(t) = *last {
            let elapsed = t.elapsed();
            if elapsed < gap {
                std::thread::sleep(gap - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn request_body(&self, prompt: &Prompt) -> Value {
        let mut content = vec![json!({ "type": "text", "text": prompt.text() })];
        if let Some(png) = &prompt.image {
            let url = format!("data:image/png;base64,{}", base64::engine::general_purpose::STANDARD.encode(png));
            content.push(json!({ "type": "image_url", "image_url": { "url": url } }));
        }
        json!({
            "model": self.config.model,
            "max_tokens": self.config.max_tokens,
            "temperature": 0,
            "messages": [{ "role": "user", "content": content }],
        })
    }

    /// Cache first; on a miss, one chat call whose answer is persisted
    /// before returning.
    pub fn query(&self, prompt: &Prompt, cache: &ResponseCache) -> Result<LlmResponse, LlmError> {
        let digest = prompt.digest(&self.config.model);
        if let Some(e) = cache.get(&digest) {
            return Ok(LlmResponse {
                text: e.response,
                model_name: e.model,
                token_usage: e.token_usage,
                cache_hit: true,
                prompt_digest: digest,
            });
        }
        if self.config.offline {
            return Err(LlmError::OfflineMiss(digest));
        }
        let body = self.request_body(prompt);
        let reply = post_json_with_retry(
            &self.agent,
            &self.config.endpoint,
            &self.config.api_key_env,
            &body,
            self.config.max_tries,
            Duration::from_millis(self.config.initial_backoff_ms),
            &|| {
                self.pace();
                self.network_calls.fetch_add(1, Ordering::SeqCst);
            },
        )?;
        let text = reply["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| LlmError::Malformed("no choices[0].message.content".into()))?
            .to_string();
        if text.trim().is_empty() {
            return Err(LlmError::EmptyCompletion(digest));
        }
        let usage = reply.get("usage").map(|u| TokenUsage {
            prompt_tokens: u["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: u["completion_tokens"].as_u64().unwrap_or(0),
        });
        let entry = CacheEntry {
            digest: digest.clone(),
            model: self.config.model.clone(),
            prompt: prompt.text(),
            response: text.clone(),
            token_usage: usage,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        };
        cache.put(&entry)?;
        Ok(LlmResponse {
            text,
            model_name: self.config.model.clone(),
            token_usage: usage,
            cache_hit: false,
            prompt_digest: digest,
        })
    }

    /// Queries every prompt with at most `max_in_flight` concurrent
    /// requests; results keep the input order.
    pub fn query_all(&self, prompts: &[Prompt], cache: &ResponseCache) -> Vec<Result<LlmResponse, LlmError>> {
        let results: Mutex<Vec<Option<Result<LlmResponse, LlmError>>>> = Mutex::new((0..prompts.len()).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        let workers = self.config.max_in_flight.clamp(1, prompts.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= prompts.len() {
                        break;
                    }
                    let r = self.query(&prompts[i], cache);
                    results.lock().expect("result lock")[i] = Some(r);
                });
            }
        });
        results
            .into_inner()
            .expect("workers joined")
            .into_iter()
            .map(|r| r.expect("every prompt ran"))
            .collect()
    }
}
