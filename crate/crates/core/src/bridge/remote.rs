use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::prompt::{build_prompt, extract_answer};
use super::BridgeError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteSettings {
    /// Chat-completions URL.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// First retry delay; doubles on each further attempt.
    pub backoff_ms: u64,
    pub temperature: f64,
    pub max_in_flight: usize,
    pub cache_path: Option<PathBuf>,
    /// `(code, display name)` for every language the prompt may name.
    pub languages: Vec<(String, String)>,
}

impl Default for RemoteSettings {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            api_key_env: "ZEROAVSR_API_KEY".into(),
            timeout_secs: 30.0,
            max_retries: 3,
            backoff_ms: 500,
            temperature: 0.0,
            max_in_flight: 4,
            cache_path: None,
            languages: Vec::new(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    key: String,
    response: String,
    timestamp: u64,
    hash: String,
}

fn line_hash(key: &str, response: &str) -> String {
    let mut h = Sha256::new();
    h.update(key.as_bytes());
    h.update(b"\n");
    h.update(response.as_bytes());
    hex::encode(h.finalize())
}

/// Append-only JSON-lines response cache keyed by the SHA-256 of the
/// request body. Lines whose integrity hash does not verify are ignored.
#[derive(Debug, Default)]
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: HashMap<String, String>,
}

impl ResponseCache {
    pub fn open(path: Option<&Path>) -> Result<Self, BridgeError> {
        let mut cache = Self {
            path: path.map(Path::to_path_buf),
            entries: HashMap::new(),
        };
        if let Some(p) = path.filter(|p| p.exists()) {
            let f = std::fs::File::open(p).map_err(|e| BridgeError::Io(e.to_string()))?;
            for line in BufReader::new(f).lines() {
                let line = line.map_err(|e| BridgeError::Io(e.to_string()))?;
                if let Ok(entry) = serde_json::from_str::<CacheLine>(&line) {
                    if entry.hash == line_hash(&entry.key, &entry.response) {
                        cache.entries.insert(entry.key, entry.response);
                    }
                }
            }
        }
        Ok(cache)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, key: String, response: String) -> Result<(), BridgeError> {
        if let Some(p) = &self.path {
            let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
            let entry = CacheLine {
                hash: line_hash(&key, &response),
                key: key.clone(),
                response: response.clone(),
                timestamp,
            };
            let mut line = serde_json::to_string(&entry).map_err(|e| BridgeError::Io(e.to_string()))?;
            line.push('\n');
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| BridgeError::Io(e.to_string()))?;
            f.write_all(line.as_bytes()).map_err(|e| BridgeError::Io(e.to_string()))?;
        }
        self.entries.insert(key, response);
        Ok(())
    }
}

/// Chat-completions client used as a de-romanizer.
#[derive(Debug)]
pub struct RemoteChatBackend {
    pub settings: RemoteSettings,
    cache: Mutex<ResponseCache>,
    agent: ureq::Agent,
}

enum Attempt {
    Retry(BridgeError),
    Fatal(BridgeError),
}

impl RemoteChatBackend {
    pub fn new(settings: RemoteSettings) -> Result<Self, BridgeError> {
        if !settings.timeout_secs.is_finite() || settings.timeout_secs <= 0.0 {
            return Err(BridgeError::InvalidConfig("remote timeout must be positive and bounded".into()));
        }
        let cache = ResponseCache::open(settings.cache_path.as_deref())?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(settings.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            settings,
            cache: Mutex::new(cache),
            agent,
        })
    }

    pub fn cached_responses(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    fn request_body(&self, prompt: &str) -> Vec<u8> {
        let body = serde_json::json!({
            "model": self.settings.model,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": self.settings.temperature,
        });
        serde_json::to_vec(&body).expect("json body")
    }

    fn post_once(&self, body: &[u8], key: &str) -> Result<String, Attempt> {
        let token = std::env::var(&self.settings.api_key_env).unwrap_or_default();
        let resp = self
            .agent
            .post(&self.settings.endpoint)
            .header("Content-Type", "application/json")
            .header("Authorization", format!("Bearer {token}"))
            .send(body);
        let mut resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(Attempt::Retry(BridgeError::BackendTimeout(key.to_string()))),
            Err(e) => return Err(Attempt::Retry(BridgeError::BackendUnavailable(e.to_string()))),
        };
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(BridgeError::BackendUnavailable(e.to_string())))?;
        match status {
            200..=299 => {}
            429 | 500..=599 => {
                return Err(Attempt::Retry(BridgeError::BackendUnavailable(format!("HTTP {status}"))));
            }
            _ => return Err(Attempt::Fatal(BridgeError::BackendRefusal(format!("HTTP {status}")))),
        }
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Attempt::Fatal(BridgeError::BackendRefusal(e.to_string())))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Attempt::Fatal(BridgeError::BackendRefusal("reply has no message content".into())))
    }

    pub fn deromanize(&self, roman: &str, lang: &str) -> Result<String, BridgeError> {
        let prompt = build_prompt(roman, lang, &self.settings.languages)?;
        let body = self.request_body(&prompt);
        let key = hex::encode(Sha256::digest(&body));
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return extract_answer(hit);
        }
        let mut last = BridgeError::BackendUnavailable("no attempt made".into());
        for attempt in 0..=self.settings.max_retries {
            if attempt > 0 {
                let wait = self.settings.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            match self.post_once(&body, &key) {
                Ok(content) => {
                    self.cache.lock().expect("cache lock").insert(key, content.clone())?;
                    return extract_answer(&content);
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    log::warn!("remote attempt {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(last)
    }

    /// Issues requests with at most `max_in_flight` outstanding; results
    /// come back in input order.
    pub fn deromanize_many(&self, items: &[(String, String)]) -> Vec<Result<String, BridgeError>> {
        let slots: Vec<Mutex<Option<Result<String, BridgeError>>>> = items.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.settings.max_in_flight.clamp(1, items.len().max(1));
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= items.len() {
                        break;
                    }
                    let r = self.deromanize(&items[i].0, &items[i].1);
                    *slots[i].lock().expect("slot lock") = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
            .collect()
    }
}
