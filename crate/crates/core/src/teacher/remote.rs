//! Chat-completions teacher with an append-only response cache.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numkit::Permutation;

use super::parse::{parse_rerank_response, parse_score_response};
use super::prompt::{build_rerank_prompt, build_score_prompt};
use super::{Provenance, TeachRequest, Teacher, TeacherRanking, TeacherScores, TeacherSignal};

pub const DEFAULT_API_KEY_ENV: &str = "TEACHER_API_KEY";
pub const CACHE_FILE_NAME: &str = "teacher_cache.jsonl";

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherEndpointConfig {
    pub base_url: String,
    pub model: String,
    pub timeout: Duration,
    pub max_in_flight: usize,
    /// Extra attempts after the first one.
    pub retry_budget: usize,
    pub cache_dir: Option<PathBuf>,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    /// Delay before the first retry; doubles on each further retry.
    pub backoff: Duration,
}

impl Default for TeacherEndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "gpt-4o".into(),
            timeout: Duration::from_secs(60),
            max_in_flight: 4,
            retry_budget: 2,
            cache_dir: None,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            backoff: Duration::from_millis(250),
        }
    }
}

impl TeacherEndpointConfig {
    fn validate(&self) -> Result<()> {
        if self.timeout.is_zero() {
            return Err(Error::invalid("request timeout must be positive"));
        }
        if self.max_in_flight == 0 {
            return Err(Error::invalid("max_in_flight must be at least 1"));
        }
        Ok(())
    }
}

/// One line of the cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub model: String,
    pub prompt_hash: String,
    pub raw_response: String,
    pub parsed: Value,
    pub timestamp: u64,
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// SHA-256 over the model name, a NUL separator and the prompt text.
pub fn cache_key(model: &str, prompt: &str) -> String {
    sha256_hex(&[model.as_bytes(), b"\0", prompt.as_bytes()])
}

struct CacheInner {
    entries: HashMap<String, CacheRecord>,
    file: Option<File>,
}

/// Append-only response cache. Later lines win over earlier ones with the
/// same key; a torn trailing line is skipped on load.
pub struct ResponseCache {
    path: Option<PathBuf>,
    inner: Mutex<CacheInner>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            inner: Mutex::new(CacheInner {
                entries: HashMap::new(),
                file: None,
            }),
        }
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CACHE_FILE_NAME);
        let mut entries = HashMap::new();
        if path.exists() {
            let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(r) => {
                        entries.insert(r.key.clone(), r);
                    }
                    Err(e) => log::warn!("{}:{}: skipping cache line: {e}", path.display(), i + 1),
                }
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        // a torn last line must not swallow the next record
        let existing = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if existing.last().is_some_and(|&b| b != b'\n') {
            file.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        Ok(Self {
            path: Some(path),
            inner: Mutex::new(CacheInner {
                entries,
                file: Some(file),
            }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<CacheRecord> {
        self.inner.lock().unwrap().entries.get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Persists the record before making it visible to readers.
    pub fn insert(&self, record: CacheRecord) -> Result<()> {
        let mut inner = self.inner.lock().unwrap();
        if let Some(file) = inner.file.as_mut() {
            let mut line = serde_json::to_vec(&record)?;
            line.push(b'\n');
            let path = self.path.clone().unwrap_or_default();
            file.write_all(&line)
                .and_then(|_| file.flush())
                .map_err(|e| Error::io(path, e))?;
        }
        inner.entries.insert(record.key.clone(), record);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemoteMode {
    Rerank,
    Score,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteStats {
    pub requests: usize,
    pub cache_hits: usize,
    pub fallbacks: usize,
}

enum Failure {
    Transport(String),
    Status(u16, String),
    Malformed(String),
}

pub struct RemoteTeacher {
    config: TeacherEndpointConfig,
    mode: RemoteMode,
    client: reqwest::blocking::Client,
    cache: ResponseCache,
    requests: AtomicUsize,
    cache_hits: AtomicUsize,
    fallbacks: AtomicUsize,
}

impl RemoteTeacher {
    pub fn new(config: TeacherEndpointConfig, mode: RemoteMode) -> Result<Self> {
        config.validate()?;
        let cache = match &config.cache_dir {
            Some(dir) => ResponseCache::open(dir)?,
            None => ResponseCache::in_memory(),
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            config,
            mode,
            client,
            cache,
            requests: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
            fallbacks: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &TeacherEndpointConfig {
        &self.config
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn stats(&self) -> RemoteStats {
        RemoteStats {
            requests: self.requests.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            fallbacks: self.fallbacks.load(Ordering::SeqCst),
        }
    }

    fn post(&self, prompt: &str) -> std::result::Result<String, Failure> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let url = format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let mut req = self.client.post(url).json(&body);
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Failure::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Failure::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(Failure::Status(status.as_u16(), text));
        }
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::Malformed(format!("response is not JSON: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Failure::Malformed("missing choices[0].message.content".into()))
    }

    fn parse(&self, qid: &str, raw: &str, k: usize) -> Result<TeacherSignal> {
        match self.mode {
            RemoteMode::Rerank => parse_rerank_response(qid, raw, k).map(TeacherSignal::Ranking),
            RemoteMode::Score => parse_score_response(qid, raw, k).map(TeacherSignal::Scores),
        }
    }

    fn fallback(&self, qid: &str, k: usize, raw: Option<String>) -> TeacherSignal {
        self.fallbacks.fetch_add(1, Ordering::SeqCst);
        log::warn!("teacher gave no usable answer for {qid}; falling back to retrieval order");
        match self.mode {
            RemoteMode::Rerank => TeacherSignal::Ranking(TeacherRanking {
                qid: qid.to_string(),
                permutation: Permutation::identity(k),
                provenance: Provenance::Remote,
                raw,
                repaired: false,
                fallback: true,
            }),
            RemoteMode::Score => TeacherSignal::Scores(TeacherScores {
                qid: qid.to_string(),
                scores: vec![0.5; k],
                provenance: Provenance::Remote,
                raw,
                fallback: true,
            }),
        }
    }

    /// Sends one prompt, serving from the cache when possible.
    pub fn ask(&self, qid: &str, prompt: &str, k: usize) -> Result<TeacherSignal> {
        let key = cache_key(&self.config.model, prompt);
        if let Some(hit) = self.cache.get(&key) {
            if let Ok(parsed) = self.parse(qid, &hit.raw_response, k) {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok(parsed);
            }
        }
        let attempts = self.config.retry_budget + 1;
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff * (1u32 << (attempt - 1).min(16)));
            }
            let failure = match self.post(prompt) {
                Ok(raw) => match self.parse(qid, &raw, k) {
                    Ok(parsed) => {
                        self.cache.insert(CacheRecord {
                            key,
                            model: self.config.model.clone(),
                            prompt_hash: sha256_hex(&[prompt.as_bytes()]),
                            raw_response: raw,
                            parsed: serde_json::to_value(&parsed)?,
                            timestamp: SystemTime::now()
                                .duration_since(UNIX_EPOCH)
                                .map_or(0, |d| d.as_secs()),
                        })?;
                        return Ok(parsed);
                    }
                    Err(_) => Failure::Malformed(raw),
                },
                Err(Failure::Status(code, body)) if !(code == 429 || code >= 500) => {
                    return Err(Error::Endpoint { status: code, body });
                }
                Err(f) => f,
            };
            last = Some(failure);
        }
        match last {
            Some(Failure::Malformed(raw)) => Ok(self.fallback(qid, k, Some(raw))),
            Some(Failure::Status(status, body)) => Err(Error::Endpoint { status, body }),
            Some(Failure::Transport(message)) => Err(Error::Transport { attempts, message }),
            None => unreachable!("at least one attempt is made"),
        }
    }

    pub fn prompt_for(&self, req: &TeachRequest<'_>) -> Result<String> {
        match self.mode {
            RemoteMode::Rerank => build_rerank_prompt(req.question, req.texts),
            RemoteMode::Score => build_score_prompt(req.question, req.texts),
        }
    }
}

impl Teacher for RemoteTeacher {
    fn provenance(&self) -> Provenance {
        Provenance::Remote
    }

    fn teach(&self, req: &TeachRequest<'_>) -> Result<TeacherSignal> {
        let prompt = self.prompt_for(req)?;
        self.ask(req.qid, &prompt, req.texts.len())
    }

    /// Runs at most `max_in_flight` requests at a time.
    fn teach_all(&self, requests: &[TeachRequest<'_>]) -> Vec<Result<TeacherSignal>> {
        let workers = self.config.max_in_flight.min(requests.len()).max(1);
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<TeacherSignal>>>> =
            requests.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(req) = requests.get(i) else { break };
                    *slots[i].lock().unwrap() = Some(self.teach(req));
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().unwrap().expect("every slot is filled"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_key_depends_on_model_and_prompt() {
        assert_eq!(cache_key("m", "p"), cache_key("m", "p"));
        assert_ne!(cache_key("m", "p"), cache_key("n", "p"));
        assert_ne!(cache_key("m", "p"), cache_key("m", "q"));
        assert_ne!(cache_key("ab", "c"), cache_key("a", "bc"));
        assert_eq!(cache_key("m", "p").len(), 64);
    }

    #[test]
    fn cache_file_round_trip_and_torn_line() {
        let dir = tempfile::tempdir().unwrap();
        let record = CacheRecord {
            key: "k".into(),
            model: "m".into(),
            prompt_hash: "h".into(),
            raw_response: "[2] > [1]".into(),
            parsed: json!({"ranking": {}}),
            timestamp: 1,
        };
        {
            let cache = ResponseCache::open(dir.path()).unwrap();
            cache.insert(record.clone()).unwrap();
        }
        let path = dir.path().join(CACHE_FILE_NAME);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"key\":\"torn").unwrap();
        drop(f);
        let cache = ResponseCache::open(dir.path()).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.get("k").unwrap(), record);
        let second = CacheRecord {
            key: "k2".into(),
            ..record.clone()
        };
        cache.insert(second.clone()).unwrap();
        drop(cache);
        let cache = ResponseCache::open(dir.path()).unwrap();
        assert_eq!(cache.len(), 2);
        assert_eq!(cache.get("k2").unwrap(), second);
    }

    #[test]
    fn config_validation() {
        let mut c = TeacherEndpointConfig {
            max_in_flight: 0,
            ..Default::default()
        };
        assert!(RemoteTeacher::new(c.clone(), RemoteMode::Rerank).is_err());
        c.max_in_flight = 1;
        c.timeout = Duration::ZERO;
        assert!(RemoteTeacher::new(c, RemoteMode::Rerank).is_err());
    }
}
