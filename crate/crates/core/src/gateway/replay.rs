//! Record/replay backends for deterministic end-to-end runs.
//!
//! Fixtures are JSONL: one object per line keyed by the canonical request
//! hash. Replay never falls back — a missing key is a hard error, so a green
//! replay run proves the fixture file covers the whole request stream.

use super::{canonical_hash, Backend, BackendKind, GatewayError, LlmRequest, LlmResponse};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub key_hash: String,
    pub role_tag: String,
    pub response_text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Read-only backend serving recorded responses.
#[derive(Debug)]
pub struct ReplayBackend {
    fixtures: HashMap<String, FixtureRecord>,
}

impl ReplayBackend {
    pub fn from_path(path: &Path) -> Result<Self, GatewayError> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut fixtures = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: FixtureRecord =
                serde_json::from_str(&line).map_err(|e| GatewayError::MalformedFixture {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            // First occurrence wins, matching record-time dedup.
            fixtures.entry(record.key_hash.clone()).or_insert(record);
        }
        Ok(Self { fixtures })
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        let key = canonical_hash(request);
        let record = self
            .fixtures
            .get(&key)
            .ok_or_else(|| GatewayError::FixtureMiss {
                key_hash: key.clone(),
                role: request.role_tag.as_str().to_string(),
            })?;
        Ok(LlmResponse {
            text: record.response_text.clone(),
            prompt_tokens: record.prompt_tokens,
            completion_tokens: record.completion_tokens,
            backend: BackendKind::Replay,
        })
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }
}

/// Pass-through backend that appends every new request/response pair to a
/// fixture file. Duplicate keys are written once.
pub struct RecordBackend {
    inner: Arc<dyn Backend>,
    sink: Mutex<RecordSink>,
}

struct RecordSink {
    writer: Box<dyn Write + Send>,
    seen: HashSet<String>,
}

impl RecordBackend {
    pub fn create(inner: Arc<dyn Backend>, path: &Path) -> Result<Self, GatewayError> {
        let file = std::fs::File::create(path)?;
        Ok(Self::new(inner, Box::new(std::io::BufWriter::new(file))))
    }

    pub fn new(inner: Arc<dyn Backend>, writer: Box<dyn Write + Send>) -> Self {
        Self {
            inner,
            sink: Mutex::new(RecordSink {
                writer,
                seen: HashSet::new(),
            }),
        }
    }
}

impl Backend for RecordBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        let response = self.inner.complete(request)?;
        let key = canonical_hash(request);
        let mut sink = self.sink.lock().unwrap();
        if sink.seen.insert(key.clone()) {
            let record = FixtureRecord {
                key_hash: key,
                role_tag: request.role_tag.as_str().to_string(),
                response_text: response.text.clone(),
                prompt_tokens: response.prompt_tokens,
                completion_tokens: response.completion_tokens,
            };
            let line = serde_json::to_string(&record).expect("fixture serializes");
            writeln!(sink.writer, "{line}")?;
            sink.writer.flush()?;
        }
        Ok(response)
    }

    fn kind(&self) -> BackendKind {
        self.inner.kind()
    }
}
