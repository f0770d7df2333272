//! Run-log sinks. Everything persisted is JSONL: one iteration record per
//! search iteration, one trial record per finished attempt.

use crate::baselines::TrialRecord;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

/// Per-iteration search telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub problem_id: String,
    pub iteration: usize,
    pub path_scores: Vec<u8>,
    pub reward: f64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub refined: bool,
}

pub trait RunLog: Send + Sync {
    fn iteration(&self, record: &IterationRecord);
    fn trial(&self, record: &TrialRecord);
}

/// Discards everything.
pub struct NullLog;

impl RunLog for NullLog {
    fn iteration(&self, _: &IterationRecord) {}
    fn trial(&self, _: &TrialRecord) {}
}

/// Appends tagged JSONL lines to a writer.
pub struct JsonlLog {
    sink: Mutex<Box<dyn Write + Send>>,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine<'a> {
    Iteration(&'a IterationRecord),
    Trial(&'a TrialRecord),
}

impl JsonlLog {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(Self::new(Box::new(std::io::BufWriter::new(file))))
    }

    pub fn new(sink: Box<dyn Write + Send>) -> Self {
        Self {
            sink: Mutex::new(sink),
        }
    }

    fn write(&self, line: LogLine<'_>) {
        if let Ok(json) = serde_json::to_string(&line) {
            let mut sink = self.sink.lock().unwrap();
            let _ = writeln!(sink, "{json}");
            let _ = sink.flush();
        }
    }
}

impl RunLog for JsonlLog {
    fn iteration(&self, record: &IterationRecord) {
        self.write(LogLine::Iteration(record));
    }

    fn trial(&self, record: &TrialRecord) {
        self.write(LogLine::Trial(record));
    }
}

/// In-memory log for tests.
#[derive(Default)]
pub struct MemoryLog {
    pub iterations: Mutex<Vec<IterationRecord>>,
    pub trials: Mutex<Vec<TrialRecord>>,
}

impl RunLog for MemoryLog {
    fn iteration(&self, record: &IterationRecord) {
        self.iterations.lock().unwrap().push(record.clone());
    }

    fn trial(&self, record: &TrialRecord) {
        self.trials.lock().unwrap().push(record.clone());
    }
}
