//! Uniform completion interface over interchangeable LLM backends.
//!
//! Three backends share one request/response shape: a live HTTP client for
//! OpenAI-compatible chat endpoints, a record/replay pair for deterministic
//! tests, and a seeded synthetic channel for statistical experiments. Every
//! call reports token usage so run-level accounting is a plain sum.

mod http;
mod payload;
mod replay;
mod synthetic;

pub use http::{HttpBackend, HttpConfig};
pub use payload::{parse_blocks, PayloadBuilder};
pub use replay::{RecordBackend, ReplayBackend};
pub use synthetic::SyntheticBackend;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use thiserror::Error;

/// Which pipeline duty a request serves. Each role has exactly one system
/// prompt template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleTag {
    Decomposer,
    PromptWriter,
    PromptScorer,
    CodeWriter,
    Evaluator,
    FeedbackWriter,
}

impl RoleTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            RoleTag::Decomposer => "decomposer",
            RoleTag::PromptWriter => "prompt_writer",
            RoleTag::PromptScorer => "prompt_scorer",
            RoleTag::CodeWriter => "code_writer",
            RoleTag::Evaluator => "evaluator",
            RoleTag::FeedbackWriter => "feedback_writer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    System,
    User,
}

impl Speaker {
    pub fn as_str(&self) -> &'static str {
        match self {
            Speaker::System => "system",
            Speaker::User => "user",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub role_tag: RoleTag,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl LlmRequest {
    pub fn new(role_tag: RoleTag, system: &str, user: String) -> Self {
        Self {
            role_tag,
            messages: vec![
                Message {
                    speaker: Speaker::System,
                    text: system.to_string(),
                },
                Message {
                    speaker: Speaker::User,
                    text: user,
                },
            ],
            temperature: 0.7,
            max_output_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Replay,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub backend: BackendKind,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("credential env var {0} is not set")]
    MissingCredential(String),
    #[error("http error{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Http { status: Option<u16>, message: String },
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("no recorded fixture for key {key_hash} (role {role})")]
    FixtureMiss { key_hash: String, role: String },
    #[error("malformed fixture at line {line}: {message}")]
    MalformedFixture { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Extraction failure from [`parse_bounded_number`].
#[derive(Debug, Error, PartialEq)]
#[error("no numeric literal found in reply")]
pub struct ParseFailure;

/// Collapses all whitespace runs to single spaces and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Stable serialization of (role, messages) used for fixture keys and the
/// synthetic channel. Temperature is excluded so replay tolerates config
/// drift.
pub fn canonical_text(request: &LlmRequest) -> String {
    let mut out = String::from(request.role_tag.as_str());
    for m in &request.messages {
        out.push('\u{1f}');
        out.push_str(m.speaker.as_str());
        out.push('\u{1e}');
        out.push_str(&normalize_whitespace(&m.text));
    }
    out
}

/// Hex SHA-256 of the canonical request serialization.
pub fn canonical_hash(request: &LlmRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(canonical_text(request).as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Extracts the last numeric literal from free text and clamps it to
/// [lo, hi]. A fraction written `a/b` yields its numerator, so "8/10" reads
/// as 8. In integer mode the value is rounded half away from zero.
pub fn parse_bounded_number(
    text: &str,
    lo: f64,
    hi: f64,
    integer: bool,
) -> Result<f64, ParseFailure> {
    static RE: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    let re = RE.get_or_init(|| {
        regex::Regex::new(r"([-+]?\d+(?:\.\d+)?)(?:\s*/\s*[-+]?\d+(?:\.\d+)?)?").unwrap()
    });
    let value: f64 = re
        .captures_iter(text)
        .last()
        .and_then(|c| c.get(1))
        .and_then(|m| m.as_str().parse().ok())
        .ok_or(ParseFailure)?;
    let value = if integer { value.round() } else { value };
    Ok(value.clamp(lo, hi))
}

/// A completion provider. Implementations must be safe to call from many
/// threads at once.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, GatewayError>;
    fn kind(&self) -> BackendKind;
}

/// Shared entry point for all LLM calls, with run-level call and token
/// counters.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    calls: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            calls: AtomicU64::new(0),
            prompt_tokens: AtomicU64::new(0),
            completion_tokens: AtomicU64::new(0),
        }
    }

    pub fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let response = self.backend.complete(request)?;
        self.prompt_tokens
            .fetch_add(response.prompt_tokens, Ordering::Relaxed);
        self.completion_tokens
            .fetch_add(response.completion_tokens, Ordering::Relaxed);
        Ok(response)
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// (prompt, completion) token totals across every call so far.
    pub fn token_totals(&self) -> (u64, u64) {
        (
            self.prompt_tokens.load(Ordering::Relaxed),
            self.completion_tokens.load(Ordering::Relaxed),
        )
    }
}

/// The per-role system prompts, plus the kind-specific suffixes parsed from
/// the prompt-writer template. The template files are compiled in; they are
/// part of the replay-fixture identity.
pub struct RoleTemplates {
    decomposer: String,
    prompt_writer: String,
    prompt_scorer: String,
    code_writer: String,
    evaluator: String,
    feedback_writer: String,
    suffixes: Vec<(String, String)>,
}

impl RoleTemplates {
    pub fn builtin() -> Self {
        let raw_writer = include_str!("../../assets/roles/prompt_writer.txt");
        let (writer_system, suffixes) = parse_prompt_writer_template(raw_writer);
        Self {
            decomposer: include_str!("../../assets/roles/decomposer.txt").trim().to_string(),
            prompt_writer: writer_system,
            prompt_scorer: include_str!("../../assets/roles/prompt_scorer.txt").trim().to_string(),
            code_writer: include_str!("../../assets/roles/code_writer.txt").trim().to_string(),
            evaluator: include_str!("../../assets/roles/evaluator.txt").trim().to_string(),
            feedback_writer: include_str!("../../assets/roles/feedback_writer.txt")
                .trim()
                .to_string(),
            suffixes,
        }
    }

    pub fn system(&self, role: RoleTag) -> &str {
        match role {
            RoleTag::Decomposer => &self.decomposer,
            RoleTag::PromptWriter => &self.prompt_writer,
            RoleTag::PromptScorer => &self.prompt_scorer,
            RoleTag::CodeWriter => &self.code_writer,
            RoleTag::Evaluator => &self.evaluator,
            RoleTag::FeedbackWriter => &self.feedback_writer,
        }
    }

    /// Kind-specific instruction appended to every generated prompt.
    pub fn kind_suffix(&self, kind: &str) -> &str {
        self.suffixes
            .iter()
            .find(|(k, _)| k == kind)
            .or_else(|| self.suffixes.iter().find(|(k, _)| k == "other"))
            .map(|(_, s)| s.as_str())
            .unwrap_or("Implement this step of the problem in code.")
    }
}

impl Default for RoleTemplates {
    fn default() -> Self {
        Self::builtin()
    }
}

fn parse_prompt_writer_template(raw: &str) -> (String, Vec<(String, String)>) {
    let mut system = Vec::new();
    let mut suffixes = Vec::new();
    let mut in_suffixes = false;
    for line in raw.lines() {
        if line.trim() == "---" {
            in_suffixes = true;
            continue;
        }
        if in_suffixes {
            if let Some(rest) = line.trim().strip_prefix("suffix ") {
                if let Some((kind, text)) = rest.split_once(':') {
                    suffixes.push((kind.trim().to_string(), text.trim().to_string()));
                }
            }
        } else {
            system.push(line);
        }
    }
    (system.join("\n").trim().to_string(), suffixes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(role: RoleTag, user: &str) -> LlmRequest {
        LlmRequest::new(role, "sys", user.to_string())
    }

    #[test]
    fn parse_takes_fraction_numerator() {
        assert_eq!(
            parse_bounded_number("Score: 8/10. Good clarity.", 0.0, 10.0, true).unwrap(),
            8.0
        );
    }

    #[test]
    fn parse_clamps_to_bounds() {
        assert_eq!(parse_bounded_number("reward = 12", 0.0, 10.0, true).unwrap(), 10.0);
        assert_eq!(parse_bounded_number("-3 overall", 0.0, 10.0, true).unwrap(), 0.0);
    }

    #[test]
    fn parse_fails_without_digits() {
        assert_eq!(
            parse_bounded_number("no digits here", 0.0, 10.0, true),
            Err(ParseFailure)
        );
    }

    #[test]
    fn parse_takes_last_literal_in_plain_text() {
        assert_eq!(
            parse_bounded_number("first 3 then 7 wins", 0.0, 10.0, true).unwrap(),
            7.0
        );
        assert_eq!(
            parse_bounded_number("9 — very clear", 0.0, 10.0, true).unwrap(),
            9.0
        );
    }

    #[test]
    fn parse_rounds_half_away_from_zero() {
        assert_eq!(parse_bounded_number("6.5", 0.0, 10.0, true).unwrap(), 7.0);
        assert_eq!(
            parse_bounded_number("-0.5", -10.0, 10.0, true).unwrap(),
            -1.0
        );
        assert_eq!(parse_bounded_number("6.5", 0.0, 10.0, false).unwrap(), 6.5);
    }

    #[test]
    fn canonical_hash_ignores_whitespace_and_temperature() {
        let a = request(RoleTag::PromptScorer, "rate  this\n prompt");
        let mut b = request(RoleTag::PromptScorer, "rate this prompt");
        b.temperature = 0.0;
        assert_eq!(canonical_hash(&a), canonical_hash(&b));
    }

    #[test]
    fn canonical_hash_distinguishes_roles_and_content() {
        let a = request(RoleTag::PromptScorer, "x");
        let b = request(RoleTag::Evaluator, "x");
        let c = request(RoleTag::PromptScorer, "y");
        assert_ne!(canonical_hash(&a), canonical_hash(&b));
        assert_ne!(canonical_hash(&a), canonical_hash(&c));
    }

    #[test]
    fn templates_carry_kind_suffixes() {
        let t = RoleTemplates::builtin();
        assert!(t.kind_suffix("objective").contains("objective"));
        assert!(t.kind_suffix("constraint").contains("constraint"));
        assert!(t.kind_suffix("context").contains("context"));
        assert!(!t.system(RoleTag::PromptWriter).contains("suffix "));
        assert!(!t.system(RoleTag::Decomposer).is_empty());
    }

    #[test]
    fn gateway_accumulates_calls_and_tokens() {
        let backend = Arc::new(SyntheticBackend::new(3));
        let gw = Gateway::new(backend);
        let mut expected = (0u64, 0u64);
        for i in 0..5 {
            let r = gw
                .complete(&request(RoleTag::PromptScorer, &format!("PROMPT:\np{i}")))
                .unwrap();
            expected.0 += r.prompt_tokens;
            expected.1 += r.completion_tokens;
        }
        assert_eq!(gw.calls(), 5);
        assert_eq!(gw.token_totals(), expected);
    }
}
