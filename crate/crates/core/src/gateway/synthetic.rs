//! Seeded synthetic completion channel.
//!
//! Responses are a pure function of (seed, role, canonical request content),
//! so runs are reproducible while still exhibiting the variability that makes
//! the search non-trivial: each prompt-writer request yields one of many
//! phrasings, the scorer maps a phrasing to a quality level, and the code
//! writer produces a correct or faulty segment with probability tied to that
//! same quality level. Faults mirror the common failure modes of real
//! generations: undefined names, syntax errors, and feasible-looking but
//! wrong numbers.

use super::payload::parse_blocks;
use super::{
    canonical_text, normalize_whitespace, Backend, BackendKind, GatewayError, LlmRequest,
    LlmResponse, RoleTag,
};
use crate::benchgen::{self, ExtractedParams};
use sha2::{Digest, Sha256};

// Domain separators for the per-purpose hash draws.
const SALT_VARIANT: u8 = 1;
const SALT_QUALITY: u8 = 2;
const SALT_GATE: u8 = 3;
const SALT_FIX: u8 = 4;
const SALT_EVAL: u8 = 5;
const SALT_FLAVOR: u8 = 6;

/// Revision requests repair a faulty script with this probability per retry.
const FIX_PROBABILITY: f64 = 0.30;

pub struct SyntheticBackend {
    seed: u64,
    /// When set, every generated script is correct; used to model a channel
    /// that never errors.
    failure_free: bool,
}

impl SyntheticBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            failure_free: false,
        }
    }

    pub fn failure_free(seed: u64) -> Self {
        Self {
            seed,
            failure_free: true,
        }
    }

    /// Uniform draw in [0, 1) from (seed, salt, whitespace-normalized text).
    fn unit(&self, salt: u8, payload: &str) -> f64 {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update([salt]);
        hasher.update(normalize_whitespace(payload).as_bytes());
        let digest = hasher.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes) as f64 / (u64::MAX as f64 + 1.0)
    }

    fn tag(&self, salt: u8, payload: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update([salt]);
        hasher.update(normalize_whitespace(payload).as_bytes());
        let digest = hasher.finalize();
        digest[..3].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Quality level 0..=10 of a prompt phrasing; the scorer reports this
    /// value and the code writer's correctness odds increase with it.
    pub fn prompt_quality(&self, prompt_text: &str) -> u8 {
        (11.0 * self.unit(SALT_QUALITY, prompt_text)) as u8
    }

    fn good_segment(&self, prompt_text: &str, hard: bool) -> bool {
        if self.failure_free {
            return true;
        }
        let q = f64::from(self.prompt_quality(prompt_text));
        let p_good = if hard {
            0.10 + 0.06 * q
        } else {
            0.45 + 0.05 * q
        };
        self.unit(SALT_GATE, prompt_text) < p_good
    }

    fn respond(&self, request: &LlmRequest) -> String {
        let user_text = request
            .messages
            .iter()
            .rev()
            .find(|m| m.speaker == super::Speaker::User)
            .map(|m| m.text.as_str())
            .unwrap_or("");
        let blocks = parse_blocks(user_text);
        let canonical = canonical_text(request);

        match request.role_tag {
            RoleTag::Decomposer => {
                let problem = blocks
                    .get("PROBLEM")
                    .map(String::as_str)
                    .unwrap_or(user_text);
                let sentences = split_sentences(problem);
                if sentences.is_empty() {
                    problem.trim().to_string()
                } else {
                    sentences.join("\n")
                }
            }
            RoleTag::PromptWriter => {
                let sentence = blocks.get("SENTENCE").cloned().unwrap_or_default();
                let k = (11.0 * self.unit(SALT_VARIANT, &canonical)) as u8;
                let tag = self.tag(SALT_VARIANT, &canonical);
                let lead = match k % 4 {
                    0 => "Write Python that implements this step",
                    1 => "Produce code covering this part of the task",
                    2 => "Translate this requirement into Python",
                    _ => "Emit the code segment for this statement",
                };
                format!("{lead}: \"{sentence}\" Spell out every parameter. (phrasing {k}-{tag})")
            }
            RoleTag::PromptScorer => {
                let prompt = blocks
                    .get("PROMPT")
                    .map(String::as_str)
                    .unwrap_or(&canonical);
                format!("Score: {}", self.prompt_quality(prompt))
            }
            RoleTag::CodeWriter => self.write_code(&blocks, &canonical),
            RoleTag::Evaluator => {
                let k = (11.0 * self.unit(SALT_EVAL, &canonical)) as u8;
                format!("Score: {k}. Reviewed the reported solution and constraints.")
            }
            RoleTag::FeedbackWriter => {
                let tag = self.tag(SALT_EVAL, &canonical);
                let retry = blocks.get("RETRY").cloned().unwrap_or_default();
                format!(
                    "Attempt {retry}: a statement is malformed or references an undefined name; \
                     define every variable before use and print the final powers line. ({tag})"
                )
            }
        }
    }

    fn write_code(&self, blocks: &std::collections::BTreeMap<String, String>, canonical: &str) -> String {
        let problem = blocks.get("PROBLEM").cloned().unwrap_or_default();
        let params = benchgen::extract_parameters(&problem).ok();
        let hard = problem.contains("SINR");

        if let Some(feedback) = blocks.get("FEEDBACK") {
            // Revision of a full script.
            let code = blocks.get("CODE").cloned().unwrap_or_default();
            let roll = format!("{code}\u{1f}{feedback}");
            if self.failure_free || self.unit(SALT_FIX, &roll) < FIX_PROBABILITY {
                return match &params {
                    Some(p) => correct_script(p, "revised solution"),
                    None => fallback_script(),
                };
            }
            let tag = self.tag(SALT_FIX, &roll);
            return format!("{code}\n# revision attempt {tag}\nrepair_helper_{tag}()\n");
        }

        if let Some(prompt) = blocks.get("PROMPT") {
            // One segment of the incremental script.
            let accumulated = blocks.get("CODE").cloned().unwrap_or_default();
            let step = accumulated
                .lines()
                .filter(|l| l.starts_with("# step "))
                .count();
            let total = params
                .as_ref()
                .map(|_| split_sentences(&problem).len())
                .unwrap_or(1)
                .max(1);
            let tag = self.tag(SALT_FLAVOR, canonical);
            let good = self.good_segment(prompt, hard);
            let last = step + 1 >= total;
            return match (good, last) {
                (true, false) => format!("# step {step}: ready [{tag}]\n"),
                (true, true) => match &params {
                    Some(p) => format!("# step {step}: solve and report [{tag}]\n{}", solver_body(p)),
                    None => format!("# step {step} [{tag}]\n{}", fallback_script()),
                },
                (false, _) => self.faulty_segment(step, last, &params, canonical),
            };
        }

        // One-shot or step-conditioned full script.
        let good = self.good_segment(canonical, hard);
        if good || self.failure_free {
            match &params {
                Some(p) => correct_script(p, "direct solution"),
                None => fallback_script(),
            }
        } else {
            self.faulty_segment(0, true, &params, canonical)
        }
    }

    fn faulty_segment(
        &self,
        step: usize,
        last: bool,
        params: &Option<ExtractedParams>,
        canonical: &str,
    ) -> String {
        let tag = self.tag(SALT_FLAVOR, canonical);
        let flavor = self.unit(SALT_FLAVOR, &format!("flavor\u{1f}{canonical}"));
        if last && flavor < 0.4 {
            // Runs fine but reports a poor (often infeasible) point.
            if let Some(p) = params {
                let powers = vec![format!("{:?}", p.p_max); p.n_users].join(", ");
                return format!("# step {step}: report [{tag}]\nprint(\"powers=[{powers}]\")\n");
            }
        }
        if flavor < 0.7 {
            format!("# step {step} [{tag}]\nundefined_helper_{tag}()\n")
        } else {
            format!("# step {step} [{tag}]\ndef broken_{tag}(:\n")
        }
    }
}

impl Backend for SyntheticBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        let text = self.respond(request);
        let request_chars: usize = request.messages.iter().map(|m| m.text.len()).sum();
        Ok(LlmResponse {
            prompt_tokens: request_chars.div_ceil(4) as u64,
            completion_tokens: text.len().div_ceil(4) as u64,
            text,
            backend: BackendKind::Synthetic,
        })
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Synthetic
    }
}

/// Sentence split at '.' followed by whitespace or end of text; decimal
/// points stay intact because a digit follows them.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        current.push(c);
        let at_boundary = c == '.' && chars.get(i + 1).map_or(true, |n| n.is_whitespace());
        if at_boundary {
            let s = current.trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            current.clear();
        }
    }
    let tail = current.trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

fn py_list(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
    format!("[{}]", items.join(", "))
}

/// Body that computes the optimum from embedded parameters and prints the
/// powers line. Easy family: all users at the lower bound. Hard family: the
/// tight-SINR linear system, then a clamp into the box.
fn solver_body(p: &ExtractedParams) -> String {
    let mut s = String::new();
    s.push_str(&format!("g = {}\n", py_list(&p.gains)));
    s.push_str(&format!("sigma2 = {:?}\n", p.noise_w));
    s.push_str(&format!("p_min = {:?}\n", p.p_min));
    s.push_str(&format!("p_max = {:?}\n", p.p_max));
    s.push_str("n = len(g)\n");
    match p.sinr_floor_db {
        None => {
            s.push_str("powers = [p_min] * n\n");
        }
        Some(floor) => {
            s.push_str(&format!("gamma = 10 ** ({floor:?} / 10)\n"));
            s.push_str(
                "def solve(a, b):\n\
                 \x20   m = len(b)\n\
                 \x20   for col in range(m):\n\
                 \x20       piv = max(range(col, m), key=lambda r: abs(a[r][col]))\n\
                 \x20       a[col], a[piv] = a[piv], a[col]\n\
                 \x20       b[col], b[piv] = b[piv], b[col]\n\
                 \x20       for r in range(col + 1, m):\n\
                 \x20           f = a[r][col] / a[col][col]\n\
                 \x20           for k in range(col, m):\n\
                 \x20               a[r][k] -= f * a[col][k]\n\
                 \x20           b[r] -= f * b[col]\n\
                 \x20   x = [0.0] * m\n\
                 \x20   for col in range(m - 1, -1, -1):\n\
                 \x20       acc = b[col] - sum(a[col][k] * x[k] for k in range(col + 1, m))\n\
                 \x20       x[col] = acc / a[col][col]\n\
                 \x20   return x\n",
            );
            s.push_str(
                "a = [[g[i] if i == j else -gamma * g[j] for j in range(n)] for i in range(n)]\n\
                 b = [gamma * sigma2] * n\n\
                 powers = solve(a, b)\n\
                 powers = [min(max(v, p_min), p_max) for v in powers]\n",
            );
        }
    }
    s.push_str("print(\"powers=[\" + \", \".join(repr(v) for v in powers) + \"]\")\n");
    s
}

fn correct_script(p: &ExtractedParams, note: &str) -> String {
    format!("# {note}\n{}", solver_body(p))
}

fn fallback_script() -> String {
    "print(\"result=ok\")\n".to_string()
}
