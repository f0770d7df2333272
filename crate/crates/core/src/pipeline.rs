//! The search pipeline: decompose, prompt, score, place in the tree, generate
//! code along the path, execute, grade, optionally refine, backpropagate.
//!
//! One invocation owns its tree outright; parallelism happens across
//! problems, never inside one search.

use crate::gateway::{Gateway, GatewayError, LlmRequest, PayloadBuilder, RoleTag, RoleTemplates};
use crate::refine::{refine_loop, Grader, RefineConfig};
use crate::reward::RewardReport;
use crate::sandbox::{Limits, Sandbox};
use crate::telemetry::{IterationRecord, RunLog};
use crate::tree::{NodeId, SearchConfig, SearchTree, TreeError, TreeSnapshot};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("empty problem text")]
    EmptyProblem,
    #[error("decomposition produced no sentences")]
    DecomposeFailure,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceKind {
    Context,
    Objective,
    Constraint,
    Other,
}

impl SentenceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SentenceKind::Context => "context",
            SentenceKind::Objective => "objective",
            SentenceKind::Constraint => "constraint",
            SentenceKind::Other => "other",
        }
    }
}

/// One decomposed sentence of the problem statement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    pub kind: SentenceKind,
}

/// Drops "1." / "2)" numbering and bullet markers, leaving plain sentences
/// (a bare leading digit, as in "2 users ...", stays).
fn strip_enumeration(line: &str) -> &str {
    let trimmed = line.trim();
    if let Some(rest) = trimmed.strip_prefix("- ").or_else(|| trimmed.strip_prefix("* ")) {
        return rest.trim_start();
    }
    let digits = trimmed.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &trimmed[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            if r.starts_with(' ') {
                return r.trim_start();
            }
        }
    }
    trimmed
}

/// Advisory keyword tagging; a wrong kind only changes the prompt suffix.
fn classify_sentence(text: &str) -> SentenceKind {
    let lower = text.to_lowercase();
    if lower.contains("minimize") || lower.contains("maximize") {
        SentenceKind::Objective
    } else if lower.contains("must") || lower.contains("constraint") || lower.contains("between") {
        SentenceKind::Constraint
    } else {
        SentenceKind::Context
    }
}

/// Splits the problem into at most `max_depth` tagged sentences via the
/// decomposer role. Overflow lines are merged into the final sentence.
pub fn decompose(
    gateway: &Gateway,
    templates: &RoleTemplates,
    problem_text: &str,
    max_depth: usize,
) -> Result<Vec<Sentence>, PipelineError> {
    if problem_text.trim().is_empty() {
        return Err(PipelineError::EmptyProblem);
    }
    let payload = PayloadBuilder::new().block("PROBLEM", problem_text).build();
    let request = LlmRequest::new(
        RoleTag::Decomposer,
        templates.system(RoleTag::Decomposer),
        payload,
    );
    let response = gateway.complete(&request)?;
    let mut lines: Vec<String> = response
        .text
        .lines()
        .map(|l| strip_enumeration(l).to_string())
        .filter(|l| !l.is_empty())
        .collect();
    if lines.is_empty() {
        return Err(PipelineError::DecomposeFailure);
    }
    if lines.len() > max_depth {
        let tail = lines.split_off(max_depth - 1).join(" ");
        lines.push(tail);
    }
    Ok(lines
        .into_iter()
        .enumerate()
        .map(|(index, text)| Sentence {
            index,
            kind: classify_sentence(&text),
            text,
        })
        .collect())
}

/// Turns one sentence into a code-generation prompt. The completion gets the
/// sentence kind's instruction suffix appended, so a constraint sentence
/// always yields a prompt that demands constraint code. `variation`
/// distinguishes repeat requests for the same sentence, standing in for
/// sampling variability on deterministic backends.
pub fn make_prompt(
    gateway: &Gateway,
    templates: &RoleTemplates,
    sentence: &Sentence,
    problem_text: &str,
    variation: usize,
) -> Result<String, PipelineError> {
    let payload = PayloadBuilder::new()
        .block("PROBLEM", problem_text)
        .block("SENTENCE", &sentence.text)
        .block("KIND", sentence.kind.as_str())
        .block("VARIATION", format!("{variation}"))
        .build();
    let request = LlmRequest::new(
        RoleTag::PromptWriter,
        templates.system(RoleTag::PromptWriter),
        payload,
    );
    let response = gateway.complete(&request)?;
    let suffix = templates.kind_suffix(sentence.kind.as_str());
    Ok(format!("{}\n{}", response.text.trim_end(), suffix))
}

/// Scores a prompt 0..=10 via the scorer role. An unparseable reply is
/// retried once, then defaults to the neutral midpoint 5.
pub fn score_prompt(
    gateway: &Gateway,
    templates: &RoleTemplates,
    prompt: &str,
) -> Result<u8, PipelineError> {
    let payload = PayloadBuilder::new().block("PROMPT", prompt).build();
    let request = LlmRequest::new(
        RoleTag::PromptScorer,
        templates.system(RoleTag::PromptScorer),
        payload,
    );
    for _ in 0..2 {
        let response = gateway.complete(&request)?;
        if let Ok(score) = crate::gateway::parse_bounded_number(&response.text, 0.0, 10.0, true) {
            return Ok(score as u8);
        }
    }
    // Two unparseable replies: neutral midpoint keeps sibling dedup meaningful.
    Ok(5)
}

/// Removes a wrapping triple-backtick fence (with optional language tag),
/// preserving the inner text byte for byte.
pub fn strip_code_fences(completion: &str) -> String {
    let trimmed = completion.trim();
    if !trimmed.starts_with("```") {
        return completion.to_string();
    }
    let Some(first_newline) = trimmed.find('\n') else {
        return completion.to_string();
    };
    let rest = &trimmed[first_newline + 1..];
    let Some(closing) = rest.rfind("```") else {
        return completion.to_string();
    };
    rest[..closing].to_string()
}

/// Generates the code segment for `prompt` given everything written so far.
/// The caller appends the returned text verbatim.
pub fn generate_segment(
    gateway: &Gateway,
    templates: &RoleTemplates,
    prompt: &str,
    accumulated_code: &str,
    problem_text: &str,
) -> Result<String, PipelineError> {
    let payload = PayloadBuilder::new()
        .block("PROBLEM", problem_text)
        .block("PROMPT", prompt)
        .block("CODE", accumulated_code)
        .build();
    let request = LlmRequest::new(
        RoleTag::CodeWriter,
        templates.system(RoleTag::CodeWriter),
        payload,
    );
    let response = gateway.complete(&request)?;
    Ok(strip_code_fences(&response.text))
}

/// Everything a finished search reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best_code: String,
    pub best_reward: f64,
    pub best_report: Option<RewardReport>,
    pub iterations: usize,
    pub tree_snapshot: TreeSnapshot,
    pub per_iteration: Vec<IterationStat>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStat {
    pub path_scores: Vec<u8>,
    pub reward: f64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub refined: bool,
}

/// Options beyond the tree knobs.
#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    /// Re-run decomposition at the top of every iteration instead of caching
    /// the first result.
    pub redecompose: bool,
}

struct TokenMeter<'a> {
    gateway: &'a Gateway,
    start: (u64, u64),
}

impl<'a> TokenMeter<'a> {
    fn new(gateway: &'a Gateway) -> Self {
        Self {
            gateway,
            start: gateway.token_totals(),
        }
    }

    fn consumed(&self) -> (u64, u64) {
        let now = self.gateway.token_totals();
        (now.0 - self.start.0, now.1 - self.start.1)
    }
}

/// Runs the full search over a fixed iteration budget.
///
/// Per iteration, walking the sentences in order: when the current node has
/// children the incumbent child is fetched by UCT first, then a fresh prompt
/// is generated and scored, and the scored prompt either reuses a sibling or
/// expands below the current node; the walk continues from that result. Code
/// segments are generated from the realized node's stored prompt, the
/// assembled script is executed and graded, the refine loop may revise it,
/// and the final reward is backpropagated. A stage error inside an iteration
/// becomes reward -1 for that iteration and the search continues.
#[allow(clippy::too_many_arguments)]
pub fn run_search(
    problem_id: &str,
    problem_text: &str,
    config: &SearchConfig,
    refine_config: &RefineConfig,
    options: &PipelineOptions,
    gateway: &Gateway,
    templates: &RoleTemplates,
    sandbox: &Sandbox,
    limits: &Limits,
    grader: &Grader<'_>,
    log: &dyn RunLog,
) -> Result<SearchOutcome, PipelineError> {
    config.validate()?;
    if problem_text.trim().is_empty() {
        return Err(PipelineError::EmptyProblem);
    }

    let run_meter = TokenMeter::new(gateway);
    let mut tree = SearchTree::new();
    let mut sentences: Option<Vec<Sentence>> = None;
    let mut best_code = String::new();
    let mut best_reward = f64::NEG_INFINITY;
    let mut best_report: Option<RewardReport> = None;
    let mut per_iteration = Vec::with_capacity(config.simulations);

    for iteration in 0..config.simulations {
        let iter_meter = TokenMeter::new(gateway);
        let outcome = run_iteration(
            problem_text,
            config,
            refine_config,
            options,
            gateway,
            templates,
            sandbox,
            limits,
            grader,
            &mut tree,
            &mut sentences,
            iteration,
        );
        let (reward, path_scores, leaf, code, report, refined) = match outcome {
            Ok(r) => r,
            // Stage failures poison only this iteration.
            Err(IterationFailure { leaf, path_scores }) => {
                (-1.0, path_scores, leaf, None, None, false)
            }
        };
        tree.backpropagate(leaf, reward)?;
        if reward > best_reward {
            best_reward = reward;
            if let Some(code) = &code {
                best_code = code.clone();
            }
            best_report = report.clone();
        }
        let (pt, ct) = iter_meter.consumed();
        let stat = IterationStat {
            path_scores: path_scores.clone(),
            reward,
            prompt_tokens: pt,
            completion_tokens: ct,
            refined,
        };
        log.iteration(&IterationRecord {
            problem_id: problem_id.to_string(),
            iteration,
            path_scores,
            reward,
            prompt_tokens: pt,
            completion_tokens: ct,
            refined,
        });
        per_iteration.push(stat);
    }

    let (prompt_tokens, completion_tokens) = run_meter.consumed();
    Ok(SearchOutcome {
        best_code,
        best_reward,
        best_report,
        iterations: config.simulations,
        tree_snapshot: tree.snapshot(),
        per_iteration,
        prompt_tokens,
        completion_tokens,
    })
}

struct IterationFailure {
    leaf: NodeId,
    path_scores: Vec<u8>,
}

type IterationSuccess = (
    f64,
    Vec<u8>,
    NodeId,
    Option<String>,
    Option<RewardReport>,
    bool,
);

#[allow(clippy::too_many_arguments)]
fn run_iteration(
    problem_text: &str,
    config: &SearchConfig,
    refine_config: &RefineConfig,
    options: &PipelineOptions,
    gateway: &Gateway,
    templates: &RoleTemplates,
    sandbox: &Sandbox,
    limits: &Limits,
    grader: &Grader<'_>,
    tree: &mut SearchTree,
    sentences: &mut Option<Vec<Sentence>>,
    iteration: usize,
) -> Result<IterationSuccess, IterationFailure> {
    let mut node = tree.root_id();
    let mut path_scores: Vec<u8> = Vec::new();
    let fail = |node: NodeId, scores: &[u8]| IterationFailure {
        leaf: node,
        path_scores: scores.to_vec(),
    };

    if options.redecompose || sentences.is_none() {
        match decompose(gateway, templates, problem_text, config.max_depth) {
            Ok(s) => *sentences = Some(s),
            Err(_) => return Err(fail(node, &path_scores)),
        }
    }
    let walk = sentences.clone().expect("sentences cached above");

    let mut code = String::new();
    for sentence in &walk {
        // The incumbent child under UCT (algorithm order); the realized child
        // below may coincide with it through score dedup.
        if !tree.children_of(node).map(|c| c.is_empty()).unwrap_or(true) {
            let _incumbent = tree.select_child(node, config);
        }
        let prompt = match make_prompt(gateway, templates, sentence, problem_text, iteration) {
            Ok(p) => p,
            Err(_) => return Err(fail(node, &path_scores)),
        };
        let score = match score_prompt(gateway, templates, &prompt) {
            Ok(s) => s,
            Err(_) => return Err(fail(node, &path_scores)),
        };
        let (child, _reused) = match tree.expand_or_reuse(node, &prompt, score, config) {
            Ok(r) => r,
            Err(_) => return Err(fail(node, &path_scores)),
        };
        path_scores.push(score);
        let active_prompt = tree
            .node(child)
            .map(|n| n.prompt_text.clone())
            .unwrap_or(prompt);
        let segment =
            match generate_segment(gateway, templates, &active_prompt, &code, problem_text) {
                Ok(s) => s,
                Err(_) => return Err(fail(child, &path_scores)),
            };
        code.push_str(&segment);
        node = child;
    }

    let exec = sandbox.execute(&code, limits);
    let report = match grader(&exec) {
        Ok(r) => r,
        Err(_) => return Err(fail(node, &path_scores)),
    };
    let refined_outcome = refine_loop(
        &code,
        &report,
        &exec,
        problem_text,
        refine_config,
        grader,
        gateway,
        templates,
        sandbox,
        limits,
    );
    let refined = refined_outcome.retries_used > 0;
    Ok((
        refined_outcome.final_report.reward,
        path_scores,
        node,
        Some(refined_outcome.final_code),
        Some(refined_outcome.final_report),
        refined,
    ))
}
