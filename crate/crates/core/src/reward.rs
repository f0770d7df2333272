//! Converts an execution outcome into the scalar reward.
//!
//! Two graders share one report shape: the LLM evaluator reads the problem
//! text and captured streams, while the oracle grader parses the printed
//! powers and scores them against the exact ground truth. Execution failure
//! is always reward -1 and never reaches a grader model.

use crate::benchgen::{self, ProblemSpec};
use crate::gateway::{
    parse_bounded_number, Gateway, GatewayError, LlmRequest, PayloadBuilder, RoleTag,
    RoleTemplates,
};
use crate::sandbox::ExecutionResult;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("spec {0} has no feasible ground truth; oracle grading unavailable")]
    OracleUnavailable(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Bench(#[from] benchgen::BenchError),
}

/// Scalar reward plus the evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardReport {
    /// -1 for execution failure, else an integer-valued score in [0, 10].
    pub reward: f64,
    pub executed_ok: bool,
    pub feasible: Option<bool>,
    /// Total power in Watts, when a solution was parsed.
    pub objective_value: Option<f64>,
    pub optimal: Option<bool>,
    pub rationale: String,
}

impl RewardReport {
    fn failure(rationale: String) -> Self {
        Self {
            reward: -1.0,
            executed_ok: false,
            feasible: None,
            objective_value: None,
            optimal: None,
            rationale,
        }
    }
}

/// Relative-objective tolerance for calling a solution optimal.
pub const OPTIMALITY_TOLERANCE: f64 = 0.01;

/// Feasibility slack used when grading printed solutions. Scripts print
/// rounded decimals, so grading is looser than the exact-oracle check: a
/// 4-decimal print of the optimum must still grade feasible.
pub const GRADING_EPS: f64 = 1e-4;

/// Asks the evaluator role to grade the run. Non-ok executions short-circuit
/// to -1 without any model call. A reply with no parseable score is retried
/// once, then graded 0.
pub fn llm_reward(
    exec: &ExecutionResult,
    problem_text: &str,
    gateway: &Gateway,
    templates: &RoleTemplates,
) -> Result<RewardReport, RewardError> {
    if !exec.ok() {
        return Ok(RewardReport::failure(format!(
            "execution failed with status {:?}",
            exec.status
        )));
    }
    let payload = PayloadBuilder::new()
        .block("PROBLEM", problem_text)
        .block("OUTPUT", &exec.stdout)
        .block("ERRORS", &exec.stderr)
        .build();
    let request = LlmRequest::new(RoleTag::Evaluator, templates.system(RoleTag::Evaluator), payload);
    let mut rationale = String::new();
    let mut reward = 0.0;
    for _ in 0..2 {
        let response = gateway.complete(&request)?;
        rationale = response.text;
        if let Ok(score) = parse_bounded_number(&rationale, 0.0, 10.0, true) {
            reward = score;
            break;
        }
    }
    Ok(RewardReport {
        reward,
        executed_ok: true,
        feasible: None,
        objective_value: None,
        optimal: None,
        rationale,
    })
}

/// Grades printed powers against the exact optimum: -1 if the run failed,
/// 0 if nothing parseable or infeasible, otherwise
/// `round(5 + 5 * max(0, 1 - gap / 0.5))` where `gap` is the relative excess
/// over the optimal objective. Optimal means feasible within 1% of optimum.
pub fn oracle_reward(exec: &ExecutionResult, spec: &ProblemSpec) -> Result<RewardReport, RewardError> {
    let truth = benchgen::solve_ground_truth(spec);
    if !truth.feasible {
        return Err(RewardError::OracleUnavailable(spec.id.clone()));
    }
    if !exec.ok() {
        return Ok(RewardReport::failure(format!(
            "execution failed with status {:?}",
            exec.status
        )));
    }
    let Some(powers) = parse_powers(&exec.stdout, spec.n_users) else {
        return Ok(RewardReport {
            reward: 0.0,
            executed_ok: true,
            feasible: None,
            objective_value: None,
            optimal: None,
            rationale: "no solution vector found in output".to_string(),
        });
    };
    let assessment = benchgen::assess(spec, &powers, GRADING_EPS)?;
    if !assessment.feasible {
        let worst = assessment
            .violations
            .iter()
            .map(|v| format!("user {} {} by {:.4}", v.user, v.constraint, v.magnitude))
            .collect::<Vec<_>>()
            .join("; ");
        return Ok(RewardReport {
            reward: 0.0,
            executed_ok: true,
            feasible: Some(false),
            objective_value: Some(assessment.objective),
            optimal: Some(false),
            rationale: format!("infeasible: {worst}"),
        });
    }
    let gap = (assessment.objective - truth.objective) / truth.objective.max(0.01);
    let reward = (5.0 + 5.0 * (1.0 - gap / 0.5).max(0.0)).round().clamp(0.0, 10.0);
    let optimal = gap <= OPTIMALITY_TOLERANCE;
    Ok(RewardReport {
        reward,
        executed_ok: true,
        feasible: Some(true),
        objective_value: Some(assessment.objective),
        optimal: Some(optimal),
        rationale: format!(
            "feasible, objective {:.5} W vs optimum {:.5} W (gap {:.2}%)",
            assessment.objective,
            truth.objective,
            gap * 100.0
        ),
    })
}

/// Finds the solution vector in script output: the last `powers=[...]` line,
/// falling back to the last `n` numeric literals anywhere in the text.
pub fn parse_powers(stdout: &str, n: usize) -> Option<Vec<f64>> {
    static LINE_RE: OnceLock<regex::Regex> = OnceLock::new();
    static NUM_RE: OnceLock<regex::Regex> = OnceLock::new();
    let line_re = LINE_RE.get_or_init(|| regex::Regex::new(r"powers\s*=\s*\[([^\]]*)\]").unwrap());
    let num_re = NUM_RE.get_or_init(|| {
        regex::Regex::new(r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?").unwrap()
    });
    if let Some(caps) = line_re.captures_iter(stdout).last() {
        let values: Vec<f64> = num_re
            .find_iter(&caps[1])
            .filter_map(|m| m.as_str().parse().ok())
            .collect();
        if values.len() == n {
            return Some(values);
        }
    }
    let all: Vec<f64> = num_re
        .find_iter(stdout)
        .filter_map(|m| m.as_str().parse().ok())
        .collect();
    if all.len() >= n {
        Some(all[all.len() - n..].to_vec())
    } else {
        None
    }
}
