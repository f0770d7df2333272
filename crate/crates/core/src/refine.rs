//! Bounded feedback-and-revise loop for low-reward scripts.
//!
//! While the reward sits below the threshold and retries remain, a feedback
//! model critiques the script, the code writer produces a full revision, and
//! the revision is executed and re-graded. The best (code, reward) pair seen
//! anywhere in the loop is returned, so a regressing revision cannot lose
//! ground.

use crate::gateway::{Gateway, LlmRequest, PayloadBuilder, RoleTag, RoleTemplates};
use crate::pipeline::strip_code_fences;
use crate::reward::{RewardError, RewardReport};
use crate::sandbox::{ExecutionResult, Limits, Sandbox};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub enabled: bool,
    /// Reward threshold tau: refinement stops once reached.
    pub tau: f64,
    /// Retry budget R.
    pub max_retries: u32,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            tau: 7.0,
            max_retries: 3,
        }
    }
}

/// Result of one refinement loop.
#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub final_code: String,
    pub final_report: RewardReport,
    pub final_exec: ExecutionResult,
    pub retries_used: u32,
}

/// Grader bound to one problem; maps an execution to a reward report.
pub type Grader<'a> = dyn Fn(&ExecutionResult) -> Result<RewardReport, RewardError> + Sync + 'a;

/// Runs the revise-execute-regrade loop. A gateway failure mid-loop stops
/// early and returns the best pair seen so far.
#[allow(clippy::too_many_arguments)]
pub fn refine_loop(
    code: &str,
    report: &RewardReport,
    exec: &ExecutionResult,
    problem_text: &str,
    config: &RefineConfig,
    grader: &Grader<'_>,
    gateway: &Gateway,
    templates: &RoleTemplates,
    sandbox: &Sandbox,
    limits: &Limits,
) -> RefineOutcome {
    let mut best = RefineOutcome {
        final_code: code.to_string(),
        final_report: report.clone(),
        final_exec: exec.clone(),
        retries_used: 0,
    };
    if !config.enabled {
        return best;
    }
    let mut current_code = code.to_string();
    let mut current_report = report.clone();
    let mut current_exec = exec.clone();
    let mut retries = 0;
    while current_report.reward < config.tau && retries < config.max_retries {
        let feedback_payload = PayloadBuilder::new()
            .block("PROBLEM", problem_text)
            .block("CODE", &current_code)
            .block("REWARD", format!("{}", current_report.reward))
            .block("OUTPUT", &current_exec.stdout)
            .block("ERRORS", &current_exec.stderr)
            .block("RETRY", format!("{}", retries + 1))
            .build();
        let feedback_req = LlmRequest::new(
            RoleTag::FeedbackWriter,
            templates.system(RoleTag::FeedbackWriter),
            feedback_payload,
        );
        let Ok(feedback) = gateway.complete(&feedback_req) else {
            break;
        };
        let revise_payload = PayloadBuilder::new()
            .block("PROBLEM", problem_text)
            .block("FEEDBACK", &feedback.text)
            .block("CODE", &current_code)
            .build();
        let revise_req = LlmRequest::new(
            RoleTag::CodeWriter,
            templates.system(RoleTag::CodeWriter),
            revise_payload,
        );
        let Ok(revision) = gateway.complete(&revise_req) else {
            break;
        };
        retries += 1;
        current_code = strip_code_fences(&revision.text);
        current_exec = sandbox.execute(&current_code, limits);
        current_report = match grader(&current_exec) {
            Ok(r) => r,
            Err(_) => break,
        };
        if current_report.reward > best.final_report.reward {
            best.final_code = current_code.clone();
            best.final_report = current_report.clone();
            best.final_exec = current_exec.clone();
        }
    }
    best.retries_used = retries;
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchgen;
    use crate::gateway::SyntheticBackend;
    use crate::reward::oracle_reward;
    use crate::sandbox::{ExecutionStatus, SandboxConfig};
    use std::sync::Arc;

    fn setup(seed: u64) -> (Gateway, RoleTemplates, Sandbox) {
        (
            Gateway::new(Arc::new(SyntheticBackend::new(seed))),
            RoleTemplates::builtin(),
            Sandbox::new(SandboxConfig::default()),
        )
    }

    fn ok_report(reward: f64) -> RewardReport {
        RewardReport {
            reward,
            executed_ok: true,
            feasible: Some(true),
            objective_value: Some(1.0),
            optimal: Some(false),
            rationale: String::new(),
        }
    }

    fn dummy_exec() -> ExecutionResult {
        ExecutionResult {
            status: ExecutionStatus::Ok,
            stdout: String::new(),
            stderr: String::new(),
            stdout_truncated: false,
            stderr_truncated: false,
            wall_time: 0.0,
            exit_code: Some(0),
        }
    }

    #[test]
    fn rewards_above_threshold_skip_the_loop() {
        let (gw, t, sb) = setup(1);
        let entry = benchgen::paper_easy();
        let grader = |e: &ExecutionResult| oracle_reward(e, &entry.spec);
        let cfg = RefineConfig::default();
        let out = refine_loop(
            "print('x')",
            &ok_report(9.0),
            &dummy_exec(),
            &entry.spec.description,
            &cfg,
            &grader,
            &gw,
            &t,
            &sb,
            &Limits::default(),
        );
        assert_eq!(out.retries_used, 0);
        assert_eq!(out.final_code, "print('x')");
        assert_eq!(gw.calls(), 0);
    }

    #[test]
    fn zero_retry_budget_is_identity() {
        let (gw, t, sb) = setup(1);
        let entry = benchgen::paper_easy();
        let grader = |e: &ExecutionResult| oracle_reward(e, &entry.spec);
        let cfg = RefineConfig {
            max_retries: 0,
            ..RefineConfig::default()
        };
        let out = refine_loop(
            "broken(",
            &ok_report(0.0),
            &dummy_exec(),
            &entry.spec.description,
            &cfg,
            &grader,
            &gw,
            &t,
            &sb,
            &Limits::default(),
        );
        assert_eq!(out.retries_used, 0);
        assert_eq!(out.final_code, "broken(");
        assert_eq!(gw.calls(), 0);
    }

    #[test]
    fn disabled_config_is_identity_regardless_of_reward() {
        let (gw, t, sb) = setup(1);
        let entry = benchgen::paper_easy();
        let grader = |e: &ExecutionResult| oracle_reward(e, &entry.spec);
        let cfg = RefineConfig {
            enabled: false,
            ..RefineConfig::default()
        };
        let out = refine_loop(
            "anything",
            &ok_report(-1.0),
            &dummy_exec(),
            &entry.spec.description,
            &cfg,
            &grader,
            &gw,
            &t,
            &sb,
            &Limits::default(),
        );
        assert_eq!(out.retries_used, 0);
        assert_eq!(out.final_report.reward, -1.0);
        assert_eq!(gw.calls(), 0);
    }

    #[test]
    fn syntax_error_gets_repaired_within_budget() {
        // The synthetic revision channel repairs a script with a fixed
        // per-retry probability; seed 3 repairs this case within the budget.
        let (gw, t, sb) = setup(3);
        let entry = benchgen::paper_easy();
        let grader = |e: &ExecutionResult| oracle_reward(e, &entry.spec);
        let broken = "prin(\"powers=[0.0, 0.0]\")\n";
        let exec = sb.execute(broken, &Limits::default());
        assert_eq!(exec.status, ExecutionStatus::NonzeroExit);
        let report = grader(&exec).unwrap();
        assert_eq!(report.reward, -1.0);
        let cfg = RefineConfig::default();
        let out = refine_loop(
            broken,
            &report,
            &exec,
            &entry.spec.description,
            &cfg,
            &grader,
            &gw,
            &t,
            &sb,
            &Limits::default(),
        );
        assert!(out.retries_used <= cfg.max_retries);
        assert!(out.retries_used >= 1);
        assert!(out.final_report.reward > -1.0, "{:?}", out.final_report);
        assert_eq!(out.final_exec.status, ExecutionStatus::Ok);
    }

    #[test]
    fn final_reward_never_drops_below_input() {
        let entry = benchgen::paper_easy();
        for seed in 0..8 {
            let (gw, t, sb) = setup(seed);
            let grader = |e: &ExecutionResult| oracle_reward(e, &entry.spec);
            let exec = sb.execute("nope(", &Limits::default());
            let report = grader(&exec).unwrap();
            let out = refine_loop(
                "nope(",
                &report,
                &exec,
                &entry.spec.description,
                &RefineConfig::default(),
                &grader,
                &gw,
                &t,
                &sb,
                &Limits::default(),
            );
            assert!(out.final_report.reward >= report.reward);
            assert!(out.retries_used <= 3);
        }
    }
}
