//! Aggregates trial records into per-method, per-difficulty statistics and
//! renders them as text, CSV, or JSON.
//!
//! Failed trials (reward -1) stay in the mean and standard deviation: an
//! all-failure cell must read success 0%, mean -1.00, sd 0.00. The sd is the
//! population form.

use crate::baselines::{Method, TrialRecord};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: Method,
    pub difficulty: String,
    pub success_rate: f64,
    pub reward_mean: f64,
    pub reward_sd: f64,
    pub optimality_rate: f64,
    pub avg_tokens: f64,
    pub n_trials: usize,
}

/// One row per populated (method, difficulty) cell, sorted for stable output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn row(&self, method: Method, difficulty: &str) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.difficulty == difficulty)
    }
}

fn difficulty_label(problem_id: &str) -> String {
    problem_id
        .split('-')
        .next()
        .filter(|p| !p.is_empty())
        .unwrap_or("unknown")
        .to_string()
}

/// Folds records into the metrics table. Cells are only created for groups
/// that occur, so no division by zero is possible; an empty input yields an
/// empty table.
pub fn aggregate(records: &[TrialRecord]) -> MetricsTable {
    let mut groups: Vec<(Method, String, Vec<&TrialRecord>)> = Vec::new();
    for record in records {
        let difficulty = difficulty_label(&record.problem_id);
        match groups
            .iter_mut()
            .find(|(m, d, _)| *m == record.method && *d == difficulty)
        {
            Some((_, _, bucket)) => bucket.push(record),
            None => groups.push((record.method, difficulty, vec![record])),
        }
    }
    let mut rows: Vec<MetricsRow> = groups
        .into_iter()
        .map(|(method, difficulty, bucket)| {
            let n = bucket.len();
            let nf = n as f64;
            let success = bucket.iter().filter(|r| r.executed_ok).count() as f64 / nf;
            let mean = bucket.iter().map(|r| r.reward).sum::<f64>() / nf;
            let variance = bucket
                .iter()
                .map(|r| (r.reward - mean).powi(2))
                .sum::<f64>()
                / nf;
            let optimality = bucket.iter().filter(|r| r.optimal).count() as f64 / nf;
            let avg_tokens = bucket
                .iter()
                .map(|r| (r.prompt_tokens + r.completion_tokens) as f64)
                .sum::<f64>()
                / nf;
            MetricsRow {
                method,
                difficulty,
                success_rate: success,
                reward_mean: mean,
                reward_sd: variance.sqrt(),
                optimality_rate: optimality,
                avg_tokens,
                n_trials: n,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        (a.method.as_str(), a.difficulty.as_str()).cmp(&(b.method.as_str(), b.difficulty.as_str()))
    });
    MetricsTable { rows }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

/// Renders the table. JSON output parses back into an equal table.
pub fn emit_report(table: &MetricsTable, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut bytes = serde_json::to_vec_pretty(table).expect("table serializes");
            bytes.push(b'\n');
            bytes
        }
        ReportFormat::Csv => {
            let mut out = String::from(
                "method,difficulty,success_rate,reward_mean,reward_sd,optimality_rate,avg_tokens,n_trials\n",
            );
            for r in &table.rows {
                out.push_str(&format!(
                    "{},{},{:.4},{:.4},{:.4},{:.4},{:.1},{}\n",
                    r.method, r.difficulty, r.success_rate, r.reward_mean, r.reward_sd,
                    r.optimality_rate, r.avg_tokens, r.n_trials
                ));
            }
            out.into_bytes()
        }
        ReportFormat::Text => {
            let mut out = String::new();
            out.push_str(&format!(
                "{:<12} {:<10} {:>9} {:>11} {:>7} {:>11} {:>12} {:>7}\n",
                "method", "difficulty", "success", "reward avg", "sd", "optimality", "avg tokens", "trials"
            ));
            out.push_str(&"-".repeat(86));
            out.push('\n');
            for r in &table.rows {
                out.push_str(&format!(
                    "{:<12} {:<10} {:>8.2}% {:>11.2} {:>7.2} {:>10.2}% {:>12.1} {:>7}\n",
                    r.method.as_str(),
                    r.difficulty,
                    r.success_rate * 100.0,
                    r.reward_mean,
                    r.reward_sd,
                    r.optimality_rate * 100.0,
                    r.avg_tokens,
                    r.n_trials
                ));
            }
            out.into_bytes()
        }
    }
}
