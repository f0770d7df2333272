//! Benchmark problem families, natural-language rendering, and the exact
//! ground-truth solver.
//!
//! Two families of transmit-power minimization tasks are generated: an easy
//! one with box constraints only, and a hard one that adds a per-user SINR
//! floor. The SINR constraint is a ratio of affine terms in the powers, so it
//! cannot be handed to a DCP modeling layer as written, but cross-multiplying
//! turns the tight constraints into a linear system that this module solves
//! exactly. An active-set enumeration over the box bounds covers the cases
//! where the all-tight solution leaves the box.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BenchError {
    #[error("no feasible instance found after {0} regeneration attempts")]
    GenerationExhausted(u32),
    #[error("powers length {got} does not match the {want}-user problem")]
    PowerCountMismatch { got: usize, want: usize },
    #[error("could not extract {0} from the problem description")]
    ExtractionFailure(&'static str),
    #[error("invalid problem parameters: {0}")]
    InvalidSpec(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Hard,
}

impl Difficulty {
    pub fn as_str(&self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Hard => "hard",
        }
    }

    /// Problem ids are `<difficulty>-<seed>`; this recovers the family.
    pub fn from_problem_id(id: &str) -> Option<Difficulty> {
        match id.split('-').next() {
            Some("easy") => Some(Difficulty::Easy),
            Some("hard") => Some(Difficulty::Hard),
            _ => None,
        }
    }
}

impl std::fmt::Display for Difficulty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One generated optimization task plus its rendered description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub id: String,
    pub difficulty: Difficulty,
    pub n_users: usize,
    /// Channel gains g_i, unitless.
    pub gains: Vec<f64>,
    /// Background noise sigma^2, Watts.
    pub noise_w: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// Present exactly on the hard family.
    pub sinr_floor_db: Option<f64>,
    pub description: String,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.n_users < 2 {
            return Err(BenchError::InvalidSpec("n_users must be >= 2"));
        }
        if self.gains.len() != self.n_users {
            return Err(BenchError::InvalidSpec("gains length must equal n_users"));
        }
        if !self.gains.iter().all(|g| *g > 0.0) {
            return Err(BenchError::InvalidSpec("gains must be positive"));
        }
        if !(self.noise_w > 0.0) {
            return Err(BenchError::InvalidSpec("noise must be positive"));
        }
        if !(self.p_min < self.p_max) {
            return Err(BenchError::InvalidSpec("p_min must be below p_max"));
        }
        match (self.difficulty, self.sinr_floor_db) {
            (Difficulty::Hard, None) => Err(BenchError::InvalidSpec("hard spec needs a SINR floor")),
            (Difficulty::Easy, Some(_)) => {
                Err(BenchError::InvalidSpec("easy spec must not carry a SINR floor"))
            }
            _ => Ok(()),
        }
    }
}

/// Which constraints are active at the optimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingKind {
    LowerBounds,
    SinrTight,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub powers: Vec<f64>,
    /// Total power, Watts.
    pub objective: f64,
    pub feasible: bool,
    pub binding: BindingKind,
}

/// Problem-set line format: spec plus its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemEntry {
    #[serde(flatten)]
    pub spec: ProblemSpec,
    pub ground_truth: GroundTruth,
}

/// 10^(dB/10).
pub fn db_to_linear(x_db: f64) -> f64 {
    10f64.powf(x_db / 10.0)
}

/// Rounds to 1/per_unit steps via multiply-round-divide, which lands on
/// the same doubles that parsing the printed decimal produces.
fn round_to(x: f64, per_unit: f64) -> f64 {
    (x * per_unit).round() / per_unit
}

/// Deterministically draws one instance of the requested family, retrying
/// with incremented seeds until the instance is feasible.
pub fn generate_problem(
    difficulty: Difficulty,
    seed: u64,
    n_users: usize,
) -> Result<ProblemEntry, BenchError> {
    if n_users < 2 {
        return Err(BenchError::InvalidSpec("n_users must be >= 2"));
    }
    if n_users > 4 {
        return Err(BenchError::InvalidSpec(
            "active-set oracle is capped at 4 users",
        ));
    }
    const MAX_ATTEMPTS: u32 = 100;
    for attempt in 0..MAX_ATTEMPTS {
        let draw_seed = seed.wrapping_add(attempt as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(
            draw_seed ^ ((n_users as u64) << 32) ^ matches!(difficulty, Difficulty::Hard) as u64,
        );
        let gains: Vec<f64> = (0..n_users)
            .map(|_| round_to(rng.gen_range(0.5..=4.0), 10.0))
            .collect();
        let noise_w = 1.0;
        let (p_max, sinr_floor_db) = match difficulty {
            Difficulty::Easy => {
                let choices = [1.0, 1.5, 2.0];
                (choices[rng.gen_range(0..choices.len())], None)
            }
            Difficulty::Hard => {
                let choices = [2.0, 3.0];
                let p_max = choices[rng.gen_range(0..choices.len())];
                let floor = round_to(rng.gen_range(-3.0..=0.0), 2.0);
                (p_max, Some(floor))
            }
        };
        let mut spec = ProblemSpec {
            id: format!("{}-{:04}", difficulty.as_str(), draw_seed),
            difficulty,
            n_users,
            gains,
            noise_w,
            p_min: 0.0,
            p_max,
            sinr_floor_db,
            description: String::new(),
        };
        spec.description = render_description(&spec);
        let truth = solve_ground_truth(&spec);
        if truth.feasible {
            return Ok(ProblemEntry {
                spec,
                ground_truth: truth,
            });
        }
    }
    Err(BenchError::GenerationExhausted(MAX_ATTEMPTS))
}

/// Formats a bound or gain without trailing zeros ("2" not "2.0", "1.5" kept).
fn fmt_num(x: f64) -> String {
    if (x - x.round()).abs() < 1e-12 {
        format!("{}", x.round() as i64)
    } else {
        format!("{x}")
    }
}

/// Gains render with one decimal so "3.0" stays "3.0" like the task text.
fn fmt_gain(x: f64) -> String {
    format!("{x:.1}")
}

fn join_with_and(items: &[String]) -> String {
    match items.len() {
        0 => String::new(),
        1 => items[0].clone(),
        2 => format!("{} and {}", items[0], items[1]),
        _ => format!(
            "{}, and {}",
            items[..items.len() - 1].join(", "),
            items[items.len() - 1]
        ),
    }
}

/// Renders the natural-language task text for a spec. Every numeric field is
/// recoverable from the output via [`extract_parameters`].
pub fn render_description(spec: &ProblemSpec) -> String {
    match spec.difficulty {
        Difficulty::Easy => {
            let gains = join_with_and(&spec.gains.iter().map(|g| fmt_gain(*g)).collect::<Vec<_>>());
            format!(
                "{n} users transmit to a base station. \
                 Each user has a channel gain to the base station ({gains}, respectively) \
                 and experiences background noise of {noise} Watt. \
                 The objective is to minimize the total transmit power of all users. \
                 Each user's transmit power must be between {pmin} and {pmax} Watt.",
                n = spec.n_users,
                gains = gains,
                noise = fmt_num(spec.noise_w),
                pmin = fmt_num(spec.p_min),
                pmax = fmt_num(spec.p_max),
            )
        }
        Difficulty::Hard => {
            let other = if spec.n_users == 2 {
                "the other user"
            } else {
                "the other users"
            };
            let gain_clauses = spec
                .gains
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    if i == 0 {
                        format!("The channel gain from user 1 to the base station is {}", fmt_gain(*g))
                    } else {
                        format!("from user {} to the base station is {}", i + 1, fmt_gain(*g))
                    }
                })
                .collect::<Vec<_>>();
            format!(
                "A wireless communication network includes {n} mobile users and 1 base station. \
                 The objective is to minimize the total transmit power used by all users, while ensuring quality of service. \
                 Each user transmits to the base station and must achieve a minimum Signal-to-Interference-plus-Noise Ratio (SINR) of {floor} dB. \
                 The SINR for each user depends on their respective channel gain to the base station, interference from {other}, and a background noise power of {noise} Watt. \
                 {gains}. \
                 Each user's transmit power must lie between {pmin} and {pmax} Watt.",
                n = spec.n_users,
                floor = fmt_num(spec.sinr_floor_db.unwrap_or(0.0)),
                other = other,
                noise = fmt_num(spec.noise_w),
                gains = join_with_and(&gain_clauses),
                pmin = fmt_num(spec.p_min),
                pmax = fmt_num(spec.p_max),
            )
        }
    }
}

/// Numeric fields recovered from a rendered description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedParams {
    pub n_users: usize,
    pub gains: Vec<f64>,
    pub noise_w: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub sinr_floor_db: Option<f64>,
}

fn float_re() -> &'static regex::Regex {
    static RE: OnceLock<regex::Regex> = OnceLock::new();
    RE.get_or_init(|| regex::Regex::new(r"-?\d+(?:\.\d+)?").unwrap())
}

fn capture_f64(re: &regex::Regex, text: &str) -> Option<f64> {
    re.captures(text)?.get(1)?.as_str().parse().ok()
}

/// Inverse of [`render_description`]: recovers every numeric field from the
/// rendered text of either family.
pub fn extract_parameters(text: &str) -> Result<ExtractedParams, BenchError> {
    static N_RE: OnceLock<regex::Regex> = OnceLock::new();
    static NOISE_RE: OnceLock<regex::Regex> = OnceLock::new();
    static BOUNDS_RE: OnceLock<regex::Regex> = OnceLock::new();
    static FLOOR_RE: OnceLock<regex::Regex> = OnceLock::new();
    static EASY_GAINS_RE: OnceLock<regex::Regex> = OnceLock::new();
    static HARD_GAIN_RE: OnceLock<regex::Regex> = OnceLock::new();

    let n_re = N_RE.get_or_init(|| regex::Regex::new(r"(\d+)\s+(?:mobile\s+)?users").unwrap());
    let noise_re = NOISE_RE.get_or_init(|| {
        regex::Regex::new(r"noise(?:\s+power)?\s+of\s+(-?\d+(?:\.\d+)?)\s+Watt").unwrap()
    });
    let bounds_re = BOUNDS_RE.get_or_init(|| {
        regex::Regex::new(
            r"must (?:be between|lie between)\s+(-?\d+(?:\.\d+)?)\s+and\s+(-?\d+(?:\.\d+)?)\s+Watt",
        )
        .unwrap()
    });
    let floor_re = FLOOR_RE.get_or_init(|| {
        regex::Regex::new(r"\(SINR\)\s+of\s+(-?\d+(?:\.\d+)?)\s+dB").unwrap()
    });
    let easy_gains_re = EASY_GAINS_RE.get_or_init(|| {
        regex::Regex::new(r"channel gain to the base station \(([^)]*)\)").unwrap()
    });
    let hard_gain_re = HARD_GAIN_RE.get_or_init(|| {
        regex::Regex::new(r"user\s+\d+\s+to the base station is\s+(-?\d+(?:\.\d+)?)").unwrap()
    });

    let n_users = n_re
        .captures(text)
        .and_then(|c| c.get(1))
        .and_then(|m| m.as_str().parse::<usize>().ok())
        .ok_or(BenchError::ExtractionFailure("user count"))?;
    let noise_w =
        capture_f64(noise_re, text).ok_or(BenchError::ExtractionFailure("noise power"))?;
    let bounds = bounds_re
        .captures(text)
        .ok_or(BenchError::ExtractionFailure("power bounds"))?;
    let p_min: f64 = bounds[1].parse().unwrap();
    let p_max: f64 = bounds[2].parse().unwrap();
    let sinr_floor_db = capture_f64(floor_re, text);

    let gains: Vec<f64> = if let Some(c) = easy_gains_re.captures(text) {
        float_re()
            .find_iter(&c[1])
            .filter_map(|m| m.as_str().parse().ok())
            .collect()
    } else {
        hard_gain_re
            .captures_iter(text)
            .filter_map(|c| c[1].parse().ok())
            .collect()
    };
    if gains.len() != n_users {
        return Err(BenchError::ExtractionFailure("per-user gains"));
    }
    Ok(ExtractedParams {
        n_users,
        gains,
        noise_w,
        p_min,
        p_max,
        sinr_floor_db,
    })
}

/// The worked easy instance: gains 1.5/1.0, noise 1 W, powers in [0, 1] W.
pub fn paper_easy() -> ProblemEntry {
    let mut spec = ProblemSpec {
        id: "easy-ref".to_string(),
        difficulty: Difficulty::Easy,
        n_users: 2,
        gains: vec![1.5, 1.0],
        noise_w: 1.0,
        p_min: 0.0,
        p_max: 1.0,
        sinr_floor_db: None,
        description: String::new(),
    };
    spec.description = render_description(&spec);
    let ground_truth = solve_ground_truth(&spec);
    ProblemEntry { spec, ground_truth }
}

/// The worked hard instance: gains 3.0/2.0, noise 1 W, powers in [0, 2] W,
/// SINR floor -1.5 dB.
pub fn paper_hard() -> ProblemEntry {
    let mut spec = ProblemSpec {
        id: "hard-ref".to_string(),
        difficulty: Difficulty::Hard,
        n_users: 2,
        gains: vec![3.0, 2.0],
        noise_w: 1.0,
        p_min: 0.0,
        p_max: 2.0,
        sinr_floor_db: Some(-1.5),
        description: String::new(),
    };
    spec.description = render_description(&spec);
    let ground_truth = solve_ground_truth(&spec);
    ProblemEntry { spec, ground_truth }
}

/// Per-constraint feasibility report for a candidate power vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub feasible: bool,
    pub violations: Vec<Violation>,
    pub objective: f64,
    pub sinr_values_db: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub user: usize,
    pub constraint: String,
    pub magnitude: f64,
}

fn sinr_linear(spec: &ProblemSpec, powers: &[f64], user: usize) -> f64 {
    let interference: f64 = powers
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != user)
        .map(|(j, p)| spec.gains[j] * p)
        .sum();
    spec.gains[user] * powers[user] / (spec.noise_w + interference)
}

/// Checks box bounds and, on the hard family, per-user SINR floors, each with
/// additive tolerance `eps`.
pub fn assess(spec: &ProblemSpec, powers: &[f64], eps: f64) -> Result<Assessment, BenchError> {
    if powers.len() != spec.n_users {
        return Err(BenchError::PowerCountMismatch {
            got: powers.len(),
            want: spec.n_users,
        });
    }
    let mut violations = Vec::new();
    for (i, &p) in powers.iter().enumerate() {
        if p < spec.p_min - eps {
            violations.push(Violation {
                user: i,
                constraint: "p_min".to_string(),
                magnitude: spec.p_min - p,
            });
        }
        if p > spec.p_max + eps {
            violations.push(Violation {
                user: i,
                constraint: "p_max".to_string(),
                magnitude: p - spec.p_max,
            });
        }
    }
    let sinr_values_db = spec.sinr_floor_db.map(|floor_db| {
        let gamma = db_to_linear(floor_db);
        (0..spec.n_users)
            .map(|i| {
                let s = sinr_linear(spec, powers, i);
                if s < gamma - eps {
                    violations.push(Violation {
                        user: i,
                        constraint: "sinr".to_string(),
                        magnitude: gamma - s,
                    });
                }
                10.0 * s.max(1e-30).log10()
            })
            .collect()
    });
    Ok(Assessment {
        feasible: violations.is_empty(),
        violations,
        objective: powers.iter().sum(),
        sinr_values_db,
    })
}

/// Gaussian elimination with partial pivoting; systems here are at most 4x4.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in (col + 1)..n {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    Some(x)
}

/// Solves the all-SINR-tight linear system g_i p_i = gamma (sigma^2 + sum_{j != i} g_j p_j).
fn solve_all_tight(spec: &ProblemSpec, gamma: f64) -> Option<Vec<f64>> {
    let n = spec.n_users;
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        spec.gains[i]
                    } else {
                        -gamma * spec.gains[j]
                    }
                })
                .collect()
        })
        .collect();
    let b = vec![gamma * spec.noise_w; n];
    solve_linear(a, b)
}

/// Solves the system where users in `pinned` sit at a fixed bound and the
/// rest have tight SINR constraints.
fn solve_partial_tight(spec: &ProblemSpec, gamma: f64, pinned: &[Option<f64>]) -> Option<Vec<f64>> {
    let free: Vec<usize> = (0..spec.n_users).filter(|i| pinned[*i].is_none()).collect();
    if free.is_empty() {
        return Some(pinned.iter().map(|p| p.unwrap()).collect());
    }
    let m = free.len();
    let mut a = vec![vec![0.0; m]; m];
    let mut b = vec![0.0; m];
    for (row, &i) in free.iter().enumerate() {
        let mut rhs = gamma * spec.noise_w;
        for j in 0..spec.n_users {
            if j == i {
                continue;
            }
            match pinned[j] {
                Some(pj) => rhs += gamma * spec.gains[j] * pj,
                None => {
                    let col = free.iter().position(|&f| f == j).unwrap();
                    a[row][col] = -gamma * spec.gains[j];
                }
            }
        }
        a[row][free.iter().position(|&f| f == i).unwrap()] = spec.gains[i];
        b[row] = rhs;
    }
    let x = solve_linear(a, b)?;
    let mut powers = vec![0.0; spec.n_users];
    for (row, &i) in free.iter().enumerate() {
        powers[i] = x[row];
    }
    for (i, p) in pinned.iter().enumerate() {
        if let Some(v) = p {
            powers[i] = *v;
        }
    }
    Some(powers)
}

const FEAS_EPS: f64 = 1e-9;

fn candidate_if_feasible(spec: &ProblemSpec, powers: Vec<f64>) -> Option<Vec<f64>> {
    if powers
        .iter()
        .any(|p| !p.is_finite() || *p < spec.p_min - FEAS_EPS || *p > spec.p_max + FEAS_EPS)
    {
        return None;
    }
    let clamped: Vec<f64> = powers
        .iter()
        .map(|p| p.clamp(spec.p_min, spec.p_max))
        .collect();
    match assess(spec, &clamped, FEAS_EPS) {
        Ok(a) if a.feasible => Some(clamped),
        _ => None,
    }
}

/// Exact optimum of a spec.
///
/// Easy family: the objective is increasing in every power, so every user sits
/// at the lower bound. Hard family: total-power minimization drives all SINR
/// constraints tight when that point is interior; otherwise an enumeration
/// over which users are pinned at a box bound covers the remaining optima.
pub fn solve_ground_truth(spec: &ProblemSpec) -> GroundTruth {
    match spec.sinr_floor_db {
        None => {
            let powers = vec![spec.p_min; spec.n_users];
            GroundTruth {
                objective: powers.iter().sum(),
                powers,
                feasible: true,
                binding: BindingKind::LowerBounds,
            }
        }
        Some(floor_db) => {
            let gamma = db_to_linear(floor_db);
            if let Some(powers) = solve_all_tight(spec, gamma).and_then(|p| candidate_if_feasible(spec, p))
            {
                return GroundTruth {
                    objective: powers.iter().sum(),
                    powers,
                    feasible: true,
                    binding: BindingKind::SinrTight,
                };
            }
            // Enumerate pin assignments: each user free, at p_min, or at p_max.
            let n = spec.n_users;
            let mut best: Option<Vec<f64>> = None;
            for mask in 0..3usize.pow(n as u32) {
                let mut pinned: Vec<Option<f64>> = Vec::with_capacity(n);
                let mut m = mask;
                for _ in 0..n {
                    pinned.push(match m % 3 {
                        0 => None,
                        1 => Some(spec.p_min),
                        _ => Some(spec.p_max),
                    });
                    m /= 3;
                }
                if pinned.iter().all(|p| p.is_none()) {
                    continue; // all-tight case already tried
                }
                let Some(candidate) =
                    solve_partial_tight(spec, gamma, &pinned).and_then(|p| candidate_if_feasible(spec, p))
                else {
                    continue;
                };
                let obj: f64 = candidate.iter().sum();
                if best.as_ref().map_or(true, |b| obj < b.iter().sum::<f64>()) {
                    best = Some(candidate);
                }
            }
            match best {
                Some(powers) => {
                    let binding = if powers.iter().all(|p| (p - spec.p_min).abs() <= FEAS_EPS) {
                        BindingKind::LowerBounds
                    } else {
                        BindingKind::Mixed
                    };
                    GroundTruth {
                        objective: powers.iter().sum(),
                        powers,
                        feasible: true,
                        binding,
                    }
                }
                None => GroundTruth {
                    powers: vec![],
                    objective: f64::INFINITY,
                    feasible: false,
                    binding: BindingKind::Mixed,
                },
            }
        }
    }
}
