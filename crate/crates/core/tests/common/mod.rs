//! Shared helpers for the integration suites: fixture paths, the pinned
//! recording configuration, and an independent brute-force oracle.

#![allow(dead_code)]

use mcts_ops::benchgen::ProblemSpec;
use mcts_ops::refine::RefineConfig;
use mcts_ops::tree::SearchConfig;
use std::path::PathBuf;

/// Seed the checked-in replay fixtures were recorded with.
pub const REPLAY_SEED: u64 = 2024;

/// Seed for the refine-repair fixture; repairs the broken script on the
/// second retry.
pub const REFINE_SEED: u64 = 6;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Search configuration the replay fixtures were recorded under.
pub fn replay_search_config() -> SearchConfig {
    SearchConfig {
        simulations: 5,
        rng_seed: REPLAY_SEED,
        ..SearchConfig::default()
    }
}

pub fn replay_refine_config() -> RefineConfig {
    RefineConfig::default()
}

/// Brute-force 2-D grid minimizer for two-user specs, independent of the
/// linear-system oracle: a coarse 1e-3 lattice over the box followed by a
/// 1e-5 refinement around the coarse argmin. Feasibility is evaluated from
/// the SINR definition directly.
pub mod grid {
    use super::ProblemSpec;

    #[derive(Debug, Clone, Copy)]
    pub struct GridResult {
        pub feasible: bool,
        pub powers: [f64; 2],
        pub objective: f64,
    }

    fn feasible_point(spec: &ProblemSpec, gamma: f64, p1: f64, p2: f64) -> bool {
        let s1 = spec.gains[0] * p1 / (spec.noise_w + spec.gains[1] * p2);
        let s2 = spec.gains[1] * p2 / (spec.noise_w + spec.gains[0] * p1);
        s1 >= gamma && s2 >= gamma
    }

    fn sweep(
        spec: &ProblemSpec,
        gamma: f64,
        lo1: f64,
        hi1: f64,
        lo2: f64,
        hi2: f64,
        step: f64,
    ) -> Option<(f64, f64, f64)> {
        let mut best: Option<(f64, f64, f64)> = None;
        let n1 = ((hi1 - lo1) / step).ceil() as usize;
        let n2 = ((hi2 - lo2) / step).ceil() as usize;
        for i in 0..=n1 {
            let p1 = (lo1 + i as f64 * step).min(hi1);
            for j in 0..=n2 {
                let p2 = (lo2 + j as f64 * step).min(hi2);
                if feasible_point(spec, gamma, p1, p2) {
                    let obj = p1 + p2;
                    if best.map_or(true, |(_, _, b)| obj < b) {
                        best = Some((p1, p2, obj));
                    }
                }
            }
        }
        best
    }

    pub fn grid_search(spec: &ProblemSpec) -> GridResult {
        assert_eq!(spec.n_users, 2, "grid oracle covers two-user specs");
        let gamma = match spec.sinr_floor_db {
            Some(db) => 10f64.powf(db / 10.0),
            None => {
                return GridResult {
                    feasible: true,
                    powers: [spec.p_min, spec.p_min],
                    objective: 2.0 * spec.p_min,
                }
            }
        };
        let coarse = sweep(
            spec, gamma, spec.p_min, spec.p_max, spec.p_min, spec.p_max, 1e-3,
        );
        let Some(mut best) = coarse else {
            return GridResult {
                feasible: false,
                powers: [f64::NAN, f64::NAN],
                objective: f64::INFINITY,
            };
        };
        // Fine pass at 1e-5, re-centered while it keeps improving: a narrow
        // feasibility cone puts the coarse argmin well away from the apex,
        // so the window slides down the valley until it bottoms out.
        let window = 3e-3;
        for _ in 0..50 {
            let fine = sweep(
                spec,
                gamma,
                (best.0 - window).max(spec.p_min),
                (best.0 + window).min(spec.p_max),
                (best.1 - window).max(spec.p_min),
                (best.1 + window).min(spec.p_max),
                1e-5,
            );
            match fine {
                Some(candidate) if candidate.2 < best.2 - 1e-12 => best = candidate,
                _ => break,
            }
        }
        GridResult {
            feasible: true,
            powers: [best.0, best.1],
            objective: best.2,
        }
    }
}
