//! Command-line front end: problem-set generation, search and baseline runs,
//! ablations, report rendering, and fixture record/verify.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mcts_ops::baselines::{Method, TrialRecord};
use mcts_ops::benchgen::{self, Difficulty, ProblemEntry};
use mcts_ops::config::{BackendChoice, EngineConfig, GraderChoice};
use mcts_ops::experiment::{AblationMode, Engine, GraderKind};
use mcts_ops::gateway::{
    Backend, HttpBackend, RecordBackend, ReplayBackend, RoleTemplates, SyntheticBackend,
};
use mcts_ops::metrics::{aggregate, emit_report, MetricsTable, ReportFormat};
use mcts_ops::pipeline::PipelineOptions;
use mcts_ops::sandbox::{Limits, Sandbox};
use mcts_ops::telemetry::{JsonlLog, NullLog, RunLog};
use mcts_ops::tree::TreeSnapshot;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "mcts-ops", version, about = "Prompt-sequence search for LLM code generation over power-allocation benchmarks")]
struct Cli {
    /// TOML config file; omitted keys use built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Completion backend: http, replay, or synthetic.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Seed override for the synthetic backend and problem generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Append JSONL run records (iterations and trials) to this file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Parallel worker threads for trials.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full tree search on a problem set.
    Run {
        /// Problem-set JSONL (from `bench generate`); generated from config
        /// when omitted.
        #[arg(long)]
        problems: Option<PathBuf>,
        /// Grading path: oracle or llm.
        #[arg(long)]
        grader: Option<String>,
        /// Directory for per-problem tree snapshots.
        #[arg(long)]
        trees: Option<PathBuf>,
        /// Re-decompose the problem at every iteration.
        #[arg(long)]
        redecompose: bool,
        /// Summary format: text, csv, or json.
        #[arg(long, default_value = "text")]
        format: String,
    },
    /// Run one baseline pipeline on a problem set.
    Baseline {
        /// one_shot, cot, or self_refine.
        method: String,
        #[arg(long)]
        problems: Option<PathBuf>,
        #[arg(long)]
        grader: Option<String>,
        #[arg(long, default_value = "text")]
        format: String,
    },
    /// Run one ablation variant on a problem set.
    Ablate {
        /// no_mcts or no_refine.
        mode: String,
        #[arg(long)]
        problems: Option<PathBuf>,
        #[arg(long)]
        grader: Option<String>,
        #[arg(long, default_value = "text")]
        format: String,
    },
    /// Benchmark problem-set tools.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Aggregate a run log, or pretty-print a tree snapshot.
    Report {
        /// Run-log JSONL to aggregate.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Tree snapshot JSON to pretty-print.
        #[arg(long)]
        tree: Option<PathBuf>,
        #[arg(long, default_value = "text")]
        format: String,
    },
    /// Record or verify deterministic replay fixtures.
    Replay {
        #[command(subcommand)]
        command: ReplayCommand,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Generate a problem set as JSONL, one problem with ground truth per line.
    Generate {
        #[arg(long, default_value = "hard")]
        difficulty: String,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ReplayCommand {
    /// Run the search while recording every completion to a fixture file.
    Record {
        #[arg(long)]
        problems: PathBuf,
        /// Fixture JSONL to write.
        #[arg(long)]
        fixtures: PathBuf,
    },
    /// Replay a recorded run twice and check it is bit-stable.
    Verify {
        #[arg(long)]
        problems: PathBuf,
        /// Fixture JSONL to read.
        #[arg(long)]
        fixtures: PathBuf,
    },
}

fn main() -> Result<()> {
    // Dying quietly on a closed pipe beats panicking under `head`.
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let mut config = load_config(cli.config.as_deref())?;
    if let Some(backend) = &cli.backend {
        config.gateway.backend = backend.parse().map_err(anyhow::Error::msg)?;
    }
    if let Some(seed) = cli.seed {
        config.gateway.seed = seed;
        config.bench.seed = seed;
        config.search.rng_seed = seed;
    }
    let jobs = cli.jobs.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get().min(8))
            .unwrap_or(4)
    });
    let log: Arc<dyn RunLog> = match &cli.out {
        Some(path) => Arc::new(JsonlLog::create(path).context("opening run log")?),
        None => Arc::new(NullLog),
    };

    match cli.command {
        Command::Run {
            problems,
            grader,
            trees,
            redecompose,
            format,
        } => {
            let mut config = config;
            config.redecompose |= redecompose;
            let set = load_or_generate_problems(problems.as_deref(), &config)?;
            if let Some(dir) = &trees {
                std::fs::create_dir_all(dir)?;
            }
            let engine = build_engine(&config, grader.as_deref(), jobs, trees)?;
            let records = engine.run(Method::MctsOps, &set, log.as_ref());
            print_table(&aggregate(&records), &format)?;
        }
        Command::Baseline {
            method,
            problems,
            grader,
            format,
        } => {
            let method = match method.as_str() {
                "one_shot" => Method::OneShot,
                "cot" => Method::Cot,
                "self_refine" => Method::SelfRefine,
                other => bail!("unknown baseline {other:?} (expected one_shot, cot, self_refine)"),
            };
            let set = load_or_generate_problems(problems.as_deref(), &config)?;
            let engine = build_engine(&config, grader.as_deref(), jobs, None)?;
            let records = engine.run(method, &set, log.as_ref());
            print_table(&aggregate(&records), &format)?;
        }
        Command::Ablate {
            mode,
            problems,
            grader,
            format,
        } => {
            let mode: AblationMode = mode.parse().map_err(anyhow::Error::msg)?;
            let set = load_or_generate_problems(problems.as_deref(), &config)?;
            let engine = build_engine(&config, grader.as_deref(), jobs, None)?;
            let table = engine.ablate(mode, &set, log.as_ref());
            print_table(&table, &format)?;
        }
        Command::Bench { command } => match command {
            BenchCommand::Generate {
                difficulty,
                count,
                seed,
                out,
            } => {
                let difficulty = parse_difficulty(&difficulty)?;
                let mut lines = String::new();
                for i in 0..count {
                    let entry = benchgen::generate_problem(
                        difficulty,
                        seed + i as u64 * 101,
                        config.bench.n_users,
                    )?;
                    lines.push_str(&serde_json::to_string(&entry)?);
                    lines.push('\n');
                }
                match out {
                    Some(path) => std::fs::write(&path, lines)
                        .with_context(|| format!("writing {}", path.display()))?,
                    None => print!("{lines}"),
                }
            }
        },
        Command::Report { input, tree, format } => {
            if let Some(path) = tree {
                print_tree(&path)?;
            }
            if let Some(path) = input {
                let records = load_trials(&path)?;
                print_table(&aggregate(&records), &format)?;
            }
        }
        Command::Replay { command } => match command {
            ReplayCommand::Record { problems, fixtures } => {
                let set = load_problems(&problems)?;
                let inner = build_backend(&config)?;
                let recorder: Arc<dyn Backend> =
                    Arc::new(RecordBackend::create(inner, &fixtures)?);
                let engine = engine_with_backend(&config, recorder, None, jobs, None)?;
                let records = engine.run(Method::MctsOps, &set, log.as_ref());
                print_table(&aggregate(&records), "text")?;
                eprintln!("recorded fixtures to {}", fixtures.display());
            }
            ReplayCommand::Verify { problems, fixtures } => {
                let set = load_problems(&problems)?;
                let run = |cfg: &EngineConfig| -> Result<Vec<TrialRecord>> {
                    let backend: Arc<dyn Backend> =
                        Arc::new(ReplayBackend::from_path(&fixtures)?);
                    let engine = engine_with_backend(cfg, backend, None, jobs, None)?;
                    Ok(engine.run(Method::MctsOps, &set, &NullLog))
                };
                let first = run(&config)?;
                let second = run(&config)?;
                let mut mismatches = 0;
                for (a, b) in first.iter().zip(&second) {
                    let stable = a.code == b.code
                        && a.reward == b.reward
                        && a.prompt_tokens == b.prompt_tokens
                        && a.completion_tokens == b.completion_tokens;
                    println!(
                        "{}: {}",
                        a.problem_id,
                        if stable { "PASS" } else { "FAIL" }
                    );
                    if !stable {
                        mismatches += 1;
                    }
                }
                if mismatches > 0 {
                    bail!("{mismatches} problems replayed unstably");
                }
            }
        },
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            Ok(EngineConfig::from_toml(&text)?)
        }
        None => Ok(EngineConfig::default()),
    }
}

fn parse_difficulty(s: &str) -> Result<Difficulty> {
    match s {
        "easy" => Ok(Difficulty::Easy),
        "hard" => Ok(Difficulty::Hard),
        other => bail!("unknown difficulty {other:?} (expected easy or hard)"),
    }
}

fn build_backend(config: &EngineConfig) -> Result<Arc<dyn Backend>> {
    Ok(match config.gateway.backend {
        BackendChoice::Synthetic => Arc::new(SyntheticBackend::new(config.gateway.seed)),
        BackendChoice::Replay => {
            let path = config
                .gateway
                .fixtures_path
                .as_ref()
                .context("replay backend needs gateway.fixtures_path")?;
            Arc::new(ReplayBackend::from_path(Path::new(path))?)
        }
        BackendChoice::Http => Arc::new(HttpBackend::new(config.gateway.http_config())?),
    })
}

fn build_engine(
    config: &EngineConfig,
    grader_flag: Option<&str>,
    jobs: usize,
    tree_dir: Option<PathBuf>,
) -> Result<Engine> {
    let backend = build_backend(config)?;
    engine_with_backend(config, backend, grader_flag, jobs, tree_dir)
}

fn engine_with_backend(
    config: &EngineConfig,
    backend: Arc<dyn Backend>,
    grader_flag: Option<&str>,
    jobs: usize,
    tree_dir: Option<PathBuf>,
) -> Result<Engine> {
    let grader = match grader_flag {
        Some("oracle") => GraderKind::Oracle,
        Some("llm") => GraderKind::Llm,
        Some(other) => bail!("unknown grader {other:?} (expected oracle or llm)"),
        None => match config.reward.grader {
            GraderChoice::Oracle => GraderKind::Oracle,
            GraderChoice::Llm => GraderKind::Llm,
        },
    };
    Ok(Engine {
        backend,
        templates: Arc::new(RoleTemplates::builtin()),
        sandbox: Arc::new(Sandbox::new(config.sandbox.clone())),
        limits: Limits {
            timeout_s: config.sandbox.timeout_s,
            capture_bytes: config.sandbox.capture_bytes,
        },
        search: config.search.clone(),
        refine: config.refine.clone(),
        options: PipelineOptions {
            redecompose: config.redecompose,
        },
        grader,
        jobs,
        tree_dir,
    })
}

fn load_problems(path: &Path) -> Result<Vec<ProblemEntry>> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("opening problem set {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ProblemEntry = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.push(entry);
    }
    if out.is_empty() {
        bail!("problem set {} is empty", path.display());
    }
    Ok(out)
}

fn load_or_generate_problems(
    path: Option<&Path>,
    config: &EngineConfig,
) -> Result<Vec<ProblemEntry>> {
    match path {
        Some(p) => load_problems(p),
        None => {
            let difficulty = parse_difficulty(&config.bench.difficulty)?;
            (0..config.bench.count)
                .map(|i| {
                    benchgen::generate_problem(
                        difficulty,
                        config.bench.seed + i as u64 * 101,
                        config.bench.n_users,
                    )
                    .map_err(Into::into)
                })
                .collect()
        }
    }
}

fn load_trials(path: &Path) -> Result<Vec<TrialRecord>> {
    #[derive(serde::Deserialize)]
    #[serde(tag = "kind", rename_all = "snake_case")]
    enum LogLine {
        #[allow(dead_code)]
        Iteration(serde_json::Value),
        Trial(TrialRecord),
    }
    let file = std::fs::File::open(path)
        .with_context(|| format!("opening run log {}", path.display()))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(LogLine::Trial(t)) = serde_json::from_str(&line) {
            out.push(t);
        }
    }
    if out.is_empty() {
        bail!("no trial records in {}", path.display());
    }
    Ok(out)
}

fn print_table(table: &MetricsTable, format: &str) -> Result<()> {
    let format: ReportFormat = format.parse().map_err(anyhow::Error::msg)?;
    std::io::stdout().write_all(&emit_report(table, format))?;
    Ok(())
}

fn print_tree(path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading tree snapshot {}", path.display()))?;
    let snapshot: TreeSnapshot = serde_json::from_str(&text)?;
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); snapshot.nodes.len()];
    let mut roots = Vec::new();
    for node in &snapshot.nodes {
        match node.parent {
            Some(p) => children[p].push(node.id),
            None => roots.push(node.id),
        }
    }
    fn walk(snapshot: &TreeSnapshot, children: &[Vec<usize>], id: usize, depth: usize) {
        let n = &snapshot.nodes[id];
        let mean = if n.visits > 0 {
            n.q / n.visits as f64
        } else {
            0.0
        };
        let prompt: String = n.prompt_text.chars().take(48).collect();
        let label = match n.prompt_score {
            Some(s) => format!("score {s}"),
            None => "root".to_string(),
        };
        println!(
            "{:indent$}[{id}] {label}  visits {}  mean {:.2}  {prompt}",
            "",
            n.visits,
            mean,
            indent = depth * 2
        );
        for &c in &children[id] {
            walk(snapshot, children, c, depth + 1);
        }
    }
    for root in roots {
        walk(&snapshot, &children, root, 0);
    }
    Ok(())
}
