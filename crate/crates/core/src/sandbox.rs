//! Isolated execution of candidate scripts.
//!
//! Each execution writes the script into a fresh temporary workspace, spawns
//! the configured interpreter in its own process group with a scrubbed
//! environment, enforces a wall-clock timeout with a process-tree kill, and
//! captures bounded stdout/stderr. Script failure is data, not an error: the
//! result carries a status classification instead.

use crate::sync::Semaphore;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionStatus {
    Ok,
    NonzeroExit,
    Timeout,
    SpawnError,
}

/// Captured outcome of one script run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub status: ExecutionStatus,
    pub stdout: String,
    pub stderr: String,
    pub stdout_truncated: bool,
    pub stderr_truncated: bool,
    pub wall_time: f64,
    pub exit_code: Option<i32>,
}

impl ExecutionResult {
    pub fn ok(&self) -> bool {
        self.status == ExecutionStatus::Ok
    }

    fn spawn_error(message: String) -> Self {
        ExecutionResult {
            status: ExecutionStatus::SpawnError,
            stdout: String::new(),
            stderr: message,
            stdout_truncated: false,
            stderr_truncated: false,
            wall_time: 0.0,
            exit_code: None,
        }
    }
}

/// Resource limits for one execution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Limits {
    pub timeout_s: f64,
    pub capture_bytes: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            timeout_s: 30.0,
            capture_bytes: 64 * 1024,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxConfig {
    /// Interpreter invoked on the script file; may carry arguments.
    pub interpreter_cmd: String,
    pub timeout_s: f64,
    pub capture_bytes: usize,
    /// Cap on concurrently running child processes.
    pub max_concurrent: usize,
    /// Memoize results by script text. Only sound when executed scripts are
    /// deterministic, as the benchmark scripts are; off by default.
    pub cache_executions: bool,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            interpreter_cmd: "python3".to_string(),
            timeout_s: 30.0,
            capture_bytes: 64 * 1024,
            max_concurrent: 8,
            cache_executions: false,
        }
    }
}

type CacheKey = (String, u64, usize);

/// Shared executor; clone-free, wrap in `Arc` to share across threads.
pub struct Sandbox {
    config: SandboxConfig,
    gate: Semaphore,
    cache: std::sync::Mutex<std::collections::HashMap<CacheKey, ExecutionResult>>,
    launches: std::sync::atomic::AtomicU64,
}

/// Placeholder substituted for the per-execution workspace path in captured
/// streams, so interpreter tracebacks are byte-stable across runs.
pub const WORKSPACE_PLACEHOLDER: &str = "<sandbox>";

const SCRIPT_NAME: &str = "script.py";

impl Sandbox {
    pub fn new(config: SandboxConfig) -> Self {
        let gate = Semaphore::new(config.max_concurrent);
        Self {
            config,
            gate,
            cache: std::sync::Mutex::new(std::collections::HashMap::new()),
            launches: std::sync::atomic::AtomicU64::new(0),
        }
    }

    /// Number of interpreter processes actually launched (cache misses).
    pub fn launches(&self) -> u64 {
        self.launches.load(std::sync::atomic::Ordering::Relaxed)
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    pub fn limits(&self) -> Limits {
        Limits {
            timeout_s: self.config.timeout_s,
            capture_bytes: self.config.capture_bytes,
        }
    }

    /// Runs `code` under the configured interpreter. Never fails for script
    /// errors; `SpawnError` covers the interpreter itself being unstartable.
    pub fn execute(&self, code: &str, limits: &Limits) -> ExecutionResult {
        let cache_key = self.config.cache_executions.then(|| {
            (
                code.to_string(),
                (limits.timeout_s * 1000.0) as u64,
                limits.capture_bytes,
            )
        });
        if let Some(key) = &cache_key {
            if let Some(hit) = self.cache.lock().unwrap().get(key) {
                return hit.clone();
            }
        }
        let result = self.execute_uncached(code, limits);
        if let Some(key) = cache_key {
            let mut cache = self.cache.lock().unwrap();
            if cache.len() >= 8192 {
                cache.clear();
            }
            cache.insert(key, result.clone());
        }
        result
    }

    fn execute_uncached(&self, code: &str, limits: &Limits) -> ExecutionResult {
        let _permit = self.gate.acquire();
        self.launches.fetch_add(1, std::sync::atomic::Ordering::Relaxed);

        let workspace = match tempfile::Builder::new().prefix("run-").tempdir() {
            Ok(d) => d,
            Err(e) => return ExecutionResult::spawn_error(format!("workspace: {e}")),
        };
        let script_path = workspace.path().join(SCRIPT_NAME);
        if let Err(e) = std::fs::write(&script_path, code) {
            return ExecutionResult::spawn_error(format!("write script: {e}"));
        }

        // interpreter_cmd may carry arguments, e.g. "python3 -S".
        let mut parts = self.config.interpreter_cmd.split_whitespace();
        let program = parts.next().unwrap_or("python3").to_string();
        let mut cmd = Command::new(&program);
        cmd.args(parts)
            .arg(&script_path)
            .current_dir(workspace.path())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .env_clear();
        for key in ["PATH", "LANG", "LC_ALL"] {
            if let Ok(value) = std::env::var(key) {
                cmd.env(key, value);
            }
        }
        if std::env::var_os("PATH").is_none() {
            cmd.env("PATH", "/usr/local/bin:/usr/bin:/bin");
        }
        // Own process group so a timeout can kill the whole tree.
        std::os::unix::process::CommandExt::process_group(&mut cmd, 0);

        let started = Instant::now();
        let mut child = match cmd.spawn() {
            Ok(c) => c,
            Err(e) => {
                return ExecutionResult::spawn_error(format!(
                    "spawn {}: {e}",
                    self.config.interpreter_cmd
                ))
            }
        };
        let pid = child.id() as i32;

        let cap = limits.capture_bytes;
        let stdout_handle = child.stdout.take().map(|s| spawn_reader(s, cap));
        let stderr_handle = child.stderr.take().map(|s| spawn_reader(s, cap));

        let timeout = Duration::from_secs_f64(limits.timeout_s.max(0.001));
        let mut timed_out = false;
        // Short scripts dominate, so poll tightly at first and back off.
        let mut backoff_us = 200u64;
        let exit_status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) => {
                    if started.elapsed() >= timeout {
                        timed_out = true;
                        kill_process_group(pid);
                        break child.wait().ok();
                    }
                    std::thread::sleep(Duration::from_micros(backoff_us));
                    backoff_us = (backoff_us * 2).min(5000);
                }
                Err(_) => break None,
            }
        };
        let wall_time = started.elapsed().as_secs_f64();

        let (stdout, stdout_truncated) = join_reader(stdout_handle);
        let (stderr, stderr_truncated) = join_reader(stderr_handle);
        let workspace_str = workspace.path().to_string_lossy().to_string();
        let stdout = stdout.replace(&workspace_str, WORKSPACE_PLACEHOLDER);
        let stderr = stderr.replace(&workspace_str, WORKSPACE_PLACEHOLDER);

        let (status, exit_code) = if timed_out {
            (ExecutionStatus::Timeout, None)
        } else {
            match exit_status.and_then(|s| s.code()) {
                Some(0) => (ExecutionStatus::Ok, Some(0)),
                Some(c) => (ExecutionStatus::NonzeroExit, Some(c)),
                // Killed by a signal outside our timeout path.
                None => (ExecutionStatus::NonzeroExit, None),
            }
        };

        ExecutionResult {
            status,
            stdout,
            stderr,
            stdout_truncated,
            stderr_truncated,
            wall_time,
            exit_code,
        }
    }
}

fn kill_process_group(pid: i32) {
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
}

type ReaderHandle = std::thread::JoinHandle<(Vec<u8>, bool)>;

/// Reads a stream to completion, keeping at most `cap` bytes. The tail is
/// drained and discarded so the child never blocks on a full pipe.
fn spawn_reader<R: Read + Send + 'static>(mut stream: R, cap: usize) -> ReaderHandle {
    std::thread::spawn(move || {
        let mut kept = Vec::with_capacity(1024.min(cap));
        let mut truncated = false;
        let mut buf = [0u8; 8192];
        loop {
            match stream.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => {
                    if kept.len() < cap {
                        let take = n.min(cap - kept.len());
                        kept.extend_from_slice(&buf[..take]);
                        if take < n {
                            truncated = true;
                        }
                    } else {
                        truncated = true;
                    }
                }
                Err(_) => break,
            }
        }
        (kept, truncated)
    })
}

fn join_reader(handle: Option<ReaderHandle>) -> (String, bool) {
    match handle.and_then(|h| h.join().ok()) {
        Some((bytes, truncated)) => (String::from_utf8_lossy(&bytes).into_owned(), truncated),
        None => (String::new(), false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn sandbox() -> Sandbox {
        Sandbox::new(SandboxConfig::default())
    }

    fn limits(timeout_s: f64) -> Limits {
        Limits {
            timeout_s,
            capture_bytes: 64 * 1024,
        }
    }

    #[test]
    fn clean_script_is_ok() {
        let r = sandbox().execute("print('total=0.0')", &limits(10.0));
        assert_eq!(r.status, ExecutionStatus::Ok);
        assert!(r.stdout.contains("total=0.0"));
        assert_eq!(r.exit_code, Some(0));
    }

    #[test]
    fn syntax_error_is_nonzero_exit_with_stderr() {
        let r = sandbox().execute("def broken(:\n", &limits(10.0));
        assert_eq!(r.status, ExecutionStatus::NonzeroExit);
        assert!(!r.stderr.is_empty());
    }

    #[test]
    fn infinite_loop_times_out() {
        let r = sandbox().execute("while True:\n    pass\n", &limits(1.0));
        assert_eq!(r.status, ExecutionStatus::Timeout);
        assert!(r.wall_time >= 1.0);
        assert_eq!(r.exit_code, None);
    }

    #[test]
    fn interpreter_command_may_carry_arguments() {
        let sb = Sandbox::new(SandboxConfig {
            interpreter_cmd: "python3 -S".to_string(),
            ..SandboxConfig::default()
        });
        let r = sb.execute("print('lean')", &limits(10.0));
        assert_eq!(r.status, ExecutionStatus::Ok);
        assert!(r.stdout.contains("lean"));
    }

    #[test]
    fn missing_interpreter_is_spawn_error() {
        let sb = Sandbox::new(SandboxConfig {
            interpreter_cmd: "definitely-not-a-real-interpreter".to_string(),
            ..SandboxConfig::default()
        });
        let r = sb.execute("print(1)", &limits(5.0));
        assert_eq!(r.status, ExecutionStatus::SpawnError);
    }

    #[test]
    fn capture_is_bounded_and_flagged() {
        let r = sandbox().execute(
            "import sys\nsys.stdout.write('x' * 100000)\n",
            &Limits {
                timeout_s: 10.0,
                capture_bytes: 1024,
            },
        );
        assert_eq!(r.status, ExecutionStatus::Ok);
        assert_eq!(r.stdout.len(), 1024);
        assert!(r.stdout_truncated);
        assert!(!r.stderr_truncated);
    }

    #[test]
    fn workspace_path_is_masked_in_streams() {
        let r = sandbox().execute("raise ValueError('boom')", &limits(10.0));
        assert_eq!(r.status, ExecutionStatus::NonzeroExit);
        assert!(r.stderr.contains(WORKSPACE_PLACEHOLDER), "{}", r.stderr);
        assert!(!r.stderr.contains("/tmp/run-"), "{}", r.stderr);
    }

    #[test]
    fn parallel_executions_do_not_cross_contaminate() {
        let sb = Arc::new(sandbox());
        let handles: Vec<_> = (0..16)
            .map(|i| {
                let sb = Arc::clone(&sb);
                std::thread::spawn(move || {
                    let code = format!("print('sentinel-{i:02}-done')");
                    (i, sb.execute(&code, &limits(10.0)))
                })
            })
            .collect();
        for h in handles {
            let (i, r) = h.join().unwrap();
            assert_eq!(r.status, ExecutionStatus::Ok);
            assert!(r.stdout.contains(&format!("sentinel-{i:02}-done")));
            for j in 0..16 {
                if j != i {
                    assert!(!r.stdout.contains(&format!("sentinel-{j:02}-done")));
                }
            }
        }
    }

    #[test]
    fn timeout_kills_the_whole_process_tree() {
        let code = r#"
import subprocess, sys
child = subprocess.Popen(["sleep", "60"])
print(f"grandchild={child.pid}", flush=True)
child.wait()
"#;
        let r = sandbox().execute(code, &limits(1.0));
        assert_eq!(r.status, ExecutionStatus::Timeout);
        let pid: i32 = r
            .stdout
            .lines()
            .find_map(|l| l.strip_prefix("grandchild="))
            .expect("grandchild pid printed before timeout")
            .trim()
            .parse()
            .unwrap();
        let deadline = Instant::now() + Duration::from_secs(5);
        loop {
            let alive = unsafe { libc::kill(pid, 0) } == 0;
            if !alive {
                break;
            }
            assert!(Instant::now() < deadline, "grandchild {pid} still alive");
            std::thread::sleep(Duration::from_millis(50));
        }
    }

    #[test]
    fn cached_mode_reuses_results_for_identical_scripts() {
        let sb = Sandbox::new(SandboxConfig {
            cache_executions: true,
            ..SandboxConfig::default()
        });
        let code = "import time\nprint(f'now={time.monotonic_ns()}')";
        let a = sb.execute(code, &limits(10.0));
        let b = sb.execute(code, &limits(10.0));
        assert_eq!(a, b, "cached mode returns the memoized result");
        // a different timeout is a different key
        let c = sb.execute(code, &limits(9.0));
        assert_eq!(c.status, ExecutionStatus::Ok);
    }

    #[test]
    fn classification_is_stable_across_runs() {
        let sb = sandbox();
        let a = sb.execute("print('k')", &limits(10.0));
        let b = sb.execute("print('k')", &limits(10.0));
        assert_eq!(a.status, b.status);
        assert_eq!(a.stdout, b.stdout);
    }
}
