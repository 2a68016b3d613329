//! Stitching and sandboxed test execution.
//!
//! Each evaluation copies the repository into a fresh temporary directory,
//! overwrites the masked file with the stitched text and runs the test
//! command through `sh -c` in its own process group with a scrubbed
//! environment. On timeout the whole group is killed.

use std::fs;
use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::RepoSnapshot;
use crate::mask::MaskTask;

pub const DEFAULT_TIMEOUT_SECONDS: f64 = 120.0;
pub const DEFAULT_MAX_OUTPUT_BYTES: usize = 64 * 1024;

pub const DEFAULT_ENV_ALLOWLIST: &[&str] = &[
    "PATH",
    "HOME",
    "USER",
    "LANG",
    "LC_ALL",
    "LC_CTYPE",
    "TZ",
    "TMPDIR",
    "PYTHONPATH",
    "PYTHONHASHSEED",
    "VIRTUAL_ENV",
    "JAVA_HOME",
    "NODE_PATH",
    "GOPATH",
    "GOROOT",
    "CARGO_HOME",
    "RUSTUP_HOME",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkdirStrategy {
    #[default]
    Copy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxSpec {
    pub timeout_seconds: f64,
    /// Overrides the snapshot's own test command when set.
    pub test_command: Option<String>,
    pub env_allowlist: Vec<String>,
    pub workdir_strategy: WorkdirStrategy,
    pub max_output_capture_bytes: usize,
    pub keep_workdirs: bool,
}

impl Default for SandboxSpec {
    fn default() -> Self {
        SandboxSpec {
            timeout_seconds: DEFAULT_TIMEOUT_SECONDS,
            test_command: None,
            env_allowlist: DEFAULT_ENV_ALLOWLIST.iter().map(|s| s.to_string()).collect(),
            workdir_strategy: WorkdirStrategy::Copy,
            max_output_capture_bytes: DEFAULT_MAX_OUTPUT_BYTES,
            keep_workdirs: false,
        }
    }
}

impl SandboxSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout_seconds.is_finite() && self.timeout_seconds > 0.0) {
            return Err(format!(
                "timeout_seconds must be a positive number, got {}",
                self.timeout_seconds
            ));
        }
        Ok(())
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_seconds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Pass,
    Fail,
    Timeout,
    GenerationError,
    HarnessError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecOutcome {
    pub task_id: String,
    pub status: ExecStatus,
    pub exit_code: Option<i32>,
    pub duration_seconds: f64,
    pub stdout_tail: String,
    pub stderr_tail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workdir: Option<PathBuf>,
}

impl ExecOutcome {
    fn without_run(task_id: &str, status: ExecStatus, error: String) -> Self {
        ExecOutcome {
            task_id: task_id.to_string(),
            status,
            exit_code: None,
            duration_seconds: 0.0,
            stdout_tail: String::new(),
            stderr_tail: String::new(),
            error: Some(error),
            workdir: None,
        }
    }

    pub fn harness_error(task_id: &str, error: impl Into<String>) -> Self {
        Self::without_run(task_id, ExecStatus::HarnessError, error.into())
    }

    pub fn generation_error(task_id: &str, error: impl Into<String>) -> Self {
        Self::without_run(task_id, ExecStatus::GenerationError, error.into())
    }
}

/// `prefix ++ generated ++ suffix`, byte for byte.
pub fn stitch(task: &MaskTask, generated_middle: &str) -> String {
    let mut out = String::with_capacity(task.prefix.len() + generated_middle.len() + task.suffix.len());
    out.push_str(&task.prefix);
    out.push_str(generated_middle);
    out.push_str(&task.suffix);
    out
}

fn copy_tree(src: &Path, dst: &Path) -> std::io::Result<()> {
    for entry in walkdir::WalkDir::new(src)
        .follow_links(false)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || e.file_name() != ".git")
    {
        let entry = entry.map_err(std::io::Error::other)?;
        let rel = entry.path().strip_prefix(src).expect("walk stays under root");
        let target = dst.join(rel);
        let ft = entry.file_type();
        if ft.is_dir() {
            fs::create_dir_all(&target)?;
        } else if ft.is_symlink() {
            std::os::unix::fs::symlink(fs::read_link(entry.path())?, &target)?;
        } else {
            fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

fn materialize(snapshot: &RepoSnapshot, rel_path: &str, full_file: &str) -> std::io::Result<tempfile::TempDir> {
    let dir = tempfile::Builder::new().prefix("repofim-exec-").tempdir()?;
    copy_tree(&snapshot.root, dir.path())?;
    let target = dir.path().join(rel_path);
    if let Some(parent) = target.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&target, full_file)?;
    Ok(dir)
}

fn spawn_tail_reader<R: Read + Send + 'static>(mut stream: R, limit: usize) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut tail: Vec<u8> = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            match stream.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    tail.extend_from_slice(&buf[..n]);
                    if tail.len() > 2 * limit.max(1) {
                        tail.drain(..tail.len() - limit);
                    }
                }
            }
        }
        if tail.len() > limit {
            tail.drain(..tail.len() - limit);
        }
        String::from_utf8_lossy(&tail).into_owned()
    })
}

fn kill_group(child: &Child) {
    // SAFETY: killpg only sends a signal; the child leads its own group.
    unsafe {
        libc::killpg(child.id() as libc::pid_t, libc::SIGKILL);
    }
}

/// Run the repository's tests against `full_file` written over the masked
/// file in a private copy of the repository.
pub fn run_tests(snapshot: &RepoSnapshot, task: &MaskTask, full_file: &str, spec: &SandboxSpec) -> ExecOutcome {
    let id = task.task_id.as_str();
    if let Err(e) = spec.validate() {
        return ExecOutcome::harness_error(id, e);
    }
    if snapshot.file(&task.file_path).is_none() {
        return ExecOutcome::harness_error(id, format!("{} is not part of the snapshot", task.file_path));
    }
    let command = spec.test_command.as_deref().unwrap_or(&snapshot.test_command);
    if command.trim().is_empty() {
        return ExecOutcome::harness_error(id, "empty test command");
    }
    let workdir = match materialize(snapshot, &task.file_path, full_file) {
        Ok(d) => d,
        Err(e) => return ExecOutcome::harness_error(id, format!("cannot materialize workdir: {e}")),
    };

    let mut cmd = Command::new("sh");
    cmd.arg("-c")
        .arg(command)
        .current_dir(workdir.path())
        .env_clear()
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    for name in &spec.env_allowlist {
        if let Some(v) = std::env::var_os(name) {
            cmd.env(name, v);
        }
    }

    let start = Instant::now();
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) => return ExecOutcome::harness_error(id, format!("cannot spawn test command: {e}")),
    };
    let out = spawn_tail_reader(child.stdout.take().expect("piped"), spec.max_output_capture_bytes);
    let err = spawn_tail_reader(child.stderr.take().expect("piped"), spec.max_output_capture_bytes);

    let timeout = spec.timeout();
    let mut timed_out = false;
    let exit = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Ok(status),
            Ok(None) => {}
            Err(e) => break Err(e),
        }
        let elapsed = start.elapsed();
        if elapsed >= timeout {
            kill_group(&child);
            timed_out = true;
            break child.wait();
        }
        thread::sleep((timeout - elapsed).min(Duration::from_millis(20)));
    };
    let duration = start.elapsed().as_secs_f64();
    // Reap anything the test command left running in its group.
    kill_group(&child);
    let stdout_tail = out.join().unwrap_or_default();
    let stderr_tail = err.join().unwrap_or_default();

    let kept = if spec.keep_workdirs {
        Some(workdir.keep())
    } else {
        drop(workdir);
        None
    };

    let (status, exit_code, error) = match exit {
        Err(e) => (ExecStatus::HarnessError, None, Some(format!("wait failed: {e}"))),
        Ok(_) if timed_out => (ExecStatus::Timeout, None, None),
        Ok(s) => match s.code() {
            Some(0) => (ExecStatus::Pass, Some(0), None),
            code => (ExecStatus::Fail, code, None),
        },
    };
    ExecOutcome {
        task_id: id.to_string(),
        status,
        exit_code,
        duration_seconds: duration,
        stdout_tail,
        stderr_tail,
        error,
        workdir: kept,
    }
}

/// Half the available cores, at least one.
pub fn default_workers() -> usize {
    thread::available_parallelism()
        .map(|n| (n.get() / 2).max(1))
        .unwrap_or(1)
}

/// One evaluation: a task and either the generated middle or the reason
/// generation failed.
#[derive(Debug, Clone)]
pub struct ExecJob<'a> {
    pub snapshot: &'a RepoSnapshot,
    pub task: &'a MaskTask,
    pub generated: Result<String, String>,
}

/// Run jobs on a pool of `workers` threads. Outcomes come back sorted by
/// task id regardless of completion order.
pub fn run_batch(jobs: &[ExecJob<'_>], spec: &SandboxSpec, workers: usize) -> Vec<ExecOutcome> {
    let run = || {
        jobs.par_iter()
            .map(|job| match &job.generated {
                Ok(middle) => run_tests(job.snapshot, job.task, &stitch(job.task, middle), spec),
                Err(e) => ExecOutcome::generation_error(&job.task.task_id, e.clone()),
            })
            .collect::<Vec<_>>()
    };
    let mut outcomes = match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(pool) => pool.install(run),
        Err(e) => {
            log::warn!("cannot build worker pool ({e}); using the global pool");
            run()
        }
    };
    outcomes.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    outcomes
}
