//! External tool orchestration: synthesis check, diagram rendering,
//! candidate compilation and testbench simulation.
//!
//! Commands are argv templates (no shell) with `{in}`, `{out}` and `{tb}`
//! slots. A [`CommandRunner`] executes them, either as real subprocesses
//! ([`ProcessRunner`]) or through a scripted stand-in ([`FnRunner`]). Every
//! invocation runs in a private scratch directory under the configured
//! workdir that is removed when its result is dropped.

use std::fs;
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tempfile::TempDir;

use crate::verilog::{lex, TokenKind};

/// Environment variable overriding `timeout_s`.
pub const TIMEOUT_ENV: &str = "MIRAGE_TOOL_TIMEOUT";
/// Exit code reported for invocations killed by the timeout.
pub const TIMEOUT_EXIT_CODE: i32 = -1;
pub const DEFAULT_TIMEOUT_S: f64 = 60.0;

#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error("tool `{0}` not found")]
    MissingTool(String),
    #[error("input file {0} does not exist")]
    MissingInput(PathBuf),
    #[error("invalid toolchain config: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// One or more argv templates run in sequence; a step's non-zero exit stops
/// the sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "CommandSpecRepr", into = "CommandSpecRepr")]
pub struct CommandSpec {
    pub steps: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CommandSpecRepr {
    Single(Vec<String>),
    Steps(Vec<Vec<String>>),
}

impl From<CommandSpecRepr> for CommandSpec {
    fn from(r: CommandSpecRepr) -> Self {
        match r {
            CommandSpecRepr::Single(argv) => CommandSpec { steps: vec![argv] },
            CommandSpecRepr::Steps(steps) => CommandSpec { steps },
        }
    }
}

impl From<CommandSpec> for CommandSpecRepr {
    fn from(c: CommandSpec) -> Self {
        if c.steps.len() == 1 {
            CommandSpecRepr::Single(c.steps.into_iter().next().expect("one step"))
        } else {
            CommandSpecRepr::Steps(c.steps)
        }
    }
}

impl CommandSpec {
    pub fn single<S: Into<String>>(argv: impl IntoIterator<Item = S>) -> Self {
        Self {
            steps: vec![argv.into_iter().map(Into::into).collect()],
        }
    }

    pub fn steps<S: Into<String>>(steps: impl IntoIterator<Item = Vec<S>>) -> Self {
        Self {
            steps: steps
                .into_iter()
                .map(|s| s.into_iter().map(Into::into).collect())
                .collect(),
        }
    }

    fn mentions(&self, slot: &str) -> bool {
        self.steps.iter().flatten().any(|a| a.contains(slot))
    }

    fn validate(&self, name: &str, slots: &[&str]) -> Result<(), ToolError> {
        if self.steps.is_empty() || self.steps.iter().any(|s| s.is_empty() || s[0].is_empty()) {
            return Err(ToolError::Config(format!("{name}: every step needs a program")));
        }
        for slot in slots {
            if !self.mentions(slot) {
                return Err(ToolError::Config(format!("{name}: template must contain {slot}")));
            }
        }
        Ok(())
    }

    fn instantiate(&self, slots: &Slots<'_>) -> Vec<Vec<String>> {
        self.steps
            .iter()
            .map(|step| step.iter().map(|a| slots.substitute(a)).collect())
            .collect()
    }
}

struct Slots<'a> {
    input: &'a Path,
    out: &'a Path,
    tb: Option<&'a Path>,
}

impl Slots<'_> {
    fn substitute(&self, arg: &str) -> String {
        let mut s = arg
            .replace("{in}", &self.input.to_string_lossy())
            .replace("{out}", &self.out.to_string_lossy());
        if let Some(tb) = self.tb {
            s = s.replace("{tb}", &tb.to_string_lossy());
        }
        s
    }
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_S
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolchainConfig {
    pub synth_cmd: CommandSpec,
    pub render_cmd: CommandSpec,
    pub compile_cmd: CommandSpec,
    pub sim_cmd: CommandSpec,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    pub workdir: PathBuf,
}

impl ToolchainConfig {
    /// Yosys + netlistsvg + Icarus Verilog.
    pub fn icarus(workdir: impl Into<PathBuf>) -> Self {
        Self {
            synth_cmd: CommandSpec::single(["yosys", "-q", "-p", "read_verilog {in}; synth -auto-top"]),
            render_cmd: CommandSpec::steps([
                vec!["yosys", "-q", "-p", "read_verilog {in}; prep -auto-top; write_json {out}.json"],
                vec!["netlistsvg", "{out}.json", "-o", "{out}"],
            ]),
            compile_cmd: CommandSpec::single(["iverilog", "-o", "{out}", "{in}"]),
            sim_cmd: CommandSpec::steps([vec!["iverilog", "-o", "{out}", "{in}", "{tb}"], vec!["vvp", "-n", "{out}"]]),
            timeout_s: DEFAULT_TIMEOUT_S,
            workdir: workdir.into(),
        }
    }

    pub fn validate(&self) -> Result<(), ToolError> {
        self.synth_cmd.validate("synth_cmd", &["{in}"])?;
        self.render_cmd.validate("render_cmd", &["{in}", "{out}"])?;
        self.compile_cmd.validate("compile_cmd", &["{in}"])?;
        self.sim_cmd.validate("sim_cmd", &["{in}", "{tb}"])?;
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err(ToolError::Config(format!("timeout_s must be > 0, got {}", self.timeout_s)));
        }
        Ok(())
    }

    /// Parse TOML and apply the environment timeout override.
    pub fn from_toml_str(text: &str) -> Result<Self, ToolError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| ToolError::Config(e.to_string()))?;
        cfg.apply_env_override(std::env::var(TIMEOUT_ENV).ok().as_deref())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ToolError> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        if cfg.workdir.is_relative() {
            if let Some(parent) = path.parent() {
                cfg.workdir = parent.join(&cfg.workdir);
            }
        }
        Ok(cfg)
    }

    pub fn apply_env_override(&mut self, value: Option<&str>) -> Result<(), ToolError> {
        if let Some(v) = value {
            self.timeout_s = v
                .trim()
                .parse()
                .map_err(|_| ToolError::Config(format!("{TIMEOUT_ENV}={v} is not a number")))?;
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunResult {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
    pub duration_ms: u64,
    pub timed_out: bool,
}

impl RunResult {
    pub fn success(&self) -> bool {
        self.exit_code == 0 && !self.timed_out
    }

    fn timed_out(stdout: String, stderr: String, duration: Duration) -> Self {
        Self {
            exit_code: TIMEOUT_EXIT_CODE,
            stdout,
            stderr,
            duration_ms: duration.as_millis() as u64,
            timed_out: true,
        }
    }
}

pub trait CommandRunner: Send + Sync {
    fn run(&self, argv: &[String], cwd: &Path, timeout: Duration) -> Result<RunResult, ToolError>;
}

/// Runs commands as subprocesses. Output is captured through anonymous
/// temp files so a killed process cannot leave a reader blocked.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProcessRunner;

impl CommandRunner for ProcessRunner {
    fn run(&self, argv: &[String], cwd: &Path, timeout: Duration) -> Result<RunResult, ToolError> {
        let (program, args) = argv.split_first().ok_or_else(|| ToolError::Config("empty argv".into()))?;
        let mut out = tempfile::tempfile_in(cwd)?;
        let mut err = tempfile::tempfile_in(cwd)?;
        let started = Instant::now();
        let mut child = Command::new(program)
            .args(args)
            .current_dir(cwd)
            .stdin(Stdio::null())
            .stdout(out.try_clone()?)
            .stderr(err.try_clone()?)
            .spawn()
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => ToolError::MissingTool(program.clone()),
                _ => ToolError::Io(e),
            })?;

        let mut backoff = Duration::from_millis(1);
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break Some(status);
            }
            if started.elapsed() >= timeout {
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            std::thread::sleep(backoff.min(timeout.saturating_sub(started.elapsed())));
            backoff = (backoff * 2).min(Duration::from_millis(20));
        };
        let elapsed = started.elapsed();

        let read_all = |f: &mut fs::File| -> Result<String, ToolError> {
            let mut buf = Vec::new();
            f.seek(SeekFrom::Start(0))?;
            f.read_to_end(&mut buf)?;
            Ok(String::from_utf8_lossy(&buf).into_owned())
        };
        let stdout = read_all(&mut out)?;
        let stderr = read_all(&mut err)?;
        Ok(match status {
            Some(status) => RunResult {
                exit_code: status.code().unwrap_or(TIMEOUT_EXIT_CODE - 1),
                stdout,
                stderr,
                duration_ms: elapsed.as_millis() as u64,
                timed_out: false,
            },
            None => RunResult::timed_out(stdout, stderr, elapsed),
        })
    }
}

/// Scripted reply for [`FnRunner`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StubReply {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
    /// Simulated run time; replies slower than the timeout become timeouts.
    pub delay: Duration,
}

impl StubReply {
    pub fn exit(code: i32) -> Self {
        Self {
            exit_code: code,
            ..Self::default()
        }
    }

    pub fn with_stdout(mut self, s: impl Into<String>) -> Self {
        self.stdout = s.into();
        self
    }

    pub fn with_delay(mut self, d: Duration) -> Self {
        self.delay = d;
        self
    }
}

/// Runner backed by a closure over the instantiated argv. The closure may
/// read `{in}` files or write `{out}` files itself.
pub struct FnRunner<F>(pub F);

impl<F> CommandRunner for FnRunner<F>
where
    F: Fn(&[String], &Path) -> StubReply + Send + Sync,
{
    fn run(&self, argv: &[String], cwd: &Path, timeout: Duration) -> Result<RunResult, ToolError> {
        let reply = (self.0)(argv, cwd);
        if reply.delay > timeout {
            std::thread::sleep(timeout);
            return Ok(RunResult::timed_out(reply.stdout, reply.stderr, timeout));
        }
        if !reply.delay.is_zero() {
            std::thread::sleep(reply.delay);
        }
        Ok(RunResult {
            exit_code: reply.exit_code,
            stdout: reply.stdout,
            stderr: reply.stderr,
            duration_ms: reply.delay.as_millis() as u64,
            timed_out: false,
        })
    }
}

/// Testbench pass criterion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuccessRule {
    pub require_zero_exit: bool,
    /// Case-insensitive substrings that mark a failure.
    pub failure_patterns: Vec<String>,
    /// Substring that must appear, if set.
    pub success_pattern: Option<String>,
}

impl Default for SuccessRule {
    fn default() -> Self {
        Self {
            require_zero_exit: true,
            failure_patterns: vec!["fail".into(), "error".into(), "mismatch".into()],
            success_pattern: None,
        }
    }
}

impl SuccessRule {
    pub fn validate(&self) -> Result<(), ToolError> {
        let empty = self.failure_patterns.iter().any(|p| p.is_empty())
            || self.success_pattern.as_deref().is_some_and(str::is_empty);
        if empty {
            return Err(ToolError::Config("success rule patterns must be non-empty".into()));
        }
        Ok(())
    }

    pub fn evaluate(&self, run: &RunResult) -> bool {
        if run.timed_out || (self.require_zero_exit && run.exit_code != 0) {
            return false;
        }
        let log = format!("{}\n{}", run.stdout, run.stderr).to_lowercase();
        if self.failure_patterns.iter().any(|p| log.contains(&p.to_lowercase())) {
            return false;
        }
        match &self.success_pattern {
            Some(p) => log.contains(&p.to_lowercase()),
            None => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepVerdict {
    pub pass: bool,
    pub result: RunResult,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RenderFailure {
    Tool,
    Missing,
    EmptyArtifact,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RenderOutcome {
    Rendered { path: PathBuf, result: RunResult },
    /// The sample should be discarded.
    Failed { reason: RenderFailure, result: RunResult },
}

/// An assembled candidate file living in its own scratch directory; the
/// directory is removed on drop.
#[derive(Debug)]
pub struct Candidate {
    dir: TempDir,
    path: PathBuf,
}

impl Candidate {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn dir(&self) -> &Path {
        self.dir.path()
    }
}

#[derive(Debug)]
pub struct CompileOutcome {
    pub pass: bool,
    pub result: RunResult,
    pub candidate: Candidate,
}

fn starts_with_module(text: &str) -> bool {
    match lex(text) {
        Ok(tokens) => tokens
            .iter()
            .find(|t| !t.kind.is_trivia() && t.kind != TokenKind::Directive)
            .is_some_and(|t| t.is_keyword("module")),
        Err(_) => text.trim_start().starts_with("module"),
    }
}

fn ends_with_endmodule(text: &str) -> bool {
    match lex(text) {
        Ok(tokens) => tokens
            .iter()
            .rev()
            .find(|t| !t.kind.is_trivia())
            .is_some_and(|t| t.is_keyword("endmodule")),
        Err(_) => text.trim_end().ends_with("endmodule"),
    }
}

/// Candidate source: header, body, and a closing `endmodule` when the body
/// lacks one. A body that already opens with `module` is a complete module
/// and is not prefixed with the header. The result ends with a newline.
pub fn assemble_candidate(header: &str, body: &str) -> String {
    let mut src = String::with_capacity(header.len() + body.len() + 16);
    if !starts_with_module(body) {
        src.push_str(header);
        src.push('\n');
    }
    src.push_str(body);
    if !ends_with_endmodule(body) {
        if !src.ends_with('\n') {
            src.push('\n');
        }
        src.push_str("endmodule");
    }
    if !src.ends_with('\n') {
        src.push('\n');
    }
    src
}

#[derive(Clone)]
pub struct Toolchain {
    cfg: ToolchainConfig,
    runner: Arc<dyn CommandRunner>,
}

impl std::fmt::Debug for Toolchain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Toolchain").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl Toolchain {
    pub fn new(cfg: ToolchainConfig, runner: Arc<dyn CommandRunner>) -> Result<Self, ToolError> {
        cfg.validate()?;
        Ok(Self { cfg, runner })
    }

    pub fn with_processes(cfg: ToolchainConfig) -> Result<Self, ToolError> {
        Self::new(cfg, Arc::new(ProcessRunner))
    }

    pub fn config(&self) -> &ToolchainConfig {
        &self.cfg
    }

    fn scratch(&self) -> Result<TempDir, ToolError> {
        fs::create_dir_all(&self.cfg.workdir)?;
        Ok(tempfile::Builder::new().prefix("job-").tempdir_in(&self.cfg.workdir)?)
    }

    /// Run every step of `spec`, stopping at the first failure, within one
    /// shared timeout budget.
    fn run_spec(&self, spec: &CommandSpec, slots: &Slots<'_>, cwd: &Path) -> Result<RunResult, ToolError> {
        let budget = self.cfg.timeout();
        let started = Instant::now();
        let mut stdout = String::new();
        let mut stderr = String::new();
        let mut last = None;
        for argv in spec.instantiate(slots) {
            let remaining = budget.saturating_sub(started.elapsed());
            let r = self.runner.run(&argv, cwd, remaining)?;
            stdout.push_str(&r.stdout);
            stderr.push_str(&r.stderr);
            let stop = !r.success();
            last = Some(r);
            if stop {
                break;
            }
        }
        let mut result = last.expect("validated spec has at least one step");
        result.stdout = stdout;
        result.stderr = stderr;
        if !result.timed_out {
            result.duration_ms = started.elapsed().as_millis() as u64;
        }
        Ok(result)
    }

    fn require_file(path: &Path) -> Result<(), ToolError> {
        if path.is_file() {
            Ok(())
        } else {
            Err(ToolError::MissingInput(path.to_path_buf()))
        }
    }

    /// Pass iff synthesis exits 0 within the timeout.
    pub fn check_synthesizable(&self, module: &Path) -> Result<StepVerdict, ToolError> {
        Self::require_file(module)?;
        let scratch = self.scratch()?;
        let out = scratch.path().join("synth.out");
        let result = self.run_spec(
            &self.cfg.synth_cmd,
            &Slots { input: module, out: &out, tb: None },
            scratch.path(),
        )?;
        Ok(StepVerdict {
            pass: result.success(),
            result,
        })
    }

    /// Render `module` to `out`; succeeds only if the tool exits 0 and leaves
    /// a non-empty file at `out`.
    pub fn render_diagram(&self, module: &Path, out: &Path) -> Result<RenderOutcome, ToolError> {
        Self::require_file(module)?;
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let scratch = self.scratch()?;
        let result = self.run_spec(
            &self.cfg.render_cmd,
            &Slots { input: module, out, tb: None },
            scratch.path(),
        )?;
        if !result.success() {
            return Ok(RenderOutcome::Failed { reason: RenderFailure::Tool, result });
        }
        let reason = match fs::metadata(out) {
            Err(_) => RenderFailure::Missing,
            Ok(m) if m.len() == 0 => RenderFailure::EmptyArtifact,
            Ok(_) => {
                return Ok(RenderOutcome::Rendered {
                    path: out.to_path_buf(),
                    result,
                })
            }
        };
        Ok(RenderOutcome::Failed { reason, result })
    }

    /// Assemble and compile a candidate; syntax pass iff exit 0.
    pub fn compile_candidate(&self, header: &str, body: &str) -> Result<CompileOutcome, ToolError> {
        let dir = self.scratch()?;
        let path = dir.path().join("candidate.v");
        fs::write(&path, assemble_candidate(header, body))?;
        let out = dir.path().join("candidate.out");
        let result = self.run_spec(
            &self.cfg.compile_cmd,
            &Slots { input: &path, out: &out, tb: None },
            dir.path(),
        )?;
        Ok(CompileOutcome {
            pass: result.success(),
            result,
            candidate: Candidate { dir, path },
        })
    }

    /// Simulate `candidate` against `testbench`; pass per `rule`.
    pub fn simulate_candidate(&self, candidate: &Path, testbench: &Path, rule: &SuccessRule) -> Result<StepVerdict, ToolError> {
        Self::require_file(candidate)?;
        Self::require_file(testbench)?;
        let scratch = self.scratch()?;
        let out = scratch.path().join("sim.out");
        let result = self.run_spec(
            &self.cfg.sim_cmd,
            &Slots {
                input: candidate,
                out: &out,
                tb: Some(testbench),
            },
            scratch.path(),
        )?;
        Ok(StepVerdict {
            pass: rule.evaluate(&result),
            result,
        })
    }
}
