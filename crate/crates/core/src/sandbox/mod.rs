//! Interpreter process management, probe demultiplexing and statement-log
//! replay.
//!
//! The driver runs as `<interpreter> driver.py` with the session working
//! directory as cwd and speaks line-delimited JSON on stdin/stdout.

mod demux;

pub use demux::{demux_stdout, parse_probe_line, ProbeRecord, PROBE_SENTINEL};

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::ProbeId;
use crate::instrument::{ExecUnit, InstrumentedProgram, UnitKind};

pub const DRIVER_PY: &str = include_str!("../../assets/driver.py");

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_OUTPUT_CAP: usize = 1 << 20;

#[derive(Debug, Clone)]
pub struct SandboxConfig {
    pub interpreter: String,
    pub working_dir: PathBuf,
    pub timeout: Duration,
    pub output_cap: usize,
}

impl SandboxConfig {
    pub fn new(working_dir: impl Into<PathBuf>) -> Self {
        SandboxConfig {
            interpreter: std::env::var("FLOWLENS_INTERPRETER").unwrap_or_else(|_| "python3".into()),
            working_dir: working_dir.into(),
            timeout: DEFAULT_TIMEOUT,
            output_cap: DEFAULT_OUTPUT_CAP,
        }
    }

    pub fn with_interpreter(mut self, interpreter: impl Into<String>) -> Self {
        self.interpreter = interpreter.into();
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_output_cap(mut self, cap: usize) -> Self {
        self.output_cap = cap;
        self
    }
}

/// Whether `interpreter` can import the dataframe stack the driver needs.
pub fn interpreter_available(interpreter: &str) -> bool {
    Command::new(interpreter)
        .args(["-c", "import pandas"])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .is_ok_and(|s| s.success())
}

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("failed to start interpreter {interpreter}: {source}")]
    Spawn {
        interpreter: String,
        source: std::io::Error,
    },
    #[error("sandbox io: {0}")]
    Io(#[from] std::io::Error),
    #[error("interpreter exited unexpectedly")]
    Exited,
    #[error("driver protocol: {0}")]
    Protocol(String),
    #[error("replay diverged at probe {probe}: expected {expected}, got {actual}")]
    Divergence {
        probe: String,
        expected: String,
        actual: String,
    },
    #[error("replay failed at unit {unit}: {message}")]
    ReplayFailed { unit: String, message: String },
    #[error("unknown variable: {0}")]
    UnknownVariable(String),
    #[error("not a table: {0}")]
    NotATable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecError {
    pub unit_id: String,
    /// Exception type name, or `timeout`.
    pub kind: String,
    pub message: String,
    pub traceback: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecOutcome {
    pub status: ExecStatus,
    /// User-visible output with probe lines removed.
    pub stdout: String,
    pub stderr: String,
    pub probes: Vec<ProbeRecord>,
    pub figures: Vec<String>,
    pub duration_ms: u64,
    pub error: Option<ExecError>,
    /// Malformed or unknown probe lines.
    pub diagnostics: Vec<String>,
}

impl ExecOutcome {
    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedUnit {
    pub unit: ExecUnit,
    pub probes: Vec<ProbeRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub units: usize,
    pub probes: Vec<ProbeRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TablePreview {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl TablePreview {
    /// Plain-text rendering, one tab-separated line per row.
    pub fn to_text(&self) -> String {
        let mut out = self.columns.join("\t");
        for row in &self.rows {
            out.push('\n');
            out.push_str(&row.join("\t"));
        }
        out
    }
}

#[derive(Debug, Deserialize)]
struct DriverError {
    #[serde(rename = "type")]
    kind: String,
    message: String,
    #[serde(default)]
    traceback: String,
}

#[derive(Debug, Deserialize)]
struct DriverResponse {
    id: Option<u64>,
    status: String,
    #[serde(default)]
    stdout: String,
    #[serde(default)]
    stderr: String,
    #[serde(default)]
    figures: Vec<String>,
    preview: Option<TablePreview>,
    error: Option<DriverError>,
}

#[derive(Debug, Serialize)]
struct DriverRequest<'a> {
    id: u64,
    op: &'a str,
    code: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    var: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    limit: Option<usize>,
}

struct Process {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
    // keeps driver.py alive for the process lifetime
    _runtime: tempfile::TempDir,
}

impl Drop for Process {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// One interpreter per session. Units execute strictly in submission order.
pub struct SandboxSession {
    pub session_id: String,
    config: SandboxConfig,
    process: Option<Process>,
    next_id: u64,
    log: Vec<LoggedUnit>,
    known_probes: BTreeSet<ProbeId>,
}

impl std::fmt::Debug for SandboxSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SandboxSession")
            .field("session_id", &self.session_id)
            .field("working_dir", &self.config.working_dir)
            .field("log_len", &self.log.len())
            .finish()
    }
}

impl SandboxSession {
    pub fn start(config: SandboxConfig) -> Result<Self, SandboxError> {
        std::fs::create_dir_all(&config.working_dir)?;
        let mut this = SandboxSession {
            session_id: uuid::Uuid::new_v4().to_string(),
            config,
            process: None,
            next_id: 0,
            log: Vec::new(),
            known_probes: BTreeSet::new(),
        };
        this.spawn()?;
        Ok(this)
    }

    pub fn working_dir(&self) -> &Path {
        &self.config.working_dir
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    fn spawn(&mut self) -> Result<(), SandboxError> {
        self.process = None;
        let runtime = tempfile::Builder::new().prefix("flowlens-driver").tempdir()?;
        let driver = runtime.path().join("driver.py");
        std::fs::write(&driver, DRIVER_PY)?;
        let mut child = Command::new(&self.config.interpreter)
            .arg(&driver)
            .current_dir(&self.config.working_dir)
            .env("MPLBACKEND", "Agg")
            .env("PYTHONHASHSEED", "0")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONUNBUFFERED", "1")
            .env("FLOWLENS_OUTPUT_CAP", self.config.output_cap.to_string())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|source| SandboxError::Spawn {
                interpreter: self.config.interpreter.clone(),
                source,
            })?;
        let stdin = child.stdin.take().ok_or(SandboxError::Exited)?;
        let stdout = child.stdout.take().ok_or(SandboxError::Exited)?;
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        self.process = Some(Process {
            child,
            stdin,
            lines: rx,
            _runtime: runtime,
        });
        Ok(())
    }

    fn request(
        &mut self,
        op: &str,
        code: &str,
        var: Option<&str>,
        limit: Option<usize>,
    ) -> Result<DriverResponse, RequestError> {
        if self.process.is_none() {
            self.spawn().map_err(RequestError::Sandbox)?;
        }
        self.next_id += 1;
        let id = self.next_id;
        let req = DriverRequest {
            id,
            op,
            code,
            var,
            limit,
        };
        let mut line = serde_json::to_string(&req).expect("request serializes");
        line.push('\n');
        let timeout = self.config.timeout;
        let proc = self.process.as_mut().expect("spawned above");
        if proc.stdin.write_all(line.as_bytes()).and_then(|_| proc.stdin.flush()).is_err() {
            self.process = None;
            return Err(RequestError::Sandbox(SandboxError::Exited));
        }
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let proc = self.process.as_mut().expect("spawned above");
            match proc.lines.recv_timeout(left) {
                Ok(text) => {
                    let resp: DriverResponse = serde_json::from_str(&text).map_err(|e| {
                        RequestError::Sandbox(SandboxError::Protocol(format!("{e}: {text}")))
                    })?;
                    if resp.id != Some(id) {
                        // a late answer to an abandoned request
                        continue;
                    }
                    return Ok(resp);
                }
                Err(RecvTimeoutError::Timeout) => {
                    self.process = None;
                    return Err(RequestError::Timeout);
                }
                Err(RecvTimeoutError::Disconnected) => {
                    self.process = None;
                    return Err(RequestError::Sandbox(SandboxError::Exited));
                }
            }
        }
    }

    /// Probe ids accepted by the demultiplexer from now on.
    pub fn expect_probes(&mut self, program: &InstrumentedProgram) {
        self.known_probes.extend(program.bindings.keys().cloned());
    }

    /// Executes one unit; appends it to the statement log on success.
    pub fn exec_unit(&mut self, unit: &ExecUnit) -> Result<ExecOutcome, SandboxError> {
        let outcome = self.run_code(&unit.unit_id, &unit.code)?;
        if outcome.is_ok() {
            self.log.push(LoggedUnit {
                unit: unit.clone(),
                probes: outcome.probes.clone(),
            });
        }
        Ok(outcome)
    }

    /// Executes code without logging it.
    pub fn exec_code(&mut self, code: &str) -> Result<ExecOutcome, SandboxError> {
        self.run_code("adhoc", code)
    }

    fn run_code(&mut self, unit_id: &str, code: &str) -> Result<ExecOutcome, SandboxError> {
        let start = Instant::now();
        if code.trim().is_empty() {
            return Ok(ExecOutcome {
                status: ExecStatus::Ok,
                stdout: String::new(),
                stderr: String::new(),
                probes: Vec::new(),
                figures: Vec::new(),
                duration_ms: 0,
                error: None,
                diagnostics: Vec::new(),
            });
        }
        match self.request("exec", code, None, None) {
            Ok(resp) => {
                let (stdout, probes, mut diagnostics) = demux_stdout(&resp.stdout);
                let probes = probes
                    .into_iter()
                    .filter(|p| {
                        let known = self.known_probes.contains(&p.probe);
                        if !known {
                            diagnostics.push(format!("unknown probe id {}", p.probe));
                        }
                        known
                    })
                    .collect();
                let error = resp.error.map(|e| ExecError {
                    unit_id: unit_id.to_string(),
                    kind: e.kind,
                    message: e.message,
                    traceback: e.traceback,
                });
                let status = if resp.status == "ok" {
                    ExecStatus::Ok
                } else {
                    ExecStatus::Error
                };
                Ok(ExecOutcome {
                    status,
                    stdout,
                    stderr: resp.stderr,
                    probes,
                    figures: resp.figures,
                    duration_ms: start.elapsed().as_millis() as u64,
                    error,
                    diagnostics,
                })
            }
            Err(RequestError::Timeout) => {
                let mut message = format!("unit exceeded {:?}", self.config.timeout);
                if let Err(e) = self.restart_and_replay() {
                    message.push_str(&format!("; state restore failed: {e}"));
                }
                Ok(ExecOutcome {
                    status: ExecStatus::Error,
                    stdout: String::new(),
                    stderr: String::new(),
                    probes: Vec::new(),
                    figures: Vec::new(),
                    duration_ms: start.elapsed().as_millis() as u64,
                    error: Some(ExecError {
                        unit_id: unit_id.to_string(),
                        kind: "timeout".into(),
                        message,
                        traceback: String::new(),
                    }),
                    diagnostics: Vec::new(),
                })
            }
            Err(RequestError::Sandbox(e)) => Err(e),
        }
    }

    fn restart_and_replay(&mut self) -> Result<ReplaySummary, SandboxError> {
        let n = self.log.len();
        self.replay(Some(n))
    }

    pub fn statement_log(&self) -> &[LoggedUnit] {
        &self.log
    }

    /// Replaces the log, e.g. after loading a persisted session. The
    /// interpreter state is not touched; call `replay` to rebuild it.
    pub fn set_statement_log(&mut self, log: Vec<LoggedUnit>) {
        for entry in &log {
            for p in &entry.probes {
                self.known_probes.insert(p.probe.clone());
            }
        }
        self.log = log;
    }

    /// Restarts the interpreter and re-executes the first `upto` logged units
    /// (all when `None`), checking that every probe record is reproduced.
    /// The log is truncated to the replayed prefix.
    pub fn replay(&mut self, upto: Option<usize>) -> Result<ReplaySummary, SandboxError> {
        let upto = upto.unwrap_or(self.log.len()).min(self.log.len());
        self.log.truncate(upto);
        self.spawn()?;
        let entries = self.log.clone();
        let mut probes = Vec::new();
        for entry in &entries {
            let outcome = self.run_code(&entry.unit.unit_id, &entry.unit.code)?;
            if !outcome.is_ok() {
                let message = outcome.error.map(|e| e.message).unwrap_or_default();
                return Err(SandboxError::ReplayFailed {
                    unit: entry.unit.unit_id.clone(),
                    message,
                });
            }
            for (i, expected) in entry.probes.iter().enumerate() {
                let actual = outcome.probes.get(i);
                if actual != Some(expected) {
                    return Err(SandboxError::Divergence {
                        probe: expected.probe.to_string(),
                        expected: serde_json::to_string(expected).unwrap_or_default(),
                        actual: actual
                            .map(|a| serde_json::to_string(a).unwrap_or_default())
                            .unwrap_or_else(|| "nothing".into()),
                    });
                }
            }
            if outcome.probes.len() > entry.probes.len() {
                let extra = &outcome.probes[entry.probes.len()];
                return Err(SandboxError::Divergence {
                    probe: extra.probe.to_string(),
                    expected: "nothing".into(),
                    actual: serde_json::to_string(extra).unwrap_or_default(),
                });
            }
            probes.extend(outcome.probes);
        }
        Ok(ReplaySummary {
            units: entries.len(),
            probes,
        })
    }

    /// Columns and up to `limit` rows of a table variable.
    pub fn fetch_table_preview(&mut self, var: &str, limit: usize) -> Result<TablePreview, SandboxError> {
        match self.request("preview", "", Some(var), Some(limit)) {
            Ok(resp) => {
                if let Some(e) = resp.error {
                    return Err(match e.kind.as_str() {
                        "unknown" => SandboxError::UnknownVariable(var.to_string()),
                        "type" => SandboxError::NotATable(var.to_string()),
                        _ => SandboxError::Protocol(e.message),
                    });
                }
                resp.preview
                    .ok_or_else(|| SandboxError::Protocol("preview missing".into()))
            }
            Err(RequestError::Timeout) => {
                self.restart_and_replay()?;
                Err(SandboxError::Protocol("preview timed out".into()))
            }
            Err(RequestError::Sandbox(e)) => Err(e),
        }
    }

    /// Empties the interpreter namespace and the statement log.
    pub fn reset(&mut self) -> Result<(), SandboxError> {
        self.log.clear();
        match self.request("reset", "", None, None) {
            Ok(_) => Ok(()),
            Err(RequestError::Timeout) => self.spawn(),
            Err(RequestError::Sandbox(e)) => Err(e),
        }
    }

    /// Runs every unit of `program` in order, stopping at the first failure.
    pub fn run_program(&mut self, program: &InstrumentedProgram) -> Result<Vec<ExecOutcome>, SandboxError> {
        self.expect_probes(program);
        let mut out = Vec::new();
        for unit in &program.units {
            let o = self.exec_unit(unit)?;
            let failed = !o.is_ok();
            out.push(o);
            if failed {
                break;
            }
        }
        Ok(out)
    }

    /// Concatenated user stdout of `outcomes` that came from user units.
    pub fn user_stdout(program: &InstrumentedProgram, outcomes: &[ExecOutcome]) -> String {
        program
            .units
            .iter()
            .zip(outcomes)
            .filter(|(u, _)| u.kind == UnitKind::UserStatement)
            .map(|(_, o)| o.stdout.as_str())
            .collect()
    }
}

enum RequestError {
    Timeout,
    Sandbox(SandboxError),
}
