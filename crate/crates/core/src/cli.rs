//! Command-line entry points: `analyze`, `run`, `serve` and `replay`.
//!
//! Machine-readable output goes to stdout, diagnostics to stderr. Exit
//! status: 0 on full success, 1 when executed code failed, 2 for unusable
//! input (unreadable script, invalid fixture or configuration).

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::extract::TableRegistry;
use crate::graph::{export, Diagram, ExportFormat, NodeClass, NodeState, TableState};
use crate::ids::{NodeId, SnippetId};
use crate::sandbox::{ProbeRecord, SandboxConfig, SandboxSession};
use crate::session::llm::{Fixture, LlmClientConfig, LlmMode, ReplayClient};
use crate::session::{
    ExecEnv, LlmSource, PipelineEvent, Session, SessionConfig, SessionManager, SnippetRun, TurnInput, TurnStatus,
    UnitRecord,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

const DEFAULT_LISTEN: &str = "127.0.0.1:8080";
const DEFAULT_TIMEOUT_SECS: u64 = 30;
const DEFAULT_OUTPUT_CAP: usize = 1 << 20;

#[derive(Debug, Parser)]
#[command(name = "flowlens", version, about = "Dataflow diagrams for generated dataframe code")]
pub struct Cli {
    /// Optional TOML config file; flags override its values.
    #[arg(long, global = true, env = "FLOWLENS_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract the diagram of a script without executing it.
    Analyze(AnalyzeArgs),
    /// Execute a script with probes and write an execution report.
    Run(RunArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Replay a recorded conversation and print its event envelopes.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub script: PathBuf,
    /// Output format: graph-json or dot.
    #[arg(long, default_value = "graph-json")]
    pub format: String,
}

#[derive(Debug, Args, Default)]
pub struct SandboxArgs {
    /// Python interpreter [default: python3].
    #[arg(long, env = "FLOWLENS_INTERPRETER")]
    pub interpreter: Option<String>,
    /// Per-unit execution timeout in seconds [default: 30].
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    /// Captured output limit per unit in bytes [default: 1048576].
    #[arg(long)]
    pub output_cap: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub script: PathBuf,
    /// Directory whose files are copied into the working directory
    /// [default: the script's directory].
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Where to write the JSON report [default: stdout].
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Working directory to execute in; kept afterwards [default: a
    /// temporary directory].
    #[arg(long)]
    pub work_dir: Option<PathBuf>,
    #[command(flatten)]
    pub sandbox: SandboxArgs,
}

#[derive(Debug, Args)]
pub struct LlmArgs {
    /// LLM mode: live or replay [default: replay when a fixture is given,
    /// otherwise live].
    #[arg(long, env = "FLOWLENS_LLM_MODE")]
    pub llm_mode: Option<String>,
    /// OpenAI-compatible chat-completions URL (live mode).
    #[arg(long, env = "FLOWLENS_LLM_ENDPOINT")]
    pub llm_endpoint: Option<String>,
    /// Model name sent to the endpoint [default: gpt-4o].
    #[arg(long, env = "FLOWLENS_LLM_MODEL")]
    pub llm_model: Option<String>,
    /// Recorded conversation fixture (replay mode).
    #[arg(long, env = "FLOWLENS_FIXTURE")]
    pub fixture: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Address to listen on [default: 127.0.0.1:8080].
    #[arg(long, env = "FLOWLENS_LISTEN")]
    pub listen: Option<SocketAddr>,
    /// Directory holding one subdirectory per session [default:
    /// ./flowlens-sessions].
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    #[command(flatten)]
    pub llm: LlmArgs,
    #[command(flatten)]
    pub sandbox: SandboxArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub fixture: PathBuf,
    /// Diagram only; do not execute code.
    #[arg(long)]
    pub no_execute: bool,
    /// Session directory to keep [default: a temporary directory].
    #[arg(long)]
    pub session_dir: Option<PathBuf>,
    #[command(flatten)]
    pub sandbox: SandboxArgs,
}

/// Optional config file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub interpreter: Option<String>,
    pub timeout_secs: Option<u64>,
    pub output_cap: Option<usize>,
    pub listen: Option<SocketAddr>,
    pub data_root: Option<PathBuf>,
    pub llm: Option<FileLlmConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileLlmConfig {
    pub mode: Option<String>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub fixture: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }
}

/// Sandbox settings after merging flags over the config file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SandboxSettings {
    pub interpreter: String,
    pub timeout: Duration,
    pub output_cap: usize,
}

impl SandboxSettings {
    pub fn resolve(args: &SandboxArgs, file: &FileConfig) -> Self {
        SandboxSettings {
            interpreter: args
                .interpreter
                .clone()
                .or_else(|| file.interpreter.clone())
                .unwrap_or_else(|| "python3".to_string()),
            timeout: Duration::from_secs(args.timeout_secs.or(file.timeout_secs).unwrap_or(DEFAULT_TIMEOUT_SECS)),
            output_cap: args.output_cap.or(file.output_cap).unwrap_or(DEFAULT_OUTPUT_CAP),
        }
    }

    fn apply(&self, mut c: SessionConfig) -> SessionConfig {
        c.interpreter = self.interpreter.clone();
        c.timeout = self.timeout;
        c.output_cap = self.output_cap;
        c
    }
}

/// Diagram of `source` as the first snippet of a fresh conversation; the
/// same pipeline a session runs.
pub fn analyze_source(source: &str) -> (Diagram, Vec<String>) {
    let mut registry = TableRegistry::new();
    let mut run = SnippetRun::new(SnippetId::from("s0"));
    let mut diagnostics = Vec::new();
    let mut sink = |e: PipelineEvent| {
        if let PipelineEvent::Diagnostic(d) = e {
            diagnostics.push(d);
        }
    };
    if let Err(e) = run.run_source(source, &mut registry, None, &mut sink) {
        diagnostics.push(e.to_string());
    }
    (run.diagram().clone(), diagnostics)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeReport {
    pub id: NodeId,
    pub kind: String,
    pub label: String,
    pub state: NodeState,
    pub output: Option<TableState>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub script: String,
    pub ok: bool,
    pub failure: Option<String>,
    pub failed_node: Option<NodeId>,
    pub nodes: Vec<NodeReport>,
    /// Probe records in execution order.
    pub probes: Vec<ProbeRecord>,
    /// Figure files relative to the working directory.
    pub figures: Vec<String>,
    pub stdout: String,
    pub units: Vec<UnitRecord>,
    pub total_ms: u64,
    pub diagnostics: Vec<String>,
}

/// Executes `source` in `work_dir` and reports every operation node.
pub fn run_source(source: &str, script: &str, config: SandboxConfig) -> Result<RunReport, String> {
    let mut sandbox = SandboxSession::start(config).map_err(|e| e.to_string())?;
    let mut registry = TableRegistry::new();
    let mut table_states = std::collections::BTreeMap::new();
    let mut run = SnippetRun::new(SnippetId::from("s0"));
    let mut diagnostics = Vec::new();
    let mut failed_node = None;
    let mut error_of = std::collections::BTreeMap::new();
    {
        let mut env = ExecEnv {
            sandbox: &mut sandbox,
            table_states: &mut table_states,
        };
        let mut sink = |e: PipelineEvent| match e {
            PipelineEvent::Diagnostic(d) => diagnostics.push(d),
            PipelineEvent::Delta(d) => {
                if let crate::graph::DeltaEvent::NodeFailed { node, message } = d.event {
                    failed_node = Some(node.clone());
                    error_of.insert(node, message);
                }
            }
        };
        if let Err(e) = run.run_source(source, &mut registry, Some(&mut env), &mut sink) {
            diagnostics.push(e.to_string());
        }
    }
    let diagram = run.diagram();
    let nodes = diagram
        .nodes
        .iter()
        .filter(|n| n.class == NodeClass::Operation)
        .map(|n| NodeReport {
            id: n.id.clone(),
            kind: n.operation().map(|o| o.kind.name().to_string()).unwrap_or_default(),
            label: n.label.clone(),
            state: n.state,
            output: n.table_state.clone(),
            error: error_of.get(&n.id).cloned(),
        })
        .collect();
    let figures = diagram
        .nodes
        .iter()
        .filter_map(|n| match &n.detail {
            crate::graph::NodeDetail::Result {
                kind: crate::extract::ResultKind::Figure,
                payload,
                ..
            } => Some(payload.clone()),
            _ => None,
        })
        .collect();
    let probes = sandbox
        .statement_log()
        .iter()
        .flat_map(|l| l.probes.iter().cloned())
        .collect();
    let failure = run.failure().map(str::to_string);
    Ok(RunReport {
        script: script.to_string(),
        ok: failure.is_none() && run.units().iter().all(|u| u.error.is_none()),
        failure,
        failed_node,
        nodes,
        probes,
        figures,
        stdout: run.stdout().to_string(),
        total_ms: run.units().iter().map(|u| u.duration_ms).sum(),
        units: run.units().to_vec(),
        diagnostics,
    })
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    let file = match &cli.config {
        Some(p) => match FileConfig::load(p) {
            Ok(f) => f,
            Err(e) => {
                let _ = writeln!(err, "{e}");
                return EXIT_INPUT;
            }
        },
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Analyze(a) => analyze(&a, out, err),
        Command::Run(a) => run(&a, &file, out, err),
        Command::Serve(a) => serve(&a, &file, err),
        Command::Replay(a) => replay(&a, &file, out, err),
    }
}

fn analyze(args: &AnalyzeArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let format: ExportFormat = match args.format.parse() {
        Ok(f) => f,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            return EXIT_INPUT;
        }
    };
    let source = match std::fs::read_to_string(&args.script) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "cannot read {}: {e}", args.script.display());
            return EXIT_INPUT;
        }
    };
    let (diagram, diagnostics) = analyze_source(&source);
    for d in diagnostics {
        let _ = writeln!(err, "warning: {d}");
    }
    let _ = write!(out, "{}", export(&diagram, format));
    EXIT_OK
}

fn copy_files(from: &Path, to: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(to)?;
    for entry in std::fs::read_dir(from)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            std::fs::copy(entry.path(), to.join(entry.file_name()))?;
        }
    }
    Ok(())
}

fn run(args: &RunArgs, file: &FileConfig, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let source = match std::fs::read_to_string(&args.script) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "cannot read {}: {e}", args.script.display());
            return EXIT_INPUT;
        }
    };
    let data_dir = args.data_dir.clone().unwrap_or_else(|| {
        args.script
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    let temp = match &args.work_dir {
        Some(_) => None,
        None => match tempfile::tempdir() {
            Ok(t) => Some(t),
            Err(e) => {
                let _ = writeln!(err, "cannot create working directory: {e}");
                return EXIT_INPUT;
            }
        },
    };
    let work = args
        .work_dir
        .clone()
        .unwrap_or_else(|| temp.as_ref().expect("temp dir").path().to_path_buf());
    if let Err(e) = copy_files(&data_dir, &work) {
        let _ = writeln!(err, "cannot copy data from {}: {e}", data_dir.display());
        return EXIT_INPUT;
    }
    let settings = SandboxSettings::resolve(&args.sandbox, file);
    let config = SandboxConfig::new(&work)
        .with_interpreter(settings.interpreter)
        .with_timeout(settings.timeout)
        .with_output_cap(settings.output_cap);
    let report = match run_source(&source, &args.script.display().to_string(), config) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            return EXIT_INPUT;
        }
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    match &args.report {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &json) {
                let _ = writeln!(err, "cannot write report {}: {e}", path.display());
                return EXIT_INPUT;
            }
        }
        None => {
            let _ = write!(out, "{json}");
        }
    }
    for d in &report.diagnostics {
        let _ = writeln!(err, "warning: {d}");
    }
    if let Some(f) = &report.failure {
        let node = report.failed_node.as_ref().map(|n| n.to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(err, "execution failed at node {node}: {f}");
    }
    if report.ok {
        EXIT_OK
    } else {
        EXIT_FAILED
    }
}

/// Resolves the LLM client settings for `serve`.
pub fn llm_config(args: &LlmArgs, file: &FileConfig) -> Result<LlmClientConfig, String> {
    let f = file.llm.clone().unwrap_or_default();
    let fixture = args.fixture.clone().or(f.fixture);
    let mode = match args.llm_mode.clone().or(f.mode) {
        Some(m) => m.parse::<LlmMode>()?,
        None if fixture.is_some() => LlmMode::Replay,
        None => LlmMode::Live,
    };
    Ok(LlmClientConfig {
        mode,
        endpoint: args.llm_endpoint.clone().or(f.endpoint),
        api_key: std::env::var("FLOWLENS_LLM_API_KEY").ok(),
        model: args.llm_model.clone().or(f.model),
        fixture,
    })
}

fn serve(args: &ServeArgs, file: &FileConfig, err: &mut dyn Write) -> i32 {
    let llm = match llm_config(&args.llm, file) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            return EXIT_INPUT;
        }
    };
    // fail early on a bad fixture or missing endpoint
    if let Err(e) = llm.build() {
        let _ = writeln!(err, "{e}");
        return EXIT_INPUT;
    }
    let root = args
        .data_root
        .clone()
        .or_else(|| file.data_root.clone())
        .unwrap_or_else(|| PathBuf::from("flowlens-sessions"));
    let listen = args
        .listen
        .or(file.listen)
        .unwrap_or_else(|| DEFAULT_LISTEN.parse().expect("default address"));
    let settings = SandboxSettings::resolve(&args.sandbox, file);
    let template = settings.apply(SessionConfig::new(&root));
    let manager = Arc::new(SessionManager::new(root, template, LlmSource::Config(llm)));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .try_init();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            let _ = writeln!(err, "cannot start runtime: {e}");
            return EXIT_FAILED;
        }
    };
    match rt.block_on(crate::server::serve(listen, manager)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "server error: {e}");
            EXIT_FAILED
        }
    }
}

/// Replays every turn of `fixture` through a fresh session.
pub fn replay_fixture(fixture: Fixture, config: SessionConfig) -> Result<Session, String> {
    let turns = fixture.turns.clone();
    let files = fixture.files.clone();
    let mut session =
        Session::new("replay", config, Arc::new(ReplayClient::new(fixture))).map_err(|e| e.to_string())?;
    for f in &files {
        session.upload_file(&f.name, f.content.as_bytes()).map_err(|e| e.to_string())?;
    }
    for t in turns {
        let input = match (t.message, t.raw_code) {
            (Some(m), _) => TurnInput::Message(m),
            (None, Some(c)) => TurnInput::RawCode(c),
            (None, None) => unreachable!("validated fixture"),
        };
        session.run_turn(input);
    }
    Ok(session)
}

fn replay(args: &ReplayArgs, file: &FileConfig, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let fixture = match Fixture::load(&args.fixture) {
        Ok(f) => f,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            return EXIT_INPUT;
        }
    };
    let temp = match &args.session_dir {
        Some(_) => None,
        None => match tempfile::tempdir() {
            Ok(t) => Some(t),
            Err(e) => {
                let _ = writeln!(err, "cannot create session directory: {e}");
                return EXIT_INPUT;
            }
        },
    };
    let root = args
        .session_dir
        .clone()
        .unwrap_or_else(|| temp.as_ref().expect("temp dir").path().to_path_buf());
    let mut config = SandboxSettings::resolve(&args.sandbox, file).apply(SessionConfig::new(root));
    config.execute = !args.no_execute;
    config.autosave = args.session_dir.is_some();
    let session = match replay_fixture(fixture, config) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            return EXIT_INPUT;
        }
    };
    for env in session.events().history() {
        let _ = writeln!(out, "{}", serde_json::to_string(&env).expect("event serializes"));
    }
    if session.turns().iter().all(|t| t.status == TurnStatus::Ok) {
        EXIT_OK
    } else {
        EXIT_FAILED
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = main_with(std::iter::once("flowlens").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn analyze_exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.py");
        let (code, _, err) = call(&["analyze", missing.to_str().unwrap()]);
        assert_eq!(code, EXIT_INPUT);
        assert!(err.contains("cannot read"));
        let empty = dir.path().join("empty.py");
        std::fs::write(&empty, "").unwrap();
        let (code, out, _) = call(&["analyze", empty.to_str().unwrap()]);
        assert_eq!(code, EXIT_OK);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["nodes"].as_array().unwrap().len(), 0);
        let (code, out, _) = call(&["analyze", "--format", "dot", empty.to_str().unwrap()]);
        assert_eq!(code, EXIT_OK);
        assert!(out.starts_with("digraph"));
        let (code, _, _) = call(&["analyze", "--format", "svg", empty.to_str().unwrap()]);
        assert_eq!(code, EXIT_INPUT);
    }

    #[test]
    fn short_flags_are_rejected() {
        let (code, _, _) = call(&["analyze", "-f", "dot", "x.py"]);
        assert_eq!(code, EXIT_INPUT);
    }

    #[test]
    fn config_file_is_overridden_by_flags() {
        let file: FileConfig = toml::from_str("interpreter = \"py-from-file\"\ntimeout_secs = 5\n").unwrap();
        let flags = SandboxArgs {
            interpreter: Some("py-from-flag".into()),
            ..Default::default()
        };
        let s = SandboxSettings::resolve(&flags, &file);
        assert_eq!(s.interpreter, "py-from-flag");
        assert_eq!(s.timeout, Duration::from_secs(5));
        assert_eq!(s.output_cap, DEFAULT_OUTPUT_CAP);
        assert!(toml::from_str::<FileConfig>("bogus = 1").is_err());
    }

    #[test]
    fn replay_schema_error_exits_2() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.json");
        std::fs::write(&p, "{\"version\": 1, \"turns\": [").unwrap();
        let (code, _, err) = call(&["replay", p.to_str().unwrap()]);
        assert_eq!(code, EXIT_INPUT);
        assert!(err.contains("fixture schema"));
    }

    #[test]
    fn static_replay_ends_with_turn_complete() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.json");
        std::fs::write(
            &p,
            r#"{"version": 1, "turns": [{"raw_code": "import pandas as pd\ndf = pd.read_csv('a.csv')\n"}]}"#,
        )
        .unwrap();
        let (code, out, _) = call(&["replay", "--no-execute", p.to_str().unwrap()]);
        assert_eq!(code, EXIT_OK);
        let last: serde_json::Value = serde_json::from_str(out.lines().last().unwrap()).unwrap();
        assert_eq!(last["type"], "TurnComplete");
    }
}
