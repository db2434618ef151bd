//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines are always shown.
//! Exits non-zero when any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{copy_dir, corpus_data, corpus_dir, corpus_scripts, python, python_ready, sketch, tests_dir};
use flowlens::cli::{analyze_source, run_source};
use flowlens::edit::ParamEdit;
use flowlens::extract::{OperationKind, TableRegistry};
use flowlens::graph::{export, DeltaEvent, Diagram, EdgeKind, ExportFormat, NodeClass, NodeState};
use flowlens::ids::SnippetId;
use flowlens::instrument::{instrument_snippet, InstrumentedProgram};
use flowlens::sandbox::{LoggedUnit, ProbeRecord, SandboxConfig, SandboxSession};
use flowlens::session::{
    live_request_count, Fixture, LlmClientConfig, LlmMode, PipelineEvent, Session, SessionConfig,
    SessionEvent, SnippetRun, TurnInput, TurnStatus, UnavailableClient,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(elapsed < limit, || format!("{what} took {elapsed:?}, limit {limit:?}"))
}

fn sandbox(dir: &Path) -> Result<SandboxSession, String> {
    SandboxSession::start(SandboxConfig::new(dir).with_interpreter(python())).map_err(|e| e.to_string())
}

fn data_dir() -> Result<tempfile::TempDir, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    copy_dir(&corpus_data(), dir.path());
    Ok(dir)
}

// ---------------------------------------------------------------------------

fn golden_corpus() -> Outcome {
    let start = Instant::now();
    let scripts = corpus_scripts();
    ensure(scripts.len() >= 20, || format!("only {} scripts", scripts.len()))?;
    for (stem, source) in &scripts {
        let expected = std::fs::read_to_string(corpus_dir().join(format!("{stem}.graph")))
            .map_err(|e| format!("{stem}.graph: {e}"))?;
        let (diagram, diagnostics) = analyze_source(source);
        ensure(diagnostics.is_empty(), || format!("{stem}: {diagnostics:?}"))?;
        let actual = sketch(&diagram);
        ensure(actual == expected, || format!("{stem} differs:\n{actual}"))?;
    }

    // chain example: exactly Select then Sort, assigned to merge_df
    let (d, _) = analyze_source(
        "import pandas as pd\ndf = pd.read_csv('data.csv')\nmerge_df = df[[\"attr_1\", \"attr_2\"]].sort()\n",
    );
    let kinds: Vec<_> = d
        .operations()
        .filter(|o| o.statement_index == 2)
        .map(|o| o.kind)
        .collect();
    ensure(kinds == [OperationKind::Select, OperationKind::Sort], || format!("chain kinds {kinds:?}"))?;
    check_chain_assignment(&d)?;
    let (d, _) = analyze_source(&scripts[0].1);
    check_chain_assignment(&d)?;

    // scenario: two loads, a Merge with `on`, then Aggregate and Visualize
    let scenario = scripts
        .iter()
        .find(|(s, _)| s.contains("students_scores"))
        .ok_or("scenario script missing")?;
    let (d, _) = analyze_source(&scenario.1);
    let ops: Vec<_> = d.operations().collect();
    let loads = ops.iter().filter(|o| o.kind == OperationKind::LoadData).count();
    let merge = ops
        .iter()
        .position(|o| o.kind == OperationKind::Merge && o.param("on").is_some())
        .ok_or("no Merge with an on parameter")?;
    let after: Vec<_> = ops[merge + 1..].iter().map(|o| o.kind).collect();
    ensure(
        loads == 2 && after.contains(&OperationKind::Aggregate) && after.contains(&OperationKind::Visualize),
        || format!("scenario shape: {loads} loads, downstream {after:?}"),
    )?;
    within(start.elapsed(), Duration::from_secs(10), "corpus")?;
    Ok(format!("{} scripts matched in {:?}", scripts.len(), start.elapsed()))
}

fn check_chain_assignment(d: &Diagram) -> Result<(), String> {
    let target = d
        .nodes
        .iter()
        .find(|n| n.variable() == Some("merge_df"))
        .ok_or("no merge_df table node")?;
    let sort = d
        .nodes
        .iter()
        .find(|n| n.operation().is_some_and(|o| o.kind == OperationKind::Sort))
        .ok_or("no Sort node")?;
    let assigned = d
        .edges
        .iter()
        .any(|e| e.kind == EdgeKind::Assignment && e.from == sort.id && e.to == target.id);
    ensure(assigned, || "Sort is not assigned to merge_df".into())
}

// ---------------------------------------------------------------------------

fn random_partition(text: &str, rng: &mut StdRng) -> Vec<String> {
    let bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).skip(1).collect();
    let mut out = Vec::new();
    let mut last = 0;
    for b in bounds {
        if rng.random_bool(0.5) {
            out.push(text[last..b].to_string());
            last = b;
        }
    }
    out.push(text[last..].to_string());
    out
}

fn streamed_export(chunks: &[String]) -> Result<String, String> {
    let mut registry = TableRegistry::new();
    let mut run = SnippetRun::new(SnippetId::from("s0"));
    let mut sink = |_: PipelineEvent| {};
    for c in chunks {
        run.push(c, &mut registry, None, &mut sink).map_err(|e| e.to_string())?;
    }
    run.finish(&mut registry, None, &mut sink).map_err(|e| e.to_string())?;
    Ok(export(run.diagram(), ExportFormat::GraphJson))
}

fn streaming_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let scripts = corpus_scripts();
    for (stem, source) in &scripts {
        let whole = export(&analyze_source(source).0, ExportFormat::GraphJson);
        for trial in 0..100 {
            let chunks = random_partition(source, &mut rng);
            let streamed = streamed_export(&chunks)?;
            ensure(streamed == whole, || format!("{stem}: partition {trial} differs ({} chunks)", chunks.len()))?;
        }
    }
    within(start.elapsed(), Duration::from_secs(60), "streaming")?;
    Ok(format!("{} scripts x 100 partitions in {:?}", scripts.len(), start.elapsed()))
}

// ---------------------------------------------------------------------------

/// Prints every user table variable as CSV, sorted by name. Synthetic and
/// private names start with `_` and are skipped.
const DUMP: &str = r#"
import pandas as _pd
for _k in sorted(globals()):
    _v = globals()[_k]
    if not _k.startswith('_') and isinstance(_v, (_pd.DataFrame, _pd.Series)):
        print('==', _k, type(_v).__name__)
        print(_v.to_csv())
"#;

struct InstrumentedRun {
    probes: Vec<ProbeRecord>,
    log: Vec<LoggedUnit>,
}

fn original_run(source: &str) -> Result<(String, String), String> {
    let dir = data_dir()?;
    let mut sb = sandbox(dir.path())?;
    let run = sb.exec_code(source).map_err(|e| e.to_string())?;
    ensure(run.is_ok(), || format!("original failed: {:?}", run.error))?;
    let dump = sb.exec_code(DUMP).map_err(|e| e.to_string())?;
    Ok((run.stdout, dump.stdout))
}

fn instrumented_run(source: &str) -> Result<(String, String, InstrumentedRun), String> {
    let dir = data_dir()?;
    let mut sb = sandbox(dir.path())?;
    let (program, _): (InstrumentedProgram, _) =
        instrument_snippet(&SnippetId::from("s0"), source, &mut TableRegistry::new()).map_err(|e| e.to_string())?;
    let outcomes = sb.run_program(&program).map_err(|e| e.to_string())?;
    let failed = outcomes.iter().find(|o| !o.is_ok());
    ensure(failed.is_none(), || format!("instrumented failed: {:?}", failed.and_then(|o| o.error.clone())))?;
    let stdout = SandboxSession::user_stdout(&program, &outcomes);
    let dump = sb.exec_code(DUMP).map_err(|e| e.to_string())?;
    let probes = outcomes.iter().flat_map(|o| o.probes.iter().cloned()).collect();
    Ok((
        stdout,
        dump.stdout,
        InstrumentedRun {
            probes,
            log: sb.statement_log().to_vec(),
        },
    ))
}

fn semantic_preservation(runs: &mut BTreeMap<String, InstrumentedRun>) -> Outcome {
    let start = Instant::now();
    let mut tables = 0;
    for (stem, source) in corpus_scripts() {
        let (out_a, dump_a) = original_run(&source).map_err(|e| format!("{stem}: {e}"))?;
        let (out_b, dump_b, run) = instrumented_run(&source).map_err(|e| format!("{stem}: {e}"))?;
        ensure(!dump_a.is_empty(), || format!("{stem}: no table variables"))?;
        ensure(dump_a == dump_b, || format!("{stem}: table dumps differ"))?;
        ensure(out_a == out_b, || format!("{stem}: stdout differs:\n{out_a:?}\n{out_b:?}"))?;
        tables += dump_a.lines().filter(|l| l.starts_with("== ")).count();
        runs.insert(stem, run);
    }
    within(start.elapsed(), Duration::from_secs(120), "semantic preservation")?;
    Ok(format!("{tables} table dumps equal across {} scripts in {:?}", runs.len(), start.elapsed()))
}

// ---------------------------------------------------------------------------

fn probe_fidelity(runs: &BTreeMap<String, InstrumentedRun>) -> Outcome {
    let mut checked = 0;
    for (stem, run) in runs {
        for p in &run.probes {
            ensure(p.cols as usize == p.columns.len(), || format!("{stem}: {p:?}"))?;
            checked += 1;
        }
    }
    ensure(checked > 0, || "no probe records".into())?;
    let probe_dir = tests_dir().join("probe_data");
    let mut shapes = 0;
    for entry in std::fs::read_dir(&probe_dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        // authored shape is in the name: shape_<rows>x<cols>.csv
        let dims = name
            .strip_prefix("shape_")
            .and_then(|s| s.strip_suffix(".csv"))
            .and_then(|s| s.split_once('x'))
            .ok_or_else(|| format!("bad fixture name {name}"))?;
        let (rows, cols): (u64, u64) = (dims.0.parse().unwrap(), dims.1.parse().unwrap());
        let work = tempfile::tempdir().map_err(|e| e.to_string())?;
        std::fs::copy(&path, work.path().join(&name)).map_err(|e| e.to_string())?;
        let source = format!("import pandas as pd\ndf = pd.read_csv('{name}')\n");
        let report = run_source(&source, &name, SandboxConfig::new(work.path()).with_interpreter(python()))?;
        let p = report.probes.first().ok_or_else(|| format!("{name}: no probe"))?;
        ensure(p.rows == rows && p.cols == cols && p.columns.len() as u64 == cols, || {
            format!("{name}: probe reported {}x{}", p.rows, p.cols)
        })?;
        shapes += 1;
    }
    ensure(shapes == 5, || format!("{shapes} shape fixtures"))?;
    Ok(format!("{checked} corpus probe records consistent; {shapes} authored shapes exact"))
}

// ---------------------------------------------------------------------------

fn replay_determinism(runs: &BTreeMap<String, InstrumentedRun>) -> Outcome {
    let start = Instant::now();
    for (stem, run) in runs {
        let dir = data_dir()?;
        let mut sb = sandbox(dir.path())?;
        sb.set_statement_log(run.log.clone());
        let summary = sb.replay(None).map_err(|e| format!("{stem}: {e}"))?;
        let before = serde_json::to_vec(&run.probes).unwrap();
        let after = serde_json::to_vec(&summary.probes).unwrap();
        ensure(before == after, || format!("{stem}: replayed probes differ"))?;
    }
    Ok(format!("{} scripts replayed byte-equal in {:?}", runs.len(), start.elapsed()))
}

// ---------------------------------------------------------------------------

fn data_session(root: &Path) -> Result<Session, String> {
    let mut config = SessionConfig::new(root);
    config.interpreter = python();
    config.autosave = false;
    let mut s = Session::new("acceptance", config, Arc::new(UnavailableClient)).map_err(|e| e.to_string())?;
    for name in ["students.csv", "scores.csv"] {
        let bytes = std::fs::read(corpus_data().join(name)).map_err(|e| e.to_string())?;
        s.upload_file(name, &bytes).map_err(|e| e.to_string())?;
    }
    Ok(s)
}

fn edit_round_trip() -> Outcome {
    let original = std::fs::read_to_string(corpus_dir().join("02_students_scores.py")).map_err(|e| e.to_string())?;
    let edited = std::fs::read_to_string(tests_dir().join("fixtures/scenario_edited.py")).map_err(|e| e.to_string())?;
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut s = data_session(root.path())?;
    let report = s.run_turn(TurnInput::RawCode(original.clone()));
    ensure(report.status == TurnStatus::Ok, || format!("turn failed: {:?}", report.error))?;
    let merge = s.snippets()[0]
        .operations
        .iter()
        .find(|o| o.kind == OperationKind::Merge)
        .cloned()
        .ok_or("no Merge")?;
    let on = merge.param("on").ok_or("no on parameter")?.clone();
    let patch = s
        .edit_param(&ParamEdit {
            node_id: merge.id.clone(),
            param_name: "on".into(),
            new_value: "'id'".into(),
            revision: None,
        })
        .map_err(|e| e.to_string())?;
    s.rerun_snippet("s0").map_err(|e| e.to_string())?;
    let rec = s.snippet("s0").map_err(|e| e.to_string())?;
    let patched = rec.source.source.clone();

    // the patch touches only the edited span
    ensure(patched == edited, || format!("patched source differs from the hand edit:\n{patched}"))?;
    let prefix = original.bytes().zip(patched.bytes()).take_while(|(a, b)| a == b).count();
    let suffix = original
        .bytes()
        .rev()
        .zip(patched.bytes().rev())
        .take_while(|(a, b)| a == b)
        .count()
        .min(original.len() - prefix);
    let changed = (prefix, original.len() - suffix);
    ensure(on.value_span.start <= changed.0 && changed.1 <= on.value_span.end, || {
        format!("changed bytes {changed:?} outside the parameter span {:?}", on.value_span)
    })?;
    ensure(!patch.edits.is_empty(), || "empty patch".into())?;

    // downstream states equal the one-shot oracle
    let work = data_dir()?;
    let oracle = run_source(&edited, "edited", SandboxConfig::new(work.path()).with_interpreter(python()))?;
    ensure(oracle.ok, || format!("oracle failed: {:?}", oracle.failure))?;
    let ops: Vec<_> = rec
        .diagram
        .nodes
        .iter()
        .filter(|n| n.class == NodeClass::Operation)
        .collect();
    let at = ops.iter().position(|n| n.id == merge.id).ok_or("merge node lost")?;
    let mut compared = 0;
    for (node, expect) in ops.iter().zip(&oracle.nodes).skip(at) {
        ensure(node.state == NodeState::Active, || format!("{} is {:?}", node.id, node.state))?;
        ensure(node.table_state == expect.output, || {
            format!("{}: {:?} vs oracle {:?}", node.id, node.table_state, expect.output)
        })?;
        compared += 1;
    }
    let merged_rows = ops[at].table_state.as_ref().map(|t| t.rows);
    ensure(merged_rows == Some(12), || format!("merged rows {merged_rows:?}"))?;
    Ok(format!("{compared} downstream states match the oracle; patch confined to {changed:?}"))
}

// ---------------------------------------------------------------------------

struct FaultRun {
    session: Session,
    failed: Vec<flowlens::ids::NodeId>,
}

fn run_fault(name: &str) -> Result<FaultRun, String> {
    let source = std::fs::read_to_string(tests_dir().join("faults").join(name)).map_err(|e| e.to_string())?;
    let root = tempfile::tempdir().map_err(|e| e.to_string())?.keep();
    let mut session = data_session(&root)?;
    session.run_turn(TurnInput::RawCode(source));
    let failed = session
        .events()
        .history()
        .into_iter()
        .filter_map(|e| match e.event {
            SessionEvent::GraphDelta(d) => match d.event {
                DeltaEvent::NodeFailed { node, .. } => Some(node),
                _ => None,
            },
            _ => None,
        })
        .collect();
    Ok(FaultRun { session, failed })
}

fn op_by_callee<'a>(s: &'a Session, callee: &str) -> Result<&'a flowlens::extract::Operation, String> {
    s.snippets()[0]
        .operations
        .iter()
        .find(|o| o.callee.as_deref() == Some(callee))
        .ok_or_else(|| format!("no `{callee}` operation"))
}

fn fault_surfacing() -> Outcome {
    // wrong column: the Select carries the bad name and is the one failure
    let run = run_fault("wrong_columns.py")?;
    let select = run.session.snippets()[0]
        .operations
        .iter()
        .find(|o| o.kind == OperationKind::Select)
        .ok_or("no Select")?;
    ensure(select.params.iter().any(|p| p.value.contains("'Major'")), || {
        format!("bad column not in params {:?}", select.params)
    })?;
    ensure(run.failed == [select.id.clone()], || format!("wrong columns: failures {:?}", run.failed))?;

    // transform failure: the astype link fails, nothing else does
    let run = run_fault("transform_failure.py")?;
    let astype = op_by_callee(&run.session, "astype")?;
    ensure(run.failed == [astype.id.clone()], || format!("transform: failures {:?}", run.failed))?;

    // unreasonable value: no failure, the out-of-range score tops the sorted table
    let mut run = run_fault("unreasonable_values.py")?;
    ensure(run.failed.is_empty(), || format!("unreasonable: failures {:?}", run.failed))?;
    let sort = op_by_callee(&run.session, "sort_values")?.id.clone();
    let details = run.session.node_details(&sort, Some(3)).map_err(|e| e.to_string())?;
    let preview = details.preview.ok_or("no preview")?;
    let col = preview.columns.iter().position(|c| c == "score").ok_or("no score column")?;
    let top: f64 = preview.rows[0][col].parse().map_err(|_| "non-numeric score")?;
    ensure(top > 100.0, || format!("top score {top}"))?;

    // incomplete workflow: no dropna before the mean, the missing score is visible upstream
    let mut run = run_fault("incomplete_workflow.py")?;
    ensure(run.failed.is_empty(), || format!("incomplete: failures {:?}", run.failed))?;
    let ops = &run.session.snippets()[0].operations;
    ensure(!ops.iter().any(|o| o.callee.as_deref() == Some("dropna")), || "unexpected dropna".into())?;
    ensure(ops.iter().any(|o| o.kind == OperationKind::Aggregate), || "no Aggregate".into())?;
    let load = op_by_callee(&run.session, "read_csv")?.id.clone();
    let details = run.session.node_details(&load, Some(20)).map_err(|e| e.to_string())?;
    let preview = details.preview.ok_or("no preview")?;
    let col = preview.columns.iter().position(|c| c == "score").ok_or("no score column")?;
    ensure(preview.rows.iter().any(|r| r[col] == "nan"), || "missing score not visible".into())?;
    Ok("4 fault fixtures inspectable; runtime faults map to one NodeFailed each".into())
}

// ---------------------------------------------------------------------------

fn hermeticity() -> Outcome {
    let fixture_path = tests_dir().join("fixtures/scenario.json");
    let config = LlmClientConfig::replay(&fixture_path);
    ensure(config.mode == LlmMode::Replay, || "not replay".into())?;
    let fixture = Fixture::load(&fixture_path).map_err(|e| e.to_string())?;
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut session_config = SessionConfig::new(root.path());
    session_config.interpreter = python();
    let llm = config.build().map_err(|e| e.to_string())?;
    let mut s = Session::new("hermetic", session_config, llm).map_err(|e| e.to_string())?;
    for f in &fixture.files {
        s.upload_file(&f.name, f.content.as_bytes()).map_err(|e| e.to_string())?;
    }
    for t in &fixture.turns {
        let r = s.run_turn(TurnInput::Message(t.message.clone().unwrap_or_default()));
        ensure(r.status == TurnStatus::Ok, || format!("turn {} failed: {:?}", r.turn, r.error))?;
    }
    let q = &fixture.node_queries[0];
    s.node_query(&q.node, &q.question).map_err(|e| e.to_string())?;
    let summaries = s.minimap();
    ensure(summaries.len() == 2, || format!("minimap {summaries:?}"))?;
    let manifest = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../Cargo.toml"))
        .map_err(|e| e.to_string())?;
    ensure(manifest.contains("members = [\"crates/*\"]"), || "unexpected workspace members".into())?;
    let live = live_request_count();
    ensure(live == 0, || format!("{live} live LLM requests"))?;
    Ok("all LLM traffic served from fixtures; 0 live requests".into())
}

// ---------------------------------------------------------------------------

fn report(name: &str, outcome: &Outcome, failures: &mut usize) {
    match outcome {
        Ok(detail) => println!("[PASS] {name}: {detail}"),
        Err(e) => {
            *failures += 1;
            println!("[FAIL] {name}: {e}");
        }
    }
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful here
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut failures = 0;
    report("golden extraction corpus", &golden_corpus(), &mut failures);
    report("streaming equivalence", &streaming_equivalence(), &mut failures);
    if !python_ready() {
        println!("[FAIL] execution criteria: interpreter {} cannot import pandas and matplotlib", python());
        std::process::exit(1);
    }
    let mut runs = BTreeMap::new();
    report("instrumentation semantic preservation", &semantic_preservation(&mut runs), &mut failures);
    report("probe fidelity", &probe_fidelity(&runs), &mut failures);
    report("replay determinism", &replay_determinism(&runs), &mut failures);
    report("edit round-trip", &edit_round_trip(), &mut failures);
    report("fault surfacing", &fault_surfacing(), &mut failures);
    report("hermeticity", &hermeticity(), &mut failures);
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
