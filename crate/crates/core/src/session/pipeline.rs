//! One snippet through ingest, parse, extract, graph, instrument and
//! (optionally) execute, one statement at a time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::extract::{extract_operations, Operation, OperationKind, ResultKind, TableRegistry};
use crate::graph::{Diagram, EdgeKind, GraphDelta, NodeClass, NodeDetail, RuntimeOutcome, TableState};
use crate::ids::{NodeId, SnippetId};
use crate::ingest::{IngestError, SnippetBuffer, StatementUnit};
use crate::instrument::{ExecUnit, InstrumentedProgram, Instrumenter, UnitKind};
use crate::sandbox::{ExecError, ExecOutcome, ExecStatus, SandboxSession};
use crate::syntax::{parse_statement, Severity};

/// Rows shown when an expression result has no printed output.
pub const RESULT_PREVIEW_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PipelineEvent {
    Delta(GraphDelta),
    Diagnostic(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub unit_id: String,
    pub kind: UnitKind,
    pub statement_index: Option<usize>,
    pub status: ExecStatus,
    pub duration_ms: u64,
    pub error: Option<ExecError>,
}

/// Execution context shared by the snippets of one conversation.
pub struct ExecEnv<'a> {
    pub sandbox: &'a mut SandboxSession,
    /// Last bound state of every table node seen so far.
    pub table_states: &'a mut BTreeMap<NodeId, TableState>,
}

pub type Sink<'s> = &'s mut dyn FnMut(PipelineEvent);

#[derive(Debug)]
pub struct SnippetRun {
    snippet_id: SnippetId,
    buffer: SnippetBuffer,
    diagram: Diagram,
    instrumenter: Instrumenter,
    operations: Vec<Operation>,
    units: Vec<UnitRecord>,
    stdout: String,
    failure: Option<String>,
    prelude_done: bool,
    finished: bool,
}

impl SnippetRun {
    pub fn new(snippet_id: SnippetId) -> Self {
        Self::with_diagram(Diagram::new(snippet_id))
    }

    /// Continues an existing diagram (sequence numbers and run counter) with
    /// its content cleared. Used by re-runs.
    pub fn with_diagram(previous: Diagram) -> Self {
        let snippet_id = previous.snippet_id().clone();
        let mut diagram = Diagram::new(snippet_id.clone());
        diagram.meta.seq = previous.meta.seq;
        diagram.meta.run = previous.meta.run;
        SnippetRun {
            buffer: SnippetBuffer::new(snippet_id.clone()),
            instrumenter: Instrumenter::new(snippet_id.clone()),
            snippet_id,
            diagram,
            operations: Vec::new(),
            units: Vec::new(),
            stdout: String::new(),
            failure: None,
            prelude_done: false,
            finished: false,
        }
    }

    pub fn snippet_id(&self) -> &SnippetId {
        &self.snippet_id
    }

    pub fn diagram(&self) -> &Diagram {
        &self.diagram
    }

    pub fn diagram_mut(&mut self) -> &mut Diagram {
        &mut self.diagram
    }

    pub fn program(&self) -> &InstrumentedProgram {
        self.instrumenter.program()
    }

    pub fn operations(&self) -> &[Operation] {
        &self.operations
    }

    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    /// User stdout of executed statements, probe lines removed.
    pub fn stdout(&self) -> &str {
        &self.stdout
    }

    pub fn source(&self) -> &str {
        self.buffer.text()
    }

    pub fn failure(&self) -> Option<&str> {
        self.failure.as_deref()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn push(
        &mut self,
        text: &str,
        registry: &mut TableRegistry,
        mut env: Option<&mut ExecEnv<'_>>,
        sink: Sink<'_>,
    ) -> Result<(), IngestError> {
        for unit in self.buffer.push_str(text)? {
            self.statement(unit, registry, env.as_deref_mut(), sink);
        }
        Ok(())
    }

    /// Flushes the final statement. An incomplete residue is reported as a
    /// diagnostic and marks the snippet failed.
    pub fn finish(
        &mut self,
        registry: &mut TableRegistry,
        mut env: Option<&mut ExecEnv<'_>>,
        sink: Sink<'_>,
    ) -> Result<(), IngestError> {
        self.finished = true;
        match self.buffer.finalize() {
            Ok(units) => {
                for unit in units {
                    self.statement(unit, registry, env.as_deref_mut(), sink);
                }
                Ok(())
            }
            Err(e @ IngestError::Incomplete { .. }) => {
                sink(PipelineEvent::Diagnostic(e.to_string()));
                if self.failure.is_none() {
                    self.failure = Some(e.to_string());
                }
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    /// Runs a whole source in one push.
    pub fn run_source(
        &mut self,
        source: &str,
        registry: &mut TableRegistry,
        mut env: Option<&mut ExecEnv<'_>>,
        sink: Sink<'_>,
    ) -> Result<(), IngestError> {
        self.push(source, registry, env.as_deref_mut(), sink)?;
        self.finish(registry, env, sink)
    }

    fn statement(
        &mut self,
        unit: StatementUnit,
        registry: &mut TableRegistry,
        env: Option<&mut ExecEnv<'_>>,
        sink: Sink<'_>,
    ) {
        let parsed = parse_statement(&unit);
        for d in &parsed.diagnostics {
            if d.severity == Severity::Error {
                sink(PipelineEvent::Diagnostic(format!(
                    "statement {} of {}: {}",
                    unit.index, self.snippet_id, d.message
                )));
            }
        }
        let ops = match &parsed.tree {
            Some(t) => extract_operations(t, &unit, registry),
            None => Vec::new(),
        };
        for d in self.diagram.apply_operations(&ops, registry) {
            sink(PipelineEvent::Delta(d));
        }
        let units = self
            .instrumenter
            .push_statement(&unit, parsed.tree.as_ref(), &ops, self.buffer.text());
        self.operations.extend(ops.iter().cloned());
        if let Some(env) = env {
            if self.failure.is_none() {
                self.execute(&unit, &units, &ops, env, sink);
            }
        }
    }

    fn run_unit(&mut self, unit: &ExecUnit, env: &mut ExecEnv<'_>, sink: Sink<'_>) -> ExecOutcome {
        let outcome = env.sandbox.exec_unit(unit).unwrap_or_else(|e| ExecOutcome {
            status: ExecStatus::Error,
            stdout: String::new(),
            stderr: String::new(),
            probes: Vec::new(),
            figures: Vec::new(),
            duration_ms: 0,
            error: Some(ExecError {
                unit_id: unit.unit_id.clone(),
                kind: "sandbox".into(),
                message: e.to_string(),
                traceback: String::new(),
            }),
            diagnostics: Vec::new(),
        });
        for d in &outcome.diagnostics {
            sink(PipelineEvent::Diagnostic(d.clone()));
        }
        self.units.push(UnitRecord {
            unit_id: unit.unit_id.clone(),
            kind: unit.kind,
            statement_index: unit.statement_index,
            status: outcome.status,
            duration_ms: outcome.duration_ms,
            error: outcome.error.clone(),
        });
        outcome
    }

    fn execute(
        &mut self,
        stmt: &StatementUnit,
        units: &[ExecUnit],
        ops: &[Operation],
        env: &mut ExecEnv<'_>,
        sink: Sink<'_>,
    ) {
        if !self.prelude_done {
            self.prelude_done = true;
            let prelude: Vec<ExecUnit> = self.instrumenter.prelude_units().to_vec();
            for u in &prelude {
                let o = self.run_unit(u, env, sink);
                if !o.is_ok() {
                    let msg = format!("probe prelude failed: {}", describe(&o));
                    sink(PipelineEvent::Diagnostic(msg.clone()));
                    self.failure = Some(msg);
                    return;
                }
            }
        }
        env.sandbox.expect_probes(self.instrumenter.program());

        let mut outputs: BTreeMap<NodeId, TableState> = BTreeMap::new();
        let mut figures: BTreeMap<NodeId, Vec<String>> = BTreeMap::new();
        let mut stmt_stdout = String::new();
        // ops whose user unit completed
        let mut done: Vec<NodeId> = Vec::new();
        let mut failed: Option<(Option<NodeId>, String)> = None;
        for unit in units {
            let outcome = self.run_unit(unit, env, sink);
            if unit.kind == UnitKind::UserStatement {
                stmt_stdout.push_str(&outcome.stdout);
            }
            if !outcome.is_ok() {
                let target = match unit.kind {
                    UnitKind::UserStatement => blame(ops, &unit.operations, &outcome),
                    UnitKind::Probe => unit.operations.first().cloned(),
                };
                failed = Some((target, describe(&outcome)));
                break;
            }
            if unit.kind == UnitKind::UserStatement {
                done.extend(unit.operations.iter().cloned());
            }
            for p in &outcome.probes {
                if let Some(b) = self.instrumenter.program().bindings.get(&p.probe) {
                    outputs.insert(b.node.clone(), p.table_state());
                }
            }
            if unit.kind == UnitKind::Probe && !outcome.figures.is_empty() {
                if let Some(op) = unit.operations.first() {
                    figures
                        .entry(op.clone())
                        .or_default()
                        .extend(outcome.figures.iter().cloned());
                }
            }
        }
        self.stdout.push_str(&stmt_stdout);

        let text_target = ops
            .iter()
            .rev()
            .find(|o| o.produces_result == ResultKind::Text)
            .map(|o| o.id.clone());
        let failed_node = failed.as_ref().and_then(|(n, _)| n.clone());
        for op in ops {
            if Some(&op.id) == failed_node.as_ref() || !done.contains(&op.id) {
                break;
            }
            let mut results = Vec::new();
            if op.kind == OperationKind::Visualize {
                for f in figures.remove(&op.id).unwrap_or_default() {
                    results.push((ResultKind::Figure, f));
                }
            }
            if Some(&op.id) == text_target.as_ref() {
                let text = if !stmt_stdout.is_empty() {
                    Some(stmt_stdout.clone())
                } else {
                    self.instrumenter
                        .program()
                        .result_vars
                        .get(&op.id)
                        .cloned()
                        .and_then(|var| env.sandbox.fetch_table_preview(&var, RESULT_PREVIEW_ROWS).ok())
                        .map(|p| p.to_text())
                };
                if let Some(t) = text {
                    results.push((ResultKind::Text, t));
                }
            }
            self.bind_inputs(&op.id, env);
            let outcome = RuntimeOutcome::Success {
                output: outputs.get(&op.id).cloned(),
                results,
            };
            self.bind(&op.id, outcome, env, sink);
        }
        if let Some((node, message)) = failed {
            match node {
                Some(n) => self.bind(&n, RuntimeOutcome::Failure { message: message.clone() }, env, sink),
                None => sink(PipelineEvent::Diagnostic(format!(
                    "statement {} of {} failed: {message}",
                    stmt.index, self.snippet_id
                ))),
            }
            self.failure = Some(message);
        }
    }

    /// Gives input table nodes that continue an earlier snippet's table the
    /// state that table was last bound to.
    fn bind_inputs(&mut self, op: &NodeId, env: &mut ExecEnv<'_>) {
        let inputs: Vec<NodeId> = self
            .diagram
            .edges
            .iter()
            .filter(|e| &e.to == op && e.kind == EdgeKind::Input)
            .map(|e| e.from.clone())
            .collect();
        for t in inputs {
            let Some(node) = self.diagram.node(&t) else {
                continue;
            };
            if node.class != NodeClass::Table || node.table_state.is_some() {
                continue;
            }
            let NodeDetail::Table {
                prior_occurrence: Some(prior),
                ..
            } = &node.detail
            else {
                continue;
            };
            if let Some(state) = env.table_states.get(prior).cloned() {
                env.table_states.insert(t.clone(), state.clone());
                self.diagram.bind_table_state(&t, state);
            }
        }
    }

    fn bind(&mut self, op: &NodeId, outcome: RuntimeOutcome, env: &mut ExecEnv<'_>, sink: Sink<'_>) {
        match self.diagram.bind_runtime_state(op, outcome) {
            Ok(deltas) => {
                for d in deltas {
                    if let crate::graph::DeltaEvent::NodeActivated {
                        output: Some(state),
                        table_node: Some(t),
                        ..
                    } = &d.event
                    {
                        env.table_states.insert(t.clone(), state.clone());
                    }
                    sink(PipelineEvent::Delta(d));
                }
            }
            Err(e) => sink(PipelineEvent::Diagnostic(e.to_string())),
        }
    }
}

fn describe(outcome: &ExecOutcome) -> String {
    match &outcome.error {
        Some(e) => format!("{}: {}", e.kind, e.message),
        None => format!("{:?}", outcome.status),
    }
}

/// Operation responsible for a failed user unit: the first one whose quoted
/// parameter text appears in the error message, else the first one.
fn blame(ops: &[Operation], unit_ops: &[NodeId], outcome: &ExecOutcome) -> Option<NodeId> {
    let message = outcome.error.as_ref().map(|e| e.message.as_str()).unwrap_or("");
    let candidates: Vec<&Operation> = ops.iter().filter(|o| unit_ops.contains(&o.id)).collect();
    if candidates.len() > 1 {
        for op in &candidates {
            let hit = op.params.iter().any(|p| {
                let v = p.value.trim_matches(|c| c == '\'' || c == '"');
                p.value.len() > v.len() && !v.is_empty() && message.contains(v)
            });
            if hit {
                return Some(op.id.clone());
            }
        }
    }
    candidates.first().map(|o| o.id.clone())
}
