//! Per-snippet diagrams and the ordered deltas that build and activate them.
//!
//! Node ids: operation nodes reuse the operation id, table nodes are
//! `<snippet>.t<k>`, result nodes `<snippet>.r<k>`, edges `<snippet>.e<k>`.
//! A `CrossSnippetLineage` edge starts at a node of an earlier diagram.

mod export;

pub use export::{export, import_graph_json, ExportFormat};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{Operation, OperationKind, Param, ResultKind, TableRegistry};
use crate::ids::{EdgeId, NodeId, SnippetId};
use crate::span::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeClass {
    Table,
    Operation,
    Result,
}

impl NodeClass {
    pub fn name(self) -> &'static str {
        match self {
            Self::Table => "table",
            Self::Operation => "operation",
            Self::Result => "result",
        }
    }

    pub fn color(self) -> &'static str {
        match self {
            Self::Table => "yellow",
            Self::Operation => "pink",
            Self::Result => "white",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeState {
    Pending,
    Active,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableState {
    pub rows: u64,
    pub cols: u64,
    pub columns: Vec<String>,
}

impl TableState {
    pub fn new(rows: u64, columns: Vec<String>) -> Self {
        TableState {
            rows,
            cols: columns.len() as u64,
            columns,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.cols == self.columns.len() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Rank {
    pub row: u32,
    pub col: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpans {
    /// Highlight span: the operation text, or the defining statement of a table.
    pub code: Span,
    pub statement: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "lowercase")]
pub enum NodeDetail {
    Table {
        variable: String,
        snippet_id: SnippetId,
        prior_occurrence: Option<NodeId>,
        /// Re-binding generation of the variable within this snippet.
        generation: u32,
        /// Referenced without a registry entry.
        dangling: bool,
    },
    Operation {
        operation: Operation,
        input_states: Vec<BoundState>,
    },
    Result {
        kind: ResultKind,
        /// Text output, or the figure artifact path.
        payload: String,
        operation: NodeId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundState {
    pub node: NodeId,
    pub state: TableState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub class: NodeClass,
    pub label: String,
    pub state: NodeState,
    pub params: Vec<Param>,
    pub spans: NodeSpans,
    /// Tables: the bound runtime state. Operations: their output state.
    pub table_state: Option<TableState>,
    pub rank: Rank,
    pub detail: NodeDetail,
}

impl Node {
    pub fn operation(&self) -> Option<&Operation> {
        match &self.detail {
            NodeDetail::Operation { operation, .. } => Some(operation),
            _ => None,
        }
    }

    pub fn variable(&self) -> Option<&str> {
        match &self.detail {
            NodeDetail::Table { variable, .. } => Some(variable),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeKind {
    Input,
    Assignment,
    ResultGeneration,
    OperationChain,
    CrossSnippetLineage,
}

impl EdgeKind {
    /// Required (from, to) classes.
    pub fn endpoints(self) -> (NodeClass, NodeClass) {
        match self {
            Self::Input => (NodeClass::Table, NodeClass::Operation),
            Self::Assignment => (NodeClass::Operation, NodeClass::Table),
            Self::ResultGeneration => (NodeClass::Operation, NodeClass::Result),
            Self::OperationChain => (NodeClass::Operation, NodeClass::Operation),
            Self::CrossSnippetLineage => (NodeClass::Table, NodeClass::Table),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub kind: EdgeKind,
    pub from: NodeId,
    pub to: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDiagnostic {
    pub node: Option<NodeId>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum DeltaEvent {
    NodeAdded {
        node: Box<Node>,
    },
    EdgeAdded {
        edge: Edge,
    },
    NodeActivated {
        node: NodeId,
        inputs: Vec<BoundState>,
        output: Option<TableState>,
        /// Table node bound to the same output state.
        table_node: Option<NodeId>,
    },
    NodeFailed {
        node: NodeId,
        message: String,
    },
    GlyphFlow {
        from: NodeId,
        to: NodeId,
        state: TableState,
    },
    /// Node states returned to Pending for a new run.
    Reset {
        run: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDelta {
    pub snippet_id: SnippetId,
    pub seq: u64,
    pub event: DeltaEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Layout {
    /// Column of each table node produced in this snippet.
    pub table_cols: BTreeMap<NodeId, u32>,
    /// Table nodes whose column has been continued by a later statement.
    pub continued: BTreeSet<NodeId>,
    pub next_col: u32,
    /// Column of each statement chain, by statement index.
    pub statement_cols: BTreeMap<usize, u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagramMeta {
    pub snippet_id: SnippetId,
    /// Seq of the last delta emitted.
    pub seq: u64,
    pub run: u32,
    pub stale: bool,
    pub diagnostics: Vec<GraphDiagnostic>,
    /// Newest table node per variable in this snippet.
    pub current_tables: BTreeMap<String, NodeId>,
    pub counters: Counters,
    pub layout: Layout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub tables: u32,
    pub results: u32,
    pub edges: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagram {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub meta: DiagramMeta,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("node {node} is {state:?}, expected Pending")]
    NotPending { node: NodeId, state: NodeState },
    #[error("node {0} is not an operation")]
    NotOperation(NodeId),
    #[error("unknown export format {0:?}")]
    UnknownFormat(String),
    #[error("graph-json import failed: {0}")]
    Import(String),
}

/// Execution outcome of one operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuntimeOutcome {
    Success {
        output: Option<TableState>,
        results: Vec<(ResultKind, String)>,
    },
    Failure {
        message: String,
    },
}

impl Diagram {
    pub fn new(snippet_id: SnippetId) -> Self {
        Diagram {
            nodes: Vec::new(),
            edges: Vec::new(),
            meta: DiagramMeta {
                snippet_id,
                seq: 0,
                run: 0,
                stale: false,
                diagnostics: Vec::new(),
                current_tables: BTreeMap::new(),
                counters: Counters::default(),
                layout: Layout::default(),
            },
        }
    }

    pub fn snippet_id(&self) -> &SnippetId {
        &self.meta.snippet_id
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.iter().find(|n| &n.id == id)
    }

    fn node_mut(&mut self, id: &NodeId) -> Option<&mut Node> {
        self.nodes.iter_mut().find(|n| &n.id == id)
    }

    pub fn edge(&self, id: &EdgeId) -> Option<&Edge> {
        self.edges.iter().find(|e| &e.id == id)
    }

    pub fn nodes_of(&self, class: NodeClass) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(move |n| n.class == class)
    }

    pub fn edges_of(&self, kind: EdgeKind) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.kind == kind)
    }

    pub fn operations(&self) -> impl Iterator<Item = &Operation> {
        self.nodes.iter().filter_map(Node::operation)
    }

    fn emit(&mut self, out: &mut Vec<GraphDelta>, event: DeltaEvent) {
        self.meta.seq += 1;
        out.push(GraphDelta {
            snippet_id: self.meta.snippet_id.clone(),
            seq: self.meta.seq,
            event,
        });
    }

    fn add_node(&mut self, out: &mut Vec<GraphDelta>, node: Node) {
        self.nodes.push(node.clone());
        self.emit(out, DeltaEvent::NodeAdded { node: Box::new(node) });
    }

    fn add_edge(&mut self, out: &mut Vec<GraphDelta>, kind: EdgeKind, from: &NodeId, to: &NodeId) {
        let edge = Edge {
            id: EdgeId::new(format!("{}.e{}", self.meta.snippet_id, self.meta.counters.edges)),
            kind,
            from: from.clone(),
            to: to.clone(),
        };
        self.meta.counters.edges += 1;
        self.edges.push(edge.clone());
        self.emit(out, DeltaEvent::EdgeAdded { edge });
    }

    fn table_node(
        &mut self,
        variable: &str,
        prior: Option<NodeId>,
        dangling: bool,
        spans: NodeSpans,
        rank: Rank,
    ) -> Node {
        let id = NodeId::new(format!("{}.t{}", self.meta.snippet_id, self.meta.counters.tables));
        self.meta.counters.tables += 1;
        let generation = self
            .nodes
            .iter()
            .filter(|n| n.variable() == Some(variable))
            .count() as u32;
        Node {
            id,
            class: NodeClass::Table,
            label: variable.to_string(),
            state: NodeState::Pending,
            params: Vec::new(),
            spans,
            table_state: None,
            rank,
            detail: NodeDetail::Table {
                variable: variable.to_string(),
                snippet_id: self.meta.snippet_id.clone(),
                prior_occurrence: prior,
                generation,
                dangling,
            },
        }
    }

    /// Adds Pending nodes and edges for `ops`, in order, and records the new
    /// table nodes in `registry`.
    pub fn apply_operations(
        &mut self,
        ops: &[Operation],
        registry: &mut TableRegistry,
    ) -> Vec<GraphDelta> {
        let mut out = Vec::new();
        for op in ops {
            self.apply_one(op, registry, &mut out);
        }
        out
    }

    fn statement_col(&mut self, op: &Operation) -> u32 {
        if let Some(col) = self.meta.layout.statement_cols.get(&op.statement_index) {
            return *col;
        }
        let continued = op.input_tables.first().and_then(|name| {
            let node = self.meta.current_tables.get(name)?;
            let col = *self.meta.layout.table_cols.get(node)?;
            self.meta.layout.continued.insert(node.clone()).then_some(col)
        });
        let col = continued.unwrap_or_else(|| {
            let c = self.meta.layout.next_col;
            self.meta.layout.next_col += 1;
            c
        });
        self.meta.layout.statement_cols.insert(op.statement_index, col);
        col
    }

    fn apply_one(&mut self, op: &Operation, registry: &mut TableRegistry, out: &mut Vec<GraphDelta>) {
        let snippet = self.meta.snippet_id.clone();
        let col = self.statement_col(op);
        let mut row = 0;
        let mut inputs = Vec::new();
        for name in &op.input_tables {
            let id = match self.meta.current_tables.get(name) {
                Some(id) => id.clone(),
                None => {
                    let entry = registry.get(name);
                    let prior = entry
                        .filter(|e| e.last_seen != snippet)
                        .and_then(|e| e.last_node.clone());
                    let dangling = entry.is_none();
                    let spans = NodeSpans {
                        code: op.statement_span,
                        statement: op.statement_span,
                    };
                    let node =
                        self.table_node(name, prior.clone(), dangling, spans, Rank { row: 0, col });
                    let id = node.id.clone();
                    self.add_node(out, node);
                    if dangling {
                        self.meta.diagnostics.push(GraphDiagnostic {
                            node: Some(id.clone()),
                            message: format!("table `{name}` is not registered"),
                        });
                    }
                    if let Some(p) = prior {
                        self.add_edge(out, EdgeKind::CrossSnippetLineage, &p, &id);
                    }
                    self.meta.current_tables.insert(name.clone(), id.clone());
                    registry.touch(name, &snippet, &id);
                    id
                }
            };
            if let Some(n) = self.node(&id) {
                row = row.max(n.rank.row + 1);
            }
            inputs.push(id);
        }
        if let Some(prev) = op.chain_prev.as_ref().and_then(|p| self.node(p)) {
            row = row.max(prev.rank.row + 1);
        }
        let node = Node {
            id: op.id.clone(),
            class: NodeClass::Operation,
            label: op.label(),
            state: NodeState::Pending,
            params: op.params.clone(),
            spans: NodeSpans {
                code: op.span,
                statement: op.statement_span,
            },
            table_state: None,
            rank: Rank { row, col },
            detail: NodeDetail::Operation {
                operation: op.clone(),
                input_states: Vec::new(),
            },
        };
        self.add_node(out, node);
        for input in &inputs {
            self.add_edge(out, EdgeKind::Input, input, &op.id);
        }
        if let Some(prev) = &op.chain_prev {
            self.add_edge(out, EdgeKind::OperationChain, prev, &op.id);
        }
        if let Some(name) = &op.output_table {
            let spans = NodeSpans {
                code: op.statement_span,
                statement: op.statement_span,
            };
            let node = self.table_node(name, None, false, spans, Rank { row: row + 1, col });
            let id = node.id.clone();
            self.add_node(out, node);
            self.add_edge(out, EdgeKind::Assignment, &op.id, &id);
            self.meta.layout.table_cols.insert(id.clone(), col);
            self.meta.current_tables.insert(name.clone(), id.clone());
            registry.touch(name, &snippet, &id);
        }
    }

    fn assignment_target(&self, op: &NodeId) -> Option<NodeId> {
        self.edges
            .iter()
            .find(|e| e.kind == EdgeKind::Assignment && &e.from == op)
            .map(|e| e.to.clone())
    }

    /// Node whose glyph flows into `op`: the chain predecessor, else the
    /// first input table.
    fn predecessor(&self, op: &NodeId) -> Option<NodeId> {
        let chain = self
            .edges
            .iter()
            .find(|e| e.kind == EdgeKind::OperationChain && &e.to == op);
        let input = || {
            self.edges
                .iter()
                .find(|e| e.kind == EdgeKind::Input && &e.to == op)
        };
        chain.or_else(input).map(|e| e.from.clone())
    }

    /// Binds the execution outcome of a Pending operation node.
    pub fn bind_runtime_state(
        &mut self,
        op_id: &NodeId,
        outcome: RuntimeOutcome,
    ) -> Result<Vec<GraphDelta>, GraphError> {
        let node = self
            .node(op_id)
            .ok_or_else(|| GraphError::UnknownNode(op_id.to_string()))?;
        if node.class != NodeClass::Operation {
            return Err(GraphError::NotOperation(op_id.clone()));
        }
        if node.state != NodeState::Pending {
            return Err(GraphError::NotPending {
                node: op_id.clone(),
                state: node.state,
            });
        }
        let mut out = Vec::new();
        match outcome {
            RuntimeOutcome::Failure { message } => {
                if let Some(n) = self.node_mut(op_id) {
                    n.state = NodeState::Failed;
                }
                self.emit(
                    &mut out,
                    DeltaEvent::NodeFailed {
                        node: op_id.clone(),
                        message,
                    },
                );
            }
            RuntimeOutcome::Success { output, results } => {
                let inputs: Vec<BoundState> = self
                    .edges
                    .iter()
                    .filter(|e| {
                        &e.to == op_id
                            && matches!(e.kind, EdgeKind::Input | EdgeKind::OperationChain)
                    })
                    .filter_map(|e| {
                        let state = self.node(&e.from)?.table_state.clone()?;
                        Some(BoundState {
                            node: e.from.clone(),
                            state,
                        })
                    })
                    .collect();
                let table_node = output.as_ref().and_then(|_| self.assignment_target(op_id));
                let pred = self.predecessor(op_id);
                if let Some(n) = self.node_mut(op_id) {
                    n.state = NodeState::Active;
                    n.table_state = output.clone();
                    if let NodeDetail::Operation { input_states, .. } = &mut n.detail {
                        *input_states = inputs.clone();
                    }
                }
                if let Some(t) = &table_node {
                    if let Some(n) = self.node_mut(t) {
                        n.state = NodeState::Active;
                        n.table_state = output.clone();
                    }
                }
                // input tables from earlier snippets carry the state they
                // were last seen with
                self.emit(
                    &mut out,
                    DeltaEvent::NodeActivated {
                        node: op_id.clone(),
                        inputs: inputs.clone(),
                        output: output.clone(),
                        table_node: table_node.clone(),
                    },
                );
                let glyph = match (&pred, &output) {
                    (Some(p), Some(state)) => Some((p.clone(), op_id.clone(), state.clone())),
                    (None, Some(state)) => table_node
                        .clone()
                        .map(|t| (op_id.clone(), t, state.clone())),
                    (Some(p), None) => inputs
                        .iter()
                        .find(|b| &b.node == p)
                        .map(|b| (p.clone(), op_id.clone(), b.state.clone())),
                    (None, None) => None,
                };
                if let Some((from, to, state)) = glyph {
                    self.emit(&mut out, DeltaEvent::GlyphFlow { from, to, state });
                }
                let op_span = self.node(op_id).map(|n| n.spans).unwrap_or(NodeSpans {
                    code: Span::new(0, 0),
                    statement: Span::new(0, 0),
                });
                let rank = self.node(op_id).map(|n| n.rank).unwrap_or_default();
                for (kind, payload) in results {
                    let id = NodeId::new(format!(
                        "{}.r{}",
                        self.meta.snippet_id, self.meta.counters.results
                    ));
                    self.meta.counters.results += 1;
                    let label = match kind {
                        ResultKind::Figure => "figure".to_string(),
                        _ => "text".to_string(),
                    };
                    let node = Node {
                        id: id.clone(),
                        class: NodeClass::Result,
                        label,
                        state: NodeState::Active,
                        params: Vec::new(),
                        spans: op_span,
                        table_state: None,
                        rank: Rank {
                            row: rank.row + 1,
                            col: rank.col,
                        },
                        detail: NodeDetail::Result {
                            kind,
                            payload,
                            operation: op_id.clone(),
                        },
                    };
                    self.add_node(&mut out, node);
                    self.add_edge(&mut out, EdgeKind::ResultGeneration, op_id, &id);
                }
            }
        }
        Ok(out)
    }

    /// Binds a runtime state to an input table node first referenced in this
    /// snippet (its producer lives in an earlier snippet).
    pub fn bind_table_state(&mut self, table: &NodeId, state: TableState) {
        if let Some(n) = self.node_mut(table) {
            if n.class == NodeClass::Table {
                n.table_state = Some(state);
                n.state = NodeState::Active;
            }
        }
    }

    /// Returns every node to Pending and drops result nodes, for a new run.
    pub fn reset_states(&mut self) -> Vec<GraphDelta> {
        let results: BTreeSet<NodeId> = self
            .nodes_of(NodeClass::Result)
            .map(|n| n.id.clone())
            .collect();
        self.nodes.retain(|n| !results.contains(&n.id));
        self.edges.retain(|e| !results.contains(&e.to));
        for n in &mut self.nodes {
            n.state = NodeState::Pending;
            n.table_state = None;
            if let NodeDetail::Operation { input_states, .. } = &mut n.detail {
                input_states.clear();
            }
        }
        self.meta.run += 1;
        let mut out = Vec::new();
        let run = self.meta.run;
        self.emit(&mut out, DeltaEvent::Reset { run });
        out
    }

    /// Highlight span of a node. An `OperationChain` edge id stands for the
    /// synthetic table between two links and maps to the earlier link.
    pub fn node_code_span(&self, id: &str) -> Result<Span, GraphError> {
        if let Some(n) = self.node(&NodeId::from(id)) {
            return Ok(n.spans.code);
        }
        self.edge(&EdgeId::from(id))
            .filter(|e| e.kind == EdgeKind::OperationChain)
            .and_then(|e| self.node(&e.from))
            .map(|n| n.spans.code)
            .ok_or_else(|| GraphError::UnknownNode(id.to_string()))
    }

    /// Re-indexes spans after the bytes `[start, end)` were replaced by text
    /// `delta` bytes longer. Spans after the region move; spans enclosing it
    /// stretch.
    pub fn reindex_spans(&mut self, start: usize, end: usize, delta: isize) {
        let fix = |s: &mut Span| {
            if s.start >= end && !(s.start == start && start == end) {
                *s = s.shifted(delta);
            } else if s.start <= start && s.end >= end {
                *s = Span::new(s.start, (s.end as isize + delta) as usize);
            }
        };
        for n in &mut self.nodes {
            fix(&mut n.spans.code);
            fix(&mut n.spans.statement);
            for p in &mut n.params {
                fix(&mut p.value_span);
            }
            if let NodeDetail::Operation { operation, .. } = &mut n.detail {
                fix(&mut operation.span);
                fix(&mut operation.statement_span);
                for p in &mut operation.params {
                    fix(&mut p.value_span);
                }
            }
        }
    }

    /// Replaces the displayed value of a parameter.
    pub fn set_param(&mut self, node: &NodeId, name: &str, value: &str) -> Result<(), GraphError> {
        let n = self
            .node_mut(node)
            .ok_or_else(|| GraphError::UnknownNode(node.to_string()))?;
        let set = |params: &mut Vec<Param>| {
            if let Some(p) = params.iter_mut().find(|p| p.name == name) {
                p.value = value.to_string();
            }
        };
        set(&mut n.params);
        if let NodeDetail::Operation { operation, .. } = &mut n.detail {
            set(&mut operation.params);
        }
        Ok(())
    }

    /// Operation nodes in topological (statement, chain) order.
    pub fn operation_ids(&self) -> Vec<NodeId> {
        let mut ops: Vec<&Operation> = self.operations().collect();
        ops.sort_by_key(|o| (o.statement_index, o.chain_position));
        ops.into_iter().map(|o| o.id.clone()).collect()
    }

    pub fn count_kind(&self, kind: OperationKind) -> usize {
        self.operations().filter(|o| o.kind == kind).count()
    }
}
