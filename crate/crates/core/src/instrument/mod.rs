//! Chain splitting and probe planning.
//!
//! A snippet becomes a sequence of exec units: the probe prelude, then for
//! every statement its user unit(s) followed by probe units. Fluent chains
//! whose operations align one-to-one with their links are split into one
//! statement per link, joined through synthetic `__wg<k>` variables.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::extract::{Operation, OperationKind};
use crate::ids::{NodeId, ProbeId, SnippetId};
use crate::ingest::StatementUnit;
use crate::span::Span;
use crate::syntax::{chain_links, NodeKind, SyntaxNode};

/// Reserved prefix of every synthetic identifier.
pub const SYNTHETIC_PREFIX: &str = "__wg";

pub const PROBE_TEMPLATES_TOML: &str = include_str!("../../assets/probes.toml");

#[derive(Debug, Deserialize)]
pub struct ProbeTemplates {
    pub version: u32,
    pub prelude: String,
    pub table: String,
    pub figure: String,
}

static TEMPLATES: LazyLock<ProbeTemplates> = LazyLock::new(|| {
    toml::from_str(PROBE_TEMPLATES_TOML).expect("bundled probe templates")
});

impl ProbeTemplates {
    pub fn bundled() -> &'static ProbeTemplates {
        &TEMPLATES
    }

    pub fn table_probe(&self, probe: &ProbeId, var: &str) -> String {
        self.table
            .replace("{probe}", probe.as_str())
            .replace("{var}", var)
    }

    pub fn figure_probe(&self, probe: &ProbeId) -> String {
        self.figure.replace("{probe}", probe.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnitKind {
    UserStatement,
    Probe,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecUnit {
    pub unit_id: String,
    pub code: String,
    pub kind: UnitKind,
    pub snippet_id: SnippetId,
    pub statement_index: Option<usize>,
    /// Operations completed by this unit (user units) or observed (probes).
    pub operations: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeKind {
    Table,
    Figure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeBinding {
    pub node: NodeId,
    pub var: String,
    pub kind: ProbeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InstrumentedProgram {
    pub units: Vec<ExecUnit>,
    pub bindings: BTreeMap<ProbeId, ProbeBinding>,
    /// Synthetic variable → span of the chain link whose value it holds.
    pub split_map: BTreeMap<String, Span>,
    /// Variable holding the displayed value of an unassigned expression.
    pub result_vars: BTreeMap<NodeId, String>,
}

impl InstrumentedProgram {
    /// The program with probes removed and split chains left split.
    pub fn user_code(&self) -> String {
        let mut out = String::new();
        for unit in self.units.iter().filter(|u| u.kind == UnitKind::UserStatement) {
            out.push_str(&unit.code);
            out.push('\n');
        }
        out
    }

    /// Whole program as one script, probes included.
    pub fn script(&self) -> String {
        let mut out = String::new();
        for unit in &self.units {
            out.push_str(&unit.code);
            out.push('\n');
        }
        out
    }
}

/// One statement of a split chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitStatement {
    pub code: String,
    /// Variable bound by the statement, if any.
    pub var: Option<String>,
    /// Span of the link this statement evaluates.
    pub link_span: Span,
}

/// Allocates synthetic names that do not occur in the source seen so far.
#[derive(Debug, Clone, Default)]
pub struct SyntheticNames {
    next: usize,
}

impl SyntheticNames {
    pub fn fresh(&mut self, source: &str) -> String {
        loop {
            let name = format!("{SYNTHETIC_PREFIX}{}", self.next);
            self.next += 1;
            if !source.contains(&name) {
                return name;
            }
        }
    }
}

fn wrap(text: &str) -> String {
    if text.contains('\n') {
        format!("({text})")
    } else {
        text.to_string()
    }
}

/// Splits the top-level chain of an assignment or expression statement.
/// Statements that are not chains of at least two links come back as one
/// statement holding the original source. The last link of an expression
/// statement stays unbound.
pub fn split_chains(
    tree: &SyntaxNode,
    stmt: &StatementUnit,
    names: &mut SyntheticNames,
    seen_source: &str,
) -> Vec<SplitStatement> {
    let whole = || {
        vec![SplitStatement {
            code: stmt.source.clone(),
            var: match tree.kind {
                NodeKind::Assign if tree.children.len() == 2 => {
                    tree.children[0].ident().map(str::to_string)
                }
                _ => None,
            },
            link_span: stmt.range,
        }]
    };
    let target = match tree.kind {
        NodeKind::Assign if tree.children.len() == 2 && tree.children[0].is_name() => {
            Some(tree.children[0].text.clone())
        }
        NodeKind::ExprStmt => None,
        _ => return whole(),
    };
    let links = chain_links(tree);
    if links.len() < 2 {
        return whole();
    }
    let base = stmt.range.start;
    let mut out = Vec::with_capacity(links.len());
    let mut prev = String::new();
    for (i, link) in links.iter().enumerate() {
        let (piece, span) = if i == 0 {
            (wrap(&link.node.text), link.node.span)
        } else {
            let own = link.own_span(&stmt.source, base);
            (wrap(&format!("{prev}{}", own.slice_at(&stmt.source, base))), own)
        };
        let last = i + 1 == links.len();
        if last {
            let code = match &target {
                Some(t) => format!("{t} = {piece}"),
                None => piece,
            };
            out.push(SplitStatement {
                code,
                var: target.clone(),
                link_span: span,
            });
        } else {
            let var = names.fresh(seen_source);
            out.push(SplitStatement {
                code: format!("{var} = {piece}"),
                var: Some(var.clone()),
                link_span: span,
            });
            prev = var;
        }
    }
    out
}

/// Streaming instrumenter for one snippet.
#[derive(Debug)]
pub struct Instrumenter {
    snippet_id: SnippetId,
    names: SyntheticNames,
    next_probe: usize,
    program: InstrumentedProgram,
}

impl Instrumenter {
    pub fn new(snippet_id: SnippetId) -> Self {
        let mut this = Instrumenter {
            snippet_id,
            names: SyntheticNames::default(),
            next_probe: 0,
            program: InstrumentedProgram::default(),
        };
        let prelude = ProbeTemplates::bundled().prelude.trim().to_string();
        this.add_unit(prelude, UnitKind::Probe, None, Vec::new());
        this
    }

    pub fn program(&self) -> &InstrumentedProgram {
        &self.program
    }

    pub fn finish(self) -> InstrumentedProgram {
        self.program
    }

    /// Units of the prelude, available before any statement arrives.
    pub fn prelude_units(&self) -> &[ExecUnit] {
        &self.program.units[..1]
    }

    fn add_unit(
        &mut self,
        code: String,
        kind: UnitKind,
        statement_index: Option<usize>,
        operations: Vec<NodeId>,
    ) -> usize {
        let unit_id = format!("{}.u{}", self.snippet_id, self.program.units.len());
        self.program.units.push(ExecUnit {
            unit_id,
            code,
            kind,
            snippet_id: self.snippet_id.clone(),
            statement_index,
            operations,
        });
        self.program.units.len() - 1
    }

    fn probe(&mut self, node: &NodeId, var: &str, kind: ProbeKind, stmt: usize) {
        let id = ProbeId::new(format!("{}.p{}", self.snippet_id, self.next_probe));
        self.next_probe += 1;
        let templates = ProbeTemplates::bundled();
        let code = match kind {
            ProbeKind::Table => templates.table_probe(&id, var),
            ProbeKind::Figure => templates.figure_probe(&id),
        };
        self.program.bindings.insert(
            id,
            ProbeBinding {
                node: node.clone(),
                var: var.to_string(),
                kind,
            },
        );
        self.add_unit(code, UnitKind::Probe, Some(stmt), vec![node.clone()]);
    }

    /// Instruments one statement and returns the units appended for it.
    /// `seen_source` is the snippet text received so far, used for name
    /// hygiene.
    pub fn push_statement(
        &mut self,
        stmt: &StatementUnit,
        tree: Option<&SyntaxNode>,
        ops: &[Operation],
        seen_source: &str,
    ) -> Vec<ExecUnit> {
        let first_new = self.program.units.len();
        let op_ids: Vec<NodeId> = ops.iter().map(|o| o.id.clone()).collect();
        let Some(tree) = tree else {
            self.add_unit(stmt.source.clone(), UnitKind::UserStatement, Some(stmt.index), op_ids);
            return self.program.units[first_new..].to_vec();
        };
        let aligned = !ops.is_empty()
            && ops
                .iter()
                .enumerate()
                .all(|(i, o)| o.link_index == Some(i));
        let mut pieces = if aligned {
            split_chains(tree, stmt, &mut self.names, seen_source)
        } else {
            vec![]
        };
        if pieces.len() != ops.len() || !aligned {
            pieces = vec![SplitStatement {
                code: stmt.source.clone(),
                var: None,
                link_span: stmt.range,
            }];
        }
        let split = pieces.len() > 1;
        let last_op = ops.last();
        // unassigned expressions whose value we observe get a synthetic name
        let bind_expression = tree.kind == NodeKind::ExprStmt
            && last_op.is_some_and(|o| {
                o.output_table.is_none()
                    && (o.kind.yields_table()
                        || o.produces_result == crate::extract::ResultKind::Text)
                    && o.kind != OperationKind::Visualize
            });
        let n = pieces.len();
        for (i, piece) in pieces.into_iter().enumerate() {
            let last = i + 1 == n;
            let unit_ops: Vec<NodeId> = if split {
                vec![ops[i].id.clone()]
            } else {
                op_ids.clone()
            };
            let mut code = piece.code;
            let mut var = piece.var.clone();
            if last && bind_expression {
                let syn = self.names.fresh(seen_source);
                let expr = if split {
                    code
                } else {
                    wrap(&tree.children[0].text)
                };
                code = format!("{syn} = {expr}");
                var = Some(syn.clone());
                if let Some(op) = last_op {
                    self.program.result_vars.insert(op.id.clone(), syn);
                }
            }
            if split && !last {
                if let Some(v) = &var {
                    self.program.split_map.insert(v.clone(), piece.link_span);
                }
            }
            self.add_unit(code, UnitKind::UserStatement, Some(stmt.index), unit_ops);
            // probes for this unit
            let probed: Vec<&Operation> = if split {
                vec![&ops[i]]
            } else if last {
                ops.iter().collect()
            } else {
                vec![]
            };
            for op in probed {
                let is_last_op = last_op.is_some_and(|l| l.id == op.id);
                let table_var = if split && !last {
                    var.clone()
                } else if let Some(out) = &op.output_table {
                    Some(out.clone())
                } else if is_last_op {
                    var.clone()
                } else {
                    None
                };
                if op.yields_table() {
                    if let Some(v) = table_var {
                        self.probe(&op.id, &v, ProbeKind::Table, stmt.index);
                    }
                }
                if op.kind == OperationKind::Visualize {
                    self.probe(&op.id, "", ProbeKind::Figure, stmt.index);
                }
            }
        }
        self.program.units[first_new..].to_vec()
    }
}

trait SliceAt {
    fn slice_at<'a>(&self, source: &'a str, base: usize) -> &'a str;
}

impl SliceAt for Span {
    fn slice_at<'a>(&self, source: &'a str, base: usize) -> &'a str {
        &source[self.start - base..self.end - base]
    }
}

/// Instruments a whole snippet in one pass, extracting against `registry`.
pub fn instrument_snippet(
    snippet_id: &SnippetId,
    source: &str,
    registry: &mut crate::extract::TableRegistry,
) -> Result<(InstrumentedProgram, Vec<Operation>), crate::ingest::IngestError> {
    let units = crate::ingest::split_statements(snippet_id.clone(), source)?;
    let mut inst = Instrumenter::new(snippet_id.clone());
    let mut all = Vec::new();
    for unit in &units {
        let tree = crate::syntax::parse_statement(unit).tree;
        let ops = match &tree {
            Some(t) => crate::extract::extract_operations(t, unit, registry),
            None => Vec::new(),
        };
        inst.push_statement(unit, tree.as_ref(), &ops, source);
        all.extend(ops);
    }
    Ok((inst.finish(), all))
}
