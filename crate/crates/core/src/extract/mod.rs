//! Operation extraction over parsed statements.
//!
//! Each statement yields zero or more operations ordered by chain position.
//! A chained operation reads the output of its predecessor (`chain_prev`);
//! `input_tables` lists only the table variables it reads directly.

mod classify;
mod registry;

pub use classify::{
    classify_call, classify_call_with, ClassificationTable, Receiver, CLASSIFICATION_TOML,
};
pub use registry::{TableEntry, TableOrigin, TableRegistry};

use serde::{Deserialize, Serialize};

use crate::ids::{NodeId, SnippetId};
use crate::ingest::StatementUnit;
use crate::span::Span;
use crate::syntax::{chain_links, tokenize, ChainLink, LinkKind, NodeKind, SyntaxNode, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OperationKind {
    LoadData,
    Inspect,
    Select,
    Filter,
    Sort,
    Transform,
    Group,
    Aggregate,
    Merge,
    AddColumn,
    Visualize,
    Opaque,
}

impl OperationKind {
    pub const ALL: [OperationKind; 12] = [
        Self::LoadData,
        Self::Inspect,
        Self::Select,
        Self::Filter,
        Self::Sort,
        Self::Transform,
        Self::Group,
        Self::Aggregate,
        Self::Merge,
        Self::AddColumn,
        Self::Visualize,
        Self::Opaque,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::LoadData => "LoadData",
            Self::Inspect => "Inspect",
            Self::Select => "Select",
            Self::Filter => "Filter",
            Self::Sort => "Sort",
            Self::Transform => "Transform",
            Self::Group => "Group",
            Self::Aggregate => "Aggregate",
            Self::Merge => "Merge",
            Self::AddColumn => "AddColumn",
            Self::Visualize => "Visualize",
            Self::Opaque => "Opaque",
        }
    }

    /// Whether the operation's value is a table that may be bound to a name.
    pub fn yields_table(self) -> bool {
        !matches!(self, Self::Inspect | Self::Visualize)
    }
}

impl std::fmt::Display for OperationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResultKind {
    None,
    Text,
    Figure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    /// Verbatim source of the value.
    pub value: String,
    pub value_span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operation {
    pub id: NodeId,
    pub kind: OperationKind,
    /// Method, function or accessor the operation was recognised by.
    pub callee: Option<String>,
    pub params: Vec<Param>,
    pub input_tables: Vec<String>,
    pub chain_prev: Option<NodeId>,
    pub output_table: Option<String>,
    pub produces_result: ResultKind,
    pub span: Span,
    pub statement_span: Span,
    pub statement_index: usize,
    pub chain_position: usize,
    /// Index into `chain_links` of the statement value, for chain operations.
    pub link_index: Option<usize>,
    pub snippet_id: SnippetId,
}

impl Operation {
    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Whether the operation's value is a table: its kind always yields
    /// one, or it is a table-valued Inspect bound to a name.
    pub fn yields_table(&self) -> bool {
        self.kind.yields_table() || self.output_table.is_some()
    }

    pub fn label(&self) -> String {
        match &self.callee {
            Some(c) => format!("{} {}", self.kind, c),
            None => self.kind.to_string(),
        }
    }
}

/// Extracts the operations of one statement and updates `registry` with any
/// table binding it makes.
pub fn extract_operations(
    tree: &SyntaxNode,
    stmt: &StatementUnit,
    registry: &mut TableRegistry,
) -> Vec<Operation> {
    let ex = Extractor {
        stmt,
        registry,
        table: ClassificationTable::bundled(),
        ops: Vec::new(),
    };
    ex.run(tree)
}

enum Binding<'t> {
    None,
    /// Plain `name = value`.
    Name(&'t str),
}

struct Extractor<'a> {
    stmt: &'a StatementUnit,
    registry: &'a mut TableRegistry,
    table: &'static ClassificationTable,
    ops: Vec<Operation>,
}

fn dedup_push(list: &mut Vec<String>, name: &str) {
    if !list.iter().any(|n| n == name) {
        list.push(name.to_string());
    }
}

fn is_full_slice(node: &SyntaxNode) -> bool {
    matches!(
        node.kind,
        NodeKind::Slice {
            lower: false,
            upper: false,
            step: false
        }
    )
}

fn is_string_list(node: &SyntaxNode) -> bool {
    match node.kind {
        NodeKind::StringLit => true,
        NodeKind::ListExpr => !node.children.is_empty(),
        _ => false,
    }
}

fn is_mask_like(node: &SyntaxNode) -> bool {
    match &node.kind {
        NodeKind::Compare { .. } | NodeKind::BoolOp { .. } | NodeKind::Name => true,
        NodeKind::BinOp { op } => op == "&" || op == "|" || op == "^",
        NodeKind::UnaryOp { op } => op == "~" || op == "not",
        NodeKind::Call | NodeKind::Attribute { .. } | NodeKind::Subscript => true,
        _ => false,
    }
}

const LOCATORS: &[&str] = &["loc", "iloc", "at", "iat"];

impl<'a> Extractor<'a> {
    fn run(mut self, tree: &SyntaxNode) -> Vec<Operation> {
        let binding = match &tree.kind {
            NodeKind::Assign if tree.children.len() == 2 => {
                let target = &tree.children[0];
                let value = &tree.children[1];
                match target.kind {
                    NodeKind::Name => {
                        self.value_ops(value);
                        Binding::Name(target.text.as_str())
                    }
                    NodeKind::Subscript | NodeKind::Attribute { .. } => {
                        self.item_assignment(tree, target, value);
                        Binding::None
                    }
                    _ => {
                        self.opaque_if_tables(tree);
                        Binding::None
                    }
                }
            }
            NodeKind::ExprStmt => {
                self.value_ops(&tree.children[0]);
                self.expression_results();
                self.inplace_output(&tree.children[0]);
                Binding::None
            }
            _ => {
                self.opaque_if_tables(tree);
                Binding::None
            }
        };
        if let Binding::Name(name) = binding {
            self.bind(name);
        }
        self.ops
    }

    fn bind(&mut self, name: &str) {
        let table = self.table;
        let last = self.ops.last_mut().filter(|op| {
            op.kind.yields_table()
                || (op.kind == OperationKind::Inspect
                    && op.link_index.is_some()
                    && op
                        .callee
                        .as_deref()
                        .and_then(|c| c.rsplit('.').next())
                        .is_some_and(|c| table.is_table_valued_inspect(c)))
        });
        match last {
            Some(op) => {
                op.output_table = Some(name.to_string());
                op.produces_result = match op.kind {
                    OperationKind::Inspect => ResultKind::None,
                    _ => op.produces_result,
                };
                let origin = if self.ops.len() == 1 && self.ops[0].kind == OperationKind::LoadData {
                    TableOrigin::Loaded
                } else {
                    TableOrigin::Derived
                };
                let id = self.ops.last().map(|o| o.id.clone()).unwrap_or_default();
                self.registry
                    .register(name, origin, &self.stmt.snippet_id, &id);
            }
            None => {
                // rebinding to a non-table value
                self.registry.remove(name);
            }
        }
    }

    fn next_id(&self) -> NodeId {
        NodeId::new(format!(
            "{}.{}.{}",
            self.stmt.snippet_id,
            self.stmt.index,
            self.ops.len()
        ))
    }

    fn push(
        &mut self,
        kind: OperationKind,
        callee: Option<String>,
        params: Vec<Param>,
        input_tables: Vec<String>,
        span: Span,
        link_index: Option<usize>,
    ) -> NodeId {
        let id = self.next_id();
        let chain_prev = if link_index.is_some_and(|i| i > 0) {
            self.ops.last().map(|o| o.id.clone())
        } else {
            None
        };
        let produces_result = match kind {
            OperationKind::Inspect => ResultKind::Text,
            OperationKind::Visualize => ResultKind::Figure,
            _ => ResultKind::None,
        };
        self.ops.push(Operation {
            id: id.clone(),
            kind,
            callee,
            params,
            input_tables,
            chain_prev,
            output_table: None,
            produces_result,
            span,
            statement_span: self.stmt.range,
            statement_index: self.stmt.index,
            chain_position: self.ops.len(),
            link_index,
            snippet_id: self.stmt.snippet_id.clone(),
        });
        id
    }

    /// Registered table names referenced anywhere in `node`, in source order.
    fn table_refs(&self, node: &SyntaxNode) -> Vec<String> {
        let mut out = Vec::new();
        node.walk(&mut |n| match n.kind {
            NodeKind::Name if self.registry.contains(&n.text) => dedup_push(&mut out, &n.text),
            NodeKind::Opaque => {
                for name in self.opaque_refs(&n.text) {
                    dedup_push(&mut out, &name);
                }
            }
            _ => {}
        });
        out
    }

    /// Registered names among the free-standing identifiers of unparsed text.
    fn opaque_refs(&self, text: &str) -> Vec<String> {
        let Ok(tokens) = tokenize(text, 0) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for (i, tok) in tokens.iter().enumerate() {
            if tok.kind != TokenKind::Name || !self.registry.contains(&tok.text) {
                continue;
            }
            let after_dot = i > 0 && tokens[i - 1].is_op(".");
            let keyword = tokens.get(i + 1).is_some_and(|t| t.is_op("="))
                && i > 0
                && (tokens[i - 1].is_op("(") || tokens[i - 1].is_op(","));
            if !after_dot && !keyword {
                dedup_push(&mut out, &tok.text);
            }
        }
        out
    }

    fn opaque_if_tables(&mut self, node: &SyntaxNode) {
        let refs = self.table_refs(node);
        if !refs.is_empty() {
            self.push(OperationKind::Opaque, None, Vec::new(), refs, node.span, None);
        }
    }

    fn value_ops(&mut self, expr: &SyntaxNode) {
        let links = chain_links(expr);
        if let Some(first) = links.first() {
            let root = first.receiver.text.as_str();
            if self.registry.contains(root) {
                self.chain_ops(&links, Receiver::Table, Some(root));
                return;
            }
            if self.table.is_loader(root) && first.kind == LinkKind::Call {
                let kind = classify_call(
                    &first.path.join("."),
                    Receiver::LoaderNamespace,
                    first.args(),
                );
                let loads = kind == OperationKind::LoadData;
                // a combine of unknown values reads no table
                if loads || (kind == OperationKind::Merge && !self.table_refs(expr).is_empty()) {
                    self.chain_ops(&links, Receiver::LoaderNamespace, None);
                    return;
                }
            }
            if self.table.is_plotting(root) {
                let refs = self.table_refs(expr);
                if !refs.is_empty() {
                    let (params, callee) = match expr.kind {
                        NodeKind::Call => {
                            let callee = links.last().map(|l| l.path.join("."));
                            let name = callee.clone().unwrap_or_default();
                            (self.call_params(&name, &expr.children[1..], Receiver::PlotNamespace), callee)
                        }
                        _ => (Vec::new(), None),
                    };
                    self.push(OperationKind::Visualize, callee, params, refs, expr.span, None);
                }
                return;
            }
            self.opaque_if_tables(expr);
            return;
        }
        match expr.kind {
            NodeKind::Call
                if expr.children[0]
                    .ident()
                    .is_some_and(|f| self.table.is_display_function(f)) =>
            {
                let refs = self.table_refs(expr);
                if !refs.is_empty() {
                    let callee = expr.children[0].text.clone();
                    let params = self.call_params(&callee, &expr.children[1..], Receiver::Other);
                    self.push(OperationKind::Inspect, Some(callee), params, refs, expr.span, None);
                }
            }
            NodeKind::Name if self.registry.contains(&expr.text) => {
                self.push(
                    OperationKind::Inspect,
                    None,
                    Vec::new(),
                    vec![expr.text.clone()],
                    expr.span,
                    None,
                );
            }
            _ => self.opaque_if_tables(expr),
        }
    }

    fn chain_ops(&mut self, links: &[ChainLink<'_>], root_receiver: Receiver, root: Option<&str>) {
        let mut receiver = root_receiver;
        for (i, link) in links.iter().enumerate() {
            let (kind, callee, params) = self.classify_link(link, receiver);
            let mut inputs = Vec::new();
            if i == 0 {
                if let Some(r) = root {
                    inputs.push(r.to_string());
                }
            }
            for arg in link.args().iter().chain(link.index()) {
                for name in self.table_refs(arg) {
                    dedup_push(&mut inputs, &name);
                }
            }
            // a mask such as df[df.a > 1] reads the chain root again
            if i > 0 {
                if let Some(r) = root {
                    inputs.retain(|n| n != r || link.kind == LinkKind::Call);
                }
            }
            let span = if i == 0 {
                link.node.span
            } else {
                link.own_span(&self.stmt.source, self.stmt.range.start)
            };
            self.push(kind, callee, params, inputs, span, Some(i));
            receiver = match (receiver, kind) {
                (_, OperationKind::Group) => Receiver::GroupResult,
                (Receiver::GroupResult, OperationKind::Select) => Receiver::GroupResult,
                _ => Receiver::Table,
            };
        }
    }

    fn classify_link(
        &self,
        link: &ChainLink<'_>,
        receiver: Receiver,
    ) -> (OperationKind, Option<String>, Vec<Param>) {
        let path = link.path.join(".");
        match link.kind {
            LinkKind::Call => {
                let kind = classify_call(&path, receiver, link.args());
                let callee = link.callee().unwrap_or_default();
                let params = self.call_params(callee, link.args(), receiver);
                (kind, Some(path), params)
            }
            LinkKind::Subscript => {
                let index = link.index().expect("subscript link has an index");
                let param = |name: &str, node: &SyntaxNode| Param {
                    name: name.to_string(),
                    value: node.text.clone(),
                    value_span: node.span,
                };
                if link.path.is_empty() {
                    let kind = if is_string_list(index) {
                        OperationKind::Select
                    } else if matches!(index.kind, NodeKind::Slice { .. }) || is_mask_like(index) {
                        OperationKind::Filter
                    } else {
                        OperationKind::Opaque
                    };
                    let name = match kind {
                        OperationKind::Select => "columns",
                        OperationKind::Filter if matches!(index.kind, NodeKind::Slice { .. }) => {
                            "rows"
                        }
                        OperationKind::Filter => "condition",
                        _ => "index",
                    };
                    return (kind, None, vec![param(name, index)]);
                }
                if link.path.len() == 1 && LOCATORS.contains(&link.path[0]) {
                    let (rows, cols) = match index.kind {
                        NodeKind::TupleExpr if index.children.len() == 2 => {
                            (&index.children[0], Some(&index.children[1]))
                        }
                        _ => (index, None),
                    };
                    let kind = if is_full_slice(rows) && cols.is_some() {
                        OperationKind::Select
                    } else {
                        OperationKind::Filter
                    };
                    let mut params = vec![param("rows", rows)];
                    if let Some(c) = cols {
                        params.push(param("columns", c));
                    }
                    return (kind, Some(path), params);
                }
                let kind = match link.accessor().or(link.path.first().copied()) {
                    Some(a) if self.table.accessor(a).is_some() => {
                        self.table.accessor(a).unwrap_or(OperationKind::Opaque)
                    }
                    Some(a) if self.table.attribute(a).is_some() => {
                        self.table.attribute(a).unwrap_or(OperationKind::Opaque)
                    }
                    _ => OperationKind::Opaque,
                };
                (kind, Some(path), vec![param("index", index)])
            }
            LinkKind::Attribute => {
                let last = link.callee().unwrap_or_default();
                let kind = self
                    .table
                    .attribute(last)
                    .or_else(|| link.accessor().and_then(|a| self.table.accessor(a)))
                    .unwrap_or(OperationKind::Opaque);
                (kind, Some(path), Vec::new())
            }
        }
    }

    fn call_params(&self, callee: &str, args: &[SyntaxNode], receiver: Receiver) -> Vec<Param> {
        let mut params = Vec::new();
        let mut positional = 0;
        for arg in args {
            match &arg.kind {
                NodeKind::KeywordArg { name } => {
                    let value = arg.children.first().unwrap_or(arg);
                    params.push(Param {
                        name: name.clone(),
                        value: value.text.clone(),
                        value_span: value.span,
                    });
                }
                _ => {
                    params.push(Param {
                        name: self.table.positional_name(callee, positional, receiver),
                        value: arg.text.clone(),
                        value_span: arg.span,
                    });
                    positional += 1;
                }
            }
        }
        params
    }

    /// An unassigned reducer or inspection shows its value.
    fn expression_results(&mut self) {
        if let Some(last) = self.ops.last_mut() {
            if last.kind == OperationKind::Aggregate {
                last.produces_result = ResultKind::Text;
            }
        }
    }

    /// `df.op(..., inplace=True)` rebinds the root table.
    fn inplace_output(&mut self, expr: &SyntaxNode) {
        let links = chain_links(expr);
        let [link] = links.as_slice() else {
            return;
        };
        let root = link.receiver.text.as_str();
        let inplace = link.args().iter().any(|a| {
            matches!(&a.kind, NodeKind::KeywordArg { name } if name == "inplace")
                && a.children.first().is_some_and(|v| v.text == "True")
        });
        if !inplace || !self.registry.contains(root) || self.ops.len() != 1 {
            return;
        }
        let op = &mut self.ops[0];
        if !op.kind.yields_table() {
            return;
        }
        op.output_table = Some(root.to_string());
        op.produces_result = ResultKind::None;
        let id = op.id.clone();
        self.registry
            .register(root, TableOrigin::Derived, &self.stmt.snippet_id, &id);
    }

    /// `t[key] = value`, `t.loc[...] = value`, `t.attr = value`.
    fn item_assignment(&mut self, stmt: &SyntaxNode, target: &SyntaxNode, value: &SyntaxNode) {
        let (path, base) = match &target.kind {
            NodeKind::Subscript => peel(&target.children[0]),
            _ => peel(target),
        };
        let Some(name) = base.ident().filter(|n| self.registry.contains(n)) else {
            self.opaque_if_tables(stmt);
            return;
        };
        let name = name.to_string();
        let mut inputs = vec![name.clone()];
        for r in self.table_refs(value) {
            dedup_push(&mut inputs, &r);
        }
        let value_param = Param {
            name: "value".into(),
            value: value.text.clone(),
            value_span: value.span,
        };
        let (kind, key_param) = match &target.kind {
            NodeKind::Subscript => {
                let key = &target.children[1];
                let kind = if path.is_empty() && key.kind == NodeKind::StringLit {
                    OperationKind::AddColumn
                } else {
                    OperationKind::Transform
                };
                let pname = if kind == OperationKind::AddColumn { "column" } else { "target" };
                (
                    kind,
                    Some(Param {
                        name: pname.into(),
                        value: key.text.clone(),
                        value_span: key.span,
                    }),
                )
            }
            _ => (OperationKind::Transform, None),
        };
        let callee = match &target.kind {
            NodeKind::Attribute { attr, .. } => Some(attr.clone()),
            _ if !path.is_empty() => Some(path.join(".")),
            _ => None,
        };
        let params = key_param.into_iter().chain([value_param]).collect();
        let id = self.push(kind, callee, params, inputs, stmt.span, None);
        if let Some(op) = self.ops.last_mut() {
            op.output_table = Some(name.clone());
        }
        self.registry
            .register(&name, TableOrigin::Derived, &self.stmt.snippet_id, &id);
    }
}

fn peel(mut node: &SyntaxNode) -> (Vec<&str>, &SyntaxNode) {
    let mut path = Vec::new();
    while let NodeKind::Attribute { attr, .. } = &node.kind {
        path.push(attr.as_str());
        node = &node.children[0];
    }
    path.reverse();
    (path, node)
}

/// Parses and extracts a whole snippet, returning the operations of every
/// statement in order. Statements that fail to parse contribute nothing.
pub fn extract_snippet(
    snippet_id: &SnippetId,
    source: &str,
    registry: &mut TableRegistry,
) -> Result<Vec<Operation>, crate::ingest::IngestError> {
    let units = crate::ingest::split_statements(snippet_id.clone(), source)?;
    let mut ops = Vec::new();
    for unit in &units {
        if let Some(tree) = crate::syntax::parse_statement(unit).tree {
            ops.extend(extract_operations(&tree, unit, registry));
        }
    }
    Ok(ops)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(src: &str, registry: &mut TableRegistry) -> Vec<Operation> {
        extract_snippet(&SnippetId::from("s0"), src, registry).unwrap()
    }

    fn with_tables(names: &[&str]) -> TableRegistry {
        let mut r = TableRegistry::new();
        for n in names {
            r.register(n, TableOrigin::Loaded, &SnippetId::from("s"), &NodeId::from("s.0.0"));
        }
        r
    }

    fn kinds(ops: &[Operation]) -> Vec<OperationKind> {
        ops.iter().map(|o| o.kind).collect()
    }

    #[test]
    fn select_then_sort_chain() {
        let mut reg = with_tables(&["df"]);
        let src = r#"merge_df = df[["attr_1", "attr_2"]].sort()"#;
        let ops = run(src, &mut reg);
        assert_eq!(kinds(&ops), [OperationKind::Select, OperationKind::Sort]);
        assert_eq!(ops[0].input_tables, ["df"]);
        assert_eq!(ops[0].params[0].value, r#"["attr_1", "attr_2"]"#);
        assert_eq!(ops[0].output_table, None);
        assert_eq!(ops[1].chain_prev.as_ref(), Some(&ops[0].id));
        assert_eq!(ops[1].output_table.as_deref(), Some("merge_df"));
        assert_eq!(ops[1].span.slice(src), ".sort()");
        assert!(reg.contains("merge_df"));
    }

    #[test]
    fn load_registers_loaded() {
        let mut reg = TableRegistry::new();
        let ops = run(r#"df = pd.read_csv("scores.csv")"#, &mut reg);
        assert_eq!(kinds(&ops), [OperationKind::LoadData]);
        assert!(ops[0].input_tables.is_empty());
        assert_eq!(ops[0].params[0].name, "path");
        assert_eq!(ops[0].params[0].value, r#""scores.csv""#);
        assert_eq!(reg.get("df").unwrap().origin, TableOrigin::Loaded);
    }

    #[test]
    fn no_tables_no_ops() {
        let mut reg = with_tables(&["df"]);
        assert!(run(r#"print("done")"#, &mut reg).is_empty());
        assert!(run("x = 1", &mut reg).is_empty());
        assert!(run("import pandas as pd", &mut reg).is_empty());
        assert!(run("plt.show()", &mut reg).is_empty());
    }

    #[test]
    fn merge_method() {
        let mut reg = with_tables(&["students", "scores"]);
        let ops = run(r#"merged = students.merge(scores, on="id")"#, &mut reg);
        assert_eq!(kinds(&ops), [OperationKind::Merge]);
        assert_eq!(ops[0].input_tables, ["students", "scores"]);
        assert_eq!(ops[0].param("right").unwrap().value, "scores");
        assert_eq!(ops[0].param("on").unwrap().value, r#""id""#);
        assert!(reg.contains("merged"));
    }

    #[test]
    fn group_then_aggregate() {
        let mut reg = with_tables(&["df"]);
        let ops = run(r#"df.groupby("class")["score"].mean()"#, &mut reg);
        assert_eq!(
            kinds(&ops),
            [OperationKind::Group, OperationKind::Select, OperationKind::Aggregate]
        );
        assert_eq!(ops[2].produces_result, ResultKind::Text);
    }

    #[test]
    fn subscripts_and_locators() {
        let mut reg = with_tables(&["df"]);
        let k = |src: &str, reg: &mut TableRegistry| kinds(&run(src, reg));
        assert_eq!(k("a = df[df['x'] > 100]", &mut reg), [OperationKind::Filter]);
        assert_eq!(k("a = df['x']", &mut reg), [OperationKind::Select]);
        assert_eq!(k("a = df.loc[:, ['x']]", &mut reg), [OperationKind::Select]);
        assert_eq!(k("a = df.loc[df.x > 1, 'y']", &mut reg), [OperationKind::Filter]);
        assert_eq!(k("a = df.shape", &mut reg), [OperationKind::Inspect]);
        assert_eq!(k("a = df[0]", &mut reg), [OperationKind::Opaque]);
    }

    #[test]
    fn filter_input_excludes_chain_root_mask() {
        let mut reg = with_tables(&["df"]);
        let ops = run("b = df.dropna()[df['x'] > 1]", &mut reg);
        assert_eq!(ops[1].input_tables, Vec::<String>::new());
    }

    #[test]
    fn add_column_and_transform_targets() {
        let mut reg = with_tables(&["df"]);
        let src = "df['n'] = df['a'].apply(lambda v: v*2)";
        let ops = run(src, &mut reg);
        assert_eq!(kinds(&ops), [OperationKind::AddColumn]);
        assert_eq!(ops[0].param("column").unwrap().value, "'n'");
        assert_eq!(ops[0].output_table.as_deref(), Some("df"));
        let ops = run("df.loc[df.a < 0, 'a'] = 0", &mut reg);
        assert_eq!(kinds(&ops), [OperationKind::Transform]);
    }

    #[test]
    fn display_and_plotting() {
        let mut reg = with_tables(&["df"]);
        let ops = run("print(df.head())", &mut reg);
        assert_eq!(kinds(&ops), [OperationKind::Inspect]);
        assert_eq!(ops[0].produces_result, ResultKind::Text);
        let ops = run(r#"sns.barplot(data=df, x="a", y="b")"#, &mut reg);
        assert_eq!(kinds(&ops), [OperationKind::Visualize]);
        assert_eq!(ops[0].param("x").unwrap().value, r#""a""#);
        let ops = run(r#"df.plot(x="a", kind="bar")"#, &mut reg);
        assert_eq!(kinds(&ops), [OperationKind::Visualize]);
        assert_eq!(ops[0].output_table, None);
    }

    #[test]
    fn table_valued_inspect_binds() {
        let mut reg = with_tables(&["df"]);
        let ops = run("top = df.sort_values('a').head(3)", &mut reg);
        assert_eq!(ops[1].output_table.as_deref(), Some("top"));
        assert_eq!(ops[1].produces_result, ResultKind::None);
        assert!(reg.contains("top"));
        let ops = run("cols = df.columns", &mut reg);
        assert_eq!(ops[0].output_table, None);
        assert!(!reg.contains("cols"));
    }

    #[test]
    fn loader_combine_needs_a_table() {
        let mut reg = with_tables(&["df"]);
        assert!(run("x = pd.concat([a, b])", &mut reg).is_empty());
        let ops = run("y = pd.concat([df, df])", &mut reg);
        assert_eq!(kinds(&ops), [OperationKind::Merge]);
    }

    #[test]
    fn inplace_and_rebinding() {
        let mut reg = with_tables(&["df"]);
        let ops = run("df.dropna(inplace=True)", &mut reg);
        assert_eq!(ops[0].output_table.as_deref(), Some("df"));
        let ops = run("n = len(df)", &mut reg);
        assert_eq!(kinds(&ops), [OperationKind::Inspect]);
        assert!(!reg.contains("n"));
        run("df = 3", &mut reg);
        assert!(!reg.contains("df"));
    }

    #[test]
    fn opaque_fallbacks() {
        let mut reg = with_tables(&["df"]);
        let ops = run("for c in df.columns:\n    print(c)", &mut reg);
        assert_eq!(kinds(&ops), [OperationKind::Opaque]);
        assert_eq!(ops[0].input_tables, ["df"]);
        let ops = run("x = helper(df)", &mut reg);
        assert_eq!(kinds(&ops), [OperationKind::Opaque]);
        assert!(reg.contains("x"));
        let ops = run("df.frobnicate()", &mut reg);
        assert_eq!(kinds(&ops), [OperationKind::Opaque]);
    }

    #[test]
    fn loader_chain() {
        let mut reg = TableRegistry::new();
        let ops = run("df = pd.read_csv('a.csv').dropna()", &mut reg);
        assert_eq!(kinds(&ops), [OperationKind::LoadData, OperationKind::Filter]);
        assert_eq!(reg.get("df").unwrap().origin, TableOrigin::Derived);
        let mut reg = with_tables(&["a", "b"]);
        let ops = run("c = pd.concat([a, b])", &mut reg);
        assert_eq!(kinds(&ops), [OperationKind::Merge]);
        assert_eq!(ops[0].input_tables, ["a", "b"]);
    }
}
