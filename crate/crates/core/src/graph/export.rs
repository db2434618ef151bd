use std::fmt::Write as _;
use std::str::FromStr;

use super::{Diagram, GraphError, NodeDetail};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    GraphJson,
    Dot,
}

impl FromStr for ExportFormat {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "graph-json" | "json" => Ok(Self::GraphJson),
            "dot" => Ok(Self::Dot),
            other => Err(GraphError::UnknownFormat(other.to_string())),
        }
    }
}

pub fn export(diagram: &Diagram, format: ExportFormat) -> String {
    match format {
        ExportFormat::GraphJson => {
            let mut s = serde_json::to_string_pretty(diagram).expect("diagram serializes");
            s.push('\n');
            s
        }
        ExportFormat::Dot => to_dot(diagram),
    }
}

pub fn import_graph_json(text: &str) -> Result<Diagram, GraphError> {
    let diagram: Diagram =
        serde_json::from_str(text).map_err(|e| GraphError::Import(e.to_string()))?;
    for node in &diagram.nodes {
        let class = match node.detail {
            NodeDetail::Table { .. } => super::NodeClass::Table,
            NodeDetail::Operation { .. } => super::NodeClass::Operation,
            NodeDetail::Result { .. } => super::NodeClass::Result,
        };
        if class != node.class {
            return Err(GraphError::Import(format!(
                "node {} has class {} but {} detail",
                node.id,
                node.class.name(),
                class.name()
            )));
        }
    }
    Ok(diagram)
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn to_dot(d: &Diagram) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "digraph {} {{", quote(d.snippet_id().as_str()));
    s.push_str("  rankdir=TB;\n");
    for n in &d.nodes {
        let shape = match n.class {
            super::NodeClass::Table => "box3d",
            super::NodeClass::Operation => "box",
            super::NodeClass::Result => "note",
        };
        let _ = writeln!(
            s,
            "  {} [class={}, label={}, shape={}, style=filled, fillcolor={}, state={:?}, rank_row={}, rank_col={}];",
            quote(n.id.as_str()),
            quote(n.class.name()),
            quote(&n.label),
            shape,
            quote(n.class.color()),
            n.state,
            n.rank.row,
            n.rank.col,
        );
    }
    for e in &d.edges {
        let _ = writeln!(
            s,
            "  {} -> {} [id={}, class={:?}];",
            quote(e.from.as_str()),
            quote(e.to.as_str()),
            quote(e.id.as_str()),
            format!("{:?}", e.kind),
        );
    }
    s.push_str("}\n");
    s
}
