//! Byte-exact source patches from node-level edits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Diagram, NodeClass};
use crate::ids::{NodeId, SnippetId};
use crate::ingest::split_statements;
use crate::span::{line_start, Span};
use crate::syntax::{parse_expression, parse_statement, Diagnostic};

/// Marker prepended to every line of a replaced statement.
pub const COMMENT_PREFIX: &str = "# ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEdit {
    pub node_id: NodeId,
    pub param_name: String,
    /// Verbatim source of the new value.
    pub new_value: String,
    /// Revision the edit was made against; checked when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revision: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextEdit {
    pub start: usize,
    pub end: usize,
    pub replacement: String,
}

impl TextEdit {
    pub fn span(&self) -> Span {
        Span::new(self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionPair {
    pub commented_previous: String,
    pub active_current: String,
}

impl RevisionPair {
    /// The previous text, with the comment markers removed.
    pub fn uncommented(&self) -> String {
        self.commented_previous
            .split('\n')
            .map(|l| l.strip_prefix(COMMENT_PREFIX).unwrap_or(l))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodePatch {
    pub snippet_id: SnippetId,
    pub revision: u64,
    pub edits: Vec<TextEdit>,
    pub resulting_source: String,
    pub revision_pair: Option<RevisionPair>,
}

/// Wire form of a patch: `{snippet_id, revision, edits:[{start,end,replacement}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchWire {
    pub snippet_id: SnippetId,
    pub revision: u64,
    pub edits: Vec<TextEdit>,
}

impl CodePatch {
    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    pub fn to_wire(&self) -> PatchWire {
        PatchWire {
            snippet_id: self.snippet_id.clone(),
            revision: self.revision,
            edits: self.edits.clone(),
        }
    }
}

/// A snippet's current text and revision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnippetSource {
    pub snippet_id: SnippetId,
    pub source: String,
    pub revision: u64,
}

impl SnippetSource {
    pub fn new(snippet_id: SnippetId, source: impl Into<String>) -> Self {
        SnippetSource {
            snippet_id,
            source: source.into(),
            revision: 0,
        }
    }

    /// Adopts the result of a patch made against this source.
    pub fn commit(&mut self, patch: &CodePatch) {
        self.source = patch.resulting_source.clone();
        self.revision = patch.revision;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EditError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is not an operation")]
    NotOperation(NodeId),
    #[error("operation {node} has no parameter {param}")]
    UnknownParam { node: NodeId, param: String },
    #[error("stale span {span}: expected {expected:?}, found {found:?}; re-extract the snippet")]
    StaleSpan {
        span: Span,
        expected: String,
        found: String,
    },
    #[error("revision conflict: edit made against {got}, snippet is at {current}")]
    RevisionConflict { current: u64, got: u64 },
    #[error("invalid value: {}", .0.message)]
    InvalidValue(Diagnostic),
    #[error("suggestion does not parse: {0:?}")]
    Unparseable(Vec<Diagnostic>),
    #[error("edits overlap or fall outside the source")]
    BadEdits,
}

/// Applies non-overlapping edits to `source`.
pub fn apply_edits(source: &str, edits: &[TextEdit]) -> Result<String, EditError> {
    let mut sorted: Vec<&TextEdit> = edits.iter().collect();
    sorted.sort_by_key(|e| e.start);
    let mut out = String::with_capacity(source.len());
    let mut pos = 0;
    for e in sorted {
        if e.start < pos
            || e.end < e.start
            || e.end > source.len()
            || !source.is_char_boundary(e.start)
            || !source.is_char_boundary(e.end)
        {
            return Err(EditError::BadEdits);
        }
        out.push_str(&source[pos..e.start]);
        out.push_str(&e.replacement);
        pos = e.end;
    }
    out.push_str(&source[pos..]);
    Ok(out)
}

fn operation_of<'d>(
    diagram: &'d Diagram,
    node_id: &NodeId,
) -> Result<&'d crate::extract::Operation, EditError> {
    let node = diagram
        .node(node_id)
        .ok_or_else(|| EditError::UnknownNode(node_id.clone()))?;
    if node.class != NodeClass::Operation {
        return Err(EditError::NotOperation(node_id.clone()));
    }
    node.operation()
        .ok_or_else(|| EditError::NotOperation(node_id.clone()))
}

/// Replaces one parameter value in place. Updates the diagram's spans and
/// parameter display and marks it stale; the caller commits the patch to the
/// snippet source.
pub fn apply_param_edit(
    snippet: &SnippetSource,
    diagram: &mut Diagram,
    edit: &ParamEdit,
) -> Result<CodePatch, EditError> {
    if let Some(got) = edit.revision {
        if got != snippet.revision {
            return Err(EditError::RevisionConflict {
                current: snippet.revision,
                got,
            });
        }
    }
    let op = operation_of(diagram, &edit.node_id)?;
    let param = op
        .param(&edit.param_name)
        .ok_or_else(|| EditError::UnknownParam {
            node: edit.node_id.clone(),
            param: edit.param_name.clone(),
        })?;
    let span = param.value_span;
    let found = snippet.source.get(span.start..span.end).unwrap_or_default();
    if found != param.value {
        return Err(EditError::StaleSpan {
            span,
            expected: param.value.clone(),
            found: found.to_string(),
        });
    }
    parse_expression(&edit.new_value).map_err(EditError::InvalidValue)?;
    if edit.new_value == param.value {
        return Ok(CodePatch {
            snippet_id: snippet.snippet_id.clone(),
            revision: snippet.revision,
            edits: Vec::new(),
            resulting_source: snippet.source.clone(),
            revision_pair: None,
        });
    }
    let edits = vec![TextEdit {
        start: span.start,
        end: span.end,
        replacement: edit.new_value.clone(),
    }];
    let resulting_source = apply_edits(&snippet.source, &edits)?;
    let delta = edit.new_value.len() as isize - span.len() as isize;
    diagram.reindex_spans(span.start, span.end, delta);
    diagram
        .set_param(&edit.node_id, &edit.param_name, &edit.new_value)
        .map_err(|_| EditError::UnknownNode(edit.node_id.clone()))?;
    diagram.meta.stale = true;
    Ok(CodePatch {
        snippet_id: snippet.snippet_id.clone(),
        revision: snippet.revision + 1,
        edits,
        resulting_source,
        revision_pair: None,
    })
}

fn validate_suggestion(text: &str) -> Result<(), EditError> {
    let units = split_statements(SnippetId::from("suggestion"), text).map_err(|e| {
        EditError::Unparseable(vec![Diagnostic {
            span: Span::new(0, text.len()),
            message: e.to_string(),
            severity: crate::syntax::Severity::Error,
        }])
    })?;
    if units.is_empty() {
        return Err(EditError::Unparseable(vec![Diagnostic {
            span: Span::new(0, 0),
            message: "empty suggestion".into(),
            severity: crate::syntax::Severity::Error,
        }]));
    }
    let mut diagnostics = Vec::new();
    for unit in &units {
        let outcome = parse_statement(unit);
        if outcome.tree.is_none() || outcome.has_errors() {
            diagnostics.extend(outcome.diagnostics);
        }
    }
    if diagnostics.is_empty() {
        Ok(())
    } else {
        Err(EditError::Unparseable(diagnostics))
    }
}

/// Replaces the statement owning `node_id` with `suggestion`, keeping the
/// previous statement above it as comment lines.
pub fn apply_llm_rewrite(
    snippet: &SnippetSource,
    diagram: &mut Diagram,
    node_id: &NodeId,
    suggestion: &str,
) -> Result<CodePatch, EditError> {
    let op = operation_of(diagram, node_id)?;
    let stmt = op.statement_span;
    validate_suggestion(suggestion)?;
    let start = line_start(&snippet.source, stmt.start);
    let previous = &snippet.source[start..stmt.end];
    let indent: String = previous
        .chars()
        .take_while(|c| *c == ' ' || *c == '\t')
        .collect();
    let suggestion = suggestion.trim_matches('\n').trim_end();
    if previous.trim() == suggestion.trim() {
        return Ok(CodePatch {
            snippet_id: snippet.snippet_id.clone(),
            revision: snippet.revision,
            edits: Vec::new(),
            resulting_source: snippet.source.clone(),
            revision_pair: None,
        });
    }
    let commented_previous = previous
        .split('\n')
        .map(|l| format!("{COMMENT_PREFIX}{l}"))
        .collect::<Vec<_>>()
        .join("\n");
    let active_current = suggestion
        .trim_start()
        .split('\n')
        .enumerate()
        .map(|(i, l)| if i == 0 { format!("{indent}{l}") } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n");
    let replacement = format!("{commented_previous}\n{active_current}");
    let edits = vec![TextEdit {
        start,
        end: stmt.end,
        replacement,
    }];
    let resulting_source = apply_edits(&snippet.source, &edits)?;
    diagram.meta.stale = true;
    Ok(CodePatch {
        snippet_id: snippet.snippet_id.clone(),
        revision: snippet.revision + 1,
        edits,
        resulting_source,
        revision_pair: Some(RevisionPair {
            commented_previous,
            active_current,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::{extract_snippet, OperationKind, TableRegistry};

    const SRC: &str = "students = pd.read_csv('students.csv')\nscores = pd.read_csv('scores.csv')\nmerged = students.merge(scores, on=\"name\")\nby_class = merged.groupby('class')['score'].mean()\n";

    fn diagram(src: &str) -> (SnippetSource, Diagram) {
        let id = SnippetId::from("s0");
        let mut reg = TableRegistry::new();
        let ops = extract_snippet(&id, src, &mut reg).unwrap();
        let mut d = Diagram::new(id.clone());
        d.apply_operations(&ops, &mut reg);
        (SnippetSource::new(id, src), d)
    }

    fn merge_id(d: &Diagram) -> NodeId {
        d.operations()
            .find(|o| o.kind == OperationKind::Merge)
            .unwrap()
            .id
            .clone()
    }

    fn on_edit(d: &Diagram, value: &str) -> ParamEdit {
        ParamEdit {
            node_id: merge_id(d),
            param_name: "on".into(),
            new_value: value.into(),
            revision: None,
        }
    }

    #[test]
    fn merge_on_edit_replaces_only_the_value() {
        let (mut snip, mut d) = diagram(SRC);
        let patch = { let e = on_edit(&d, "\"id\""); apply_param_edit(&snip, &mut d, &e) }.unwrap();
        assert_eq!(patch.edits.len(), 1);
        assert_eq!(&SRC[patch.edits[0].start..patch.edits[0].end], "\"name\"");
        assert_eq!(patch.resulting_source, SRC.replace("\"name\"", "\"id\""));
        assert_eq!(patch.revision, 1);
        assert!(d.meta.stale);
        snip.commit(&patch);
        // downstream spans follow the shorter value
        let mean = d
            .operations()
            .find(|o| o.kind == OperationKind::Aggregate)
            .unwrap();
        assert_eq!(mean.span.slice(&snip.source), ".mean()");
        // idempotence
        let again = { let e = on_edit(&d, "\"id\""); apply_param_edit(&snip, &mut d, &e) }.unwrap();
        assert!(again.is_empty());
        assert_eq!(again.revision, 1);
    }

    #[test]
    fn no_op_and_errors() {
        let (snip, mut d) = diagram(SRC);
        let p = { let e = on_edit(&d, "\"name\""); apply_param_edit(&snip, &mut d, &e) }.unwrap();
        assert!(p.is_empty());
        assert_eq!(p.revision, 0);
        assert!(matches!(
            { let e = on_edit(&d, "\"id"); apply_param_edit(&snip, &mut d, &e) },
            Err(EditError::InvalidValue(_))
        ));
        let drifted = SnippetSource::new("s0".into(), SRC.replace("\"name\"", "'nm'   "));
        assert!(matches!(
            { let e = on_edit(&d, "\"id\""); apply_param_edit(&drifted, &mut d, &e) },
            Err(EditError::StaleSpan { .. })
        ));
        let mut edit = on_edit(&d, "\"id\"");
        edit.revision = Some(4);
        assert!(matches!(
            apply_param_edit(&snip, &mut d, &edit),
            Err(EditError::RevisionConflict { .. })
        ));
        edit.revision = None;
        edit.param_name = "how".into();
        assert!(matches!(
            apply_param_edit(&snip, &mut d, &edit),
            Err(EditError::UnknownParam { .. })
        ));
    }

    #[test]
    fn rewrite_comments_out_previous() {
        let src = "df = pd.read_csv('a.csv')\nout = df.sort_values('a')\n";
        let (snip, mut d) = diagram(src);
        let sort = d.operations().find(|o| o.kind == OperationKind::Sort).unwrap().id.clone();
        let patch =
            apply_llm_rewrite(&snip, &mut d, &sort, "out = df.sort_values('a', ascending=False)")
                .unwrap();
        assert_eq!(
            patch.resulting_source,
            "df = pd.read_csv('a.csv')\n# out = df.sort_values('a')\nout = df.sort_values('a', ascending=False)\n"
        );
        let pair = patch.revision_pair.clone().unwrap();
        assert!(pair.commented_previous.lines().all(|l| l.starts_with("# ")));
        // reversibility
        let restored = patch.resulting_source.replacen(
            &format!("{}\n{}", pair.commented_previous, pair.active_current),
            &pair.uncommented(),
            1,
        );
        assert_eq!(restored, src);
    }

    #[test]
    fn rewrite_rejections_and_no_op() {
        let src = "df = pd.read_csv('a.csv')\nout = df.sort_values('a')\n";
        let (snip, mut d) = diagram(src);
        let sort = d.operations().find(|o| o.kind == OperationKind::Sort).unwrap().id.clone();
        assert!(matches!(
            apply_llm_rewrite(&snip, &mut d, &sort, "out = df.sort_values(("),
            Err(EditError::Unparseable(_))
        ));
        let p = apply_llm_rewrite(&snip, &mut d, &sort, "out = df.sort_values('a')").unwrap();
        assert!(p.is_empty());
    }

    #[test]
    fn rewrite_adding_dropna_adds_filter() {
        let src = "a = pd.read_csv('a.csv')\nb = pd.read_csv('b.csv')\nm = a.merge(b, on='id')\n";
        let (snip, mut d) = diagram(src);
        let merge = merge_id(&d);
        let patch = apply_llm_rewrite(
            &snip,
            &mut d,
            &merge,
            "a = a.dropna()\nm = a.merge(b, on='id')",
        )
        .unwrap();
        let count = |s: &str| {
            let mut reg = TableRegistry::new();
            extract_snippet(&"s0".into(), s, &mut reg)
                .unwrap()
                .iter()
                .filter(|o| o.kind == OperationKind::Filter)
                .count()
        };
        assert_eq!(count(&patch.resulting_source), count(src) + 1);
    }

    #[test]
    fn wire_format() {
        let (snip, mut d) = diagram(SRC);
        let patch = { let e = on_edit(&d, "\"id\""); apply_param_edit(&snip, &mut d, &e) }.unwrap();
        let v = serde_json::to_value(patch.to_wire()).unwrap();
        assert_eq!(v["snippet_id"], "s0");
        assert_eq!(v["revision"], 1);
        assert_eq!(v["edits"][0]["replacement"], "\"id\"");
        assert!(v["edits"][0]["start"].is_u64());
    }
}
