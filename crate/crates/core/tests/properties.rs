//! Property tests over generated scripts and the golden corpus.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::gen::{chunks_at, cuts, script};
use common::{corpus_scripts, sketch};
use flowlens::cli::analyze_source;
use flowlens::edit::{apply_edits, apply_llm_rewrite, apply_param_edit, ParamEdit, SnippetSource};
use flowlens::extract::{
    classify_call, extract_operations, ClassificationTable, Operation, OperationKind, Receiver, TableRegistry,
};
use flowlens::graph::{export, Diagram, EdgeKind, ExportFormat, NodeDetail};
use flowlens::ids::SnippetId;
use flowlens::ingest::{split_statements, SnippetBuffer, StatementUnit};
use flowlens::instrument::{instrument_snippet, ProbeKind};
use flowlens::sandbox::{demux_stdout, PROBE_SENTINEL};
use flowlens::syntax::{parse_statement, Severity, SyntaxNode};
use proptest::prelude::*;

fn sid() -> SnippetId {
    SnippetId::from("s0")
}

fn streamed_units(text: &str, cuts: &[usize]) -> (Vec<StatementUnit>, String) {
    let mut buffer = SnippetBuffer::new(sid());
    let mut units = Vec::new();
    for chunk in chunks_at(text, cuts) {
        units.extend(buffer.push_str(chunk).unwrap());
    }
    units.extend(buffer.finalize().unwrap());
    (units, buffer.text().to_string())
}

fn check_tree(node: &SyntaxNode, source: &str) {
    assert_eq!(&source[node.span.start..node.span.end], node.text);
    for child in &node.children {
        assert!(
            node.span.start <= child.span.start && child.span.end <= node.span.end,
            "child {:?} outside parent {:?}",
            child.span,
            node.span
        );
        check_tree(child, source);
    }
}

/// Operations per statement, extracted in order against one registry, with
/// the registry as it stood before each statement.
fn extract_all(source: &str) -> Vec<(TableRegistry, Vec<Operation>)> {
    let mut registry = TableRegistry::new();
    let mut out = Vec::new();
    for unit in split_statements(sid(), source).unwrap() {
        let before = registry.clone();
        let outcome = parse_statement(&unit);
        let ops = match &outcome.tree {
            Some(tree) => extract_operations(tree, &unit, &mut registry),
            None => Vec::new(),
        };
        out.push((before, ops));
    }
    out
}

fn batch_diagram(source: &str) -> Diagram {
    let mut registry = TableRegistry::new();
    let ops: Vec<Operation> = extract_all(source).into_iter().flat_map(|(_, o)| o).collect();
    let mut d = Diagram::new(sid());
    d.apply_operations(&ops, &mut registry);
    d
}

fn check_graph(d: &Diagram) {
    let index: BTreeMap<_, _> = d.nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
    for e in &d.edges {
        let (from, to) = (&d.nodes[index[&e.from]], &d.nodes[index[&e.to]]);
        assert_eq!((from.class, to.class), e.kind.endpoints(), "{e:?}");
        if e.kind != EdgeKind::CrossSnippetLineage {
            // topological: sources precede targets in creation order
            assert!(index[&e.from] < index[&e.to], "{e:?}");
        }
    }
    let mut seen = BTreeSet::new();
    for n in &d.nodes {
        if let NodeDetail::Table { variable, generation, .. } = &n.detail {
            assert!(seen.insert((variable.clone(), *generation)), "duplicate table {variable}@{generation}");
        }
    }
    let mut last = (0, 0);
    for op in d.operations() {
        let key = (op.statement_index, op.chain_position);
        assert!(key >= last, "operations out of order");
        last = key;
    }
}

fn check_operations(per_statement: &[(TableRegistry, Vec<Operation>)]) {
    for (before, ops) in per_statement {
        for (i, op) in ops.iter().enumerate() {
            assert_eq!(op.chain_position, i);
            for name in &op.input_tables {
                assert!(before.contains(name), "{name} read before registration");
            }
            match op.kind {
                OperationKind::LoadData => assert!(op.input_tables.is_empty()),
                OperationKind::Opaque => {}
                _ => assert!(
                    !op.input_tables.is_empty() || op.chain_prev.is_some(),
                    "{op:?} has no input"
                ),
            }
            if let Some(prev) = &op.chain_prev {
                assert_eq!(Some(prev), i.checked_sub(1).map(|j| &ops[j].id));
            }
        }
        let assigned: Vec<usize> = ops
            .iter()
            .enumerate()
            .filter(|(_, o)| o.output_table.is_some())
            .map(|(i, _)| i)
            .collect();
        assert!(assigned.len() <= 1);
        if let Some(&i) = assigned.first() {
            assert_eq!(i + 1, ops.len(), "assignment not on the last operation");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn chunking_invariance(src in script(), raw in prop::collection::vec(any::<usize>(), 0..40)) {
        let cuts = cuts(&src, &raw);
        let whole = split_statements(sid(), &src).unwrap();
        let (streamed, text) = streamed_units(&src, &cuts);
        prop_assert_eq!(text, src.clone());
        prop_assert_eq!(&streamed, &whole);
        let mut end = 0;
        for (i, u) in whole.iter().enumerate() {
            prop_assert_eq!(u.index, i);
            prop_assert!(u.range.start >= end);
            prop_assert_eq!(&src[u.range.start..u.range.end], u.source.as_str());
            end = u.range.end;
        }
    }

    #[test]
    fn streamed_diagram_matches_batch(src in script(), raw in prop::collection::vec(any::<usize>(), 0..40)) {
        let cuts = cuts(&src, &raw);
        let mut registry = TableRegistry::new();
        let mut run = flowlens::session::SnippetRun::new(sid());
        let mut sink = |_: flowlens::session::PipelineEvent| {};
        for chunk in chunks_at(&src, &cuts) {
            run.push(chunk, &mut registry, None, &mut sink).unwrap();
        }
        run.finish(&mut registry, None, &mut sink).unwrap();
        let streamed = export(run.diagram(), ExportFormat::GraphJson);
        let (single, _) = analyze_source(&src);
        prop_assert_eq!(&streamed, &export(&single, ExportFormat::GraphJson));
        let batch = batch_diagram(&src);
        prop_assert_eq!(sketch(&batch), sketch(&single));
    }

    #[test]
    fn parse_spans_are_exact(src in script()) {
        for unit in split_statements(sid(), &src).unwrap() {
            let a = parse_statement(&unit);
            let b = parse_statement(&unit);
            prop_assert_eq!(&a, &b);
            prop_assert!(!a.has_errors(), "{:?}", a.diagnostics);
            let tree = a.tree.unwrap();
            prop_assert_eq!(tree.span, unit.range);
            check_tree(&tree, &src);
        }
    }

    #[test]
    fn extraction_invariants(src in script()) {
        check_operations(&extract_all(&src));
        check_graph(&analyze_source(&src).0);
    }

    #[test]
    fn instrumentation_hygiene_and_probe_totality(src in script()) {
        let (program, ops) = instrument_snippet(&sid(), &src, &mut TableRegistry::new()).unwrap();
        for name in program.split_map.keys().chain(program.result_vars.values()) {
            prop_assert!(name.starts_with("__wg"));
            prop_assert!(!src.contains(name.as_str()), "{} collides with the source", name);
        }
        let mut per_node: BTreeMap<_, usize> = BTreeMap::new();
        for b in program.bindings.values().filter(|b| b.kind == ProbeKind::Table) {
            *per_node.entry(b.node.clone()).or_default() += 1;
        }
        for op in ops.iter().filter(|o| o.kind.yields_table()) {
            prop_assert_eq!(per_node.get(&op.id).copied(), Some(1), "{:?}", op);
        }
    }

    #[test]
    fn param_edit_properties(src in script(), pick in any::<usize>(), value in prop::sample::select(vec![
        "'zz'", "42", "['a', 'c']", "True", "{'a': 'mean'}", "-1.5",
    ])) {
        let (mut diagram, _) = analyze_source(&src);
        let candidates: Vec<(String, String)> = diagram
            .operations()
            .flat_map(|o| o.params.iter().map(move |p| (o.id.to_string(), p.name.clone())))
            .collect();
        prop_assume!(!candidates.is_empty());
        let (node, param) = candidates[pick % candidates.len()].clone();
        // a bare name may be a table reference, and replacing it rewires inputs
        let old = diagram.node(&node.as_str().into()).unwrap().params.iter().find(|p| p.name == param).unwrap().value.clone();
        prop_assume!(!old.chars().all(|c| c.is_alphanumeric() || c == '_'));
        let original = SnippetSource::new(sid(), src.clone());
        let edit = ParamEdit { node_id: node.as_str().into(), param_name: param.clone(), new_value: value.to_string(), revision: None };
        let before = sketch(&diagram);
        let patch = apply_param_edit(&original, &mut diagram, &edit).unwrap();
        prop_assert_eq!(apply_edits(&src, &patch.edits).unwrap(), patch.resulting_source.clone());

        // idempotent: the same edit against the committed source changes nothing
        let mut committed = original.clone();
        committed.commit(&patch);
        let again = apply_param_edit(&committed, &mut diagram, &edit).unwrap();
        prop_assert!(again.edits.is_empty());
        prop_assert_eq!(&again.resulting_source, &patch.resulting_source);

        // round trip: re-extraction differs only in the edited value, unless
        // the new value changes how the node classifies (mask vs column)
        let (reparsed, _) = analyze_source(&patch.resulting_source);
        let kind_of = |d: &Diagram| d.node(&node.as_str().into()).and_then(|n| n.operation().map(|o| o.kind));
        prop_assume!(kind_of(&reparsed) == kind_of(&diagram));
        prop_assert_eq!(sketch(&reparsed), sketch(&diagram));
        let edited = reparsed.node(&node.as_str().into()).unwrap();
        prop_assert_eq!(&edited.params.iter().find(|p| p.name == param).unwrap().value, value);
        if before != sketch(&diagram) {
            prop_assert!(src != patch.resulting_source);
        }
    }

    #[test]
    fn rewrite_is_reversible(src in script(), pick in any::<usize>()) {
        let (mut diagram, _) = analyze_source(&src);
        let ids = diagram.operation_ids();
        prop_assume!(!ids.is_empty());
        let node = ids[pick % ids.len()].clone();
        let original = SnippetSource::new(sid(), src.clone());
        let patch = apply_llm_rewrite(&original, &mut diagram, &node, "result = df.copy()\nresult = result.dropna()").unwrap();
        let pair = patch.revision_pair.clone().unwrap();
        for line in pair.commented_previous.split('\n') {
            prop_assert!(line.starts_with("# "));
        }
        let edit = &patch.edits[0];
        let restored = format!(
            "{}{}{}",
            &src[..edit.start],
            pair.uncommented(),
            &src[edit.end..]
        );
        prop_assert_eq!(restored, src.clone());
        prop_assert_eq!(apply_edits(&src, &patch.edits).unwrap(), patch.resulting_source);
    }

    #[test]
    fn demux_removes_every_sentinel(lines in prop::collection::vec(prop_oneof![
        "[a-z ]{0,12}".prop_map(|s| (s, 0u8)),
        (0u64..1000, prop::collection::vec("[a-z]{1,4}", 0..4)).prop_map(|(rows, cols)| {
            let body = serde_json::json!({"probe": "s0.p0", "var": "df", "rows": rows, "cols": cols.len(), "columns": cols});
            (format!("{PROBE_SENTINEL}{body}"), 1u8)
        }),
        "[a-z{}]{0,8}".prop_map(|s| (format!("{PROBE_SENTINEL}{s}"), 2u8)),
    ], 0..20)) {
        let raw: String = lines.iter().map(|(l, _)| format!("{l}\n")).collect();
        let (user, records, diagnostics) = demux_stdout(&raw);
        prop_assert!(!user.contains(PROBE_SENTINEL.trim_end()));
        let sentinels = lines.iter().filter(|(_, k)| *k > 0).count();
        prop_assert_eq!(records.len() + diagnostics.len(), sentinels);
        prop_assert_eq!(records.len(), lines.iter().filter(|(_, k)| *k == 1).count());
        for r in &records {
            prop_assert_eq!(r.cols as usize, r.columns.len());
        }
    }

    #[test]
    fn classify_never_panics(name in "[a-z_]{0,12}") {
        let kind = classify_call(&name, Receiver::Table, &[]);
        prop_assert!(OperationKind::ALL.contains(&kind));
    }

    #[test]
    fn arbitrary_python_parses(stmt in prop::sample::select(vec![
        "x = [i * 2 for i in range(10) if i % 2]",
        "y = {k: v for k, v in d.items()}",
        "z = a if b else c",
        "f = lambda x, *args, **kw: (x, args, kw)",
        "s = f'{name!r:>10} scored {score:.1f}'",
        "a, *rest = values",
        "with open('f.txt') as fh:\n    text = fh.read()",
        "for i in range(3):\n    print(i)\nelse:\n    pass",
        "@decorator\ndef g(a, b=2, *, c):\n    return a + b + c",
        "class K(Base):\n    attr: int = 3",
        "if (n := len(df)) > 10:\n    print(n)",
        "assert x is not None, 'missing'",
        "del df['a']",
        "try:\n    v = 1 / 0\nexcept ZeroDivisionError as e:\n    v = None",
        "total += df['a'].sum()",
        "result = await fetch(url)",
        "print(*items, sep=', ')",
        "m = df[df.a.between(1, 3) & ~df.b.isna()]",
        "g = (yield)",
        "x = not a or b and c",
    ])) {
        for unit in split_statements(sid(), stmt).unwrap() {
            let outcome = parse_statement(&unit);
            prop_assert!(outcome.tree.is_some(), "{:?}", outcome.diagnostics);
            prop_assert!(outcome.diagnostics.iter().all(|d| d.severity != Severity::Error), "{:?}", outcome.diagnostics);
            check_tree(&outcome.tree.unwrap(), stmt);
        }
    }
}

#[test]
fn corpus_invariants() {
    for (stem, source) in corpus_scripts() {
        check_operations(&extract_all(&source));
        let (d, _) = analyze_source(&source);
        check_graph(&d);
        assert_eq!(sketch(&batch_diagram(&source)), sketch(&d), "{stem}");
        for unit in split_statements(sid(), &source).unwrap() {
            check_tree(&parse_statement(&unit).tree.unwrap(), &source);
        }
    }
}

#[test]
fn classification_table_entries_map_to_their_kind() {
    let table = ClassificationTable::bundled();
    for (name, kind) in table.table_method_entries() {
        if name == "drop" {
            continue;
        }
        assert_eq!(classify_call(name, Receiver::Table, &[]), kind, "{name}");
    }
    for (name, kind) in table.loader_function_entries() {
        assert_eq!(classify_call(name, Receiver::LoaderNamespace, &[]), kind, "{name}");
    }
}
