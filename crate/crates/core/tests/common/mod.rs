#![allow(dead_code)]
//! Helpers shared by the integration test targets.

pub mod gen;


use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use flowlens::graph::{Diagram, EdgeKind, NodeClass, NodeDetail};

pub fn tests_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests")
}

pub fn corpus_dir() -> PathBuf {
    tests_dir().join("corpus")
}

pub fn corpus_data() -> PathBuf {
    corpus_dir().join("data")
}

/// Corpus scripts sorted by name, as (stem, source).
pub fn corpus_scripts() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::fs::read_dir(corpus_dir())
        .unwrap()
        .filter_map(|e| {
            let path = e.ok()?.path();
            (path.extension()? == "py").then(|| {
                let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
                (stem, std::fs::read_to_string(&path).unwrap())
            })
        })
        .collect();
    out.sort();
    out
}

pub fn python() -> String {
    std::env::var("FLOWLENS_INTERPRETER").unwrap_or_else(|_| "python3".into())
}

/// True when the interpreter can import pandas and matplotlib.
pub fn python_ready() -> bool {
    Command::new(python())
        .args(["-c", "import pandas, matplotlib"])
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

/// Copies every file of `from` into `to`.
pub fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        if e.file_type().unwrap().is_file() {
            std::fs::copy(e.path(), to.join(e.file_name())).unwrap();
        }
    }
}

/// Line-oriented structural rendering of a diagram. Operations are named
/// `o<k>` in order; tables by variable, with `.g` for re-binding generation
/// `g > 0`; results as `r<k>`. Spans and ids are left out.
pub fn sketch(d: &Diagram) -> String {
    let mut names = BTreeMap::new();
    let mut lines = Vec::new();
    let (mut ops, mut results) = (0, 0);
    for n in &d.nodes {
        match (&n.class, &n.detail) {
            (NodeClass::Operation, NodeDetail::Operation { operation, .. }) => {
                ops += 1;
                let name = format!("o{ops}");
                let params: Vec<String> = operation
                    .params
                    .iter()
                    .map(|p| format!("{}={}", p.name, p.value))
                    .collect();
                let mut line = format!("op {name} {:?}", operation.kind);
                if !params.is_empty() {
                    line.push(' ');
                    line.push_str(&params.join(", "));
                }
                lines.push(line);
                names.insert(n.id.clone(), name);
            }
            (NodeClass::Table, NodeDetail::Table { variable, generation, .. }) => {
                let name = if *generation == 0 {
                    variable.clone()
                } else {
                    format!("{variable}.{generation}")
                };
                lines.push(format!("table {name}"));
                names.insert(n.id.clone(), name);
            }
            _ => {
                results += 1;
                let name = format!("r{results}");
                lines.push(format!("result {name}"));
                names.insert(n.id.clone(), name);
            }
        }
    }
    lines.push("edges".into());
    for e in &d.edges {
        let kind = match e.kind {
            EdgeKind::Input => "input",
            EdgeKind::Assignment => "assign",
            EdgeKind::ResultGeneration => "result",
            EdgeKind::OperationChain => "chain",
            EdgeKind::CrossSnippetLineage => "lineage",
        };
        lines.push(format!("{kind} {} -> {}", names[&e.from], names[&e.to]));
    }
    lines.join("\n") + "\n"
}
