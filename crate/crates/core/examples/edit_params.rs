//! Edits a parameter in place and applies a suggested rewrite, printing the
//! patched source after each step.
//!
//! ```bash
//! cargo run -p flowlens --example edit_params
//! ```

use flowlens::cli::analyze_source;
use flowlens::edit::{apply_llm_rewrite, apply_param_edit, ParamEdit, SnippetSource};
use flowlens::extract::OperationKind;
use flowlens::ids::SnippetId;

const SCRIPT: &str = "\
import pandas as pd
students = pd.read_csv('students.csv')
scores = pd.read_csv('scores.csv')
merged = pd.merge(students, scores, on='name')
avg = merged.groupby('major')['score'].mean()
";

pub fn run_example() -> Result<String, Box<dyn std::error::Error>> {
    let (mut diagram, _) = analyze_source(SCRIPT);
    let mut snippet = SnippetSource::new(SnippetId::from("s0"), SCRIPT);
    let merge = diagram
        .operations()
        .find(|o| o.kind == OperationKind::Merge)
        .ok_or("no merge")?
        .id
        .clone();

    let edit = ParamEdit {
        node_id: merge.clone(),
        param_name: "on".into(),
        new_value: "'id'".into(),
        revision: Some(snippet.revision),
    };
    let patch = apply_param_edit(&snippet, &mut diagram, &edit)?;
    snippet.commit(&patch);
    let mut out = format!("after the edit (revision {}):\n{}\n", snippet.revision, snippet.source);

    let suggestion = "merged = pd.merge(students, scores, on='id', how='left')";
    let patch = apply_llm_rewrite(&snippet, &mut diagram, &merge, suggestion)?;
    snippet.commit(&patch);
    out += &format!("after the rewrite (revision {}):\n{}", snippet.revision, snippet.source);
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    print!("{}", run_example()?);
    Ok(())
}
