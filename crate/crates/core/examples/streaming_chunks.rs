//! Feeds a script to the pipeline in small chunks, the way tokens arrive from
//! a model, and prints each graph delta as soon as its statement completes.
//!
//! ```bash
//! cargo run -p flowlens --example streaming_chunks
//! ```

use flowlens::extract::TableRegistry;
use flowlens::graph::DeltaEvent;
use flowlens::ids::SnippetId;
use flowlens::session::{PipelineEvent, SnippetRun};

const SCRIPT: &str = "\
import pandas as pd
df = pd.read_csv('weather.csv')
clean = (
    df
    .dropna(subset=['temp'])
    .sort_values('temp')
)
print(clean.head(3))
";

pub fn run_example() -> Result<String, Box<dyn std::error::Error>> {
    let mut run = SnippetRun::new(SnippetId::from("s0"));
    let mut registry = TableRegistry::new();
    let mut out = String::new();
    let mut sink = |e: PipelineEvent| match e {
        PipelineEvent::Delta(d) => match d.event {
            DeltaEvent::NodeAdded { node } => out += &format!("#{:<3} node  {} {}\n", d.seq, node.id, node.label),
            DeltaEvent::EdgeAdded { edge } => {
                out += &format!("#{:<3} edge  {} -> {} ({:?})\n", d.seq, edge.from, edge.to, edge.kind)
            }
            other => out += &format!("#{:<3} {other:?}\n", d.seq),
        },
        PipelineEvent::Diagnostic(m) => out += &format!("diagnostic: {m}\n"),
    };
    let bytes = SCRIPT.as_bytes();
    let mut at = 0;
    while at < bytes.len() {
        // seven-byte chunks; the script is ASCII so every cut is a char boundary
        let end = (at + 7).min(bytes.len());
        run.push(&SCRIPT[at..end], &mut registry, None, &mut sink)?;
        at = end;
    }
    run.finish(&mut registry, None, &mut sink)?;
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    print!("{}", run_example()?);
    Ok(())
}
