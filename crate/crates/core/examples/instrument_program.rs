//! Shows the executable units produced for a chained statement: the chain is
//! split into synthetic assignments and every table-valued link is probed.
//!
//! ```bash
//! cargo run -p flowlens --example instrument_program
//! ```

use flowlens::extract::TableRegistry;
use flowlens::ids::SnippetId;
use flowlens::instrument::instrument_snippet;

const SCRIPT: &str = "\
import pandas as pd
df = pd.read_csv('students.csv')
names = df[df['year'] > 1][['name', 'major']].sort_values('name')
";

pub fn run_example() -> Result<String, Box<dyn std::error::Error>> {
    let mut registry = TableRegistry::new();
    let (program, ops) = instrument_snippet(&SnippetId::from("s0"), SCRIPT, &mut registry)?;
    let mut out = format!("{} operations, {} units\n", ops.len(), program.units.len());
    // the first probe unit defines the helper every later probe calls
    for unit in program.units.iter().filter(|u| u.statement_index.is_some()) {
        out += &format!("[{:?}] {}\n", unit.kind, unit.code.replace('\n', "\n    "));
    }
    for (probe, binding) in &program.bindings {
        out += &format!("probe {probe} observes {} for {}\n", binding.var, binding.node);
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    print!("{}", run_example()?);
    Ok(())
}
