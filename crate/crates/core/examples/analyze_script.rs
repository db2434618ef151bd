//! Static diagram of a short script: operations, tables and the DOT export.
//!
//! ```bash
//! cargo run -p flowlens --example analyze_script
//! ```

use flowlens::cli::analyze_source;
use flowlens::graph::{export, ExportFormat, NodeClass};

const SCRIPT: &str = "\
import pandas as pd
sales = pd.read_csv('sales.csv')
top = sales[sales['units'] > 3].sort_values('units', ascending=False)
by_region = top.groupby('region')['units'].sum()
by_region.plot(kind='bar')
";

pub fn run_example() -> Result<String, Box<dyn std::error::Error>> {
    let (diagram, diagnostics) = analyze_source(SCRIPT);
    let mut out = String::new();
    for op in diagram.operations() {
        let params: Vec<String> = op.params.iter().map(|p| format!("{}={}", p.name, p.value)).collect();
        out += &format!("{:<8} {:<10} {}\n", op.id, op.kind.name(), params.join(", "));
    }
    let tables: Vec<&str> = diagram.nodes_of(NodeClass::Table).filter_map(|n| n.variable()).collect();
    out += &format!("tables: {}\n", tables.join(", "));
    for d in diagnostics {
        out += &format!("warning: {d}\n");
    }
    out += &export(&diagram, ExportFormat::Dot);
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    print!("{}", run_example()?);
    Ok(())
}
