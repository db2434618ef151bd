//! Executes a script in the Python sandbox and prints the runtime shape bound
//! to each operation. Needs `python3` with pandas (or `FLOWLENS_INTERPRETER`).
//!
//! ```bash
//! cargo run -p flowlens --example run_with_probes
//! ```

use flowlens::cli::run_source;
use flowlens::sandbox::{interpreter_available, SandboxConfig};

const SCRIPT: &str = "\
import pandas as pd
df = pd.DataFrame({'city': ['a', 'b', 'a', 'c'], 'temp': [20.5, None, 18.0, 25.1]})
warm = df.dropna().sort_values('temp', ascending=False)
print(warm.groupby('city')['temp'].mean())
";

pub fn run_example() -> Result<String, Box<dyn std::error::Error>> {
    let interpreter = std::env::var("FLOWLENS_INTERPRETER").unwrap_or_else(|_| "python3".into());
    if !interpreter_available(&interpreter) {
        return Ok(format!("{interpreter} with pandas is not available; skipping\n"));
    }
    let work = tempfile::tempdir()?;
    let config = SandboxConfig::new(work.path()).with_interpreter(interpreter);
    let report = run_source(SCRIPT, "inline", config)?;
    let mut out = String::new();
    for node in &report.nodes {
        let shape = match &node.output {
            Some(s) => format!("{} x {} {:?}", s.rows, s.cols, s.columns),
            None => "-".into(),
        };
        out += &format!("{:<8} {:<10} {:?} {}\n", node.id, node.kind, node.state, shape);
    }
    out += &format!("stdout:\n{}", report.stdout);
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    print!("{}", run_example()?);
    Ok(())
}
