//! Replays a recorded conversation without network access and prints the
//! session minimap and event counts. Pass a fixture path to use your own.
//!
//! ```bash
//! cargo run -p flowlens --example replay_session -- crates/core/tests/fixtures/scenario.json
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use flowlens::cli::replay_fixture;
use flowlens::session::{Fixture, SessionConfig};

fn default_fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/scenario.json")
}

pub fn run_example_with(fixture: PathBuf) -> Result<String, Box<dyn std::error::Error>> {
    let fixture = Fixture::load(&fixture)?;
    let root = tempfile::tempdir()?;
    let mut config = SessionConfig::new(root.path()).static_only();
    config.autosave = false;
    let session = replay_fixture(fixture, config)?;
    let mut out = String::new();
    for entry in session.minimap() {
        out += &format!("{}: {}\n", entry.snippet_id, entry.summary);
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for env in session.events().history() {
        let v = serde_json::to_value(&env)?;
        *counts.entry(v["type"].as_str().unwrap_or("?").to_string()).or_default() += 1;
    }
    for (kind, n) in counts {
        out += &format!("{kind:<16} {n}\n");
    }
    Ok(out)
}

pub fn run_example() -> Result<String, Box<dyn std::error::Error>> {
    run_example_with(default_fixture())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixture = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(default_fixture);
    print!("{}", run_example_with(fixture)?);
    Ok(())
}
