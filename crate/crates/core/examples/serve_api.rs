//! Starts the HTTP API on an ephemeral port, drives one session through it
//! and shuts down. LLM replies come from the bundled fixture.
//!
//! ```bash
//! cargo run -p flowlens --example serve_api
//! ```

use std::sync::Arc;

use flowlens::server::router;
use flowlens::session::{LlmClientConfig, LlmSource, SessionConfig, SessionManager};
use serde_json::{json, Value};

pub fn run_example() -> Result<String, Box<dyn std::error::Error>> {
    let root = tempfile::tempdir()?;
    let template = SessionConfig::new(root.path()).static_only();
    let fixture = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/scenario.json");
    let manager = Arc::new(SessionManager::new(
        root.path(),
        template,
        LlmSource::Config(LlmClientConfig::replay(fixture)),
    ));

    let rt = tokio::runtime::Runtime::new()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
    let base = format!("http://{}", listener.local_addr()?);
    let server = rt.spawn(async move { axum::serve(listener, router(manager)).await });

    let agent = ureq::Agent::new_with_defaults();
    let created: Value = agent.post(format!("{base}/sessions")).send_empty()?.body_mut().read_json()?;
    let id = created["session_id"].as_str().ok_or("no session id")?.to_string();
    let report: Value = agent
        .post(format!("{base}/sessions/{id}/turns"))
        .send_json(json!({ "raw_code": "import pandas as pd\ndf = pd.read_csv('a.csv')\ndf.sort_values('x').head()\n" }))?
        .body_mut()
        .read_json()?;
    let dot = agent
        .get(format!("{base}/sessions/{id}/snippets/s0/graph?format=dot"))
        .call()?
        .body_mut()
        .read_to_string()?;
    let events = agent
        .get(format!("{base}/sessions/{id}/events?follow=false"))
        .call()?
        .body_mut()
        .read_to_string()?;
    server.abort();

    let mut out = format!("session {id}\nturn report: {report}\n{dot}");
    out += &format!("{} events streamed\n", events.lines().filter(|l| l.starts_with("data:")).count());
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    print!("{}", run_example()?);
    Ok(())
}
