//! Session directory layout:
//!
//! ```text
//! manifest.json         turns, registry, bound states, snippet metadata
//! snippets/<id>.py      current snippet source
//! patches/<id>.json     committed patches, oldest first
//! graphs/<id>.json      graph-json export
//! programs/<id>.json    instrumented program
//! statement_log.json    successful units with their probe records
//! work/                 sandbox working directory (uploads, figures)
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ChatMessage, LlmClient, Session, SessionConfig, SessionError, SnippetRecord, SnippetStatus, TurnRecord, UnitRecord};
use crate::edit::{CodePatch, SnippetSource};
use crate::extract::{Operation, TableRegistry};
use crate::graph::{export, import_graph_json, ExportFormat, TableState};
use crate::ids::{NodeId, SnippetId};
use crate::sandbox::LoggedUnit;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SnippetManifest {
    snippet_id: SnippetId,
    index: usize,
    turn: usize,
    revision: u64,
    status: SnippetStatus,
    operations: Vec<Operation>,
    units: Vec<UnitRecord>,
    stdout: String,
    registry_before: TableRegistry,
    log_start: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    session_id: String,
    turns: Vec<TurnRecord>,
    files: Vec<String>,
    registry: TableRegistry,
    table_states: BTreeMap<NodeId, TableState>,
    node_conversations: BTreeMap<NodeId, Vec<ChatMessage>>,
    snippets: Vec<SnippetManifest>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SessionError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| SessionError::Persist(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, SessionError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| SessionError::Persist(format!("{}: {e}", path.display())))
}

impl Session {
    /// Writes the session into its root directory.
    pub fn save(&self) -> Result<(), SessionError> {
        let root = &self.config.root;
        for d in ["snippets", "patches", "graphs", "programs"] {
            std::fs::create_dir_all(root.join(d))?;
        }
        let mut snippets = Vec::new();
        for s in &self.snippets {
            let id = s.snippet_id.as_str();
            std::fs::write(root.join("snippets").join(format!("{id}.py")), &s.source.source)?;
            write_json(&root.join("patches").join(format!("{id}.json")), &s.patches)?;
            std::fs::write(
                root.join("graphs").join(format!("{id}.json")),
                export(&s.diagram, ExportFormat::GraphJson),
            )?;
            write_json(&root.join("programs").join(format!("{id}.json")), &s.program)?;
            snippets.push(SnippetManifest {
                snippet_id: s.snippet_id.clone(),
                index: s.index,
                turn: s.turn,
                revision: s.source.revision,
                status: s.status,
                operations: s.operations.clone(),
                units: s.units.clone(),
                stdout: s.stdout.clone(),
                registry_before: s.registry_before.clone(),
                log_start: s.log_start,
            });
        }
        write_json(&root.join("statement_log.json"), &self.statement_log())?;
        write_json(
            &root.join("manifest.json"),
            &Manifest {
                version: MANIFEST_VERSION,
                session_id: self.id.clone(),
                turns: self.turns.clone(),
                files: self.files.clone(),
                registry: self.registry.clone(),
                table_states: self.table_states.clone(),
                node_conversations: self.node_conversations.clone(),
                snippets,
            },
        )
    }

    /// Reads a session saved under `config.root`. The interpreter is rebuilt
    /// from the statement log on first use.
    pub fn load(config: SessionConfig, llm: Arc<dyn LlmClient>) -> Result<Self, SessionError> {
        let root = config.root.clone();
        let manifest: Manifest = read_json(&root.join("manifest.json"))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(SessionError::Persist(format!(
                "unsupported manifest version {}",
                manifest.version
            )));
        }
        let log: Vec<LoggedUnit> = read_json(&root.join("statement_log.json"))?;
        let mut session = Session::new(manifest.session_id, config, llm)?;
        for m in manifest.snippets {
            let id = m.snippet_id.as_str().to_string();
            let source = std::fs::read_to_string(root.join("snippets").join(format!("{id}.py")))?;
            let patches: Vec<CodePatch> = read_json(&root.join("patches").join(format!("{id}.json")))?;
            let graph = std::fs::read_to_string(root.join("graphs").join(format!("{id}.json")))?;
            let diagram = import_graph_json(&graph).map_err(|e| SessionError::Persist(e.to_string()))?;
            let program = read_json(&root.join("programs").join(format!("{id}.json")))?;
            session.snippets.push(SnippetRecord {
                snippet_id: m.snippet_id.clone(),
                index: m.index,
                turn: m.turn,
                source: SnippetSource {
                    snippet_id: m.snippet_id,
                    source,
                    revision: m.revision,
                },
                diagram,
                program,
                operations: m.operations,
                status: m.status,
                patches,
                units: m.units,
                stdout: m.stdout,
                registry_before: m.registry_before,
                log_start: m.log_start,
            });
        }
        session.turns = manifest.turns;
        session.files = manifest.files;
        session.registry = manifest.registry;
        session.table_states = manifest.table_states;
        session.node_conversations = manifest.node_conversations;
        session.pending_log = Some(log);
        Ok(session)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{TurnInput, UnavailableClient};
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let config = SessionConfig::new(dir.path()).static_only();
        let mut s = Session::new("rt", config.clone(), Arc::new(UnavailableClient)).unwrap();
        s.run_turn(TurnInput::RawCode(
            "import pandas as pd\ndf = pd.read_csv('a.csv')\ntop = df.sort_values('x').head(3)\n".into(),
        ));
        s.run_turn(TurnInput::RawCode("top.plot()\n".into()));
        s.save().unwrap();
        let back = Session::load(config, Arc::new(UnavailableClient)).unwrap();
        assert_eq!(back.registry(), s.registry());
        assert_eq!(back.snippets().len(), 2);
        for (a, b) in s.snippets().iter().zip(back.snippets()) {
            assert_eq!(
                export(&a.diagram, ExportFormat::GraphJson),
                export(&b.diagram, ExportFormat::GraphJson)
            );
            assert_eq!(a, b);
        }
        assert_eq!(back.turns(), s.turns());
    }
}
