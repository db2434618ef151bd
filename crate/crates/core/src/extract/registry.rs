use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ids::{NodeId, SnippetId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TableOrigin {
    Loaded,
    Derived,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    pub origin: TableOrigin,
    pub defining_snippet: SnippetId,
    pub defining_operation: NodeId,
    pub last_seen: SnippetId,
    /// Most recent diagram node for the variable, across all snippets.
    pub last_node: Option<NodeId>,
}

/// Conversation-global record of variables known to hold tables.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TableRegistry {
    entries: BTreeMap<String, TableEntry>,
}

impl TableRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&TableEntry> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Binds `name` to the output of `operation`. Keeps the node pointer of a
    /// previous binding until the graph records the new one.
    pub fn register(
        &mut self,
        name: &str,
        origin: TableOrigin,
        snippet: &SnippetId,
        operation: &NodeId,
    ) {
        let last_node = self.entries.get(name).and_then(|e| e.last_node.clone());
        let last_seen = self
            .entries
            .get(name)
            .map_or_else(|| snippet.clone(), |e| e.last_seen.clone());
        self.entries.insert(
            name.to_string(),
            TableEntry {
                origin,
                defining_snippet: snippet.clone(),
                defining_operation: operation.clone(),
                last_seen,
                last_node,
            },
        );
    }

    pub fn remove(&mut self, name: &str) -> Option<TableEntry> {
        self.entries.remove(name)
    }

    /// Records that `node` in `snippet` is the newest occurrence of `name`.
    pub fn touch(&mut self, name: &str, snippet: &SnippetId, node: &NodeId) {
        if let Some(entry) = self.entries.get_mut(name) {
            entry.last_seen = snippet.clone();
            entry.last_node = Some(node.clone());
        }
    }
}
