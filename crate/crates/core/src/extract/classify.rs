//! API-surface classification backed by `assets/classification.toml`.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use serde::Deserialize;

use super::OperationKind;
use crate::syntax::{NodeKind, SyntaxNode};

pub const CLASSIFICATION_TOML: &str = include_str!("../../assets/classification.toml");

/// What a link is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Receiver {
    Table,
    /// Result of a `groupby`-like call.
    GroupResult,
    LoaderNamespace,
    PlotNamespace,
    Other,
}

#[derive(Debug, Deserialize)]
pub struct Namespaces {
    pub loader: Vec<String>,
    pub plotting: Vec<String>,
    pub display_functions: Vec<String>,
    #[serde(default)]
    pub table_valued_inspect: Vec<String>,
}

#[derive(Debug, Deserialize)]
pub struct ClassificationTable {
    pub version: u32,
    pub namespaces: Namespaces,
    loader_functions: BTreeMap<OperationKind, Vec<String>>,
    table_methods: BTreeMap<OperationKind, Vec<String>>,
    accessors: BTreeMap<String, OperationKind>,
    attributes: BTreeMap<OperationKind, Vec<String>>,
    positional_params: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    loader_positional_params: BTreeMap<String, Vec<String>>,
}

static TABLE: LazyLock<ClassificationTable> = LazyLock::new(|| {
    ClassificationTable::from_toml(CLASSIFICATION_TOML).expect("bundled classification table")
});

fn lookup(map: &BTreeMap<OperationKind, Vec<String>>, name: &str) -> Option<OperationKind> {
    map.iter()
        .find(|(_, names)| names.iter().any(|n| n == name))
        .map(|(kind, _)| *kind)
}

impl ClassificationTable {
    pub fn bundled() -> &'static ClassificationTable {
        &TABLE
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn is_loader(&self, name: &str) -> bool {
        self.namespaces.loader.iter().any(|n| n == name)
    }

    pub fn is_plotting(&self, name: &str) -> bool {
        self.namespaces.plotting.iter().any(|n| n == name)
    }

    pub fn is_display_function(&self, name: &str) -> bool {
        self.namespaces.display_functions.iter().any(|n| n == name)
    }

    pub fn is_table_valued_inspect(&self, name: &str) -> bool {
        self.namespaces.table_valued_inspect.iter().any(|n| n == name)
    }

    pub fn loader_function(&self, name: &str) -> Option<OperationKind> {
        lookup(&self.loader_functions, name)
    }

    pub fn table_method(&self, name: &str) -> Option<OperationKind> {
        lookup(&self.table_methods, name)
    }

    pub fn accessor(&self, name: &str) -> Option<OperationKind> {
        self.accessors.get(name).copied()
    }

    pub fn attribute(&self, name: &str) -> Option<OperationKind> {
        lookup(&self.attributes, name)
    }

    /// Every (name, kind) pair of the table-method section.
    pub fn table_method_entries(&self) -> impl Iterator<Item = (&str, OperationKind)> {
        self.table_methods
            .iter()
            .flat_map(|(kind, names)| names.iter().map(move |n| (n.as_str(), *kind)))
    }

    pub fn loader_function_entries(&self) -> impl Iterator<Item = (&str, OperationKind)> {
        self.loader_functions
            .iter()
            .flat_map(|(kind, names)| names.iter().map(move |n| (n.as_str(), *kind)))
    }

    /// Name of positional argument `index` of `callee`.
    pub fn positional_name(&self, callee: &str, index: usize, receiver: Receiver) -> String {
        let from = |map: &BTreeMap<String, Vec<String>>| {
            map.get(callee).and_then(|names| names.get(index)).cloned()
        };
        let named = if receiver == Receiver::LoaderNamespace {
            from(&self.loader_positional_params).or_else(|| from(&self.positional_params))
        } else {
            from(&self.positional_params)
        };
        named.unwrap_or_else(|| format!("arg{index}"))
    }
}

/// Classifies one call. `callee` may be a dotted accessor path such as
/// `str.upper`. Total: anything unknown is `Opaque`.
pub fn classify_call(callee: &str, receiver: Receiver, args: &[SyntaxNode]) -> OperationKind {
    classify_call_with(ClassificationTable::bundled(), callee, receiver, args)
}

pub fn classify_call_with(
    table: &ClassificationTable,
    callee: &str,
    receiver: Receiver,
    args: &[SyntaxNode],
) -> OperationKind {
    let (accessor, method) = match callee.split_once('.') {
        Some((acc, _)) => (Some(acc), callee.rsplit('.').next().unwrap_or(callee)),
        None => (None, callee),
    };
    match receiver {
        Receiver::LoaderNamespace => table.loader_function(method).unwrap_or(OperationKind::Opaque),
        Receiver::PlotNamespace => OperationKind::Visualize,
        Receiver::Other => OperationKind::Opaque,
        Receiver::Table | Receiver::GroupResult => {
            if let Some(kind) = accessor.and_then(|a| table.accessor(a)) {
                return kind;
            }
            if method == "drop" {
                let by_columns = args
                    .iter()
                    .any(|a| matches!(&a.kind, NodeKind::KeywordArg { name } if name == "columns"));
                return if by_columns {
                    OperationKind::Select
                } else {
                    OperationKind::Filter
                };
            }
            if method.starts_with("plot") {
                return OperationKind::Visualize;
            }
            table.table_method(method).unwrap_or(OperationKind::Opaque)
        }
    }
}
