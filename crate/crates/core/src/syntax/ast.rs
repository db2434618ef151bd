use serde::{Deserialize, Serialize};

use crate::span::Span;

/// Syntax node kinds of the subset grammar.
///
/// Child layout per kind:
/// - `Assign`: targets..., value (last)
/// - `AugAssign`, `BinOp`: [left, right]
/// - `ExprStmt`, `Attribute`, `UnaryOp`, `KeywordArg`: [operand]
/// - `Call`: [func, args...]
/// - `Subscript`: [value, index]
/// - `Compare`: [left, comparators...]
/// - `BoolOp`, `ListExpr`, `TupleExpr`: items
/// - `DictExpr`: [key0, value0, key1, value1, ...]
/// - `Slice`: present bounds only, see the flags
/// - literals, `Name`, `Lambda`, `Opaque`: no children
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum NodeKind {
    Assign,
    AugAssign { op: String },
    ExprStmt,
    Call,
    Attribute { attr: String, attr_span: Span },
    Subscript,
    Name,
    StringLit,
    NumberLit,
    BoolLit,
    NoneLit,
    ListExpr,
    DictExpr,
    TupleExpr,
    Compare { ops: Vec<String> },
    BoolOp { op: String },
    BinOp { op: String },
    UnaryOp { op: String },
    Lambda,
    KeywordArg { name: String },
    Slice { lower: bool, upper: bool, step: bool },
    Opaque,
}

impl NodeKind {
    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::Assign => "Assign",
            NodeKind::AugAssign { .. } => "AugAssign",
            NodeKind::ExprStmt => "ExprStmt",
            NodeKind::Call => "Call",
            NodeKind::Attribute { .. } => "Attribute",
            NodeKind::Subscript => "Subscript",
            NodeKind::Name => "Name",
            NodeKind::StringLit => "StringLit",
            NodeKind::NumberLit => "NumberLit",
            NodeKind::BoolLit => "BoolLit",
            NodeKind::NoneLit => "NoneLit",
            NodeKind::ListExpr => "ListExpr",
            NodeKind::DictExpr => "DictExpr",
            NodeKind::TupleExpr => "TupleExpr",
            NodeKind::Compare { .. } => "Compare",
            NodeKind::BoolOp { .. } => "BoolOp",
            NodeKind::BinOp { .. } => "BinOp",
            NodeKind::UnaryOp { .. } => "UnaryOp",
            NodeKind::Lambda => "Lambda",
            NodeKind::KeywordArg { .. } => "KeywordArg",
            NodeKind::Slice { .. } => "Slice",
            NodeKind::Opaque => "Opaque",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxNode {
    pub kind: NodeKind,
    pub children: Vec<SyntaxNode>,
    /// Absolute snippet span.
    pub span: Span,
    /// Verbatim source at `span`.
    pub text: String,
}

impl SyntaxNode {
    pub fn is(&self, name: &str) -> bool {
        self.kind.name() == name
    }

    pub fn is_name(&self) -> bool {
        matches!(self.kind, NodeKind::Name)
    }

    /// For `Name` nodes, the identifier.
    pub fn ident(&self) -> Option<&str> {
        self.is_name().then_some(self.text.as_str())
    }

    /// Depth-first pre-order walk.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a SyntaxNode)) {
        f(self);
        for child in &self.children {
            child.walk(f);
        }
    }

    /// Value of a string literal with quotes and prefix removed. Escapes are
    /// left as written.
    pub fn string_value(&self) -> Option<String> {
        if !matches!(self.kind, NodeKind::StringLit) {
            return None;
        }
        // implicit concatenation is rare in column names; take the first piece
        let text = self.text.trim();
        let body_start = text.find(['\'', '"'])?;
        let quote = &text[body_start..];
        let q = if quote.starts_with("\"\"\"") || quote.starts_with("'''") {
            &quote[..3]
        } else {
            &quote[..1]
        };
        let inner = &quote[q.len()..];
        let end = inner.find(q)?;
        Some(inner[..end].to_string())
    }

    /// Value expression of an assignment or expression statement.
    pub fn statement_value(&self) -> Option<&SyntaxNode> {
        match self.kind {
            NodeKind::Assign | NodeKind::AugAssign { .. } | NodeKind::ExprStmt => {
                self.children.last()
            }
            _ => None,
        }
    }
}
