//! Fluent-chain decomposition.
//!
//! A link is one call or subscript application together with the attribute
//! path leading to it, so `df["a"].str.upper()` has two links: `["a"]` and
//! `.str.upper()`. A trailing bare attribute (`df.shape`) is a link of its
//! own.

use super::ast::{NodeKind, SyntaxNode};
use crate::span::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    Call,
    Subscript,
    Attribute,
}

#[derive(Debug, Clone)]
pub struct ChainLink<'a> {
    pub kind: LinkKind,
    /// The application node (`Call`, `Subscript` or `Attribute`).
    pub node: &'a SyntaxNode,
    /// Expression the link is applied to.
    pub receiver: &'a SyntaxNode,
    /// Attribute names between receiver and application, e.g. `["str", "upper"]`.
    pub path: Vec<&'a str>,
}

impl<'a> ChainLink<'a> {
    /// Last attribute name, the method being called.
    pub fn callee(&self) -> Option<&'a str> {
        self.path.last().copied()
    }

    /// First attribute name when the path has more than one, e.g. `str`.
    pub fn accessor(&self) -> Option<&'a str> {
        (self.path.len() > 1).then(|| self.path[0])
    }

    /// Call arguments (without the callee).
    pub fn args(&self) -> &'a [SyntaxNode] {
        match self.kind {
            LinkKind::Call => &self.node.children[1..],
            _ => &[],
        }
    }

    /// Subscript index expression.
    pub fn index(&self) -> Option<&'a SyntaxNode> {
        match self.kind {
            LinkKind::Subscript => self.node.children.get(1),
            _ => None,
        }
    }

    /// Span of the link's own text, starting at its `.` or `[` and skipping
    /// whitespace, comments and closing parentheses after the receiver.
    pub fn own_span(&self, source: &str, base: usize) -> Span {
        let bytes = source.as_bytes();
        let mut i = self.receiver.span.end - base;
        let end = self.node.span.end - base;
        while i < end {
            match bytes[i] {
                b' ' | b'\t' | b'\r' | b'\n' | b'\\' | b')' => i += 1,
                b'#' => {
                    while i < end && bytes[i] != b'\n' {
                        i += 1;
                    }
                }
                _ => break,
            }
        }
        Span::new(i + base, self.node.span.end)
    }
}

fn peel_attributes(mut node: &SyntaxNode) -> (Vec<&str>, &SyntaxNode) {
    let mut path = Vec::new();
    while let NodeKind::Attribute { attr, .. } = &node.kind {
        path.push(attr.as_str());
        node = &node.children[0];
    }
    path.reverse();
    (path, node)
}

/// Left-to-right links of the chain in a statement (or expression) whose
/// ultimate receiver is a `Name`. Empty when the expression is not a chain.
pub fn chain_links(tree: &SyntaxNode) -> Vec<ChainLink<'_>> {
    let expr = match tree.kind {
        NodeKind::Assign | NodeKind::ExprStmt => match tree.children.last() {
            Some(v) => v,
            None => return Vec::new(),
        },
        _ => tree,
    };
    let mut links = Vec::new();
    let mut cur = expr;
    loop {
        match &cur.kind {
            NodeKind::Call => {
                let (path, receiver) = peel_attributes(&cur.children[0]);
                if path.is_empty() {
                    return Vec::new();
                }
                links.push(ChainLink {
                    kind: LinkKind::Call,
                    node: cur,
                    receiver,
                    path,
                });
                cur = receiver;
            }
            NodeKind::Subscript => {
                let (path, receiver) = peel_attributes(&cur.children[0]);
                links.push(ChainLink {
                    kind: LinkKind::Subscript,
                    node: cur,
                    receiver,
                    path,
                });
                cur = receiver;
            }
            NodeKind::Attribute { .. } => {
                let (path, receiver) = peel_attributes(cur);
                links.push(ChainLink {
                    kind: LinkKind::Attribute,
                    node: cur,
                    receiver,
                    path,
                });
                cur = receiver;
            }
            NodeKind::Name => break,
            _ => return Vec::new(),
        }
    }
    links.reverse();
    links
}

/// Root `Name` of a non-empty chain.
pub fn chain_root<'a>(links: &[ChainLink<'a>]) -> Option<&'a SyntaxNode> {
    links.first().map(|l| l.receiver)
}
