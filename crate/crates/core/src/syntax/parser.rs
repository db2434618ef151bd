//! Recursive-descent parser for single statements.
//!
//! Anything outside the grammar becomes an `Opaque` node carrying its exact
//! span, either for the whole statement (compound statements, imports, ...)
//! or locally for one bracketed group (comprehensions and the like). Only
//! lexical failures and malformed token sequences built purely from grammar
//! tokens produce no tree.

use serde::{Deserialize, Serialize};

use super::ast::{NodeKind, SyntaxNode};
use super::lexer::{tokenize, Token, TokenKind};
use crate::ingest::StatementUnit;
use crate::span::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub span: Span,
    pub message: String,
    pub severity: Severity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub tree: Option<SyntaxNode>,
    pub diagnostics: Vec<Diagnostic>,
}

impl ParseOutcome {
    pub fn has_errors(&self) -> bool {
        self.diagnostics.iter().any(|d| d.severity == Severity::Error)
    }
}

const STATEMENT_KEYWORDS: &[&str] = &[
    "assert", "async", "await", "break", "class", "continue", "def", "del", "for", "from",
    "global", "if", "import", "nonlocal", "pass", "raise", "return", "try", "while", "with",
    "yield",
];

const KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class",
    "continue", "def", "del", "elif", "else", "except", "finally", "for", "from", "global", "if",
    "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return", "try",
    "while", "with", "yield",
];

/// Keywords whose presence means a failed parse is outside the grammar rather
/// than invalid.
const FOREIGN_KEYWORDS: &[&str] = &[
    "as", "async", "await", "elif", "else", "except", "finally", "for", "from", "if", "yield",
];

const AUG_OPS: &[&str] = &[
    "+=", "-=", "*=", "/=", "//=", "%=", "**=", "&=", "|=", "^=", ">>=", "<<=", "@=",
];

pub fn parse_statement(stmt: &StatementUnit) -> ParseOutcome {
    parse_source(&stmt.source, stmt.range.start)
}

/// Parses one statement whose text starts at snippet offset `base`.
pub fn parse_source(src: &str, base: usize) -> ParseOutcome {
    let full = Span::new(base, base + src.len());
    let tokens = match tokenize(src, base) {
        Ok(t) => t,
        Err(e) => {
            return ParseOutcome {
                tree: None,
                diagnostics: vec![Diagnostic {
                    span: e.span,
                    message: e.message,
                    severity: Severity::Error,
                }],
            }
        }
    };
    if tokens.is_empty() {
        return ParseOutcome {
            tree: None,
            diagnostics: vec![Diagnostic {
                span: full,
                message: "empty statement".into(),
                severity: Severity::Error,
            }],
        };
    }
    let opaque_root = || SyntaxNode {
        kind: NodeKind::Opaque,
        children: vec![],
        span: full,
        text: src.to_string(),
    };
    let first = &tokens[0];
    let compound = first.is_op("@")
        || (first.kind == TokenKind::Name && STATEMENT_KEYWORDS.contains(&first.text.as_str()))
        || tokens.iter().any(|t| t.kind == TokenKind::Newline || t.is_op(";"));
    if compound {
        return ParseOutcome {
            tree: Some(opaque_root()),
            diagnostics: vec![],
        };
    }

    let mut parser = Parser::new(src, base, &tokens);
    match parser.statement() {
        Ok(tree) => ParseOutcome {
            tree: Some(tree),
            diagnostics: parser.diagnostics,
        },
        Err(err) if err.foreign || looks_foreign(&tokens) => {
            let mut diagnostics = parser.diagnostics;
            diagnostics.push(Diagnostic {
                span: err.span,
                message: format!("outside the supported grammar: {}", err.message),
                severity: Severity::Warning,
            });
            ParseOutcome {
                tree: Some(opaque_root()),
                diagnostics,
            }
        }
        Err(err) => {
            let mut diagnostics = parser.diagnostics;
            diagnostics.push(Diagnostic {
                span: err.span,
                message: err.message,
                severity: Severity::Error,
            });
            ParseOutcome {
                tree: None,
                diagnostics,
            }
        }
    }
}

/// Parses a standalone expression (e.g. an edited parameter value). Fails on
/// anything that is not a complete expression of the grammar.
pub fn parse_expression(src: &str) -> Result<SyntaxNode, Diagnostic> {
    let whole = Span::new(0, src.len());
    let tokens = tokenize(src, 0).map_err(|e| Diagnostic {
        span: e.span,
        message: e.message,
        severity: Severity::Error,
    })?;
    let mut parser = Parser::new(src, 0, &tokens);
    let to_diag = |e: PErr| Diagnostic {
        span: e.span,
        message: e.message,
        severity: Severity::Error,
    };
    if tokens.is_empty() {
        return Err(to_diag(PErr::new(whole, "empty expression")));
    }
    let node = parser.test().map_err(to_diag)?;
    if parser.pos != tokens.len() {
        let span = tokens[parser.pos].span;
        return Err(to_diag(PErr::new(span, "unexpected trailing input")));
    }
    let mut opaque = false;
    node.walk(&mut |n| opaque |= matches!(n.kind, NodeKind::Opaque));
    if opaque {
        return Err(to_diag(PErr::new(whole, "expression outside the supported grammar")));
    }
    Ok(node)
}

fn looks_foreign(tokens: &[Token]) -> bool {
    tokens.iter().enumerate().any(|(i, t)| {
        (t.kind == TokenKind::Name && FOREIGN_KEYWORDS.contains(&t.text.as_str()))
            || [":=", "...", "->", "@"].iter().any(|op| t.is_op(op))
            || ((t.is_op("*") || t.is_op("**"))
                && (i == 0 || ["=", ",", "(", "[", "{"].iter().any(|op| tokens[i - 1].is_op(op))))
    })
}

#[derive(Debug)]
struct PErr {
    span: Span,
    message: String,
    /// Valid syntax the grammar does not cover.
    foreign: bool,
}

impl PErr {
    fn new(span: Span, message: impl Into<String>) -> Self {
        PErr {
            span,
            message: message.into(),
            foreign: false,
        }
    }

    fn foreign(span: Span, message: impl Into<String>) -> Self {
        PErr {
            foreign: true,
            ..PErr::new(span, message)
        }
    }
}

type PResult<T> = Result<T, PErr>;

struct Parser<'a> {
    src: &'a str,
    base: usize,
    tokens: &'a [Token],
    pos: usize,
    /// Index of the matching closer for every opening bracket token.
    closers: Vec<Option<usize>>,
    diagnostics: Vec<Diagnostic>,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, base: usize, tokens: &'a [Token]) -> Self {
        let mut closers = vec![None; tokens.len()];
        let mut stack = Vec::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.kind != TokenKind::Op {
                continue;
            }
            match t.text.as_str() {
                "(" | "[" | "{" => stack.push(i),
                ")" | "]" | "}" => {
                    if let Some(open) = stack.pop() {
                        closers[open] = Some(i);
                    }
                }
                _ => {}
            }
        }
        Parser {
            src,
            base,
            tokens,
            pos: 0,
            closers,
            diagnostics: Vec::new(),
        }
    }

    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, offset: usize) -> Option<&'a Token> {
        self.tokens.get(self.pos + offset)
    }

    fn at_op(&self, op: &str) -> bool {
        self.peek().is_some_and(|t| t.is_op(op))
    }

    fn at_keyword(&self, kw: &str) -> bool {
        self.peek().is_some_and(|t| t.is_keyword(kw))
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if self.at_op(op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn end_span(&self) -> Span {
        let end = self.base + self.src.len();
        Span::new(end, end)
    }

    fn current_span(&self) -> Span {
        self.peek().map_or_else(|| self.end_span(), |t| t.span)
    }

    fn expect_op(&mut self, op: &str) -> PResult<&'a Token> {
        match self.peek() {
            Some(t) if t.is_op(op) => {
                self.pos += 1;
                Ok(t)
            }
            Some(t) => Err(PErr::new(t.span, format!("expected '{op}', found '{}'", t.text))),
            None => Err(PErr::new(self.end_span(), format!("expected '{op}', found end"))),
        }
    }

    fn slice(&self, span: Span) -> String {
        self.src[span.start - self.base..span.end - self.base].to_string()
    }

    fn node(&self, kind: NodeKind, children: Vec<SyntaxNode>, span: Span) -> SyntaxNode {
        SyntaxNode {
            kind,
            children,
            span,
            text: self.slice(span),
        }
    }

    fn prev_end(&self) -> usize {
        self.tokens[self.pos - 1].span.end
    }

    // ---- statements ----

    fn statement(&mut self) -> PResult<SyntaxNode> {
        let start = self.current_span().start;
        let first = self.testlist()?;
        let node = if self.at_op("=") {
            let mut parts = vec![first];
            while self.eat_op("=") {
                parts.push(self.testlist()?);
            }
            let span = Span::new(start, self.prev_end());
            self.node(NodeKind::Assign, parts, span)
        } else if let Some(op) = self.peek().filter(|t| AUG_OPS.iter().any(|o| t.is_op(o))) {
            self.pos += 1;
            let value = self.testlist()?;
            let span = Span::new(start, self.prev_end());
            self.node(
                NodeKind::AugAssign { op: op.text.clone() },
                vec![first, value],
                span,
            )
        } else if self.at_op(":") {
            return Err(PErr::foreign(self.current_span(), "annotated assignment"));
        } else {
            let span = first.span;
            self.node(NodeKind::ExprStmt, vec![first], span)
        };
        if let Some(t) = self.peek() {
            return Err(PErr::new(t.span, format!("unexpected '{}'", t.text)));
        }
        Ok(node)
    }

    /// Comma-separated expressions without brackets; a tuple when a comma is
    /// present.
    fn testlist(&mut self) -> PResult<SyntaxNode> {
        let first = self.test()?;
        if !self.at_op(",") {
            return Ok(first);
        }
        let start = first.span.start;
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.peek().is_none() || self.at_op("=") || AUG_OPS.iter().any(|o| self.at_op(o)) {
                break;
            }
            items.push(self.test()?);
        }
        let span = Span::new(start, self.prev_end());
        Ok(self.node(NodeKind::TupleExpr, items, span))
    }

    // ---- expressions ----

    fn test(&mut self) -> PResult<SyntaxNode> {
        if self.at_keyword("lambda") {
            return self.lambda();
        }
        let body = self.or_test()?;
        if self.at_keyword("if") {
            // conditional expression: kept verbatim
            self.pos += 1;
            self.or_test()?;
            if !self.at_keyword("else") {
                return Err(PErr::new(self.current_span(), "expected 'else'"));
            }
            self.pos += 1;
            self.test()?;
            let span = Span::new(body.span.start, self.prev_end());
            return Ok(self.node(NodeKind::Opaque, vec![], span));
        }
        Ok(body)
    }

    fn lambda(&mut self) -> PResult<SyntaxNode> {
        let start = self.current_span().start;
        self.pos += 1;
        let mut depth = 0usize;
        let mut seen_colon = false;
        while let Some(t) = self.peek() {
            if t.kind == TokenKind::Op {
                match t.text.as_str() {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" => {
                        if depth == 0 {
                            break;
                        }
                        depth -= 1;
                    }
                    "," | "=" if depth == 0 => {
                        if seen_colon {
                            break;
                        }
                    }
                    ":" if depth == 0 && !seen_colon => seen_colon = true,
                    _ => {}
                }
            }
            if depth == 0 && seen_colon && t.is_keyword("for") {
                break;
            }
            self.pos += 1;
        }
        if !seen_colon {
            return Err(PErr::new(self.current_span(), "lambda without ':'"));
        }
        let span = Span::new(start, self.prev_end());
        Ok(self.node(NodeKind::Lambda, vec![], span))
    }

    fn or_test(&mut self) -> PResult<SyntaxNode> {
        self.bool_chain("or", Self::and_test)
    }

    fn and_test(&mut self) -> PResult<SyntaxNode> {
        self.bool_chain("and", Self::not_test)
    }

    fn bool_chain(
        &mut self,
        op: &str,
        next: fn(&mut Self) -> PResult<SyntaxNode>,
    ) -> PResult<SyntaxNode> {
        let first = next(self)?;
        if !self.at_keyword(op) {
            return Ok(first);
        }
        let start = first.span.start;
        let mut values = vec![first];
        while self.at_keyword(op) {
            self.pos += 1;
            values.push(next(self)?);
        }
        let span = Span::new(start, self.prev_end());
        Ok(self.node(NodeKind::BoolOp { op: op.into() }, values, span))
    }

    fn not_test(&mut self) -> PResult<SyntaxNode> {
        if self.at_keyword("not") {
            let start = self.current_span().start;
            self.pos += 1;
            let operand = self.not_test()?;
            let span = Span::new(start, operand.span.end);
            return Ok(self.node(NodeKind::UnaryOp { op: "not".into() }, vec![operand], span));
        }
        self.comparison()
    }

    fn comp_op(&mut self) -> Option<String> {
        let t = self.peek()?;
        if t.kind == TokenKind::Op
            && ["<", ">", "==", ">=", "<=", "!="].contains(&t.text.as_str())
        {
            self.pos += 1;
            return Some(t.text.clone());
        }
        if t.is_keyword("in") {
            self.pos += 1;
            return Some("in".into());
        }
        if t.is_keyword("not") && self.peek_at(1).is_some_and(|n| n.is_keyword("in")) {
            self.pos += 2;
            return Some("not in".into());
        }
        if t.is_keyword("is") {
            self.pos += 1;
            if self.at_keyword("not") {
                self.pos += 1;
                return Some("is not".into());
            }
            return Some("is".into());
        }
        None
    }

    fn comparison(&mut self) -> PResult<SyntaxNode> {
        let first = self.binary(0)?;
        let start = first.span.start;
        let mut ops = Vec::new();
        let mut parts = vec![first];
        while let Some(op) = self.comp_op() {
            ops.push(op);
            parts.push(self.binary(0)?);
        }
        if ops.is_empty() {
            return Ok(parts.pop().unwrap());
        }
        let span = Span::new(start, self.prev_end());
        Ok(self.node(NodeKind::Compare { ops }, parts, span))
    }

    /// Binary operators by ascending precedence.
    const BINARY_LEVELS: &'static [&'static [&'static str]] = &[
        &["|"],
        &["^"],
        &["&"],
        &["<<", ">>"],
        &["+", "-"],
        &["*", "/", "//", "%", "@"],
    ];

    fn binary(&mut self, level: usize) -> PResult<SyntaxNode> {
        if level == Self::BINARY_LEVELS.len() {
            return self.factor();
        }
        let mut left = self.binary(level + 1)?;
        while let Some(t) = self
            .peek()
            .filter(|t| Self::BINARY_LEVELS[level].iter().any(|op| t.is_op(op)))
        {
            self.pos += 1;
            let right = self.binary(level + 1)?;
            let span = Span::new(left.span.start, right.span.end);
            left = self.node(NodeKind::BinOp { op: t.text.clone() }, vec![left, right], span);
        }
        Ok(left)
    }

    fn factor(&mut self) -> PResult<SyntaxNode> {
        if let Some(t) = self.peek().filter(|t| t.is_op("-") || t.is_op("+") || t.is_op("~")) {
            self.pos += 1;
            let operand = self.factor()?;
            let span = Span::new(t.span.start, operand.span.end);
            return Ok(self.node(NodeKind::UnaryOp { op: t.text.clone() }, vec![operand], span));
        }
        self.power()
    }

    fn power(&mut self) -> PResult<SyntaxNode> {
        let base = self.primary()?;
        if self.eat_op("**") {
            let exp = self.factor()?;
            let span = Span::new(base.span.start, exp.span.end);
            return Ok(self.node(NodeKind::BinOp { op: "**".into() }, vec![base, exp], span));
        }
        Ok(base)
    }

    fn primary(&mut self) -> PResult<SyntaxNode> {
        let (mut node, start) = self.atom()?;
        loop {
            if self.at_op(".") {
                self.pos += 1;
                let name = match self.peek() {
                    Some(t) if t.kind == TokenKind::Name => t,
                    _ => return Err(PErr::new(self.current_span(), "expected attribute name")),
                };
                self.pos += 1;
                let span = Span::new(start, name.span.end);
                node = self.node(
                    NodeKind::Attribute {
                        attr: name.text.clone(),
                        attr_span: name.span,
                    },
                    vec![node],
                    span,
                );
            } else if self.at_op("(") {
                let args = self.call_args()?;
                let span = Span::new(start, self.prev_end());
                let mut children = vec![node];
                children.extend(args);
                node = self.node(NodeKind::Call, children, span);
            } else if self.at_op("[") {
                let index = self.subscript_index()?;
                let span = Span::new(start, self.prev_end());
                node = self.node(NodeKind::Subscript, vec![node, index], span);
            } else {
                return Ok(node);
            }
        }
    }

    /// Runs `inner` over the bracket group opening at the current token. When
    /// it fails on a construct outside the grammar, the group is skipped and
    /// returned as `Err` with its outer span.
    fn bracketed<T>(
        &mut self,
        inner: impl FnOnce(&mut Self) -> PResult<T>,
    ) -> PResult<Result<T, (Span, PErr)>> {
        let open = self.pos;
        let close = self.closers[open]
            .ok_or_else(|| PErr::new(self.tokens[open].span, "unclosed bracket"))?;
        self.pos += 1;
        let result = inner(self).and_then(|v| {
            if self.pos != close {
                Err(PErr::new(self.current_span(), "unexpected token in brackets"))
            } else {
                Ok(v)
            }
        });
        let outer = Span::new(self.tokens[open].span.start, self.tokens[close].span.end);
        match result {
            Ok(v) => {
                self.pos = close + 1;
                Ok(Ok(v))
            }
            // only constructs outside the grammar degrade; real mistakes propagate
            Err(e) if looks_foreign(&self.tokens[open + 1..close]) => {
                self.pos = close + 1;
                Ok(Err((outer, e)))
            }
            Err(e) => Err(e),
        }
    }

    fn note_fallback(&mut self, err: &PErr) {
        self.diagnostics.push(Diagnostic {
            span: err.span,
            message: format!("kept verbatim: {}", err.message),
            severity: Severity::Warning,
        });
    }

    fn opaque_inside(&mut self, outer: Span) -> Option<SyntaxNode> {
        let inner = Span::new(outer.start + 1, outer.end - 1);
        let text = self.slice(inner);
        let trimmed_start = inner.start + (text.len() - text.trim_start().len());
        let trimmed_end = inner.end - (text.len() - text.trim_end().len());
        (trimmed_start < trimmed_end)
            .then(|| self.node(NodeKind::Opaque, vec![], Span::new(trimmed_start, trimmed_end)))
    }

    fn call_args(&mut self) -> PResult<Vec<SyntaxNode>> {
        let parsed = self.bracketed(|p| {
            let mut args = Vec::new();
            while !p.at_op(")") {
                args.push(p.call_arg()?);
                if !p.eat_op(",") {
                    break;
                }
            }
            Ok(args)
        })?;
        match parsed {
            Ok(args) => Ok(args),
            Err((outer, err)) => {
                self.note_fallback(&err);
                Ok(self.opaque_inside(outer).into_iter().collect())
            }
        }
    }

    fn call_arg(&mut self) -> PResult<SyntaxNode> {
        if let Some(t) = self.peek().filter(|t| t.is_op("*") || t.is_op("**")) {
            self.pos += 1;
            let value = self.test()?;
            let span = Span::new(t.span.start, value.span.end);
            return Ok(self.node(NodeKind::Opaque, vec![], span));
        }
        if let (Some(name), Some(eq)) = (self.peek(), self.peek_at(1)) {
            if name.kind == TokenKind::Name && eq.is_op("=") && !KEYWORDS.contains(&name.text.as_str())
            {
                self.pos += 2;
                let value = self.test()?;
                let span = Span::new(name.span.start, value.span.end);
                return Ok(self.node(
                    NodeKind::KeywordArg {
                        name: name.text.clone(),
                    },
                    vec![value],
                    span,
                ));
            }
        }
        let value = self.test()?;
        if self.at_keyword("for") {
            return Err(PErr::new(self.current_span(), "generator expression"));
        }
        Ok(value)
    }

    fn subscript_index(&mut self) -> PResult<SyntaxNode> {
        let parsed = self.bracketed(|p| {
            let first = p.subscript_item()?;
            if !p.at_op(",") {
                return Ok(first);
            }
            let start = first.span.start;
            let mut items = vec![first];
            while p.eat_op(",") {
                if p.at_op("]") {
                    break;
                }
                items.push(p.subscript_item()?);
            }
            let span = Span::new(start, p.prev_end());
            Ok(p.node(NodeKind::TupleExpr, items, span))
        })?;
        match parsed {
            Ok(index) => Ok(index),
            Err((outer, err)) => {
                self.note_fallback(&err);
                Ok(self
                    .opaque_inside(outer)
                    .unwrap_or_else(|| self.node(NodeKind::Opaque, vec![], outer)))
            }
        }
    }

    fn subscript_item(&mut self) -> PResult<SyntaxNode> {
        let start = self.current_span().start;
        let lower = if self.at_op(":") {
            None
        } else {
            let e = self.test()?;
            if !self.at_op(":") {
                return Ok(e);
            }
            Some(e)
        };
        self.expect_op(":")?;
        let mut children = Vec::new();
        let has_lower = lower.is_some();
        children.extend(lower);
        let bound_follows = |p: &Self| !(p.at_op(":") || p.at_op(",") || p.at_op("]"));
        let upper = if bound_follows(self) {
            Some(self.test()?)
        } else {
            None
        };
        let has_upper = upper.is_some();
        children.extend(upper);
        let mut has_step = false;
        if self.eat_op(":") && bound_follows(self) {
            children.push(self.test()?);
            has_step = true;
        }
        let span = Span::new(start, self.prev_end());
        Ok(self.node(
            NodeKind::Slice {
                lower: has_lower,
                upper: has_upper,
                step: has_step,
            },
            children,
            span,
        ))
    }

    /// Returns the atom and the start of its outermost syntax (parentheses
    /// included), which trailers extend from.
    fn atom(&mut self) -> PResult<(SyntaxNode, usize)> {
        let Some(t) = self.peek() else {
            return Err(PErr::new(self.end_span(), "unexpected end of statement"));
        };
        let start = t.span.start;
        match t.kind {
            TokenKind::Name => {
                let kind = match t.text.as_str() {
                    "True" | "False" => NodeKind::BoolLit,
                    "None" => NodeKind::NoneLit,
                    kw if KEYWORDS.contains(&kw) => {
                        return Err(PErr::new(t.span, format!("unexpected keyword '{kw}'")))
                    }
                    _ => NodeKind::Name,
                };
                self.pos += 1;
                Ok((self.node(kind, vec![], t.span), start))
            }
            TokenKind::Number => {
                self.pos += 1;
                Ok((self.node(NodeKind::NumberLit, vec![], t.span), start))
            }
            TokenKind::String => {
                let mut end = t.span.end;
                self.pos += 1;
                while let Some(next) = self.peek().filter(|n| n.kind == TokenKind::String) {
                    end = next.span.end;
                    self.pos += 1;
                }
                Ok((self.node(NodeKind::StringLit, vec![], Span::new(start, end)), start))
            }
            TokenKind::Newline => Err(PErr::new(t.span, "unexpected newline")),
            TokenKind::Op => match t.text.as_str() {
                "(" => self.paren_atom(),
                "[" => self.list_atom().map(|n| (n, start)),
                "{" => self.dict_atom().map(|n| (n, start)),
                _ => Err(PErr::new(t.span, format!("unexpected '{}'", t.text))),
            },
        }
    }

    fn paren_atom(&mut self) -> PResult<(SyntaxNode, usize)> {
        let start = self.current_span().start;
        enum Inner {
            Empty,
            Single(SyntaxNode),
            Tuple(Vec<SyntaxNode>),
        }
        let parsed = self.bracketed(|p| {
            if p.at_op(")") {
                return Ok(Inner::Empty);
            }
            let first = p.test()?;
            if !p.at_op(",") {
                if p.at_keyword("for") {
                    return Err(PErr::new(p.current_span(), "generator expression"));
                }
                return Ok(Inner::Single(first));
            }
            let mut items = vec![first];
            while p.eat_op(",") {
                if p.at_op(")") {
                    break;
                }
                items.push(p.test()?);
            }
            Ok(Inner::Tuple(items))
        })?;
        let outer = Span::new(start, self.prev_end());
        Ok(match parsed {
            Ok(Inner::Empty) => (self.node(NodeKind::TupleExpr, vec![], outer), start),
            Ok(Inner::Single(node)) => (node, start),
            Ok(Inner::Tuple(items)) => (self.node(NodeKind::TupleExpr, items, outer), start),
            Err((outer, err)) => {
                self.note_fallback(&err);
                (self.node(NodeKind::Opaque, vec![], outer), start)
            }
        })
    }

    fn list_atom(&mut self) -> PResult<SyntaxNode> {
        let start = self.current_span().start;
        let parsed = self.bracketed(|p| {
            let mut items = Vec::new();
            while !p.at_op("]") {
                items.push(p.test()?);
                if p.at_keyword("for") {
                    return Err(PErr::new(p.current_span(), "comprehension"));
                }
                if !p.eat_op(",") {
                    break;
                }
            }
            Ok(items)
        })?;
        let outer = Span::new(start, self.prev_end());
        Ok(match parsed {
            Ok(items) => self.node(NodeKind::ListExpr, items, outer),
            Err((outer, err)) => {
                self.note_fallback(&err);
                self.node(NodeKind::Opaque, vec![], outer)
            }
        })
    }

    fn dict_atom(&mut self) -> PResult<SyntaxNode> {
        let start = self.current_span().start;
        let parsed = self.bracketed(|p| {
            let mut items = Vec::new();
            while !p.at_op("}") {
                let key = p.test()?;
                p.expect_op(":")?;
                let value = p.test()?;
                if p.at_keyword("for") {
                    return Err(PErr::new(p.current_span(), "comprehension"));
                }
                items.push(key);
                items.push(value);
                if !p.eat_op(",") {
                    break;
                }
            }
            Ok(items)
        })?;
        let outer = Span::new(start, self.prev_end());
        Ok(match parsed {
            Ok(items) => self.node(NodeKind::DictExpr, items, outer),
            Err((outer, err)) => {
                self.note_fallback(&err);
                self.node(NodeKind::Opaque, vec![], outer)
            }
        })
    }
}
