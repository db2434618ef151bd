//! Tokenizer for the analysis-language subset.

use crate::span::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Name,
    Number,
    String,
    /// Punctuation and operators, including brackets.
    Op,
    /// Newline outside brackets (only inside compound statements).
    Newline,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    /// Absolute snippet span.
    pub span: Span,
    pub text: String,
}

impl Token {
    pub fn is_op(&self, op: &str) -> bool {
        self.kind == TokenKind::Op && self.text == op
    }

    pub fn is_keyword(&self, kw: &str) -> bool {
        self.kind == TokenKind::Name && self.text == kw
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexError {
    pub span: Span,
    pub message: String,
}

// longest first
const OPERATORS: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "**", "//", "<<", ">>", "<=", ">=", "==",
    "!=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "@=", "+", "-", "*", "/", "%", "@",
    "&", "|", "^", "~", "<", ">", "(", ")", "[", "]", "{", "}", ",", ":", ".", ";", "=",
];

const STRING_PREFIXES: &[&str] = &[
    "rb", "br", "Rb", "bR", "RB", "BR", "rB", "Br", "fr", "rf", "Fr", "fR", "FR", "RF", "rF",
    "Rf", "r", "R", "b", "B", "f", "F", "u", "U",
];

/// Tokenizes `src`, whose first byte sits at snippet offset `base`.
pub fn tokenize(src: &str, base: usize) -> Result<Vec<Token>, LexError> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut stack: Vec<(u8, usize)> = Vec::new();
    let mut i = 0;
    let err = |start: usize, end: usize, message: &str| LexError {
        span: Span::new(base + start, base + end),
        message: message.to_string(),
    };
    while i < bytes.len() {
        let b = bytes[i];
        if b == b' ' || b == b'\t' || b == b'\r' || b == b'\x0c' {
            i += 1;
            continue;
        }
        if b == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if b == b'\\' && matches!(bytes.get(i + 1), Some(b'\n')) {
            i += 2;
            continue;
        }
        if b == b'\\' && bytes.get(i + 1) == Some(&b'\r') && bytes.get(i + 2) == Some(&b'\n') {
            i += 3;
            continue;
        }
        if b == b'\n' {
            if stack.is_empty() && tokens.last().map(|t: &Token| t.kind) != Some(TokenKind::Newline)
            {
                tokens.push(Token {
                    kind: TokenKind::Newline,
                    span: Span::new(base + i, base + i + 1),
                    text: "\n".into(),
                });
            }
            i += 1;
            continue;
        }
        let start = i;
        if b == b'\'' || b == b'"' {
            i = scan_string(bytes, i).ok_or_else(|| err(start, bytes.len(), "unterminated string"))?;
            tokens.push(make(TokenKind::String, src, base, start, i));
            continue;
        }
        if b.is_ascii_alphabetic() || b == b'_' || b >= 0x80 {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] >= 0x80) {
                i += 1;
            }
            let word = &src[start..i];
            if STRING_PREFIXES.contains(&word) && matches!(bytes.get(i), Some(b'\'' | b'"')) {
                i = scan_string(bytes, i)
                    .ok_or_else(|| err(start, bytes.len(), "unterminated string"))?;
                tokens.push(make(TokenKind::String, src, base, start, i));
            } else {
                tokens.push(make(TokenKind::Name, src, base, start, i));
            }
            continue;
        }
        if b.is_ascii_digit() || (b == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            i = scan_number(bytes, i);
            tokens.push(make(TokenKind::Number, src, base, start, i));
            continue;
        }
        let Some(op) = OPERATORS.iter().find(|op| src[i..].starts_with(**op)) else {
            return Err(err(i, i + 1, &format!("unexpected character {:?}", b as char)));
        };
        i += op.len();
        match *op {
            "(" | "[" | "{" => stack.push((op.as_bytes()[0], start)),
            ")" | "]" | "}" => {
                let want = match *op {
                    ")" => b'(',
                    "]" => b'[',
                    _ => b'{',
                };
                match stack.pop() {
                    Some((open, _)) if open == want => {}
                    _ => return Err(err(start, i, &format!("unmatched '{op}'"))),
                }
            }
            _ => {}
        }
        tokens.push(make(TokenKind::Op, src, base, start, i));
    }
    if let Some((open, at)) = stack.pop() {
        return Err(err(at, at + 1, &format!("unclosed '{}'", open as char)));
    }
    while tokens.last().map(|t| t.kind) == Some(TokenKind::Newline) {
        tokens.pop();
    }
    Ok(tokens)
}

fn make(kind: TokenKind, src: &str, base: usize, start: usize, end: usize) -> Token {
    Token {
        kind,
        span: Span::new(base + start, base + end),
        text: src[start..end].to_string(),
    }
}

fn scan_string(bytes: &[u8], start: usize) -> Option<usize> {
    let q = bytes[start];
    let triple = bytes.get(start + 1) == Some(&q) && bytes.get(start + 2) == Some(&q);
    let mut i = start + if triple { 3 } else { 1 };
    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\\' {
            i += 2;
            continue;
        }
        if triple {
            if c == q && bytes.get(i + 1) == Some(&q) && bytes.get(i + 2) == Some(&q) {
                return Some(i + 3);
            }
        } else if c == q {
            return Some(i + 1);
        } else if c == b'\n' {
            return None;
        }
        i += 1;
    }
    None
}

fn scan_number(bytes: &[u8], mut i: usize) -> usize {
    let mut prev = 0u8;
    while i < bytes.len() {
        let c = bytes[i];
        let exp_sign = (c == b'+' || c == b'-') && (prev == b'e' || prev == b'E');
        if c.is_ascii_alphanumeric() || c == b'_' || c == b'.' || exp_sign {
            // hex digits after 0x contain 'e'; harmless for a lexical number
            prev = c;
            i += 1;
        } else {
            break;
        }
    }
    i
}
