//! Assembles a streamed snippet into complete top-level statements.
//!
//! Boundary detection is lexical: bracket depth, string and comment state and
//! backslash continuations decide where a logical line ends. The scanner is a
//! pure function of the buffered text, so the statements emitted never depend
//! on how the text was chunked. Whenever a decision needs lookahead that has
//! not arrived yet, the scanner waits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::SnippetId;
use crate::span::{LineSpan, Span};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeChunk {
    pub snippet_id: SnippetId,
    pub text: String,
    pub seq: u64,
}

impl CodeChunk {
    pub fn new(snippet_id: impl Into<SnippetId>, seq: u64, text: impl Into<String>) -> Self {
        CodeChunk {
            snippet_id: snippet_id.into(),
            text: text.into(),
            seq,
        }
    }
}

/// One complete top-level statement of a snippet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementUnit {
    pub snippet_id: SnippetId,
    pub index: usize,
    /// Verbatim snippet text at `range`.
    pub source: String,
    pub span: LineSpan,
    pub range: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IngestError {
    #[error("snippet {snippet}: expected chunk seq {expected}, got {got}")]
    Sequence {
        snippet: SnippetId,
        expected: u64,
        got: u64,
    },
    #[error("chunk for snippet {got} pushed into buffer of snippet {expected}")]
    WrongSnippet { expected: SnippetId, got: SnippetId },
    #[error("snippet {snippet} is incomplete ({reason}): {residue:?}")]
    Incomplete {
        snippet: SnippetId,
        reason: String,
        residue: String,
        range: Span,
    },
    #[error("snippet {0} already finalized")]
    Finalized(SnippetId),
}

/// Per-snippet ingest state. Single writer.
#[derive(Debug, Clone)]
pub struct SnippetBuffer {
    snippet_id: SnippetId,
    text: String,
    next_seq: u64,
    cursor: usize,
    emitted: usize,
    finalized: bool,
}

impl SnippetBuffer {
    pub fn new(snippet_id: impl Into<SnippetId>) -> Self {
        SnippetBuffer {
            snippet_id: snippet_id.into(),
            text: String::new(),
            next_seq: 0,
            cursor: 0,
            emitted: 0,
            finalized: false,
        }
    }

    pub fn snippet_id(&self) -> &SnippetId {
        &self.snippet_id
    }

    /// Everything received so far.
    pub fn text(&self) -> &str {
        &self.text
    }

    /// Text not yet part of an emitted statement.
    pub fn residue(&self) -> &str {
        &self.text[self.cursor..]
    }

    pub fn push_chunk(&mut self, chunk: CodeChunk) -> Result<Vec<StatementUnit>, IngestError> {
        if self.finalized {
            return Err(IngestError::Finalized(self.snippet_id.clone()));
        }
        if chunk.snippet_id != self.snippet_id {
            return Err(IngestError::WrongSnippet {
                expected: self.snippet_id.clone(),
                got: chunk.snippet_id,
            });
        }
        if chunk.seq != self.next_seq {
            return Err(IngestError::Sequence {
                snippet: self.snippet_id.clone(),
                expected: self.next_seq,
                got: chunk.seq,
            });
        }
        self.next_seq += 1;
        self.text.push_str(&chunk.text);
        self.drain(false)
    }

    /// Pushes raw text as the next chunk.
    pub fn push_str(&mut self, text: &str) -> Result<Vec<StatementUnit>, IngestError> {
        let chunk = CodeChunk::new(self.snippet_id.clone(), self.next_seq, text);
        self.push_chunk(chunk)
    }

    pub fn finalize(&mut self) -> Result<Vec<StatementUnit>, IngestError> {
        if self.finalized {
            return Err(IngestError::Finalized(self.snippet_id.clone()));
        }
        self.finalized = true;
        self.drain(true)
    }

    fn drain(&mut self, eof: bool) -> Result<Vec<StatementUnit>, IngestError> {
        let mut out = Vec::new();
        loop {
            match next_statement(self.text.as_bytes(), self.cursor, eof) {
                Scan::Statement { range, next } => {
                    out.push(self.make_unit(range));
                    self.cursor = next;
                }
                Scan::NeedMore { resume } => {
                    self.cursor = resume;
                    return Ok(out);
                }
                Scan::Done => {
                    self.cursor = self.text.len();
                    return Ok(out);
                }
                Scan::Incomplete { start, reason } => {
                    return Err(IngestError::Incomplete {
                        snippet: self.snippet_id.clone(),
                        reason: reason.to_string(),
                        residue: self.text[start..].to_string(),
                        range: Span::new(start, self.text.len()),
                    });
                }
            }
        }
    }

    fn make_unit(&mut self, range: Span) -> StatementUnit {
        let unit = StatementUnit {
            snippet_id: self.snippet_id.clone(),
            index: self.emitted,
            source: range.slice(&self.text).to_string(),
            span: LineSpan::of(&self.text, range),
            range,
        };
        self.emitted += 1;
        unit
    }
}

/// Single-shot split of a whole snippet.
pub fn split_statements(
    snippet_id: impl Into<SnippetId>,
    text: &str,
) -> Result<Vec<StatementUnit>, IngestError> {
    let mut buffer = SnippetBuffer::new(snippet_id);
    let mut units = buffer.push_str(text)?;
    units.extend(buffer.finalize()?);
    Ok(units)
}

#[derive(Debug, PartialEq, Eq)]
enum Scan {
    Statement { range: Span, next: usize },
    NeedMore { resume: usize },
    Done,
    Incomplete { start: usize, reason: &'static str },
}

/// Keywords that continue a compound statement at the header's indentation.
const CONTINUATION_KEYWORDS: &[&str] = &["elif", "else", "except", "finally"];

fn is_hspace(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\r' | b'\x0c')
}

fn is_ident(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b >= 0x80
}

enum LineStart {
    /// First significant byte of the next non-blank line, plus its line start.
    Content { line_start: usize, first: usize },
    NeedMore { line_start: usize },
    End,
}

/// Skips blank and comment-only lines starting at `pos`.
fn next_content_line(src: &[u8], mut pos: usize, eof: bool) -> LineStart {
    loop {
        let line_start = pos;
        let mut i = pos;
        while i < src.len() && is_hspace(src[i]) {
            i += 1;
        }
        if i == src.len() {
            return if eof {
                LineStart::End
            } else {
                LineStart::NeedMore { line_start }
            };
        }
        match src[i] {
            b'\n' => pos = i + 1,
            b'#' => match src[i..].iter().position(|&b| b == b'\n') {
                Some(off) => pos = i + off + 1,
                None if eof => return LineStart::End,
                None => return LineStart::NeedMore { line_start },
            },
            _ => return LineStart::Content { line_start, first: i },
        }
    }
}

enum LineScan {
    /// Logical line finished. `content_end` is just past its last significant
    /// byte; `next` is just past its terminating newline (or end of text).
    Complete {
        content_end: usize,
        last_significant: u8,
        next: usize,
    },
    NeedMore,
    Unterminated(&'static str),
}

/// Scans one logical line beginning at `start`.
fn scan_logical_line(src: &[u8], start: usize, eof: bool) -> LineScan {
    let mut depth: usize = 0;
    let mut i = start;
    let mut content_end = start;
    let mut last_significant = 0u8;
    loop {
        if i >= src.len() {
            if !eof {
                return LineScan::NeedMore;
            }
            if depth > 0 {
                return LineScan::Unterminated("unclosed bracket");
            }
            return LineScan::Complete {
                content_end,
                last_significant,
                next: src.len(),
            };
        }
        let b = src[i];
        match b {
            b'\n' => {
                if depth == 0 {
                    return LineScan::Complete {
                        content_end,
                        last_significant,
                        next: i + 1,
                    };
                }
                i += 1;
            }
            b'#' => match src[i..].iter().position(|&c| c == b'\n') {
                Some(off) => i += off,
                None => i = src.len(),
            },
            b'\\' => {
                // continuation: backslash-newline (optionally \r\n)
                match (src.get(i + 1), src.get(i + 2)) {
                    (Some(b'\n'), _) => i += 2,
                    (Some(b'\r'), Some(b'\n')) => i += 3,
                    (None, _) | (Some(b'\r'), None) if !eof => return LineScan::NeedMore,
                    (None, _) | (Some(b'\r'), None) => {
                        return LineScan::Unterminated("dangling line continuation")
                    }
                    _ => {
                        last_significant = b;
                        i += 1;
                        content_end = i;
                    }
                }
            }
            b'\'' | b'"' => match scan_string(src, i, eof) {
                StringScan::End(end) => {
                    last_significant = b;
                    content_end = end;
                    i = end;
                }
                StringScan::NeedMore => return LineScan::NeedMore,
                StringScan::Unterminated => {
                    return if eof {
                        LineScan::Unterminated("unterminated string")
                    } else {
                        // a newline inside a one-line string never closes;
                        // keep waiting and let finalize report it
                        LineScan::NeedMore
                    };
                }
            },
            b'(' | b'[' | b'{' => {
                depth += 1;
                last_significant = b;
                i += 1;
                content_end = i;
            }
            b')' | b']' | b'}' => {
                depth = depth.saturating_sub(1);
                last_significant = b;
                i += 1;
                content_end = i;
            }
            _ if is_hspace(b) => i += 1,
            _ => {
                last_significant = b;
                i += 1;
                content_end = i;
            }
        }
    }
}

enum StringScan {
    End(usize),
    NeedMore,
    Unterminated,
}

/// Scans a string literal whose opening quote is at `start`.
fn scan_string(src: &[u8], start: usize, eof: bool) -> StringScan {
    let q = src[start];
    // deciding between `''` and `'''` needs up to three bytes
    let avail = &src[start..src.len().min(start + 3)];
    if avail.len() < 3 && !eof && avail.iter().all(|&c| c == q) {
        return StringScan::NeedMore;
    }
    let triple = avail.len() == 3 && avail.iter().all(|&c| c == q);
    let mut i = start + if triple { 3 } else { 1 };
    loop {
        if i >= src.len() {
            return if eof {
                StringScan::Unterminated
            } else {
                StringScan::NeedMore
            };
        }
        let c = src[i];
        if c == b'\\' {
            if i + 1 >= src.len() {
                return if eof {
                    StringScan::Unterminated
                } else {
                    StringScan::NeedMore
                };
            }
            i += 2;
            continue;
        }
        if triple {
            if c == q {
                if i + 2 >= src.len() && !eof {
                    // closing run may still be arriving
                    if src[i..].iter().all(|&d| d == q) {
                        return StringScan::NeedMore;
                    }
                }
                if src.get(i + 1) == Some(&q) && src.get(i + 2) == Some(&q) {
                    return StringScan::End(i + 3);
                }
            }
        } else if c == q {
            return StringScan::End(i + 1);
        } else if c == b'\n' {
            return StringScan::Unterminated;
        }
        i += 1;
    }
}

/// Reads the identifier starting at `pos`; `None` when more text is needed
/// to know where it ends.
fn read_word(src: &[u8], pos: usize, eof: bool) -> Option<&[u8]> {
    let mut end = pos;
    while end < src.len() && is_ident(src[end]) {
        end += 1;
    }
    if end == src.len() && !eof {
        None
    } else {
        Some(&src[pos..end])
    }
}

fn next_statement(src: &[u8], from: usize, eof: bool) -> Scan {
    let (stmt_line_start, stmt_start) = match next_content_line(src, from, eof) {
        LineStart::Content { line_start, first } => (line_start, first),
        LineStart::NeedMore { line_start } => return Scan::NeedMore { resume: line_start },
        LineStart::End => return Scan::Done,
    };
    let header_indent = stmt_start - stmt_line_start;
    let wait = Scan::NeedMore {
        resume: stmt_line_start,
    };

    let mut pos = stmt_start;
    let mut content_end;
    let mut in_block = false;
    // decorators and the line they decorate form one statement
    loop {
        let line_begins_with_at = src[pos] == b'@';
        match scan_logical_line(src, pos, eof) {
            LineScan::Complete {
                content_end: end,
                last_significant,
                next,
            } => {
                content_end = end;
                pos = next;
                if last_significant == b':' {
                    in_block = true;
                    break;
                }
                if !line_begins_with_at {
                    break;
                }
                match next_content_line(src, pos, eof) {
                    LineStart::Content { first, .. } => pos = first,
                    LineStart::NeedMore { .. } => return wait,
                    LineStart::End => break,
                }
            }
            LineScan::NeedMore => return wait,
            LineScan::Unterminated(reason) => {
                return Scan::Incomplete {
                    start: stmt_start,
                    reason,
                }
            }
        }
    }

    if !in_block {
        return Scan::Statement {
            range: Span::new(stmt_start, content_end),
            next: pos,
        };
    }

    // Block statement: consume lines indented deeper than the header, plus
    // continuation clauses (else/elif/...) at the header's indentation.
    loop {
        let (line_start, first) = match next_content_line(src, pos, eof) {
            LineStart::Content { line_start, first } => (line_start, first),
            LineStart::NeedMore { .. } => return wait,
            LineStart::End => {
                return Scan::Statement {
                    range: Span::new(stmt_start, content_end),
                    next: src.len(),
                }
            }
        };
        let indent = first - line_start;
        let continues = if indent > header_indent {
            true
        } else {
            match read_word(src, first, eof) {
                None => return wait,
                Some(word) => CONTINUATION_KEYWORDS.iter().any(|k| k.as_bytes() == word),
            }
        };
        if !continues {
            return Scan::Statement {
                range: Span::new(stmt_start, content_end),
                next: line_start,
            };
        }
        match scan_logical_line(src, first, eof) {
            LineScan::Complete {
                content_end: end,
                next,
                ..
            } => {
                content_end = end;
                pos = next;
            }
            LineScan::NeedMore => return wait,
            LineScan::Unterminated(reason) => {
                return Scan::Incomplete {
                    start: stmt_start,
                    reason,
                }
            }
        }
    }
}
