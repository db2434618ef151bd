//! Streaming separation of prose and fenced code blocks.
//!
//! A fence is a line starting with three backticks. Code blocks whose info
//! string is empty, `python` or `py` are analysis code; any other block is
//! passed through as prose. Output is independent of how the input is
//! chunked, except that adjacent prose pieces may be split differently.

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FencePiece {
    Prose(String),
    CodeStart { lang: String },
    Code(String),
    CodeEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Prose,
    Code,
    /// Inside a non-python block; emitted as prose.
    Foreign,
}

#[derive(Debug, Clone)]
pub struct FenceSplitter {
    mode: Mode,
    /// Unclassified text at the start of the current line.
    pending: String,
    at_line_start: bool,
}

impl Default for FenceSplitter {
    fn default() -> Self {
        Self::new()
    }
}

const FENCE: &str = "```";

fn is_code_lang(info: &str) -> bool {
    matches!(info.trim().to_ascii_lowercase().as_str(), "" | "python" | "py" | "python3")
}

impl FenceSplitter {
    pub fn new() -> Self {
        FenceSplitter {
            mode: Mode::Prose,
            pending: String::new(),
            at_line_start: true,
        }
    }

    pub fn in_code(&self) -> bool {
        self.mode == Mode::Code
    }

    pub fn push(&mut self, chunk: &str) -> Vec<FencePiece> {
        let mut out = Vec::new();
        let mut rest = chunk;
        while !rest.is_empty() {
            if !self.at_line_start {
                // mid-line text is never a fence
                let (head, tail, newline) = match rest.find('\n') {
                    Some(i) => (&rest[..=i], &rest[i + 1..], true),
                    None => (rest, "", false),
                };
                self.emit_text(head, &mut out);
                self.at_line_start = newline;
                rest = tail;
                continue;
            }
            let (head, tail, newline) = match rest.find('\n') {
                Some(i) => (&rest[..=i], &rest[i + 1..], true),
                None => (rest, "", false),
            };
            self.pending.push_str(head);
            rest = tail;
            if newline {
                let line = std::mem::take(&mut self.pending);
                self.line(&line, &mut out);
                self.at_line_start = true;
            } else if !could_be_fence(&self.pending) {
                let text = std::mem::take(&mut self.pending);
                self.emit_text(&text, &mut out);
                self.at_line_start = false;
            }
        }
        out
    }

    /// Flushes a trailing partial line and closes an unterminated block.
    pub fn finish(&mut self) -> Vec<FencePiece> {
        let mut out = Vec::new();
        let line = std::mem::take(&mut self.pending);
        if !line.is_empty() {
            self.line(&line, &mut out);
        }
        if self.mode == Mode::Code {
            out.push(FencePiece::CodeEnd);
        }
        self.mode = Mode::Prose;
        self.at_line_start = true;
        out
    }

    fn emit_text(&self, text: &str, out: &mut Vec<FencePiece>) {
        if text.is_empty() {
            return;
        }
        match self.mode {
            Mode::Code => out.push(FencePiece::Code(text.to_string())),
            Mode::Prose | Mode::Foreign => out.push(FencePiece::Prose(text.to_string())),
        }
    }

    /// Classifies one complete line (with its newline, if any).
    fn line(&mut self, line: &str, out: &mut Vec<FencePiece>) {
        let body = line.trim_end_matches(['\n', '\r']);
        let Some(info) = body.trim_start_matches(' ').strip_prefix(FENCE) else {
            self.emit_text(line, out);
            return;
        };
        let indent = body.len() - body.trim_start_matches(' ').len();
        if indent > 3 {
            self.emit_text(line, out);
            return;
        }
        let info = info.trim_start_matches('`');
        match self.mode {
            Mode::Prose if is_code_lang(info) => {
                self.mode = Mode::Code;
                out.push(FencePiece::CodeStart {
                    lang: info.trim().to_string(),
                });
            }
            Mode::Prose => {
                self.mode = Mode::Foreign;
                self.emit_text(line, out);
            }
            Mode::Code if info.trim().is_empty() => {
                self.mode = Mode::Prose;
                out.push(FencePiece::CodeEnd);
            }
            Mode::Foreign if info.trim().is_empty() => {
                self.emit_text(line, out);
                self.mode = Mode::Prose;
            }
            Mode::Code | Mode::Foreign => self.emit_text(line, out),
        }
    }
}

/// True while `partial` (no newline yet) may still turn into a fence line.
fn could_be_fence(partial: &str) -> bool {
    let t = partial.trim_start_matches(' ');
    if partial.len() - t.len() > 3 {
        return false;
    }
    t.starts_with(FENCE) || FENCE.starts_with(t)
}

/// Concatenated code of every python block in `text`.
pub fn code_blocks(text: &str) -> Vec<String> {
    let mut s = FenceSplitter::new();
    let mut pieces = s.push(text);
    pieces.extend(s.finish());
    let mut blocks = Vec::new();
    let mut cur: Option<String> = None;
    for p in pieces {
        match p {
            FencePiece::CodeStart { .. } => cur = Some(String::new()),
            FencePiece::Code(c) => {
                if let Some(b) = cur.as_mut() {
                    b.push_str(&c);
                }
            }
            FencePiece::CodeEnd => blocks.extend(cur.take()),
            FencePiece::Prose(_) => {}
        }
    }
    blocks
}

/// Text outside python blocks.
pub fn prose_of(text: &str) -> String {
    let mut s = FenceSplitter::new();
    let mut pieces = s.push(text);
    pieces.extend(s.finish());
    pieces
        .into_iter()
        .filter_map(|p| match p {
            FencePiece::Prose(t) => Some(t),
            _ => None,
        })
        .collect()
}
