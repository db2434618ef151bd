//! Lexing and parsing of single statements into lossless syntax trees.

mod ast;
mod chain;
mod lexer;
mod parser;

pub use ast::{NodeKind, SyntaxNode};
pub use chain::{chain_links, chain_root, ChainLink, LinkKind};
pub use lexer::{tokenize, LexError, Token, TokenKind};
pub use parser::{parse_expression, parse_source, parse_statement, Diagnostic, ParseOutcome, Severity};
