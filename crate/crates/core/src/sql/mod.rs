//! Tokenizer, parser, resolver and renderer for the SQL subset used by
//! Spider-style corpora.

pub mod ast;
mod parse;
mod render;
mod resolve;
mod token;

pub use parse::parse_query;
pub use render::{
    render_expr, render_query, render_select, AscStyle, RenderOptions, COLUMN_PLACEHOLDER,
    SUBQUERY_PLACEHOLDER, TABLE_PLACEHOLDER, VALUE_PLACEHOLDER,
};
pub use resolve::{resolve, Resolution};
pub use token::{tokenize, Token, TokenKind};

use crate::error::Result;

/// Canonical text of a query: keywords upper-cased, identifiers lower-cased
/// with aliases expanded, literals replaced by a placeholder, AND/OR operands
/// and equality operands sorted, and implicit `ASC` made explicit.
pub fn canonicalize(sql: &str) -> Result<String> {
    let q = parse_query(sql)?;
    let r = resolve(&q, None)?;
    Ok(render_query(&r.query, RenderOptions::canonical()))
}

/// Lower-cased, whitespace-collapsed text. Fallback comparison key for
/// strings that do not parse.
pub fn normalize_text(sql: &str) -> String {
    sql.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}
