use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TokenKind {
    /// Bare word: keyword, identifier, or function name.
    Word(String),
    /// Backtick- or bracket-quoted identifier.
    QuotedIdent(String),
    Number(String),
    /// String literal with quotes removed and escapes resolved.
    Str(String),
    Symbol(&'static str),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub offset: usize,
}

impl Token {
    pub fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.kind, TokenKind::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    pub fn is_symbol(&self, sym: &str) -> bool {
        matches!(&self.kind, TokenKind::Symbol(s) if *s == sym)
    }
}

const SYMBOLS: &[&str] = &[
    "!=", "<>", "<=", ">=", "==", "||", "(", ")", ",", ".", "*", "+", "-", "/", "%", "=", "<", ">",
    ";",
];

pub fn tokenize(sql: &str) -> Result<Vec<Token>> {
    let bytes = sql.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == b'_' || c >= 0x80 {
            while i < bytes.len()
                && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] >= 0x80)
            {
                i += 1;
            }
            out.push(Token {
                kind: TokenKind::Word(sql[start..i].to_string()),
                offset: start,
            });
        } else if c.is_ascii_digit()
            || (c == b'.' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit())
        {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            out.push(Token {
                kind: TokenKind::Number(sql[start..i].to_string()),
                offset: start,
            });
        } else if c == b'\'' || c == b'"' {
            let (text, next) = quoted(sql, i, c as char)?;
            out.push(Token {
                kind: TokenKind::Str(text),
                offset: start,
            });
            i = next;
        } else if c == b'`' || c == b'[' {
            let close = if c == b'`' { '`' } else { ']' };
            let rest = &sql[i + 1..];
            let end = rest.find(close).ok_or_else(|| Error::Tokenize {
                offset: start,
                message: "unterminated quoted identifier".into(),
            })?;
            out.push(Token {
                kind: TokenKind::QuotedIdent(rest[..end].to_string()),
                offset: start,
            });
            i += end + 2;
        } else {
            let sym = SYMBOLS
                .iter()
                .find(|s| sql[i..].starts_with(**s))
                .ok_or_else(|| Error::Tokenize {
                    offset: start,
                    message: format!("unexpected character `{}`", &sql[i..].chars().next().unwrap()),
                })?;
            i += sym.len();
            // normalise operator spellings
            let sym: &'static str = match *sym {
                "<>" => "!=",
                "==" => "=",
                s => s,
            };
            out.push(Token {
                kind: TokenKind::Symbol(sym),
                offset: start,
            });
        }
    }
    Ok(out)
}

fn quoted(sql: &str, start: usize, quote: char) -> Result<(String, usize)> {
    let mut text = String::new();
    let mut chars = sql[start + 1..].char_indices().peekable();
    while let Some((off, ch)) = chars.next() {
        if ch == quote {
            if let Some(&(_, next)) = chars.peek() {
                if next == quote {
                    text.push(quote);
                    chars.next();
                    continue;
                }
            }
            return Ok((text, start + 1 + off + ch.len_utf8()));
        }
        text.push(ch);
    }
    Err(Error::Tokenize {
        offset: start,
        message: "unterminated string literal".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_operators_and_literals() {
        let toks = tokenize("SELECT a.b FROM t WHERE x <> 'it''s' AND y >= 3.5").unwrap();
        let kinds: Vec<_> = toks.into_iter().map(|t| t.kind).collect();
        assert!(kinds.contains(&TokenKind::Symbol("!=")));
        assert!(kinds.contains(&TokenKind::Str("it's".into())));
        assert!(kinds.contains(&TokenKind::Number("3.5".into())));
        assert!(kinds.contains(&TokenKind::Symbol(">=")));
    }

    #[test]
    fn double_quotes_are_string_literals() {
        let toks = tokenize(r#"name = "France""#).unwrap();
        assert_eq!(toks[2].kind, TokenKind::Str("France".into()));
    }

    #[test]
    fn rejects_unterminated_string() {
        assert!(matches!(tokenize("x = 'abc"), Err(Error::Tokenize { .. })));
    }

    #[test]
    fn rejects_stray_character() {
        let err = tokenize("SELECT a FROM t WHERE a ? 1").unwrap_err();
        assert!(matches!(err, Error::Tokenize { offset: 24, .. }));
    }
}
