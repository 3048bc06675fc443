use super::ast::*;
use super::token::{tokenize, Token, TokenKind};
use crate::error::{Error, Result};

/// Words that terminate an expression or clause and therefore never act as
/// implicit aliases.
const RESERVED: &[&str] = &[
    "SELECT", "FROM", "WHERE", "GROUP", "HAVING", "ORDER", "LIMIT", "UNION", "INTERSECT", "EXCEPT",
    "JOIN", "INNER", "LEFT", "RIGHT", "FULL", "OUTER", "CROSS", "ON", "AS", "AND", "OR", "NOT",
    "IN", "LIKE", "BETWEEN", "IS", "NULL", "ASC", "DESC", "BY", "DISTINCT", "CASE", "WHEN", "THEN",
    "ELSE", "END", "EXISTS", "WITH", "OVER", "ALL", "OFFSET", "USING", "NATURAL", "WINDOW",
];

/// Constructs outside the supported subset, reported by name.
const UNSUPPORTED: &[&str] = &[
    "CASE", "WITH", "OVER", "WINDOW", "OFFSET", "USING", "NATURAL", "RIGHT", "FULL",
];

pub fn parse_query(sql: &str) -> Result<Query> {
    let tokens = tokenize(sql)?;
    let mut p = Parser { tokens, pos: 0 };
    let q = p.query()?;
    while p.eat_symbol(";") {}
    if let Some(tok) = p.peek() {
        return Err(p.unexpected(tok.clone(), "end of query"));
    }
    Ok(q)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, n: usize) -> Option<&Token> {
        self.tokens.get(self.pos + n)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn at_keyword(&self, kw: &str) -> bool {
        self.peek().is_some_and(|t| t.is_keyword(kw))
    }

    fn at_symbol(&self, sym: &str) -> bool {
        self.peek().is_some_and(|t| t.is_symbol(sym))
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.at_keyword(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_symbol(&mut self, sym: &str) -> bool {
        if self.at_symbol(sym) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<()> {
        if self.eat_keyword(kw) {
            return Ok(());
        }
        match self.peek().cloned() {
            Some(t) => Err(self.unexpected(t, kw)),
            None => Err(Error::Syntax(format!("expected {kw}, found end of query"))),
        }
    }

    fn expect_symbol(&mut self, sym: &str) -> Result<()> {
        if self.eat_symbol(sym) {
            return Ok(());
        }
        match self.peek().cloned() {
            Some(t) => Err(self.unexpected(t, &format!("`{sym}`"))),
            None => Err(Error::Syntax(format!(
                "expected `{sym}`, found end of query"
            ))),
        }
    }

    fn unexpected(&self, tok: Token, expected: &str) -> Error {
        if let TokenKind::Word(w) = &tok.kind {
            let upper = w.to_ascii_uppercase();
            if UNSUPPORTED.contains(&upper.as_str()) {
                return Error::Unsupported(upper);
            }
        }
        Error::Syntax(format!(
            "expected {expected} at byte {}, found {:?}",
            tok.offset, tok.kind
        ))
    }

    fn check_unsupported(&self) -> Result<()> {
        if let Some(Token {
            kind: TokenKind::Word(w),
            ..
        }) = self.peek()
        {
            let upper = w.to_ascii_uppercase();
            if UNSUPPORTED.contains(&upper.as_str()) {
                return Err(Error::Unsupported(upper));
            }
        }
        Ok(())
    }

    fn query(&mut self) -> Result<Query> {
        self.check_unsupported()?;
        let body = if self.at_symbol("(") && self.peek_at(1).is_some_and(|t| t.is_keyword("SELECT"))
        {
            // parenthesised leading branch: `(SELECT ...) UNION ...`
            self.pos += 1;
            let inner = self.query()?;
            self.expect_symbol(")")?;
            if inner.compound.is_some() {
                return Err(Error::Unsupported("parenthesised compound query".into()));
            }
            inner.body
        } else {
            self.select()?
        };
        let op = if self.eat_keyword("UNION") {
            if self.eat_keyword("ALL") {
                Some(SetOp::UnionAll)
            } else {
                Some(SetOp::Union)
            }
        } else if self.eat_keyword("INTERSECT") {
            Some(SetOp::Intersect)
        } else if self.eat_keyword("EXCEPT") {
            Some(SetOp::Except)
        } else {
            None
        };
        let compound = match op {
            Some(op) => Some((op, Box::new(self.query()?))),
            None => None,
        };
        Ok(Query { body, compound })
    }

    fn select(&mut self) -> Result<Select> {
        self.expect_keyword("SELECT")?;
        let mut sel = Select {
            distinct: self.eat_keyword("DISTINCT"),
            ..Default::default()
        };
        if !sel.distinct {
            self.eat_keyword("ALL");
        }
        loop {
            let expr = self.expr()?;
            let alias = self.alias()?;
            sel.items.push(SelectItem { expr, alias });
            if !self.eat_symbol(",") {
                break;
            }
        }
        if self.eat_keyword("FROM") {
            sel.from = self.from_clause()?;
        }
        if self.eat_keyword("WHERE") {
            sel.selection = Some(self.expr()?);
        }
        if self.eat_keyword("GROUP") {
            self.expect_keyword("BY")?;
            loop {
                sel.group_by.push(self.expr()?);
                if !self.eat_symbol(",") {
                    break;
                }
            }
        }
        if self.eat_keyword("HAVING") {
            sel.having = Some(self.expr()?);
        }
        if self.eat_keyword("ORDER") {
            self.expect_keyword("BY")?;
            loop {
                let expr = self.expr()?;
                let direction = if self.eat_keyword("ASC") {
                    Some(Direction::Asc)
                } else if self.eat_keyword("DESC") {
                    Some(Direction::Desc)
                } else {
                    None
                };
                sel.order_by.push(OrderItem { expr, direction });
                if !self.eat_symbol(",") {
                    break;
                }
            }
        }
        if self.eat_keyword("LIMIT") {
            sel.limit = Some(self.expr()?);
        }
        self.check_unsupported()?;
        Ok(sel)
    }

    fn alias(&mut self) -> Result<Option<String>> {
        if self.eat_keyword("AS") {
            return match self.next() {
                Some(Token {
                    kind: TokenKind::Word(w) | TokenKind::QuotedIdent(w) | TokenKind::Str(w),
                    ..
                }) => Ok(Some(w)),
                Some(t) => Err(self.unexpected(t, "alias")),
                None => Err(Error::Syntax("expected alias, found end of query".into())),
            };
        }
        match self.peek() {
            Some(Token {
                kind: TokenKind::Word(w),
                ..
            }) if !RESERVED.contains(&w.to_ascii_uppercase().as_str()) => {
                let w = w.clone();
                self.pos += 1;
                Ok(Some(w))
            }
            _ => Ok(None),
        }
    }

    fn from_clause(&mut self) -> Result<Vec<FromItem>> {
        let mut items = vec![self.table_ref(JoinKind::First)?];
        loop {
            let join = if self.eat_symbol(",") {
                JoinKind::Comma
            } else if self.eat_keyword("JOIN") {
                JoinKind::Inner
            } else if self.at_keyword("INNER") {
                self.pos += 1;
                self.expect_keyword("JOIN")?;
                JoinKind::Inner
            } else if self.at_keyword("LEFT") {
                self.pos += 1;
                self.eat_keyword("OUTER");
                self.expect_keyword("JOIN")?;
                JoinKind::Left
            } else if self.at_keyword("CROSS") {
                self.pos += 1;
                self.expect_keyword("JOIN")?;
                JoinKind::Cross
            } else {
                self.check_unsupported()?;
                break;
            };
            let mut item = self.table_ref(join)?;
            if self.eat_keyword("ON") {
                item.on = Some(self.expr()?);
            }
            items.push(item);
        }
        Ok(items)
    }

    fn table_ref(&mut self, join: JoinKind) -> Result<FromItem> {
        let source = if self.eat_symbol("(") {
            let q = self.query()?;
            self.expect_symbol(")")?;
            TableSource::Subquery(Box::new(q))
        } else {
            match self.next() {
                Some(Token {
                    kind: TokenKind::Word(w),
                    ..
                }) if !RESERVED.contains(&w.to_ascii_uppercase().as_str()) => {
                    TableSource::Named(w)
                }
                Some(Token {
                    kind: TokenKind::QuotedIdent(w),
                    ..
                }) => TableSource::Named(w),
                Some(t) => return Err(self.unexpected(t, "table name")),
                None => return Err(Error::Syntax("expected table, found end of query".into())),
            }
        };
        let alias = self.alias()?;
        Ok(FromItem {
            join,
            source,
            alias,
            on: None,
        })
    }

    fn expr(&mut self) -> Result<Expr> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr> {
        let mut left = self.and_expr()?;
        while self.eat_keyword("OR") {
            let right = self.and_expr()?;
            left = binary(BinaryOp::Or, left, right);
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<Expr> {
        let mut left = self.not_expr()?;
        while self.eat_keyword("AND") {
            let right = self.not_expr()?;
            left = binary(BinaryOp::And, left, right);
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> Result<Expr> {
        if self.at_keyword("NOT") && !self.peek_at(1).is_some_and(|t| t.is_keyword("EXISTS")) {
            self.pos += 1;
            let inner = self.not_expr()?;
            return Ok(Expr::Unary {
                op: UnaryOp::Not,
                expr: Box::new(inner),
            });
        }
        self.predicate()
    }

    fn predicate(&mut self) -> Result<Expr> {
        let left = self.additive()?;
        let comparison = match self.peek().map(|t| &t.kind) {
            Some(TokenKind::Symbol("=")) => Some(BinaryOp::Eq),
            Some(TokenKind::Symbol("!=")) => Some(BinaryOp::NotEq),
            Some(TokenKind::Symbol("<")) => Some(BinaryOp::Lt),
            Some(TokenKind::Symbol(">")) => Some(BinaryOp::Gt),
            Some(TokenKind::Symbol("<=")) => Some(BinaryOp::LtEq),
            Some(TokenKind::Symbol(">=")) => Some(BinaryOp::GtEq),
            _ => None,
        };
        if let Some(op) = comparison {
            self.pos += 1;
            let right = self.additive()?;
            return Ok(binary(op, left, right));
        }
        if self.eat_keyword("IS") {
            let negated = self.eat_keyword("NOT");
            self.expect_keyword("NULL")?;
            return Ok(Expr::IsNull {
                expr: Box::new(left),
                negated,
            });
        }
        let negated = if self.at_keyword("NOT")
            && self.peek_at(1).is_some_and(|t| {
                t.is_keyword("IN") || t.is_keyword("LIKE") || t.is_keyword("BETWEEN")
            }) {
            self.pos += 1;
            true
        } else {
            false
        };
        if self.eat_keyword("IN") {
            self.expect_symbol("(")?;
            if self.at_keyword("SELECT") || self.at_symbol("(") && self.peek_at(1).is_some_and(|t| t.is_keyword("SELECT")) {
                let q = self.query()?;
                self.expect_symbol(")")?;
                return Ok(Expr::InSubquery {
                    expr: Box::new(left),
                    query: Box::new(q),
                    negated,
                });
            }
            let mut list = Vec::new();
            loop {
                list.push(self.expr()?);
                if !self.eat_symbol(",") {
                    break;
                }
            }
            self.expect_symbol(")")?;
            return Ok(Expr::InList {
                expr: Box::new(left),
                list,
                negated,
            });
        }
        if self.eat_keyword("LIKE") {
            let pattern = self.additive()?;
            return Ok(Expr::Like {
                expr: Box::new(left),
                pattern: Box::new(pattern),
                negated,
            });
        }
        if self.eat_keyword("BETWEEN") {
            let low = self.additive()?;
            self.expect_keyword("AND")?;
            let high = self.additive()?;
            return Ok(Expr::Between {
                expr: Box::new(left),
                low: Box::new(low),
                high: Box::new(high),
                negated,
            });
        }
        if negated {
            return Err(Error::Syntax("dangling NOT".into()));
        }
        Ok(left)
    }

    fn additive(&mut self) -> Result<Expr> {
        let mut left = self.multiplicative()?;
        loop {
            let op = match self.peek().map(|t| &t.kind) {
                Some(TokenKind::Symbol("+")) => BinaryOp::Plus,
                Some(TokenKind::Symbol("-")) => BinaryOp::Minus,
                Some(TokenKind::Symbol("||")) => BinaryOp::Concat,
                _ => break,
            };
            self.pos += 1;
            let right = self.multiplicative()?;
            left = binary(op, left, right);
        }
        Ok(left)
    }

    fn multiplicative(&mut self) -> Result<Expr> {
        let mut left = self.unary()?;
        loop {
            let op = match self.peek().map(|t| &t.kind) {
                Some(TokenKind::Symbol("*")) => BinaryOp::Mul,
                Some(TokenKind::Symbol("/")) => BinaryOp::Div,
                Some(TokenKind::Symbol("%")) => BinaryOp::Mod,
                _ => break,
            };
            self.pos += 1;
            let right = self.unary()?;
            left = binary(op, left, right);
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat_symbol("-") {
            let inner = self.unary()?;
            if let Expr::Literal(Literal::Number(n)) = &inner {
                return Ok(Expr::Literal(Literal::Number(format!("-{n}"))));
            }
            return Ok(Expr::Unary {
                op: UnaryOp::Neg,
                expr: Box::new(inner),
            });
        }
        if self.eat_symbol("+") {
            return self.unary();
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr> {
        self.check_unsupported()?;
        let tok = self
            .next()
            .ok_or_else(|| Error::Syntax("expected expression, found end of query".into()))?;
        match tok.kind {
            TokenKind::Number(n) => Ok(Expr::Literal(Literal::Number(n))),
            TokenKind::Str(s) => Ok(Expr::Literal(Literal::Str(s))),
            TokenKind::Symbol("*") => Ok(Expr::Star(None)),
            TokenKind::Symbol("(") => {
                if self.at_keyword("SELECT") {
                    let q = self.query()?;
                    self.expect_symbol(")")?;
                    return Ok(Expr::Subquery(Box::new(q)));
                }
                let inner = self.expr()?;
                self.expect_symbol(")")?;
                Ok(Expr::Nested(Box::new(inner)))
            }
            TokenKind::Word(ref w) if w.eq_ignore_ascii_case("NULL") => {
                Ok(Expr::Literal(Literal::Null))
            }
            TokenKind::Word(ref w) if w.eq_ignore_ascii_case("EXISTS") => {
                self.expect_symbol("(")?;
                let q = self.query()?;
                self.expect_symbol(")")?;
                Ok(Expr::Exists(Box::new(q)))
            }
            TokenKind::Word(ref w) if w.eq_ignore_ascii_case("NOT") && self.at_keyword("EXISTS") => {
                self.pos += 1;
                self.expect_symbol("(")?;
                let q = self.query()?;
                self.expect_symbol(")")?;
                Ok(Expr::Unary {
                    op: UnaryOp::Not,
                    expr: Box::new(Expr::Exists(Box::new(q))),
                })
            }
            TokenKind::Word(w) | TokenKind::QuotedIdent(w) => {
                if RESERVED.contains(&w.to_ascii_uppercase().as_str()) {
                    return Err(self.unexpected(
                        Token {
                            kind: TokenKind::Word(w),
                            offset: tok.offset,
                        },
                        "expression",
                    ));
                }
                if self.eat_symbol("(") {
                    return self.call(w);
                }
                if self.eat_symbol(".") {
                    return match self.next() {
                        Some(Token {
                            kind: TokenKind::Symbol("*"),
                            ..
                        }) => Ok(Expr::Star(Some(w))),
                        Some(Token {
                            kind: TokenKind::Word(c) | TokenKind::QuotedIdent(c),
                            ..
                        }) => Ok(Expr::Column(ColumnRef {
                            qualifier: Some(w),
                            name: c,
                        })),
                        Some(t) => Err(self.unexpected(t, "column name")),
                        None => Err(Error::Syntax("expected column name".into())),
                    };
                }
                Ok(Expr::Column(ColumnRef {
                    qualifier: None,
                    name: w,
                }))
            }
            _ => Err(self.unexpected(tok, "expression")),
        }
    }

    fn call(&mut self, name: String) -> Result<Expr> {
        let distinct = self.eat_keyword("DISTINCT");
        let mut args = Vec::new();
        if !self.at_symbol(")") {
            loop {
                args.push(self.expr()?);
                if !self.eat_symbol(",") {
                    break;
                }
            }
        }
        self.expect_symbol(")")?;
        Ok(Expr::Function {
            name: name.to_ascii_lowercase(),
            distinct,
            args,
        })
    }
}

fn binary(op: BinaryOp, left: Expr, right: Expr) -> Expr {
    Expr::Binary {
        op,
        left: Box::new(left),
        right: Box::new(right),
    }
}
