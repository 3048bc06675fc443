use super::ast::*;

/// Placeholder for masked table names.
pub const TABLE_PLACEHOLDER: &str = "_TAB_";
/// Placeholder for masked column names.
pub const COLUMN_PLACEHOLDER: &str = "_COL_";
/// Placeholder for literals.
pub const VALUE_PLACEHOLDER: &str = "_VAL_";
/// Placeholder standing in for an extracted subquery.
pub const SUBQUERY_PLACEHOLDER: &str = "_SUB_";

/// How ascending sort directions are printed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AscStyle {
    #[default]
    AsWritten,
    Always,
    Never,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RenderOptions {
    pub mask_identifiers: bool,
    pub mask_values: bool,
    /// Sort the operands of AND/OR chains and of `=`/`!=` comparisons.
    pub sort_commutative: bool,
    pub asc: AscStyle,
    pub lowercase_identifiers: bool,
    /// Print nested queries as a placeholder instead of recursing.
    pub hide_subqueries: bool,
}

impl RenderOptions {
    pub fn plain() -> Self {
        RenderOptions::default()
    }

    /// Form used for exact-match comparison.
    pub fn canonical() -> Self {
        RenderOptions {
            mask_values: true,
            sort_commutative: true,
            asc: AscStyle::Always,
            lowercase_identifiers: true,
            ..Default::default()
        }
    }

    /// Form used for sketches.
    pub fn masked() -> Self {
        RenderOptions {
            mask_identifiers: true,
            mask_values: true,
            asc: AscStyle::Never,
            ..Default::default()
        }
    }
}

pub fn render_query(q: &Query, opts: RenderOptions) -> String {
    let mut out = String::new();
    Renderer { opts }.query(q, &mut out);
    out
}

pub fn render_select(s: &Select, opts: RenderOptions) -> String {
    let mut out = String::new();
    Renderer { opts }.select(s, &mut out);
    out
}

pub fn render_expr(e: &Expr, opts: RenderOptions) -> String {
    let mut out = String::new();
    Renderer { opts }.expr(e, &mut out);
    out
}

struct Renderer {
    opts: RenderOptions,
}

impl Renderer {
    fn ident(&self, name: &str) -> String {
        if self.opts.lowercase_identifiers {
            name.to_ascii_lowercase()
        } else {
            name.to_string()
        }
    }

    fn query(&self, q: &Query, out: &mut String) {
        self.select(&q.body, out);
        if let Some((op, next)) = &q.compound {
            out.push(' ');
            out.push_str(op.keyword());
            out.push(' ');
            self.query(next, out);
        }
    }

    fn nested_query(&self, q: &Query, out: &mut String) {
        out.push('(');
        if self.opts.hide_subqueries {
            out.push_str(SUBQUERY_PLACEHOLDER);
        } else {
            self.query(q, out);
        }
        out.push(')');
    }

    fn select(&self, s: &Select, out: &mut String) {
        out.push_str("SELECT ");
        if s.distinct {
            out.push_str("DISTINCT ");
        }
        for (i, item) in s.items.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            self.expr(&item.expr, out);
            if let Some(a) = &item.alias {
                if !self.opts.mask_identifiers {
                    out.push_str(" AS ");
                    out.push_str(&self.ident(a));
                }
            }
        }
        if !s.from.is_empty() {
            out.push_str(" FROM ");
            for item in &s.from {
                match item.join {
                    JoinKind::First => {}
                    JoinKind::Comma => out.push_str(", "),
                    JoinKind::Inner => out.push_str(" JOIN "),
                    JoinKind::Left => out.push_str(" LEFT JOIN "),
                    JoinKind::Cross => out.push_str(" CROSS JOIN "),
                }
                match &item.source {
                    TableSource::Named(t) => {
                        if self.opts.mask_identifiers {
                            out.push_str(TABLE_PLACEHOLDER);
                        } else {
                            out.push_str(&self.ident(t));
                        }
                    }
                    TableSource::Subquery(q) => self.nested_query(q, out),
                }
                if let Some(a) = &item.alias {
                    if !self.opts.mask_identifiers {
                        out.push_str(" AS ");
                        out.push_str(&self.ident(a));
                    }
                }
                if let Some(on) = &item.on {
                    out.push_str(" ON ");
                    self.expr(on, out);
                }
            }
        }
        if let Some(w) = &s.selection {
            out.push_str(" WHERE ");
            self.expr(w, out);
        }
        if !s.group_by.is_empty() {
            out.push_str(" GROUP BY ");
            self.list(&s.group_by, out);
        }
        if let Some(h) = &s.having {
            out.push_str(" HAVING ");
            self.expr(h, out);
        }
        if !s.order_by.is_empty() {
            out.push_str(" ORDER BY ");
            for (i, o) in s.order_by.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                self.expr(&o.expr, out);
                match (o.direction, self.opts.asc) {
                    (Some(Direction::Desc), _) => out.push_str(" DESC"),
                    (Some(Direction::Asc), AscStyle::AsWritten) | (_, AscStyle::Always) => {
                        out.push_str(" ASC")
                    }
                    _ => {}
                }
            }
        }
        if let Some(l) = &s.limit {
            out.push_str(" LIMIT ");
            self.expr(l, out);
        }
    }

    fn list(&self, items: &[Expr], out: &mut String) {
        for (i, e) in items.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            self.expr(e, out);
        }
    }

    fn expr(&self, e: &Expr, out: &mut String) {
        match e {
            Expr::Column(c) => {
                if self.opts.mask_identifiers {
                    out.push_str(COLUMN_PLACEHOLDER);
                } else {
                    if let Some(q) = &c.qualifier {
                        out.push_str(&self.ident(q));
                        out.push('.');
                    }
                    out.push_str(&self.ident(&c.name));
                }
            }
            Expr::Star(q) => {
                if let (Some(q), false) = (q, self.opts.mask_identifiers) {
                    out.push_str(&self.ident(q));
                    out.push('.');
                }
                out.push('*');
            }
            Expr::Literal(l) => {
                if self.opts.mask_values {
                    out.push_str(VALUE_PLACEHOLDER);
                } else {
                    match l {
                        Literal::Number(n) => out.push_str(n),
                        Literal::Str(s) => {
                            out.push('\'');
                            out.push_str(&s.replace('\'', "''"));
                            out.push('\'');
                        }
                        Literal::Null => out.push_str("NULL"),
                    }
                }
            }
            Expr::Function {
                name,
                distinct,
                args,
            } => {
                out.push_str(&name.to_ascii_lowercase());
                out.push('(');
                if *distinct {
                    out.push_str("DISTINCT ");
                }
                self.list(args, out);
                out.push(')');
            }
            Expr::Binary { op, left, right } => match op {
                BinaryOp::And | BinaryOp::Or if self.opts.sort_commutative => {
                    let mut parts = Vec::new();
                    flatten(e, *op, &mut parts);
                    let mut rendered: Vec<String> = parts
                        .into_iter()
                        .map(|p| {
                            let mut s = String::new();
                            self.expr(p, &mut s);
                            s
                        })
                        .collect();
                    rendered.sort();
                    out.push_str(&rendered.join(&format!(" {} ", op.symbol())));
                }
                BinaryOp::Eq | BinaryOp::NotEq if self.opts.sort_commutative => {
                    let mut l = String::new();
                    let mut r = String::new();
                    self.expr(left, &mut l);
                    self.expr(right, &mut r);
                    if r < l {
                        std::mem::swap(&mut l, &mut r);
                    }
                    out.push_str(&l);
                    out.push(' ');
                    out.push_str(op.symbol());
                    out.push(' ');
                    out.push_str(&r);
                }
                _ => {
                    self.expr(left, out);
                    out.push(' ');
                    out.push_str(op.symbol());
                    out.push(' ');
                    self.expr(right, out);
                }
            },
            Expr::Unary { op, expr } => {
                match op {
                    UnaryOp::Not => out.push_str("NOT "),
                    UnaryOp::Neg => out.push('-'),
                }
                self.expr(expr, out);
            }
            Expr::Between {
                expr,
                low,
                high,
                negated,
            } => {
                self.expr(expr, out);
                out.push_str(if *negated { " NOT BETWEEN " } else { " BETWEEN " });
                self.expr(low, out);
                out.push_str(" AND ");
                self.expr(high, out);
            }
            Expr::InList {
                expr,
                list,
                negated,
            } => {
                self.expr(expr, out);
                out.push_str(if *negated { " NOT IN (" } else { " IN (" });
                self.list(list, out);
                out.push(')');
            }
            Expr::InSubquery {
                expr,
                query,
                negated,
            } => {
                self.expr(expr, out);
                out.push_str(if *negated { " NOT IN " } else { " IN " });
                self.nested_query(query, out);
            }
            Expr::Like {
                expr,
                pattern,
                negated,
            } => {
                self.expr(expr, out);
                out.push_str(if *negated { " NOT LIKE " } else { " LIKE " });
                self.expr(pattern, out);
            }
            Expr::IsNull { expr, negated } => {
                self.expr(expr, out);
                out.push_str(if *negated { " IS NOT NULL" } else { " IS NULL" });
            }
            Expr::Exists(q) => {
                out.push_str("EXISTS ");
                self.nested_query(q, out);
            }
            Expr::Subquery(q) => self.nested_query(q, out),
            Expr::Nested(inner) => {
                out.push('(');
                self.expr(inner, out);
                out.push(')');
            }
        }
    }
}

fn flatten<'a>(e: &'a Expr, op: BinaryOp, out: &mut Vec<&'a Expr>) {
    match e {
        Expr::Binary {
            op: o,
            left,
            right,
        } if *o == op => {
            flatten(left, op, out);
            flatten(right, op, out);
        }
        _ => out.push(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::parse_query;

    fn masked(sql: &str) -> String {
        render_query(&parse_query(sql).unwrap(), RenderOptions::masked())
    }

    #[test]
    fn plain_round_trip_is_stable() {
        let sql = "SELECT DISTINCT T1.name, count(*) FROM singer AS T1 JOIN concert AS T2 ON T1.id = T2.sid WHERE T1.age > 30 AND T2.theme LIKE '%x%' GROUP BY T1.name HAVING count(*) >= 2 ORDER BY T1.name DESC LIMIT 3";
        let once = render_query(&parse_query(sql).unwrap(), RenderOptions::plain());
        assert_eq!(once, sql);
    }

    #[test]
    fn masked_drops_implicit_and_explicit_asc() {
        assert_eq!(masked("SELECT a FROM t ORDER BY a ASC"), "SELECT _COL_ FROM _TAB_ ORDER BY _COL_");
        assert_eq!(masked("SELECT a FROM t ORDER BY a"), "SELECT _COL_ FROM _TAB_ ORDER BY _COL_");
        assert_eq!(
            masked("SELECT a FROM t ORDER BY a DESC LIMIT 1"),
            "SELECT _COL_ FROM _TAB_ ORDER BY _COL_ DESC LIMIT _VAL_"
        );
    }

    #[test]
    fn canonical_sorts_conjuncts() {
        let a = render_query(&parse_query("select x from t where b = 1 and a = 2").unwrap(), RenderOptions::canonical());
        let b = render_query(&parse_query("SELECT x FROM t WHERE a = 5 AND b = 7").unwrap(), RenderOptions::canonical());
        assert_eq!(a, b);
    }
}
