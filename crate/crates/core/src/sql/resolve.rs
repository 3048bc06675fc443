//! Alias and column resolution.
//!
//! Rewrites a parsed query so that every column reference is qualified by
//! the real table it belongs to and named tables lose their aliases, and
//! records the schema entities in the order they appear in the text.
//! Without a schema, resolution is purely syntactic: aliases are expanded
//! and unqualified columns are qualified only when a single table is in scope.

use super::ast::*;
use crate::error::{Error, Result};
use crate::schema::{Entity, SchemaGraph};

#[derive(Clone, Debug)]
pub struct Resolution {
    pub query: Query,
    /// Entities in textual order; repeats are kept.
    pub entities: Vec<Entity>,
}

pub fn resolve(query: &Query, schema: Option<&SchemaGraph>) -> Result<Resolution> {
    let mut r = Resolver {
        schema,
        entities: Vec::new(),
    };
    let query = r.query(query, None)?;
    Ok(Resolution {
        query,
        entities: r.entities,
    })
}

#[derive(Debug)]
enum Target {
    /// Named table: schema index when a schema is present, and the name to print.
    Table(Option<usize>, String),
    Derived,
}

#[derive(Debug)]
struct Binding {
    names: Vec<String>,
    target: Target,
}

struct Scope<'p> {
    bindings: Vec<Binding>,
    select_aliases: Vec<String>,
    parent: Option<&'p Scope<'p>>,
}

impl Scope<'_> {
    fn lookup(&self, qualifier: &str) -> Option<&Binding> {
        self.bindings
            .iter()
            .find(|b| b.names.iter().any(|n| n.eq_ignore_ascii_case(qualifier)))
            .or_else(|| self.parent.and_then(|p| p.lookup(qualifier)))
    }
}

struct Resolver<'s> {
    schema: Option<&'s SchemaGraph>,
    entities: Vec<Entity>,
}

impl<'s> Resolver<'s> {
    fn db_id(&self) -> String {
        self.schema.map(|s| s.db_id.clone()).unwrap_or_default()
    }

    fn query(&mut self, q: &Query, parent: Option<&Scope<'_>>) -> Result<Query> {
        let body = self.select(&q.body, parent)?;
        let compound = match &q.compound {
            Some((op, next)) => Some((*op, Box::new(self.query(next, parent)?))),
            None => None,
        };
        Ok(Query { body, compound })
    }

    fn select(&mut self, s: &Select, parent: Option<&Scope<'_>>) -> Result<Select> {
        let mut bindings = Vec::new();
        for item in &s.from {
            let mut names = Vec::new();
            if let Some(a) = &item.alias {
                names.push(a.clone());
            }
            let target = match &item.source {
                TableSource::Named(t) => {
                    names.push(t.clone());
                    match self.schema {
                        Some(schema) => {
                            let idx = schema.table_index(t).ok_or_else(|| Error::Unresolved {
                                db_id: schema.db_id.clone(),
                                reference: t.clone(),
                            })?;
                            Target::Table(Some(idx), schema.tables[idx].clone())
                        }
                        None => Target::Table(None, t.to_ascii_lowercase()),
                    }
                }
                TableSource::Subquery(_) => Target::Derived,
            };
            bindings.push(Binding { names, target });
        }
        let scope = Scope {
            bindings,
            select_aliases: s.items.iter().filter_map(|i| i.alias.clone()).collect(),
            parent,
        };

        let mut out = Select {
            distinct: s.distinct,
            ..Default::default()
        };
        for item in &s.items {
            out.items.push(SelectItem {
                expr: self.expr(&item.expr, &scope)?,
                alias: item.alias.clone(),
            });
        }
        for item in &s.from {
            let source = match &item.source {
                TableSource::Named(t) => TableSource::Named(match self.schema {
                    Some(schema) => schema.tables[schema.table_index(t).expect("bound above")].clone(),
                    None => t.to_ascii_lowercase(),
                }),
                TableSource::Subquery(q) => TableSource::Subquery(Box::new(self.query(q, parent)?)),
            };
            let alias = match source {
                TableSource::Named(_) => None,
                TableSource::Subquery(_) => item.alias.clone(),
            };
            let on = match &item.on {
                Some(e) => Some(self.expr(e, &scope)?),
                None => None,
            };
            out.from.push(FromItem {
                join: item.join,
                source,
                alias,
                on,
            });
        }
        out.selection = self.opt_expr(s.selection.as_ref(), &scope)?;
        for e in &s.group_by {
            out.group_by.push(self.expr(e, &scope)?);
        }
        out.having = self.opt_expr(s.having.as_ref(), &scope)?;
        for o in &s.order_by {
            out.order_by.push(OrderItem {
                expr: self.expr(&o.expr, &scope)?,
                direction: o.direction,
            });
        }
        out.limit = s.limit.clone();
        Ok(out)
    }

    fn opt_expr(&mut self, e: Option<&Expr>, scope: &Scope<'_>) -> Result<Option<Expr>> {
        e.map(|e| self.expr(e, scope)).transpose()
    }

    fn expr(&mut self, e: &Expr, scope: &Scope<'_>) -> Result<Expr> {
        let b = |x: &Expr, r: &mut Self| -> Result<Box<Expr>> { Ok(Box::new(r.expr(x, scope)?)) };
        Ok(match e {
            Expr::Column(c) => Expr::Column(self.column(c, scope)?),
            Expr::Star(q) => Expr::Star(q.as_ref().map(|q| match scope.lookup(q) {
                Some(Binding {
                    target: Target::Table(_, name),
                    ..
                }) => name.clone(),
                _ => q.clone(),
            })),
            Expr::Literal(l) => Expr::Literal(l.clone()),
            Expr::Function {
                name,
                distinct,
                args,
            } => Expr::Function {
                name: name.clone(),
                distinct: *distinct,
                args: args
                    .iter()
                    .map(|a| self.expr(a, scope))
                    .collect::<Result<_>>()?,
            },
            Expr::Binary { op, left, right } => Expr::Binary {
                op: *op,
                left: b(left, self)?,
                right: b(right, self)?,
            },
            Expr::Unary { op, expr } => Expr::Unary {
                op: *op,
                expr: b(expr, self)?,
            },
            Expr::Between {
                expr,
                low,
                high,
                negated,
            } => Expr::Between {
                expr: b(expr, self)?,
                low: b(low, self)?,
                high: b(high, self)?,
                negated: *negated,
            },
            Expr::InList {
                expr,
                list,
                negated,
            } => Expr::InList {
                expr: b(expr, self)?,
                list: list
                    .iter()
                    .map(|a| self.expr(a, scope))
                    .collect::<Result<_>>()?,
                negated: *negated,
            },
            Expr::InSubquery {
                expr,
                query,
                negated,
            } => {
                let expr = b(expr, self)?;
                Expr::InSubquery {
                    expr,
                    query: Box::new(self.query(query, Some(scope))?),
                    negated: *negated,
                }
            }
            Expr::Like {
                expr,
                pattern,
                negated,
            } => Expr::Like {
                expr: b(expr, self)?,
                pattern: b(pattern, self)?,
                negated: *negated,
            },
            Expr::IsNull { expr, negated } => Expr::IsNull {
                expr: b(expr, self)?,
                negated: *negated,
            },
            Expr::Exists(q) => Expr::Exists(Box::new(self.query(q, Some(scope))?)),
            Expr::Subquery(q) => Expr::Subquery(Box::new(self.query(q, Some(scope))?)),
            Expr::Nested(inner) => Expr::Nested(b(inner, self)?),
        })
    }

    fn column(&mut self, c: &ColumnRef, scope: &Scope<'_>) -> Result<ColumnRef> {
        let unresolved = || Error::Unresolved {
            db_id: self.db_id(),
            reference: match &c.qualifier {
                Some(q) => format!("{q}.{}", c.name),
                None => c.name.clone(),
            },
        };
        if let Some(q) = &c.qualifier {
            return match scope.lookup(q) {
                Some(Binding {
                    target: Target::Table(idx, name),
                    ..
                }) => match (self.schema, idx) {
                    (Some(schema), Some(t)) => {
                        let ci = schema.column_index(*t, &c.name).ok_or_else(unresolved)?;
                        self.entities.push(schema.entity(ci));
                        Ok(ColumnRef {
                            qualifier: Some(name.clone()),
                            name: schema.columns[ci].name.clone(),
                        })
                    }
                    _ => {
                        let col = ColumnRef {
                            qualifier: Some(name.clone()),
                            name: c.name.to_ascii_lowercase(),
                        };
                        self.entities.push(Entity::new(name.clone(), col.name.clone()));
                        Ok(col)
                    }
                },
                Some(Binding {
                    target: Target::Derived,
                    ..
                }) => Ok(c.clone()),
                None if self.schema.is_none() => {
                    let col = ColumnRef {
                        qualifier: Some(q.to_ascii_lowercase()),
                        name: c.name.to_ascii_lowercase(),
                    };
                    self.entities.push(Entity::new(q.to_ascii_lowercase(), col.name.clone()));
                    Ok(col)
                }
                None => Err(unresolved()),
            };
        }

        let mut cur = Some(scope);
        while let Some(s) = cur {
            let tables: Vec<(&Option<usize>, &String)> = s
                .bindings
                .iter()
                .filter_map(|b| match &b.target {
                    Target::Table(i, n) => Some((i, n)),
                    Target::Derived => None,
                })
                .collect();
            let has_derived = s.bindings.iter().any(|b| matches!(b.target, Target::Derived));
            match self.schema {
                Some(schema) => {
                    let mut hits: Vec<usize> = tables
                        .iter()
                        .filter_map(|(i, _)| i.and_then(|t| schema.column_index(t, &c.name)))
                        .collect();
                    hits.sort_unstable();
                    hits.dedup();
                    match hits.len() {
                        1 => {
                            let ci = hits[0];
                            self.entities.push(schema.entity(ci));
                            let col = &schema.columns[ci];
                            return Ok(ColumnRef {
                                qualifier: Some(schema.tables[col.table].clone()),
                                name: col.name.clone(),
                            });
                        }
                        0 => {}
                        _ => {
                            return Err(Error::Ambiguous {
                                db_id: schema.db_id.clone(),
                                column: c.name.clone(),
                                candidates: hits
                                    .iter()
                                    .map(|&i| schema.entity(i).to_string())
                                    .collect::<Vec<_>>()
                                    .join(", "),
                            })
                        }
                    }
                    if has_derived
                        || s.select_aliases
                            .iter()
                            .any(|a| a.eq_ignore_ascii_case(&c.name))
                    {
                        return Ok(c.clone());
                    }
                }
                None => {
                    let mut names: Vec<&String> = tables.iter().map(|(_, n)| *n).collect();
                    names.dedup();
                    if names.len() == 1 && !has_derived {
                        let col = ColumnRef {
                            qualifier: Some(names[0].clone()),
                            name: c.name.to_ascii_lowercase(),
                        };
                        self.entities.push(Entity::new(names[0].clone(), col.name.clone()));
                        return Ok(col);
                    }
                    return Ok(ColumnRef {
                        qualifier: None,
                        name: c.name.to_ascii_lowercase(),
                    });
                }
            }
            cur = s.parent;
        }
        Err(unresolved())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::fixtures::concert_singer;
    use crate::sql::parse_query;

    fn ents(sql: &str) -> Result<Vec<String>> {
        let q = parse_query(sql)?;
        let r = resolve(&q, Some(&concert_singer()))?;
        Ok(r.entities.iter().map(|e| e.to_string()).collect())
    }

    #[test]
    fn resolves_aliases_in_textual_order() {
        let e = ents(
            "SELECT T2.concert_id, T1.name FROM singer AS T1 JOIN concert AS T2 ON T1.singer_id = T2.singer_id",
        )
        .unwrap();
        assert_eq!(
            e,
            [
                "concert.concert_id",
                "singer.name",
                "singer.singer_id",
                "concert.singer_id"
            ]
        );
    }

    #[test]
    fn unqualified_column_uses_unique_table() {
        assert_eq!(ents("SELECT name FROM singer WHERE age > 3").unwrap(), ["singer.name", "singer.age"]);
    }

    #[test]
    fn ambiguous_unqualified_column_is_an_error() {
        let err = ents("SELECT singer_id FROM singer JOIN concert").unwrap_err();
        assert!(matches!(err, Error::Ambiguous { .. }));
    }

    #[test]
    fn unknown_column_is_unresolved() {
        assert!(matches!(
            ents("SELECT nonexistent.col FROM singer"),
            Err(Error::Unresolved { .. })
        ));
        assert!(matches!(ents("SELECT height FROM singer"), Err(Error::Unresolved { .. })));
    }

    #[test]
    fn correlated_subquery_sees_outer_scope() {
        let e = ents("SELECT name FROM singer WHERE singer_id IN (SELECT singer_id FROM concert WHERE age > 1)")
            .unwrap();
        assert_eq!(
            e,
            ["singer.name", "singer.singer_id", "concert.singer_id", "singer.age"]
        );
    }

    #[test]
    fn order_by_select_alias_is_not_an_entity() {
        let e = ents("SELECT name, count(*) AS cnt FROM singer GROUP BY name ORDER BY cnt").unwrap();
        assert_eq!(e, ["singer.name", "singer.name"]);
    }

    #[test]
    fn schemaless_resolution_expands_aliases() {
        let q = parse_query("SELECT T1.X FROM A AS T1").unwrap();
        let r = resolve(&q, None).unwrap();
        assert_eq!(r.entities, vec![Entity::new("a", "x")]);
    }
}
