//! Action grammar of the reference parser.
//!
//! A query is a flat action sequence:
//!
//! ```text
//! TABLE [JOIN TABLE | NOJOIN] (DISTINCT | PLAIN) item+ SEL_END
//! [WHERE COL op (AND COL op)*] [GROUP COL [HAVING agg op]]
//! [ORDER agg (ASC | DESC) [LIMIT]] END
//! ```
//!
//! where an item or aggregate is `STAR` (count of rows) or one of
//! `NONE AVG MAX MIN SUM COUNT` followed by a column. Values are not
//! predicted and render as a fixed placeholder.

use std::fmt;

use sqlaug_core::schema::SchemaGraph;
use sqlaug_core::sql::ast::{BinaryOp, Direction, Expr, JoinKind, Literal, Query, Select, TableSource};
use sqlaug_core::sql::{parse_query, resolve};
use sqlaug_core::{Error, Result};

pub const MAX_ITEMS: usize = 4;
pub const MAX_CONDITIONS: usize = 4;
const VALUE: &str = "'value'";

macro_rules! keywords {
    ($($k:ident),* $(,)?) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Kw { $($k),* }
        impl Kw {
            pub const ALL: &'static [Kw] = &[$(Kw::$k),*];
            pub fn index(self) -> usize { self as usize }
            pub fn name(self) -> &'static str {
                match self { $(Kw::$k => stringify!($k)),* }
            }
        }
    };
}

keywords!(
    Join, NoJoin, Distinct, Plain, Star, None, Avg, Max, Min, Sum, Count, SelEnd, Where, And, Group, Having,
    Order, Limit, End, Eq, Ne, Gt, Lt, Ge, Le, Like, Asc, Desc,
);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Kw(Kw),
    Col(usize),
    Table(usize),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Kw(k) => f.write_str(k.name()),
            Action::Col(c) => write!(f, "COL{c}"),
            Action::Table(t) => write!(f, "TAB{t}"),
        }
    }
}

const AGGS: [Kw; 7] = [Kw::Star, Kw::None, Kw::Avg, Kw::Max, Kw::Min, Kw::Sum, Kw::Count];
const OPS: [Kw; 7] = [Kw::Eq, Kw::Ne, Kw::Gt, Kw::Lt, Kw::Ge, Kw::Le, Kw::Like];

/// `Star` stands for `count(*)`; every other aggregate carries a column.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Term {
    pub agg: Kw,
    pub col: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Program {
    pub tables: Vec<usize>,
    pub distinct: bool,
    pub items: Vec<Term>,
    pub conditions: Vec<(usize, Kw)>,
    pub group: Option<usize>,
    pub having: Option<(Term, Kw)>,
    pub order: Option<(Term, Kw)>,
    pub limit: bool,
}

fn unsupported(what: impl Into<String>) -> Error {
    Error::InvalidArgument(format!("outside the parser grammar: {}", what.into()))
}

fn term_actions(t: &Term, out: &mut Vec<Action>) {
    out.push(Action::Kw(t.agg));
    if let Some(c) = t.col {
        out.push(Action::Col(c));
    }
}

fn render_term(t: &Term, schema: &SchemaGraph) -> String {
    let col = |c: usize| {
        let column = &schema.columns[c];
        format!("{}.{}", schema.tables[column.table], column.name)
    };
    match (t.agg, t.col) {
        (Kw::Star, _) => "count(*)".to_string(),
        (Kw::None, Some(c)) => col(c),
        (agg, Some(c)) => format!("{}({})", agg.name().to_lowercase(), col(c)),
        (agg, None) => format!("{}(*)", agg.name().to_lowercase()),
    }
}

fn op_symbol(op: Kw) -> &'static str {
    match op {
        Kw::Eq => "=",
        Kw::Ne => "!=",
        Kw::Gt => ">",
        Kw::Lt => "<",
        Kw::Ge => ">=",
        Kw::Le => "<=",
        _ => "LIKE",
    }
}

impl Program {
    pub fn actions(&self) -> Vec<Action> {
        let mut out = vec![Action::Table(self.tables[0])];
        match self.tables.get(1) {
            Some(&t) => out.extend([Action::Kw(Kw::Join), Action::Table(t)]),
            None => out.push(Action::Kw(Kw::NoJoin)),
        }
        out.push(Action::Kw(if self.distinct { Kw::Distinct } else { Kw::Plain }));
        for t in &self.items {
            term_actions(t, &mut out);
        }
        out.push(Action::Kw(Kw::SelEnd));
        for (i, (c, op)) in self.conditions.iter().enumerate() {
            out.push(Action::Kw(if i == 0 { Kw::Where } else { Kw::And }));
            out.extend([Action::Col(*c), Action::Kw(*op)]);
        }
        if let Some(g) = self.group {
            out.extend([Action::Kw(Kw::Group), Action::Col(g)]);
            if let Some((t, op)) = &self.having {
                out.push(Action::Kw(Kw::Having));
                term_actions(t, &mut out);
                out.push(Action::Kw(*op));
            }
        }
        if let Some((t, dir)) = &self.order {
            out.push(Action::Kw(Kw::Order));
            term_actions(t, &mut out);
            out.push(Action::Kw(*dir));
            if self.limit {
                out.push(Action::Kw(Kw::Limit));
            }
        }
        out.push(Action::Kw(Kw::End));
        out
    }

    pub fn render(&self, schema: &SchemaGraph) -> String {
        let mut s = String::from("SELECT ");
        if self.distinct {
            s.push_str("DISTINCT ");
        }
        let items: Vec<String> = self.items.iter().map(|t| render_term(t, schema)).collect();
        s.push_str(&items.join(", "));
        s.push_str(" FROM ");
        s.push_str(&schema.tables[self.tables[0]]);
        if let Some(&t2) = self.tables.get(1) {
            s.push_str(" JOIN ");
            s.push_str(&schema.tables[t2]);
            if let Some((a, b)) = schema.link(self.tables[0], t2) {
                let name = |c: usize| format!("{}.{}", schema.tables[schema.columns[c].table], schema.columns[c].name);
                s.push_str(&format!(" ON {} = {}", name(a), name(b)));
            }
        }
        for (i, (c, op)) in self.conditions.iter().enumerate() {
            s.push_str(if i == 0 { " WHERE " } else { " AND " });
            let t = Term {
                agg: Kw::None,
                col: Some(*c),
            };
            s.push_str(&format!("{} {} {VALUE}", render_term(&t, schema), op_symbol(*op)));
        }
        if let Some(g) = self.group {
            let t = Term {
                agg: Kw::None,
                col: Some(g),
            };
            s.push_str(&format!(" GROUP BY {}", render_term(&t, schema)));
            if let Some((t, op)) = &self.having {
                s.push_str(&format!(" HAVING {} {} {VALUE}", render_term(t, schema), op_symbol(*op)));
            }
        }
        if let Some((t, dir)) = &self.order {
            s.push_str(&format!(" ORDER BY {} {}", render_term(t, schema), dir.name().to_uppercase()));
            if self.limit {
                s.push_str(" LIMIT 1");
            }
        }
        s
    }

    /// Converts gold SQL into a program, or explains why it falls outside
    /// the grammar.
    pub fn from_sql(sql: &str, schema: &SchemaGraph) -> Result<Program> {
        let q = parse_query(sql)?;
        let r = resolve(&q, Some(schema))?;
        from_query(&r.query, schema)
    }
}

fn from_query(q: &Query, schema: &SchemaGraph) -> Result<Program> {
    if q.compound.is_some() {
        return Err(unsupported("set operation"));
    }
    let s: &Select = &q.body;
    let mut p = Program {
        distinct: s.distinct,
        ..Program::default()
    };
    if s.from.is_empty() || s.from.len() > 2 {
        return Err(unsupported("FROM clause with other than one or two tables"));
    }
    for (i, f) in s.from.iter().enumerate() {
        let TableSource::Named(name) = &f.source else {
            return Err(unsupported("derived table"));
        };
        let t = schema
            .table_index(name)
            .ok_or_else(|| unsupported(format!("unknown table {name}")))?;
        if i == 1 {
            if !matches!(f.join, JoinKind::Inner) || schema.link(p.tables[0], t).is_none() || t == p.tables[0] {
                return Err(unsupported("join without a foreign-key link"));
            }
        }
        p.tables.push(t);
    }
    let col = |e: &Expr| -> Result<usize> {
        match e {
            Expr::Column(c) => {
                let t = match &c.qualifier {
                    Some(q) => schema.table_index(q),
                    None => Some(p.tables[0]),
                }
                .ok_or_else(|| unsupported("unresolved column"))?;
                if !p.tables.contains(&t) {
                    return Err(unsupported("column of a table not in FROM"));
                }
                schema
                    .column_index(t, &c.name)
                    .ok_or_else(|| unsupported(format!("unknown column {}", c.name)))
            }
            Expr::Nested(inner) => col_plain(inner, schema, &p.tables),
            _ => Err(unsupported("expected a column")),
        }
    };
    let term = |e: &Expr| -> Result<Term> {
        match e {
            Expr::Function { name, distinct, args } => {
                if *distinct || args.len() != 1 {
                    return Err(unsupported("aggregate form"));
                }
                let agg = match name.to_ascii_lowercase().as_str() {
                    "count" if matches!(args[0], Expr::Star(_)) => {
                        return Ok(Term {
                            agg: Kw::Star,
                            col: None,
                        })
                    }
                    "count" => Kw::Count,
                    "avg" => Kw::Avg,
                    "max" => Kw::Max,
                    "min" => Kw::Min,
                    "sum" => Kw::Sum,
                    other => return Err(unsupported(format!("function {other}"))),
                };
                Ok(Term {
                    agg,
                    col: Some(col(&args[0])?),
                })
            }
            other => Ok(Term {
                agg: Kw::None,
                col: Some(col(other)?),
            }),
        }
    };
    if s.items.is_empty() || s.items.len() > MAX_ITEMS {
        return Err(unsupported("select list size"));
    }
    for item in &s.items {
        p.items.push(term(&item.expr)?);
    }
    if let Some(w) = &s.selection {
        let mut leaves = Vec::new();
        flatten_and(w, &mut leaves);
        if leaves.len() > MAX_CONDITIONS {
            return Err(unsupported("too many conditions"));
        }
        for leaf in leaves {
            let (c, op) = condition(leaf)?;
            p.conditions.push((col(c)?, op));
        }
    }
    match s.group_by.as_slice() {
        [] => {}
        [g] => p.group = Some(col(g)?),
        _ => return Err(unsupported("multiple grouping columns")),
    }
    if let Some(h) = &s.having {
        if p.group.is_none() {
            return Err(unsupported("HAVING without GROUP BY"));
        }
        let (e, op) = condition(h)?;
        if op == Kw::Like {
            return Err(unsupported("LIKE in HAVING"));
        }
        p.having = Some((term(e)?, op));
    }
    match s.order_by.as_slice() {
        [] => {}
        [o] => {
            let dir = match o.direction {
                Some(Direction::Desc) => Kw::Desc,
                _ => Kw::Asc,
            };
            p.order = Some((term(&o.expr)?, dir));
        }
        _ => return Err(unsupported("multiple ordering keys")),
    }
    if s.limit.is_some() {
        if p.order.is_none() {
            return Err(unsupported("LIMIT without ORDER BY"));
        }
        p.limit = true;
    }
    Ok(p)
}

fn col_plain(e: &Expr, schema: &SchemaGraph, tables: &[usize]) -> Result<usize> {
    match e {
        Expr::Column(c) => {
            let t = c
                .qualifier
                .as_deref()
                .and_then(|q| schema.table_index(q))
                .unwrap_or(tables[0]);
            schema
                .column_index(t, &c.name)
                .ok_or_else(|| unsupported("unknown column"))
        }
        Expr::Nested(inner) => col_plain(inner, schema, tables),
        _ => Err(unsupported("expected a column")),
    }
}

fn flatten_and<'a>(e: &'a Expr, out: &mut Vec<&'a Expr>) {
    match e {
        Expr::Binary {
            op: BinaryOp::And,
            left,
            right,
        } => {
            flatten_and(left, out);
            flatten_and(right, out);
        }
        Expr::Nested(inner) => flatten_and(inner, out),
        other => out.push(other),
    }
}

fn is_value(e: &Expr) -> bool {
    match e {
        Expr::Literal(Literal::Number(_) | Literal::Str(_)) => true,
        Expr::Unary { expr, .. } => is_value(expr),
        Expr::Nested(inner) => is_value(inner),
        _ => false,
    }
}

fn condition(e: &Expr) -> Result<(&Expr, Kw)> {
    match e {
        Expr::Binary { op, left, right } if is_value(right) => {
            let kw = match op {
                BinaryOp::Eq => Kw::Eq,
                BinaryOp::NotEq => Kw::Ne,
                BinaryOp::Gt => Kw::Gt,
                BinaryOp::Lt => Kw::Lt,
                BinaryOp::GtEq => Kw::Ge,
                BinaryOp::LtEq => Kw::Le,
                _ => return Err(unsupported("condition operator")),
            };
            Ok((left, kw))
        }
        Expr::Like {
            expr,
            pattern,
            negated: false,
        } if is_value(pattern) => Ok((expr, Kw::Like)),
        _ => Err(unsupported("condition form")),
    }
}

/// Set of actions the grammar allows next.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Allowed {
    pub keywords: Vec<Kw>,
    pub columns: bool,
    pub tables: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Expect {
    FirstTable,
    JoinChoice,
    SecondTable,
    Distinct,
    Item,
    ItemCol,
    Clause,
    WhereCol,
    WhereOp,
    GroupCol,
    HavingAgg,
    HavingCol,
    HavingOp,
    OrderAgg,
    OrderCol,
    OrderDir,
    Done,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Last {
    Select,
    Where,
    Group,
    Having,
    Order,
    Limit,
}

/// Incremental decoder state: the partial program plus what comes next.
#[derive(Clone, Debug)]
pub struct Cursor {
    pub program: Program,
    expect: Expect,
    last: Last,
    pending: Option<Term>,
}

impl Default for Cursor {
    fn default() -> Self {
        Cursor::new()
    }
}

impl Cursor {
    pub fn new() -> Self {
        Cursor {
            program: Program::default(),
            expect: Expect::FirstTable,
            last: Last::Select,
            pending: None,
        }
    }

    pub fn is_done(&self) -> bool {
        self.expect == Expect::Done
    }

    fn linked(&self, schema: &SchemaGraph) -> Vec<usize> {
        let t1 = self.program.tables[0];
        (0..schema.tables.len())
            .filter(|&t| t != t1 && schema.link(t1, t).is_some())
            .collect()
    }

    pub fn allowed(&self, schema: &SchemaGraph) -> Allowed {
        let kws = |k: &[Kw]| Allowed {
            keywords: k.to_vec(),
            ..Allowed::default()
        };
        let cols = Allowed {
            columns: true,
            ..Allowed::default()
        };
        match self.expect {
            Expect::FirstTable => Allowed {
                tables: (0..schema.tables.len()).collect(),
                ..Allowed::default()
            },
            Expect::JoinChoice => {
                if self.linked(schema).is_empty() {
                    kws(&[Kw::NoJoin])
                } else {
                    kws(&[Kw::Join, Kw::NoJoin])
                }
            }
            Expect::SecondTable => Allowed {
                tables: self.linked(schema),
                ..Allowed::default()
            },
            Expect::Distinct => kws(&[Kw::Distinct, Kw::Plain]),
            Expect::Item => {
                let mut k = Vec::new();
                if self.program.items.len() < MAX_ITEMS {
                    k.extend(AGGS);
                }
                if !self.program.items.is_empty() {
                    k.push(Kw::SelEnd);
                }
                kws(&k)
            }
            Expect::HavingAgg | Expect::OrderAgg => kws(&AGGS),
            Expect::ItemCol | Expect::WhereCol | Expect::GroupCol | Expect::HavingCol | Expect::OrderCol => cols,
            Expect::WhereOp => kws(&OPS),
            Expect::HavingOp => kws(&OPS[..6]),
            Expect::OrderDir => kws(&[Kw::Asc, Kw::Desc]),
            Expect::Clause => {
                let mut k = Vec::new();
                match self.last {
                    Last::Select => k.push(Kw::Where),
                    Last::Where if self.program.conditions.len() < MAX_CONDITIONS => k.push(Kw::And),
                    _ => {}
                }
                if self.last <= Last::Where {
                    k.push(Kw::Group);
                }
                if self.last == Last::Group {
                    k.push(Kw::Having);
                }
                if self.last <= Last::Having {
                    k.push(Kw::Order);
                }
                if self.last == Last::Order {
                    k.push(Kw::Limit);
                }
                k.push(Kw::End);
                kws(&k)
            }
            Expect::Done => Allowed::default(),
        }
    }

    /// Whether `column` may be pointed at in the current state.
    pub fn column_in_scope(&self, schema: &SchemaGraph, column: usize) -> bool {
        self.program.tables.contains(&schema.columns[column].table)
    }

    pub fn permits(&self, schema: &SchemaGraph, a: Action) -> bool {
        let allowed = self.allowed(schema);
        match a {
            Action::Kw(k) => allowed.keywords.contains(&k),
            Action::Col(c) => allowed.columns && c < schema.columns.len() && self.column_in_scope(schema, c),
            Action::Table(t) => allowed.tables.contains(&t),
        }
    }

    /// Applies an action the grammar permits.
    pub fn apply(&mut self, a: Action) {
        let p = &mut self.program;
        self.expect = match (self.expect, a) {
            (Expect::FirstTable, Action::Table(t)) => {
                p.tables.push(t);
                Expect::JoinChoice
            }
            (Expect::JoinChoice, Action::Kw(Kw::Join)) => Expect::SecondTable,
            (Expect::JoinChoice, _) => Expect::Distinct,
            (Expect::SecondTable, Action::Table(t)) => {
                p.tables.push(t);
                Expect::Distinct
            }
            (Expect::Distinct, Action::Kw(k)) => {
                p.distinct = k == Kw::Distinct;
                Expect::Item
            }
            (Expect::Item, Action::Kw(Kw::SelEnd)) => Expect::Clause,
            (Expect::Item, Action::Kw(Kw::Star)) => {
                p.items.push(Term {
                    agg: Kw::Star,
                    col: None,
                });
                Expect::Item
            }
            (Expect::Item, Action::Kw(k)) => {
                self.pending = Some(Term { agg: k, col: None });
                Expect::ItemCol
            }
            (Expect::ItemCol, Action::Col(c)) => {
                let mut t = self.pending.take().unwrap();
                t.col = Some(c);
                p.items.push(t);
                Expect::Item
            }
            (Expect::Clause, Action::Kw(k)) => match k {
                Kw::Where | Kw::And => {
                    self.last = Last::Where;
                    Expect::WhereCol
                }
                Kw::Group => {
                    self.last = Last::Group;
                    Expect::GroupCol
                }
                Kw::Having => {
                    self.last = Last::Having;
                    Expect::HavingAgg
                }
                Kw::Order => {
                    self.last = Last::Order;
                    Expect::OrderAgg
                }
                Kw::Limit => {
                    self.last = Last::Limit;
                    p.limit = true;
                    Expect::Clause
                }
                _ => Expect::Done,
            },
            (Expect::WhereCol, Action::Col(c)) => {
                p.conditions.push((c, Kw::Eq));
                Expect::WhereOp
            }
            (Expect::WhereOp, Action::Kw(op)) => {
                p.conditions.last_mut().unwrap().1 = op;
                Expect::Clause
            }
            (Expect::GroupCol, Action::Col(c)) => {
                p.group = Some(c);
                Expect::Clause
            }
            (Expect::HavingAgg, Action::Kw(Kw::Star)) | (Expect::OrderAgg, Action::Kw(Kw::Star)) => {
                self.pending = Some(Term {
                    agg: Kw::Star,
                    col: None,
                });
                if self.expect == Expect::HavingAgg {
                    Expect::HavingOp
                } else {
                    Expect::OrderDir
                }
            }
            (Expect::HavingAgg, Action::Kw(k)) => {
                self.pending = Some(Term { agg: k, col: None });
                Expect::HavingCol
            }
            (Expect::OrderAgg, Action::Kw(k)) => {
                self.pending = Some(Term { agg: k, col: None });
                Expect::OrderCol
            }
            (Expect::HavingCol, Action::Col(c)) => {
                self.pending.as_mut().unwrap().col = Some(c);
                Expect::HavingOp
            }
            (Expect::OrderCol, Action::Col(c)) => {
                self.pending.as_mut().unwrap().col = Some(c);
                Expect::OrderDir
            }
            (Expect::HavingOp, Action::Kw(op)) => {
                p.having = Some((self.pending.take().unwrap(), op));
                Expect::Clause
            }
            (Expect::OrderDir, Action::Kw(dir)) => {
                p.order = Some((self.pending.take().unwrap(), dir));
                Expect::Clause
            }
            (state, action) => panic!("action {action} is not valid in state {state:?}"),
        };
    }
}

/// Replays `actions` through the grammar; errors on the first action the
/// grammar forbids.
pub fn replay(actions: &[Action], schema: &SchemaGraph) -> Result<Cursor> {
    let mut cur = Cursor::new();
    for &a in actions {
        if !cur.permits(schema, a) {
            return Err(unsupported(format!("action {a} not permitted here")));
        }
        cur.apply(a);
    }
    Ok(cur)
}
