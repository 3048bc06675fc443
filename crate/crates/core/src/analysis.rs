//! Dataset diagnostics: SQL sketches, query deconstruction, normalized
//! entropy and normalized mutual information, aggregated per database.
//!
//! Deconstruction rules (fixed):
//! 1. a compound query is split at every UNION / INTERSECT / EXCEPT;
//! 2. every nested query (in FROM, WHERE, HAVING, or anywhere else in an
//!    expression) becomes its own part, and its slot in the enclosing part
//!    is printed as `(_SUB_)`;
//! 3. each part is then masked: tables to `_TAB_`, columns to `_COL_`,
//!    literals to `_VAL_`, aliases dropped, `ASC` dropped.
//!
//! Parts are listed in pre-order. The unique-sketch counts these rules produce
//! are an approximation of any other hand-written rule system.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{AnnotatedPair, SchemaGraph};
use crate::sql::ast::*;
use crate::sql::{parse_query, render_query, render_select, resolve, RenderOptions};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sketch {
    pub masked_sql: String,
    pub parts: Vec<String>,
}

fn part_options() -> RenderOptions {
    RenderOptions {
        hide_subqueries: true,
        ..RenderOptions::masked()
    }
}

/// Masks every table, column and literal of `sql`.
pub fn sketch(sql: &str) -> Result<Sketch> {
    let q = parse_query(sql)?;
    Ok(Sketch {
        masked_sql: render_query(&q, RenderOptions::masked()),
        parts: query_parts(&q).into_iter().map(|p| p.sketch).collect(),
    })
}

/// Masked parts of `sql` under the deconstruction rules.
pub fn deconstruct(sql: &str) -> Result<Vec<String>> {
    Ok(sketch(sql)?.parts)
}

/// One deconstructed piece of a query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryPart {
    pub sketch: String,
    /// Lower-cased `table.column` names used directly in this part.
    pub columns: BTreeSet<String>,
    pub tables: BTreeSet<String>,
}

pub fn query_parts(q: &Query) -> Vec<QueryPart> {
    let mut out = Vec::new();
    collect_query(q, &mut out);
    out
}

fn collect_query(q: &Query, out: &mut Vec<QueryPart>) {
    for branch in q.branches() {
        collect_select(branch, out);
    }
}

fn collect_select(s: &Select, out: &mut Vec<QueryPart>) {
    let mut part = QueryPart {
        sketch: render_select(s, part_options()),
        columns: BTreeSet::new(),
        tables: BTreeSet::new(),
    };
    let mut nested: Vec<&Query> = Vec::new();
    for item in &s.items {
        walk(&item.expr, &mut part.columns, &mut nested);
    }
    for f in &s.from {
        match &f.source {
            TableSource::Named(t) => {
                part.tables.insert(t.to_ascii_lowercase());
            }
            TableSource::Subquery(q) => nested.push(q),
        }
        if let Some(on) = &f.on {
            walk(on, &mut part.columns, &mut nested);
        }
    }
    let rest = s
        .selection
        .iter()
        .chain(&s.group_by)
        .chain(&s.having)
        .chain(s.order_by.iter().map(|o| &o.expr));
    for e in rest {
        walk(e, &mut part.columns, &mut nested);
    }
    out.push(part);
    for q in nested {
        collect_query(q, out);
    }
}

fn walk<'a>(e: &'a Expr, columns: &mut BTreeSet<String>, nested: &mut Vec<&'a Query>) {
    match e {
        Expr::Column(c) => {
            let name = match &c.qualifier {
                Some(q) => format!("{}.{}", q, c.name),
                None => c.name.clone(),
            };
            columns.insert(name.to_ascii_lowercase());
        }
        Expr::Star(_) | Expr::Literal(_) => {}
        Expr::Function { args, .. } => args.iter().for_each(|a| walk(a, columns, nested)),
        Expr::Binary { left, right, .. } => {
            walk(left, columns, nested);
            walk(right, columns, nested);
        }
        Expr::Unary { expr, .. } | Expr::IsNull { expr, .. } | Expr::Nested(expr) => {
            walk(expr, columns, nested)
        }
        Expr::Between { expr, low, high, .. } => {
            walk(expr, columns, nested);
            walk(low, columns, nested);
            walk(high, columns, nested);
        }
        Expr::InList { expr, list, .. } => {
            walk(expr, columns, nested);
            list.iter().for_each(|a| walk(a, columns, nested));
        }
        Expr::InSubquery { expr, query, .. } => {
            walk(expr, columns, nested);
            nested.push(query);
        }
        Expr::Like { expr, pattern, .. } => {
            walk(expr, columns, nested);
            walk(pattern, columns, nested);
        }
        Expr::Exists(q) | Expr::Subquery(q) => nested.push(q),
    }
}

fn entropy_bits(counts: impl IntoIterator<Item = u64>) -> (f64, usize) {
    let counts: Vec<u64> = counts.into_iter().filter(|&c| c > 0).collect();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return (0.0, 0);
    }
    let total = total as f64;
    let h = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum::<f64>();
    (h.max(0.0), counts.len())
}

/// Entropy of the empirical distribution divided by the entropy of the
/// uniform distribution over its support. A single-category support gives 0.
pub fn normalized_entropy(counts: &[u64]) -> Result<f64> {
    if counts.iter().sum::<u64>() == 0 {
        return Err(Error::InvalidArgument(
            "normalized entropy of an empty distribution".into(),
        ));
    }
    let (h, support) = entropy_bits(counts.iter().copied());
    if support <= 1 {
        return Ok(0.0);
    }
    Ok((h / (support as f64).log2()).clamp(0.0, 1.0))
}

/// `2 I(X;Y) / (H(X) + H(Y))` for an empirical joint table given as
/// `((x, y), count)` cells. Zero when both marginals are point masses.
pub fn normalized_mutual_information<X, Y, I>(joint: I) -> Result<f64>
where
    X: Eq + Hash + Clone,
    Y: Eq + Hash + Clone,
    I: IntoIterator<Item = ((X, Y), u64)>,
{
    let mut px: HashMap<X, u64> = HashMap::new();
    let mut py: HashMap<Y, u64> = HashMap::new();
    let mut pxy: HashMap<(X, Y), u64> = HashMap::new();
    let mut total = 0u64;
    for ((x, y), c) in joint {
        if c == 0 {
            continue;
        }
        *px.entry(x.clone()).or_default() += c;
        *py.entry(y.clone()).or_default() += c;
        *pxy.entry((x, y)).or_default() += c;
        total += c;
    }
    if total == 0 {
        return Err(Error::InvalidArgument(
            "normalized mutual information of an empty joint table".into(),
        ));
    }
    // Sort counts so the floating-point sum does not depend on hash order.
    let sorted = |v: Vec<u64>| {
        let mut v = v;
        v.sort_unstable();
        v
    };
    let (hx, _) = entropy_bits(sorted(px.into_values().collect()));
    let (hy, _) = entropy_bits(sorted(py.into_values().collect()));
    let (hxy, _) = entropy_bits(sorted(pxy.into_values().collect()));
    let denom = hx + hy;
    if denom <= 0.0 {
        return Ok(0.0);
    }
    let mi = (hx + hy - hxy).max(0.0);
    Ok((2.0 * mi / denom).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbStats {
    pub db_id: String,
    pub n_instances: usize,
    pub n_parts: usize,
    pub h_col: f64,
    pub h_sketch: f64,
    pub i_col_sketch: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_instances: usize,
    /// Examples that could not be parsed or resolved and were left out.
    pub n_skipped: usize,
    pub n_unique_sketches: usize,
    pub n_unique_column_sets: usize,
    /// Over the whole set: distribution of examples across databases.
    pub h_db: f64,
    /// Averaged over databases.
    pub h_col: f64,
    /// Averaged over databases.
    pub h_sketch: f64,
    /// Over the whole set: association of databases and part sketches.
    pub i_db_sketch: f64,
    /// Averaged over databases.
    pub i_col_sketch: f64,
    pub per_db: Vec<DbStats>,
}

struct Observation {
    db: String,
    sketch: String,
    columns: String,
}

/// Diversity statistics over `examples`. Examples whose SQL fails to
/// parse or resolve are skipped and counted in `n_skipped`.
pub fn dataset_stats(examples: &[AnnotatedPair], schemas: &[SchemaGraph]) -> Result<DatasetStats> {
    let by_id: HashMap<&str, &SchemaGraph> = schemas.iter().map(|s| (s.db_id.as_str(), s)).collect();
    let mut observations = Vec::new();
    let mut per_db_instances: BTreeMap<String, usize> = BTreeMap::new();
    let mut skipped = 0usize;
    for ex in examples {
        let Some(schema) = by_id.get(ex.db_id.as_str()) else {
            log::debug!("skipping example with unknown db `{}`", ex.db_id);
            skipped += 1;
            continue;
        };
        let parts = match parse_query(&ex.sql).and_then(|q| resolve(&q, Some(schema))) {
            Ok(r) => query_parts(&r.query),
            Err(e) => {
                log::debug!("skipping `{}`: {e}", ex.sql);
                skipped += 1;
                continue;
            }
        };
        *per_db_instances.entry(ex.db_id.clone()).or_default() += 1;
        for p in parts {
            observations.push(Observation {
                db: ex.db_id.clone(),
                sketch: p.sketch,
                columns: p.columns.into_iter().collect::<Vec<_>>().join(" "),
            });
        }
    }
    let n_instances: usize = per_db_instances.values().sum();
    if n_instances == 0 {
        return Ok(DatasetStats {
            n_instances: 0,
            n_skipped: skipped,
            n_unique_sketches: 0,
            n_unique_column_sets: 0,
            h_db: 0.0,
            h_col: 0.0,
            h_sketch: 0.0,
            i_db_sketch: 0.0,
            i_col_sketch: 0.0,
            per_db: Vec::new(),
        });
    }

    let unique_sketches: BTreeSet<&str> = observations.iter().map(|o| o.sketch.as_str()).collect();
    let unique_cols: BTreeSet<(&str, &str)> = observations
        .iter()
        .map(|o| (o.db.as_str(), o.columns.as_str()))
        .collect();
    let db_counts: Vec<u64> = per_db_instances.values().map(|&c| c as u64).collect();
    let h_db = normalized_entropy(&db_counts)?;
    let i_db_sketch = normalized_mutual_information(
        tally(observations.iter().map(|o| (o.db.as_str(), o.sketch.as_str()))),
    )?;

    let mut per_db = Vec::new();
    for (db, &n) in &per_db_instances {
        let obs: Vec<&Observation> = observations.iter().filter(|o| &o.db == db).collect();
        let cols = tally(obs.iter().map(|o| o.columns.as_str()));
        let sks = tally(obs.iter().map(|o| o.sketch.as_str()));
        per_db.push(DbStats {
            db_id: db.clone(),
            n_instances: n,
            n_parts: obs.len(),
            h_col: normalized_entropy(&cols.into_iter().map(|(_, c)| c).collect::<Vec<_>>())?,
            h_sketch: normalized_entropy(&sks.into_iter().map(|(_, c)| c).collect::<Vec<_>>())?,
            i_col_sketch: normalized_mutual_information(tally(
                obs.iter().map(|o| (o.columns.as_str(), o.sketch.as_str())),
            ))?,
        });
    }
    let mean = |f: fn(&DbStats) -> f64| per_db.iter().map(f).sum::<f64>() / per_db.len() as f64;
    Ok(DatasetStats {
        n_instances,
        n_skipped: skipped,
        n_unique_sketches: unique_sketches.len(),
        n_unique_column_sets: unique_cols.len(),
        h_db,
        h_col: mean(|d| d.h_col),
        h_sketch: mean(|d| d.h_sketch),
        i_db_sketch,
        i_col_sketch: mean(|d| d.i_col_sketch),
        per_db,
    })
}

fn tally<K: Ord>(items: impl Iterator<Item = K>) -> Vec<(K, u64)> {
    let mut m: BTreeMap<K, u64> = BTreeMap::new();
    for k in items {
        *m.entry(k).or_default() += 1;
    }
    m.into_iter().collect()
}

/// Side-by-side markdown table, one column per dataset.
pub fn render_stats_table(columns: &[(&str, &DatasetStats)]) -> String {
    type Row = (&'static str, fn(&DatasetStats) -> String);
    let rows: [Row; 10] = [
        ("# instances", |s| s.n_instances.to_string()),
        ("# skipped", |s| s.n_skipped.to_string()),
        ("# unique sketch (approx.)", |s| s.n_unique_sketches.to_string()),
        ("# unique col set (approx.)", |s| s.n_unique_column_sets.to_string()),
        ("H~ DB", |s| format!("{:.3}", s.h_db)),
        ("H~ Col", |s| format!("{:.3}", s.h_col)),
        ("H~ Sketch", |s| format!("{:.3}", s.h_sketch)),
        ("I~ DB:Sketch", |s| format!("{:.3}", s.i_db_sketch)),
        ("I~ Col:Sketch", |s| format!("{:.3}", s.i_col_sketch)),
        ("# databases", |s| s.per_db.len().to_string()),
    ];
    let mut out = String::from("| statistic |");
    for (name, _) in columns {
        out.push_str(&format!(" {name} |"));
    }
    out.push_str("\n|---|");
    for _ in columns {
        out.push_str("---:|");
    }
    out.push('\n');
    for (label, f) in rows {
        out.push_str(&format!("| {label} |"));
        for (_, s) in columns {
            out.push_str(&format!(" {} |", f(s)));
        }
        out.push('\n');
    }
    out
}

/// Per-database rows as CSV, one block per dataset.
pub fn render_stats_csv(columns: &[(&str, &DatasetStats)]) -> String {
    let mut out = String::from("dataset,db_id,n_instances,n_parts,h_col,h_sketch,i_col_sketch\n");
    for (name, s) in columns {
        for d in &s.per_db {
            out.push_str(&format!(
                "{name},{},{},{},{:.6},{:.6},{:.6}\n",
                d.db_id, d.n_instances, d.n_parts, d.h_col, d.h_sketch, d.i_col_sketch
            ));
        }
    }
    out
}
