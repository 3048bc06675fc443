//! Small synthetic multi-domain corpus with database content.
//!
//! Seven two-table domains (six for training, one held out), questions and
//! SQL instantiated from fourteen template families. Column choice follows a
//! steep Zipf law over each table's declared column order, so the seed data
//! concentrates on a few columns per table.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rusqlite::{params_from_iter, Connection};

use crate::error::{Error, Result};
use crate::exec::ExecEnvironment;
use crate::schema::{humanize, AnnotatedPair, Column, ColumnType, SchemaGraph};

#[derive(Clone, Copy)]
enum Values {
    Key,
    /// Foreign key into the other table's key.
    Ref,
    Pool(&'static [&'static str]),
    Range(i64, i64),
}

struct TableSpec {
    name: &'static str,
    columns: &'static [(&'static str, ColumnType, Values)],
    rows: usize,
}

struct DomainSpec {
    db_id: &'static str,
    /// Parent first; the child's `Ref` column points at the parent's key.
    tables: [TableSpec; 2],
}

use ColumnType::{Number as N, Text as T};
use Values::{Key, Pool, Range, Ref};

const PEOPLE: &[&str] = &[
    "Alice Moreau", "Bruno Silva", "Chen Wei", "Dana Kowalski", "Emeka Obi", "Farah Haddad",
    "Goran Petrov", "Hana Sato", "Ivan Horvat", "Julia Berg", "Kofi Mensah", "Lena Fischer",
    "Marco Rossi", "Nadia Karim", "Oscar Lund", "Priya Nair",
];
const COUNTRIES: &[&str] = &["France", "Brazil", "Japan", "Canada", "Kenya"];
const CITIES: &[&str] = &["Lyon", "Porto", "Osaka", "Denver", "Nairobi", "Leeds"];

const DOMAINS: &[DomainSpec] = &[
    DomainSpec {
        db_id: "concert_hall",
        tables: [
            TableSpec {
                name: "singer",
                columns: &[
                    ("singer_id", N, Key),
                    ("name", T, Pool(PEOPLE)),
                    ("country", T, Pool(COUNTRIES)),
                    ("age", N, Range(19, 70)),
                    ("net_worth", N, Range(1, 300)),
                ],
                rows: 12,
            },
            TableSpec {
                name: "concert",
                columns: &[
                    ("concert_id", N, Key),
                    ("concert_name", T, Pool(&["Spring Gala", "Night Echo", "Blue Hour", "Harvest Live", "Winter Lights", "Open Air"])),
                    ("theme", T, Pool(&["jazz", "rock", "folk", "pop"])),
                    ("year", N, Range(2001, 2020)),
                    ("singer_id", N, Ref),
                ],
                rows: 14,
            },
        ],
    },
    DomainSpec {
        db_id: "school_district",
        tables: [
            TableSpec {
                name: "school",
                columns: &[
                    ("school_id", N, Key),
                    ("school_name", T, Pool(&["Oak Ridge", "Lakeside", "Hillcrest", "Riverside", "Maple Grove", "Westfield"])),
                    ("city", T, Pool(CITIES)),
                    ("enrollment", N, Range(200, 2400)),
                    ("founded_year", N, Range(1890, 2010)),
                ],
                rows: 10,
            },
            TableSpec {
                name: "teacher",
                columns: &[
                    ("teacher_id", N, Key),
                    ("name", T, Pool(PEOPLE)),
                    ("subject", T, Pool(&["math", "history", "biology", "music", "art"])),
                    ("salary", N, Range(30000, 90000)),
                    ("school_id", N, Ref),
                ],
                rows: 15,
            },
        ],
    },
    DomainSpec {
        db_id: "car_dealer",
        tables: [
            TableSpec {
                name: "dealer",
                columns: &[
                    ("dealer_id", N, Key),
                    ("dealer_name", T, Pool(&["Auto Prime", "Wheel House", "Drive Inn", "Motor Hub", "Fast Lane"])),
                    ("city", T, Pool(CITIES)),
                    ("rating", N, Range(1, 5)),
                ],
                rows: 10,
            },
            TableSpec {
                name: "car",
                columns: &[
                    ("car_id", N, Key),
                    ("model", T, Pool(&["Falcon", "Comet", "Vista", "Ranger", "Breeze", "Atlas", "Nova"])),
                    ("maker", T, Pool(&["Ford", "Kia", "Fiat", "Audi"])),
                    ("price", N, Range(9000, 80000)),
                    ("horsepower", N, Range(70, 450)),
                    ("dealer_id", N, Ref),
                ],
                rows: 16,
            },
        ],
    },
    DomainSpec {
        db_id: "library",
        tables: [
            TableSpec {
                name: "author",
                columns: &[
                    ("author_id", N, Key),
                    ("name", T, Pool(PEOPLE)),
                    ("nationality", T, Pool(COUNTRIES)),
                    ("birth_year", N, Range(1920, 1995)),
                ],
                rows: 11,
            },
            TableSpec {
                name: "book",
                columns: &[
                    ("book_id", N, Key),
                    ("title", T, Pool(&["Silent Rivers", "Glass Town", "Paper Moon", "Iron Bloom", "Salt Roads", "Quiet Storm", "Last Light"])),
                    ("genre", T, Pool(&["mystery", "poetry", "fantasy", "drama"])),
                    ("pages", N, Range(90, 900)),
                    ("price", N, Range(5, 60)),
                    ("author_id", N, Ref),
                ],
                rows: 16,
            },
        ],
    },
    DomainSpec {
        db_id: "airline",
        tables: [
            TableSpec {
                name: "airport",
                columns: &[
                    ("airport_id", N, Key),
                    ("airport_name", T, Pool(&["North Field", "Bay Point", "Summit", "Eastgate", "Harbor"])),
                    ("city", T, Pool(CITIES)),
                    ("elevation", N, Range(0, 2500)),
                ],
                rows: 10,
            },
            TableSpec {
                name: "flight",
                columns: &[
                    ("flight_id", N, Key),
                    ("flight_number", T, Pool(&["AX100", "AX210", "BZ330", "CQ415", "DL520", "EF640", "GH750"])),
                    ("destination", T, Pool(CITIES)),
                    ("distance", N, Range(150, 9000)),
                    ("duration", N, Range(1, 14)),
                    ("airport_id", N, Ref),
                ],
                rows: 16,
            },
        ],
    },
    DomainSpec {
        db_id: "hospital",
        tables: [
            TableSpec {
                name: "department",
                columns: &[
                    ("department_id", N, Key),
                    ("department_name", T, Pool(&["Cardiology", "Neurology", "Oncology", "Pediatrics", "Radiology"])),
                    ("floor", N, Range(1, 9)),
                    ("budget", N, Range(100, 5000)),
                ],
                rows: 10,
            },
            TableSpec {
                name: "doctor",
                columns: &[
                    ("doctor_id", N, Key),
                    ("name", T, Pool(PEOPLE)),
                    ("specialty", T, Pool(&["surgery", "imaging", "therapy", "research"])),
                    ("age", N, Range(28, 70)),
                    ("salary", N, Range(60000, 250000)),
                    ("department_id", N, Ref),
                ],
                rows: 15,
            },
        ],
    },
    DomainSpec {
        db_id: "museum_visit",
        tables: [
            TableSpec {
                name: "museum",
                columns: &[
                    ("museum_id", N, Key),
                    ("museum_name", T, Pool(&["Modern Wing", "Stone Hall", "Sea Gallery", "Old Mint", "Sky Dome"])),
                    ("city", T, Pool(CITIES)),
                    ("open_year", N, Range(1850, 2015)),
                    ("num_staff", N, Range(5, 400)),
                ],
                rows: 10,
            },
            TableSpec {
                name: "visitor",
                columns: &[
                    ("visitor_id", N, Key),
                    ("name", T, Pool(PEOPLE)),
                    ("level_of_membership", T, Pool(&["gold", "silver", "bronze"])),
                    ("age", N, Range(8, 85)),
                    ("museum_id", N, Ref),
                ],
                rows: 15,
            },
        ],
    },
];

const ZERO_SHOT: &str = "museum_visit";

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Text(String),
}

impl Cell {
    fn sql_literal(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => format!("'{}'", s.replace('\'', "''")),
        }
    }

    fn spoken(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// Rows of every table, keyed by db_id then table name.
pub type Contents = BTreeMap<String, BTreeMap<String, Vec<Vec<Cell>>>>;

#[derive(Clone, Debug)]
pub struct ToyCorpus {
    pub train_schemas: Vec<SchemaGraph>,
    pub zero_shot_schemas: Vec<SchemaGraph>,
    pub train_pairs: Vec<AnnotatedPair>,
    /// Annotated pairs of the held-out domain. Never used for training or
    /// synthesis; only for evaluation.
    pub zero_shot_pairs: Vec<AnnotatedPair>,
    pub contents: Contents,
}

impl ToyCorpus {
    pub fn all_schemas(&self) -> Vec<SchemaGraph> {
        self.train_schemas
            .iter()
            .chain(&self.zero_shot_schemas)
            .cloned()
            .collect()
    }

    /// In-memory databases for every domain.
    pub fn exec_environment(&self, timeout: std::time::Duration) -> Result<ExecEnvironment> {
        let schemas = self.all_schemas();
        let mut env = ExecEnvironment::schemas_only(&schemas, timeout);
        for s in &schemas {
            let conn = Connection::open_in_memory()?;
            fill_database(&conn, s, &self.contents[&s.db_id])?;
            env.insert_connection(s.db_id.clone(), conn);
        }
        Ok(env)
    }

    /// Writes `<dir>/<db_id>/<db_id>.sqlite` for every domain.
    pub fn write_databases(&self, dir: &Path) -> Result<()> {
        for s in self.all_schemas() {
            let db_dir = dir.join(&s.db_id);
            std::fs::create_dir_all(&db_dir).map_err(|e| Error::io(&db_dir, e))?;
            let path = db_dir.join(format!("{}.sqlite", s.db_id));
            if path.exists() {
                std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            }
            let conn = Connection::open(&path)?;
            fill_database(&conn, &s, &self.contents[&s.db_id])?;
        }
        Ok(())
    }
}

fn fill_database(conn: &Connection, schema: &SchemaGraph, rows: &BTreeMap<String, Vec<Vec<Cell>>>) -> Result<()> {
    let tx = conn.unchecked_transaction()?;
    for (t, table) in schema.tables.iter().enumerate() {
        let cols: Vec<String> = schema
            .columns_of(t)
            .map(|c| {
                let col = &schema.columns[c];
                let ty = if col.ty == ColumnType::Number { "INTEGER" } else { "TEXT" };
                format!("{} {ty}", col.name)
            })
            .collect();
        tx.execute(&format!("CREATE TABLE {table} ({})", cols.join(", ")), [])?;
        let marks = vec!["?"; cols.len()].join(", ");
        let mut stmt = tx.prepare(&format!("INSERT INTO {table} VALUES ({marks})"))?;
        for row in &rows[table] {
            let values: Vec<rusqlite::types::Value> = row
                .iter()
                .map(|c| match c {
                    Cell::Int(i) => rusqlite::types::Value::Integer(*i),
                    Cell::Text(s) => rusqlite::types::Value::Text(s.clone()),
                })
                .collect();
            stmt.execute(params_from_iter(values))?;
        }
    }
    tx.commit()?;
    Ok(())
}

fn build_schema(spec: &DomainSpec) -> Result<SchemaGraph> {
    let mut columns = Vec::new();
    let mut primary_keys = BTreeSet::new();
    let mut key_of = [0usize; 2];
    let mut refs = Vec::new();
    for (t, table) in spec.tables.iter().enumerate() {
        for &(name, ty, values) in table.columns {
            let idx = columns.len();
            match values {
                Key => {
                    primary_keys.insert(idx);
                    key_of[t] = idx;
                }
                Ref => refs.push(idx),
                _ => {}
            }
            columns.push(Column {
                table: t,
                name: name.to_string(),
                display_name: humanize(name),
                ty,
            });
        }
    }
    let foreign_keys = refs.into_iter().map(|r| (r, key_of[0])).collect();
    SchemaGraph::new(
        spec.db_id,
        spec.tables.iter().map(|t| t.name.to_string()).collect(),
        columns,
        primary_keys,
        foreign_keys,
    )
}

fn build_rows(spec: &DomainSpec, rng: &mut ChaCha8Rng) -> BTreeMap<String, Vec<Vec<Cell>>> {
    let parent_rows = spec.tables[0].rows as i64;
    let mut out = BTreeMap::new();
    for table in &spec.tables {
        let rows = (0..table.rows)
            .map(|r| {
                table
                    .columns
                    .iter()
                    .map(|&(_, _, values)| match values {
                        Key => Cell::Int(r as i64 + 1),
                        Ref => Cell::Int(rng.random_range(1..=parent_rows)),
                        Pool(p) => Cell::Text(p.choose(rng).unwrap().to_string()),
                        Range(lo, hi) => Cell::Int(rng.random_range(lo..=hi)),
                    })
                    .collect()
            })
            .collect();
        out.insert(table.name.to_string(), rows);
    }
    out
}

/// Plural of the last word of a humanized name.
pub fn plural(name: &str) -> String {
    let (head, last) = match name.rsplit_once(' ') {
        Some((h, l)) => (format!("{h} "), l),
        None => (String::new(), name),
    };
    let p = if last.ends_with('y') && !last.ends_with("ay") && !last.ends_with("ey") && !last.ends_with("oy") {
        format!("{}ies", &last[..last.len() - 1])
    } else if last.ends_with('s') || last.ends_with('x') || last.ends_with("ch") || last.ends_with("sh") {
        format!("{last}es")
    } else {
        format!("{last}s")
    };
    format!("{head}{p}")
}

struct Ctx<'a> {
    spec: &'a DomainSpec,
    rows: &'a BTreeMap<String, Vec<Vec<Cell>>>,
    zipf: f64,
}

#[derive(Clone, Copy)]
struct Col<'a> {
    table: &'a TableSpec,
    pos: usize,
}

impl<'a> Col<'a> {
    fn sql(&self) -> String {
        format!("{}.{}", self.table.name, self.table.columns[self.pos].0)
    }

    fn said(&self) -> String {
        humanize(self.table.columns[self.pos].0)
    }
}

impl<'a> Ctx<'a> {
    /// Zipf-weighted choice among the table's plain columns of the wanted type.
    fn pick(&self, rng: &mut ChaCha8Rng, t: usize, ty: Option<ColumnType>, exclude: &[usize]) -> Option<Col<'a>> {
        let table = &self.spec.tables[t];
        let eligible: Vec<usize> = table
            .columns
            .iter()
            .enumerate()
            .filter(|(i, (_, cty, v))| {
                !matches!(v, Key | Ref) && ty.is_none_or(|w| w == *cty) && !exclude.contains(i)
            })
            .map(|(i, _)| i)
            .collect();
        if eligible.is_empty() {
            return None;
        }
        let weights: Vec<f64> = (0..eligible.len())
            .map(|r| 1.0 / ((r + 1) as f64).powf(self.zipf))
            .collect();
        let total: f64 = weights.iter().sum();
        let mut x = rng.random::<f64>() * total;
        for (i, w) in weights.iter().enumerate() {
            if x < *w {
                return Some(Col { table, pos: eligible[i] });
            }
            x -= w;
        }
        Some(Col {
            table,
            pos: *eligible.last().unwrap(),
        })
    }

    fn value(&self, rng: &mut ChaCha8Rng, c: Col<'_>) -> Cell {
        let rows = &self.rows[c.table.name];
        rows.choose(rng).unwrap()[c.pos].clone()
    }

    fn key_col(&self, t: usize, which: fn(&Values) -> bool) -> Col<'a> {
        let table = &self.spec.tables[t];
        let pos = table.columns.iter().position(|c| which(&c.2)).unwrap();
        Col { table, pos }
    }
}

pub const N_FAMILIES: usize = 14;

/// One (question, sql) from template family `family`, or None when the
/// table lacks suitable columns.
fn instantiate(ctx: &Ctx<'_>, rng: &mut ChaCha8Rng, family: usize) -> Option<(String, String)> {
    let t = rng.random_range(0..2);
    let table = &ctx.spec.tables[t];
    let tn = table.name;
    let ts = plural(&humanize(tn));
    let ty = humanize(tn);
    let alt = |rng: &mut ChaCha8Rng, forms: &[String]| forms.choose(rng).unwrap().clone();
    Some(match family {
        0 => {
            let c = ctx.pick(rng, t, None, &[])?;
            let (cs, cp) = (c.said(), plural(&c.said()));
            (
                alt(rng, &[
                    format!("List the {cs} of all {ts}."),
                    format!("What are the {cp} of the {ts}?"),
                    format!("Show the {cs} of each {ty}."),
                ]),
                format!("SELECT {} FROM {tn}", c.sql()),
            )
        }
        1 => {
            let a = ctx.pick(rng, t, None, &[])?;
            let b = ctx.pick(rng, t, None, &[a.pos])?;
            (
                alt(rng, &[
                    format!("Show the {} and {} of all {ts}.", a.said(), b.said()),
                    format!("What are the {} and {} of each {ty}?", a.said(), b.said()),
                ]),
                format!("SELECT {}, {} FROM {tn}", a.sql(), b.sql()),
            )
        }
        2 => {
            let c = ctx.pick(rng, t, Some(ColumnType::Text), &[])?;
            (
                alt(rng, &[
                    format!("What are the different {} of {ts}?", plural(&c.said())),
                    format!("List the distinct {} of all {ts}.", c.said()),
                ]),
                format!("SELECT DISTINCT {} FROM {tn}", c.sql()),
            )
        }
        3 => (
            alt(rng, &[
                format!("How many {ts} are there?"),
                format!("Count the number of {ts}."),
            ]),
            format!("SELECT count(*) FROM {tn}"),
        ),
        4 => {
            let b = ctx.pick(rng, t, Some(ColumnType::Text), &[])?;
            let a = ctx.pick(rng, t, None, &[b.pos])?;
            let v = ctx.value(rng, b);
            (
                alt(rng, &[
                    format!("What is the {} of the {ty} whose {} is {}?", a.said(), b.said(), v.spoken()),
                    format!("Show the {} of {ts} with {} {}.", a.said(), b.said(), v.spoken()),
                ]),
                format!("SELECT {} FROM {tn} WHERE {} = {}", a.sql(), b.sql(), v.sql_literal()),
            )
        }
        5 => {
            let b = ctx.pick(rng, t, Some(ColumnType::Number), &[])?;
            let a = ctx.pick(rng, t, None, &[b.pos])?;
            let v = ctx.value(rng, b);
            (
                alt(rng, &[
                    format!("Show the {} of {ts} with {} greater than {}.", a.said(), b.said(), v.spoken()),
                    format!("Which {ts} have a {} above {}? List their {}.", b.said(), v.spoken(), a.said()),
                ]),
                format!("SELECT {} FROM {tn} WHERE {} > {}", a.sql(), b.sql(), v.sql_literal()),
            )
        }
        6 => {
            let c = ctx.pick(rng, t, Some(ColumnType::Number), &[])?;
            let v = ctx.value(rng, c);
            (
                alt(rng, &[
                    format!("How many {ts} have {} greater than {}?", c.said(), v.spoken()),
                    format!("Count the {ts} whose {} is above {}.", c.said(), v.spoken()),
                ]),
                format!("SELECT count(*) FROM {tn} WHERE {} > {}", c.sql(), v.sql_literal()),
            )
        }
        7 => {
            let c = ctx.pick(rng, t, Some(ColumnType::Number), &[])?;
            let cs = c.said();
            let (f, forms) = match rng.random_range(0..4) {
                0 => ("avg", vec![
                    format!("What is the average {cs} of all {ts}?"),
                    format!("Find the mean {cs} of {ts}."),
                ]),
                1 => ("max", vec![
                    format!("What is the maximum {cs} of all {ts}?"),
                    format!("Find the highest {cs} among {ts}."),
                ]),
                2 => ("min", vec![
                    format!("What is the minimum {cs} of all {ts}?"),
                    format!("Find the lowest {cs} among {ts}."),
                ]),
                _ => ("sum", vec![
                    format!("What is the total {cs} of all {ts}?"),
                    format!("Find the sum of {cs} over all {ts}."),
                ]),
            };
            (alt(rng, &forms), format!("SELECT {f}({}) FROM {tn}", c.sql()))
        }
        8 => {
            let b = ctx.pick(rng, t, Some(ColumnType::Number), &[])?;
            let a = ctx.pick(rng, t, None, &[b.pos])?;
            let desc = rng.random_bool(0.5);
            let forms = if desc {
                vec![
                    format!("List the {} of {ts} sorted by {} in descending order.", a.said(), b.said()),
                    format!("Show the {} of all {ts} ordered by {} from high to low.", a.said(), b.said()),
                ]
            } else {
                vec![
                    format!("List the {} of {ts} sorted by {} in ascending order.", a.said(), b.said()),
                    format!("Show the {} of all {ts} ordered by {} from low to high.", a.said(), b.said()),
                ]
            };
            (
                alt(rng, &forms),
                format!("SELECT {} FROM {tn} ORDER BY {} {}", a.sql(), b.sql(), if desc { "DESC" } else { "ASC" }),
            )
        }
        9 => {
            let b = ctx.pick(rng, t, Some(ColumnType::Number), &[])?;
            let a = ctx.pick(rng, t, None, &[b.pos])?;
            let desc = rng.random_bool(0.5);
            let forms = if desc {
                vec![
                    format!("What is the {} of the {ty} with the highest {}?", a.said(), b.said()),
                    format!("Which {ty} has the largest {}? Give its {}.", b.said(), a.said()),
                ]
            } else {
                vec![
                    format!("What is the {} of the {ty} with the lowest {}?", a.said(), b.said()),
                    format!("Which {ty} has the smallest {}? Give its {}.", b.said(), a.said()),
                ]
            };
            (
                alt(rng, &forms),
                format!(
                    "SELECT {} FROM {tn} ORDER BY {} {} LIMIT 1",
                    a.sql(),
                    b.sql(),
                    if desc { "DESC" } else { "ASC" }
                ),
            )
        }
        10 => {
            let c = ctx.pick(rng, t, Some(ColumnType::Text), &[])?;
            (
                alt(rng, &[
                    format!("How many {ts} are there for each {}?", c.said()),
                    format!("Show each {} and the number of {ts}.", c.said()),
                ]),
                format!("SELECT {}, count(*) FROM {tn} GROUP BY {}", c.sql(), c.sql()),
            )
        }
        11 => {
            let c = ctx.pick(rng, t, Some(ColumnType::Text), &[])?;
            let n = rng.random_range(1..=3);
            (
                alt(rng, &[
                    format!("Which {} have more than {n} {ts}?", plural(&c.said())),
                    format!("List the {} shared by more than {n} {ts}.", plural(&c.said())),
                ]),
                format!("SELECT {} FROM {tn} GROUP BY {} HAVING count(*) > {n}", c.sql(), c.sql()),
            )
        }
        12 => {
            let child = ctx.pick(rng, 1, None, &[])?;
            let parent = ctx.pick(rng, 0, None, &[])?;
            let fk = ctx.key_col(1, |v| matches!(v, Ref));
            let pk = ctx.key_col(0, |v| matches!(v, Key));
            let (cn, pn) = (ctx.spec.tables[1].name, ctx.spec.tables[0].name);
            let (ch, ph) = (humanize(cn), humanize(pn));
            (
                alt(rng, &[
                    format!("List the {} of each {ch} and the {} of its {ph}.", child.said(), parent.said()),
                    format!("Show the {ch} {} together with the {ph} {}.", child.said(), parent.said()),
                ]),
                format!(
                    "SELECT {}, {} FROM {cn} JOIN {pn} ON {} = {}",
                    child.sql(),
                    parent.sql(),
                    fk.sql(),
                    pk.sql()
                ),
            )
        }
        _ => {
            let c = ctx.pick(rng, t, Some(ColumnType::Text), &[])?;
            (
                alt(rng, &[
                    format!("Which {} is the most common among {ts}?", c.said()),
                    format!("What is the most frequent {} of {ts}?", c.said()),
                ]),
                format!("SELECT {} FROM {tn} GROUP BY {} ORDER BY count(*) DESC LIMIT 1", c.sql(), c.sql()),
            )
        }
    })
}

#[derive(Clone, Debug)]
pub struct ToyConfig {
    pub pairs_per_domain: usize,
    /// Exponent of the Zipf law over a table's columns.
    pub zipf: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            pairs_per_domain: 100,
            zipf: 2.0,
            seed: 0,
        }
    }
}

pub fn build(config: &ToyConfig) -> Result<ToyCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut corpus = ToyCorpus {
        train_schemas: Vec::new(),
        zero_shot_schemas: Vec::new(),
        train_pairs: Vec::new(),
        zero_shot_pairs: Vec::new(),
        contents: BTreeMap::new(),
    };
    for spec in DOMAINS {
        let schema = build_schema(spec)?;
        let rows = build_rows(spec, &mut rng);
        let ctx = Ctx {
            spec,
            rows: &rows,
            zipf: config.zipf,
        };
        let mut seen = HashSet::new();
        let mut pairs = Vec::new();
        let mut attempts = 0;
        while pairs.len() < config.pairs_per_domain && attempts < config.pairs_per_domain * 50 {
            attempts += 1;
            let family = rng.random_range(0..N_FAMILIES);
            if let Some((q, sql)) = instantiate(&ctx, &mut rng, family) {
                if seen.insert(q.to_lowercase()) {
                    pairs.push(AnnotatedPair::new(q, sql, spec.db_id));
                }
            }
        }
        corpus.contents.insert(spec.db_id.to_string(), rows);
        if spec.db_id == ZERO_SHOT {
            corpus.zero_shot_schemas.push(schema);
            corpus.zero_shot_pairs.extend(pairs);
        } else {
            corpus.train_schemas.push(schema);
            corpus.train_pairs.extend(pairs);
        }
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entity::extract_entity_sequence;
    use crate::exec::{check_executable, DEFAULT_TIMEOUT};

    #[test]
    fn plurals() {
        assert_eq!(plural("city"), "cities");
        assert_eq!(plural("museum"), "museums");
        assert_eq!(plural("level of membership"), "level of memberships");
        assert_eq!(plural("day"), "days");
        assert_eq!(plural("class"), "classes");
    }

    #[test]
    fn corpus_shape() {
        let c = build(&ToyConfig::default()).unwrap();
        assert_eq!(c.train_schemas.len(), 6);
        assert_eq!(c.zero_shot_schemas.len(), 1);
        assert_eq!(c.train_pairs.len(), 600);
        assert_eq!(c.zero_shot_pairs.len(), 100);
    }

    #[test]
    fn every_pair_executes_and_resolves() {
        let c = build(&ToyConfig::default()).unwrap();
        let env = c.exec_environment(DEFAULT_TIMEOUT).unwrap();
        let schemas = c.all_schemas();
        for p in c.train_pairs.iter().chain(&c.zero_shot_pairs) {
            let s = schemas.iter().find(|s| s.db_id == p.db_id).unwrap();
            assert!(env.execute(&p.db_id, &p.sql).is_ok(), "{}", p.sql);
            assert!(check_executable(&p.sql, &env, &p.db_id));
            let seq = extract_entity_sequence(&p.sql, s).unwrap();
            // only bare count(*) queries mention no column
            assert_eq!(seq.is_empty(), p.sql.starts_with("SELECT count(*) FROM") && !p.sql.contains("WHERE"));
        }
    }

    #[test]
    fn deterministic() {
        let a = build(&ToyConfig::default()).unwrap();
        let b = build(&ToyConfig::default()).unwrap();
        assert_eq!(a.train_pairs, b.train_pairs);
        assert_eq!(a.contents, b.contents);
    }

    #[test]
    fn writes_database_files() {
        let dir = tempfile::tempdir().unwrap();
        let c = build(&ToyConfig::default()).unwrap();
        c.write_databases(dir.path()).unwrap();
        let env = ExecEnvironment::open_dir(dir.path(), &c.all_schemas(), DEFAULT_TIMEOUT).unwrap();
        assert!(check_executable("SELECT count(*) FROM singer", &env, "concert_hall"));
        assert!(check_executable("SELECT name FROM visitor", &env, "museum_visit"));
    }
}
