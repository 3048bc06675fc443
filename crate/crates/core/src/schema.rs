//! Domain schemas, entities and annotated examples, plus readers/writers for
//! the Spider-compatible file formats.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Text,
    Number,
    Time,
    Boolean,
    Others,
}

impl ColumnType {
    pub const ALL: [ColumnType; 5] = [
        ColumnType::Text,
        ColumnType::Number,
        ColumnType::Time,
        ColumnType::Boolean,
        ColumnType::Others,
    ];

    /// Maps a type name onto the fixed vocabulary; unknown names become
    /// `Others` and are logged.
    pub fn from_name(name: &str) -> ColumnType {
        match name.to_ascii_lowercase().as_str() {
            "text" => ColumnType::Text,
            "number" => ColumnType::Number,
            "time" => ColumnType::Time,
            "boolean" => ColumnType::Boolean,
            "others" => ColumnType::Others,
            other => {
                log::warn!("unknown column type `{other}`, mapping to `others`");
                ColumnType::Others
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ColumnType::Text => "text",
            ColumnType::Number => "number",
            ColumnType::Time => "time",
            ColumnType::Boolean => "boolean",
            ColumnType::Others => "others",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub table: usize,
    /// Name as it appears in SQL.
    pub name: String,
    /// Human-readable name carried by the schema file.
    pub display_name: String,
    pub ty: ColumnType,
}

/// One domain's database structure.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaGraph {
    pub db_id: String,
    pub tables: Vec<String>,
    pub table_display_names: Vec<String>,
    pub columns: Vec<Column>,
    pub primary_keys: BTreeSet<usize>,
    pub foreign_keys: BTreeSet<(usize, usize)>,
}

impl SchemaGraph {
    /// Builds and validates a schema.
    pub fn new(
        db_id: impl Into<String>,
        tables: Vec<String>,
        columns: Vec<Column>,
        primary_keys: BTreeSet<usize>,
        foreign_keys: BTreeSet<(usize, usize)>,
    ) -> Result<Self> {
        let table_display_names = tables.iter().map(|t| humanize(t)).collect();
        let schema = SchemaGraph {
            db_id: db_id.into(),
            tables,
            table_display_names,
            columns,
            primary_keys,
            foreign_keys,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Error::InvalidSchema {
            db_id: self.db_id.clone(),
            message,
        };
        if self.db_id.is_empty() {
            return Err(bad("db_id is empty".into()));
        }
        if self.table_display_names.len() != self.tables.len() {
            return Err(bad("table display names do not match table count".into()));
        }
        let mut seen = HashSet::new();
        for (i, col) in self.columns.iter().enumerate() {
            if col.table >= self.tables.len() {
                return Err(bad(format!(
                    "column {i} (`{}`) references table index {} of {}",
                    col.name,
                    col.table,
                    self.tables.len()
                )));
            }
            if col.name.is_empty() {
                return Err(bad(format!("column {i} has an empty name")));
            }
            if !seen.insert((col.table, col.name.to_ascii_lowercase())) {
                return Err(bad(format!(
                    "duplicate column `{}.{}`",
                    self.tables[col.table], col.name
                )));
            }
        }
        for &pk in &self.primary_keys {
            if pk >= self.columns.len() {
                return Err(bad(format!("primary key references column index {pk}")));
            }
        }
        for &(a, b) in &self.foreign_keys {
            if a >= self.columns.len() || b >= self.columns.len() {
                return Err(bad(format!(
                    "foreign key ({a}, {b}) references a column index outside 0..{}",
                    self.columns.len()
                )));
            }
            if a == b {
                return Err(bad(format!("self-referential foreign key ({a}, {a})")));
            }
        }
        Ok(())
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.eq_ignore_ascii_case(name))
    }

    pub fn column_index(&self, table: usize, column: &str) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.table == table && c.name.eq_ignore_ascii_case(column))
    }

    pub fn entity_index(&self, entity: &Entity) -> Option<usize> {
        let t = self.table_index(&entity.table)?;
        self.column_index(t, &entity.column)
    }

    pub fn entity(&self, column: usize) -> Entity {
        let col = &self.columns[column];
        Entity::new(self.tables[col.table].clone(), col.name.clone())
    }

    pub fn entities(&self) -> Vec<Entity> {
        (0..self.columns.len()).map(|i| self.entity(i)).collect()
    }

    pub fn columns_of(&self, table: usize) -> impl Iterator<Item = usize> + '_ {
        self.columns
            .iter()
            .enumerate()
            .filter(move |(_, c)| c.table == table)
            .map(|(i, _)| i)
    }

    /// A foreign-key pair linking two tables, oriented as (column of `a`, column of `b`).
    pub fn link(&self, a: usize, b: usize) -> Option<(usize, usize)> {
        self.foreign_keys.iter().find_map(|&(x, y)| {
            let (tx, ty) = (self.columns[x].table, self.columns[y].table);
            if tx == a && ty == b {
                Some((x, y))
            } else if tx == b && ty == a {
                Some((y, x))
            } else {
                None
            }
        })
    }

    pub fn is_key(&self, column: usize) -> bool {
        self.primary_keys.contains(&column)
            || self
                .foreign_keys
                .iter()
                .any(|&(a, b)| a == column || b == column)
    }

    /// Database name with underscores turned into spaces.
    pub fn display_db_name(&self) -> String {
        humanize(&self.db_id)
    }
}

/// Replaces underscores with single spaces, collapsing runs.
pub fn humanize(name: &str) -> String {
    name.split('_')
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// A `table.column` pair.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Entity {
    pub table: String,
    pub column: String,
}

impl Entity {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        Entity {
            table: table.into(),
            column: column.into(),
        }
    }

    /// Parses `table.column`.
    pub fn parse(s: &str) -> Result<Self> {
        match s.split_once('.') {
            Some((t, c)) if !t.trim().is_empty() && !c.trim().is_empty() => {
                Ok(Entity::new(t.trim(), c.trim()))
            }
            _ => Err(Error::InvalidArgument(format!(
                "`{s}` is not a table.column entity"
            ))),
        }
    }
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

/// Ordered, duplicate-free entities of one domain, prefixed by the domain name.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntitySequence {
    pub db_name: String,
    pub entities: Vec<Entity>,
    /// Whether decoding ended with the end-of-sequence marker rather than
    /// hitting the length limit.
    pub terminated: bool,
}

impl EntitySequence {
    pub fn new(db_name: impl Into<String>, entities: Vec<Entity>, terminated: bool) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entities {
            if !seen.insert(e) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate entity `{e}` in sequence"
                )));
            }
        }
        Ok(EntitySequence {
            db_name: db_name.into(),
            entities,
            terminated,
        })
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

impl fmt::Display for EntitySequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ents: Vec<String> = self.entities.iter().map(|e| e.to_string()).collect();
        write!(f, "{}: {}", self.db_name, ents.join(", "))
    }
}

/// A (question, SQL, domain) training triple.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnnotatedPair {
    pub question: String,
    #[serde(rename = "query")]
    pub sql: String,
    pub db_id: String,
}

impl AnnotatedPair {
    pub fn new(
        question: impl Into<String>,
        sql: impl Into<String>,
        db_id: impl Into<String>,
    ) -> Self {
        AnnotatedPair {
            question: question.into(),
            sql: sql.into(),
            db_id: db_id.into(),
        }
    }
}

// ---------------------------------------------------------------------------
// Spider-compatible schema file

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum KeyRef {
    One(usize),
    Many(Vec<usize>),
}

#[derive(Debug, Serialize, Deserialize)]
struct TablesRecord {
    column_names: Vec<(i64, String)>,
    column_names_original: Vec<(i64, String)>,
    column_types: Vec<String>,
    db_id: String,
    foreign_keys: Vec<(usize, usize)>,
    primary_keys: Vec<KeyRef>,
    table_names: Vec<String>,
    table_names_original: Vec<String>,
}

impl TablesRecord {
    fn into_schema(self) -> std::result::Result<SchemaGraph, String> {
        let n = self.column_names_original.len();
        if self.column_names.len() != n || self.column_types.len() != n {
            return Err(format!(
                "column_names ({}), column_names_original ({n}) and column_types ({}) differ in length",
                self.column_names.len(),
                self.column_types.len()
            ));
        }
        if self.table_names.len() != self.table_names_original.len() {
            return Err("table_names and table_names_original differ in length".into());
        }
        // Spider reserves column 0 for `*`, owned by table -1.
        let offset = usize::from(
            self.column_names_original
                .first()
                .is_some_and(|(t, c)| *t < 0 && c == "*"),
        );
        let shift = |i: usize| -> std::result::Result<usize, String> {
            i.checked_sub(offset)
                .ok_or_else(|| format!("key references the `*` column (index {i})"))
        };
        let mut columns = Vec::with_capacity(n - offset);
        for i in offset..n {
            let (t, name) = &self.column_names_original[i];
            let table = usize::try_from(*t).map_err(|_| format!("column {i} has table index {t}"))?;
            columns.push(Column {
                table,
                name: name.clone(),
                display_name: self.column_names[i].1.clone(),
                ty: ColumnType::from_name(&self.column_types[i]),
            });
        }
        let mut primary_keys = BTreeSet::new();
        for k in self.primary_keys {
            match k {
                KeyRef::One(i) => {
                    primary_keys.insert(shift(i)?);
                }
                KeyRef::Many(is) => {
                    for i in is {
                        primary_keys.insert(shift(i)?);
                    }
                }
            }
        }
        let mut foreign_keys = BTreeSet::new();
        for (a, b) in self.foreign_keys {
            foreign_keys.insert((shift(a)?, shift(b)?));
        }
        Ok(SchemaGraph {
            db_id: self.db_id,
            tables: self.table_names_original,
            table_display_names: self.table_names,
            columns,
            primary_keys,
            foreign_keys,
        })
    }

    fn from_schema(s: &SchemaGraph) -> Self {
        let mut column_names = vec![(-1, "*".to_string())];
        let mut column_names_original = vec![(-1, "*".to_string())];
        let mut column_types = vec!["text".to_string()];
        for c in &s.columns {
            column_names.push((c.table as i64, c.display_name.clone()));
            column_names_original.push((c.table as i64, c.name.clone()));
            column_types.push(c.ty.as_str().to_string());
        }
        TablesRecord {
            column_names,
            column_names_original,
            column_types,
            db_id: s.db_id.clone(),
            foreign_keys: s.foreign_keys.iter().map(|&(a, b)| (a + 1, b + 1)).collect(),
            primary_keys: s.primary_keys.iter().map(|&i| KeyRef::One(i + 1)).collect(),
            table_names: s.table_display_names.clone(),
            table_names_original: s.tables.clone(),
        }
    }
}

fn read_json_array(path: &Path) -> Result<Vec<serde_json::Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        index: 0,
        message: format!("expected a JSON array: {e}"),
    })
}

pub fn load_schemas(path: impl AsRef<Path>) -> Result<Vec<SchemaGraph>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (index, value) in read_json_array(path)?.into_iter().enumerate() {
        let record: TablesRecord = serde_json::from_value(value).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            index,
            message: e.to_string(),
        })?;
        let db_id = record.db_id.clone();
        let schema = record.into_schema().map_err(|message| Error::InvalidSchema {
            db_id: db_id.clone(),
            message,
        })?;
        schema.validate()?;
        out.push(schema);
    }
    Ok(out)
}

pub fn schemas_to_json(schemas: &[SchemaGraph]) -> Result<String> {
    let records: Vec<TablesRecord> = schemas.iter().map(TablesRecord::from_schema).collect();
    Ok(serde_json::to_string_pretty(&records)? + "\n")
}

pub fn save_schemas(path: impl AsRef<Path>, schemas: &[SchemaGraph]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, schemas_to_json(schemas)?).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct ExampleRecord {
    question: String,
    query: String,
    db_id: String,
}

pub fn load_examples(path: impl AsRef<Path>, schemas: &[SchemaGraph]) -> Result<Vec<AnnotatedPair>> {
    let path = path.as_ref();
    let known: HashSet<&str> = schemas.iter().map(|s| s.db_id.as_str()).collect();
    let mut out = Vec::new();
    for (index, value) in read_json_array(path)?.into_iter().enumerate() {
        let rec: ExampleRecord = serde_json::from_value(value).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            index,
            message: e.to_string(),
        })?;
        if rec.question.trim().is_empty() || rec.query.trim().is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                index,
                message: "question and query must be non-empty".into(),
            });
        }
        if !known.contains(rec.db_id.as_str()) {
            return Err(Error::UnknownDb(rec.db_id));
        }
        out.push(AnnotatedPair::new(rec.question, rec.query, rec.db_id));
    }
    Ok(out)
}

pub fn examples_to_json(examples: &[AnnotatedPair]) -> Result<String> {
    Ok(serde_json::to_string_pretty(examples)? + "\n")
}

pub fn save_examples(path: impl AsRef<Path>, examples: &[AnnotatedPair]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, examples_to_json(examples)?).map_err(|e| Error::io(path, e))
}

/// Looks a schema up by db_id.
pub fn find_schema<'a>(schemas: &'a [SchemaGraph], db_id: &str) -> Result<&'a SchemaGraph> {
    schemas
        .iter()
        .find(|s| s.db_id == db_id)
        .ok_or_else(|| Error::UnknownDb(db_id.to_string()))
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    const CONCERT_JSON: &str = r#"[{
        "column_names": [[-1,"*"],[0,"singer id"],[0,"name"],[0,"age"],[1,"concert id"],[1,"singer id"]],
        "column_names_original": [[-1,"*"],[0,"Singer_ID"],[0,"Name"],[0,"Age"],[1,"concert_ID"],[1,"Singer_ID"]],
        "column_types": ["text","number","text","number","number","number"],
        "db_id": "concert_singer",
        "foreign_keys": [[5,1]],
        "primary_keys": [1,4],
        "table_names": ["singer","concert"],
        "table_names_original": ["singer","concert"]
    }]"#;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn loads_spider_record() {
        let f = write(CONCERT_JSON);
        let schemas = load_schemas(f.path()).unwrap();
        assert_eq!(schemas.len(), 1);
        let s = &schemas[0];
        assert_eq!(s.db_id, "concert_singer");
        assert_eq!(s.tables.len(), 2);
        assert_eq!(s.columns.len(), 5);
        assert_eq!(s.foreign_keys, [(4, 0)].into_iter().collect());
        assert_eq!(s.primary_keys, [0, 3].into_iter().collect());
    }

    #[test]
    fn foreign_key_out_of_range_names_the_db() {
        let f = write(&CONCERT_JSON.replace("[[5,1]]", "[[99,1]]"));
        match load_schemas(f.path()) {
            Err(Error::InvalidSchema { db_id, .. }) => assert_eq!(db_id, "concert_singer"),
            other => panic!("expected invariant violation, got {other:?}"),
        }
    }

    #[test]
    fn malformed_entry_reports_its_index() {
        let text = format!(
            "[{}, {{\"db_id\": 3}}]",
            CONCERT_JSON.trim().trim_start_matches('[').trim_end_matches(']')
        );
        let f = write(&text);
        match load_schemas(f.path()) {
            Err(Error::Parse { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn self_referential_foreign_key_is_rejected() {
        let mut s = concert_singer();
        s.foreign_keys.insert((1, 1));
        assert!(matches!(s.validate(), Err(Error::InvalidSchema { .. })));
    }

    #[test]
    fn duplicate_columns_are_rejected() {
        let err = SchemaGraph::new(
            "d",
            vec!["t".into()],
            vec![column(0, "x", ColumnType::Text), column(0, "X", ColumnType::Text)],
            BTreeSet::new(),
            BTreeSet::new(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn unknown_column_type_maps_to_others() {
        assert_eq!(ColumnType::from_name("blob"), ColumnType::Others);
        assert_eq!(ColumnType::from_name("Number"), ColumnType::Number);
    }

    #[test]
    fn schema_file_round_trips() {
        let f = write(CONCERT_JSON);
        let schemas = load_schemas(f.path()).unwrap();
        let text = schemas_to_json(&schemas).unwrap();
        let g = write(&text);
        let again = load_schemas(g.path()).unwrap();
        assert_eq!(schemas, again);
        assert_eq!(schemas_to_json(&again).unwrap(), text);
    }

    #[test]
    fn examples_load_and_reject_unknown_db() {
        let schemas = vec![concert_singer()];
        let f = write(
            r#"[{"question": "How many singers?", "query": "SELECT count(*) FROM singer", "db_id": "concert_singer", "query_toks": []}]"#,
        );
        let ex = load_examples(f.path(), &schemas).unwrap();
        assert_eq!(ex, vec![AnnotatedPair::new("How many singers?", "SELECT count(*) FROM singer", "concert_singer")]);

        let g = write(r#"[{"question": "q", "query": "SELECT 1", "db_id": "nope"}]"#);
        assert!(matches!(load_examples(g.path(), &schemas), Err(Error::UnknownDb(_))));
    }

    #[test]
    fn empty_examples_file_is_empty_list() {
        let f = write("");
        assert!(load_examples(f.path(), &[]).unwrap().is_empty());
        let g = write("[]");
        assert!(load_examples(g.path(), &[]).unwrap().is_empty());
    }

    #[test]
    fn sequence_rejects_duplicates() {
        let e = Entity::new("t", "x");
        assert!(EntitySequence::new("d", vec![e.clone(), e], true).is_err());
    }

    #[test]
    fn humanize_collapses_underscores() {
        assert_eq!(humanize("born_state"), "born state");
        assert_eq!(humanize("a__b_"), "a b");
    }
}
