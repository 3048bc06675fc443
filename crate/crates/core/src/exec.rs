//! Executability checks against embedded databases.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rusqlite::{Connection, OpenFlags};

use crate::error::{Error, Result};
use crate::schema::SchemaGraph;
use crate::sql::{parse_query, resolve};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

/// Per-domain database handles plus the schemas used for the syntactic
/// fallback. Each connection is used by one execution at a time.
pub struct ExecEnvironment {
    connections: BTreeMap<String, Mutex<Connection>>,
    schemas: BTreeMap<String, SchemaGraph>,
    timeout: Duration,
}

impl ExecEnvironment {
    /// An environment with no databases: every check uses the syntactic fallback.
    pub fn schemas_only(schemas: &[SchemaGraph], timeout: Duration) -> Self {
        ExecEnvironment {
            connections: BTreeMap::new(),
            schemas: schemas
                .iter()
                .map(|s| (s.db_id.clone(), s.clone()))
                .collect(),
            timeout,
        }
    }

    /// Opens `<dir>/<db_id>/<db_id>.sqlite` read-only for every schema that has one.
    pub fn open_dir(dir: impl AsRef<Path>, schemas: &[SchemaGraph], timeout: Duration) -> Result<Self> {
        let mut env = Self::schemas_only(schemas, timeout);
        for s in schemas {
            let path = dir.as_ref().join(&s.db_id).join(format!("{}.sqlite", s.db_id));
            if path.exists() {
                let conn = Connection::open_with_flags(
                    &path,
                    OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
                )?;
                env.insert_connection(s.db_id.clone(), conn);
            }
        }
        Ok(env)
    }

    pub fn insert_connection(&mut self, db_id: impl Into<String>, conn: Connection) {
        self.connections.insert(db_id.into(), Mutex::new(conn));
    }

    pub fn has_database(&self, db_id: &str) -> bool {
        self.connections.contains_key(db_id)
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn schema(&self, db_id: &str) -> Option<&SchemaGraph> {
        self.schemas.get(db_id)
    }

    /// Runs `sql` to completion and returns the number of rows. Fails on
    /// database errors or when the statement runs past the timeout.
    pub fn execute(&self, db_id: &str, sql: &str) -> Result<usize> {
        let conn = self
            .connections
            .get(db_id)
            .ok_or_else(|| Error::UnknownDb(db_id.to_string()))?;
        let conn = conn.lock().unwrap_or_else(|p| p.into_inner());
        let deadline = Instant::now() + self.timeout;
        conn.progress_handler(1_000, Some(move || Instant::now() > deadline));
        let result = (|| {
            let mut stmt = conn.prepare(sql)?;
            let mut rows = stmt.query([])?;
            let mut n = 0;
            while rows.next()?.is_some() {
                n += 1;
            }
            Ok(n)
        })();
        conn.progress_handler(0, None::<fn() -> bool>);
        result
    }
}

/// True iff `sql` executes without error within the timeout. Domains
/// without a database fall back to parsing and resolving `sql` against the
/// schema; domains with neither are never executable.
pub fn check_executable(sql: &str, env: &ExecEnvironment, db_id: &str) -> bool {
    if env.has_database(db_id) {
        return match env.execute(db_id, sql) {
            Ok(_) => true,
            Err(e) => {
                log::trace!("not executable on {db_id}: {e}");
                false
            }
        };
    }
    match env.schema(db_id) {
        Some(schema) => parse_query(sql)
            .and_then(|q| resolve(&q, Some(schema)))
            .is_ok(),
        None => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::fixtures::{concert_singer, department_management};

    fn head_env(timeout: Duration) -> ExecEnvironment {
        let conn = Connection::open_in_memory().unwrap();
        conn.execute_batch(
            "CREATE TABLE head (head_id INTEGER, name TEXT, born_state TEXT, age REAL);
             INSERT INTO head VALUES (1, 'a', 'x', 30), (2, 'b', 'y', 40);",
        )
        .unwrap();
        let mut env = ExecEnvironment::schemas_only(&[department_management(), concert_singer()], timeout);
        env.insert_connection("department_management", conn);
        env
    }

    #[test]
    fn executable_query_passes() {
        let env = head_env(DEFAULT_TIMEOUT);
        assert!(check_executable("SELECT head.name FROM head", &env, "department_management"));
    }

    #[test]
    fn empty_result_still_counts_as_success() {
        let env = head_env(DEFAULT_TIMEOUT);
        assert!(check_executable("SELECT name FROM head WHERE age > 1000", &env, "department_management"));
    }

    #[test]
    fn bad_column_fails() {
        let env = head_env(DEFAULT_TIMEOUT);
        assert!(!check_executable("SELECT nonexistent.col FROM head", &env, "department_management"));
        assert!(!check_executable("SELEC name FROM head", &env, "department_management"));
    }

    #[test]
    fn runaway_cross_join_times_out() {
        let conn = Connection::open_in_memory().unwrap();
        conn.execute_batch(
            "CREATE TABLE t (x INTEGER);
             WITH RECURSIVE c(i) AS (SELECT 1 UNION ALL SELECT i + 1 FROM c WHERE i < 400)
             INSERT INTO t SELECT i FROM c;",
        )
        .unwrap();
        let mut env = ExecEnvironment::schemas_only(&[], Duration::from_millis(50));
        env.insert_connection("blowup", conn);
        let start = Instant::now();
        // 400^4 = 2.56e10 rows
        let ok = check_executable("SELECT count(*) FROM t AS a, t AS b, t AS c, t AS d", &env, "blowup");
        assert!(!ok);
        assert!(start.elapsed() < Duration::from_secs(5));
        // the connection is still usable afterwards
        assert!(check_executable("SELECT x FROM t LIMIT 1", &env, "blowup"));
    }

    #[test]
    fn falls_back_to_schema_validation() {
        let env = head_env(DEFAULT_TIMEOUT);
        assert!(check_executable("SELECT name FROM singer", &env, "concert_singer"));
        assert!(!check_executable("SELECT height FROM singer", &env, "concert_singer"));
        assert!(!check_executable("SELECT name FROM singer", &env, "unknown_db"));
    }
}
