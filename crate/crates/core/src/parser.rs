//! Parser interface, the PRED self-labeling filter and exact-match evaluation.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exec::{check_executable, ExecEnvironment};
use crate::schema::{find_schema, AnnotatedPair, SchemaGraph};
use crate::sql::{canonicalize, normalize_text};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSql {
    pub sql: String,
    pub score: f64,
}

/// A schema-conditioned text-to-SQL parser.
pub trait Parser: Send + Sync {
    /// At most `beam` candidates sorted by score, best first.
    fn parse_beam(&self, question: &str, schema: &SchemaGraph, beam: usize) -> Result<Vec<ScoredSql>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Labeled {
    pub question: String,
    pub sql: String,
    pub score: f64,
}

/// For each question keeps the best-scoring beam candidate that executes.
/// Questions without an executable candidate are dropped.
pub fn pred(
    parser: &dyn Parser,
    questions: &[String],
    schema: &SchemaGraph,
    env: &ExecEnvironment,
    beam: usize,
) -> Result<Vec<Labeled>> {
    let mut out = Vec::new();
    for q in questions {
        if let Some(l) = pred_one(parser, q, schema, env, beam)? {
            out.push(l);
        }
    }
    Ok(out)
}

pub fn pred_one(
    parser: &dyn Parser,
    question: &str,
    schema: &SchemaGraph,
    env: &ExecEnvironment,
    beam: usize,
) -> Result<Option<Labeled>> {
    let candidates = parser.parse_beam(question, schema, beam)?;
    Ok(candidates
        .into_iter()
        .find(|c| check_executable(&c.sql, env, &schema.db_id))
        .map(|c| Labeled {
            question: question.to_string(),
            sql: c.sql,
            score: c.score,
        }))
}

/// Comparison key used by exact match and by NO-PARA grouping.
pub fn canonical_key(sql: &str) -> String {
    canonicalize(sql).unwrap_or_else(|_| normalize_text(sql))
}

/// Equality after canonicalization: keywords and identifiers case-folded,
/// whitespace normalized, aliases expanded, values stripped, AND/OR and
/// equality operands sorted. Strings that do not parse are compared by
/// their normalized text.
pub fn exact_match(predicted: &str, gold: &str) -> bool {
    canonical_key(predicted) == canonical_key(gold)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Greedy exact-match accuracy over `examples`. A question with no
/// candidate counts as wrong.
pub fn evaluate(parser: &dyn Parser, examples: &[AnnotatedPair], schemas: &[SchemaGraph]) -> Result<EvalReport> {
    let mut correct = 0;
    for ex in examples {
        let schema = find_schema(schemas, &ex.db_id)?;
        let top = parser.parse_beam(&ex.question, schema, 1)?;
        if top.first().is_some_and(|c| exact_match(&c.sql, &ex.sql)) {
            correct += 1;
        }
    }
    let n = examples.len();
    Ok(EvalReport {
        n,
        correct,
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::DEFAULT_TIMEOUT;
    use crate::schema::fixtures::concert_singer;

    struct Fixed(Vec<&'static str>);

    impl Parser for Fixed {
        fn parse_beam(&self, _: &str, _: &SchemaGraph, beam: usize) -> Result<Vec<ScoredSql>> {
            Ok(self
                .0
                .iter()
                .take(beam)
                .enumerate()
                .map(|(i, s)| ScoredSql {
                    sql: s.to_string(),
                    score: -(i as f64),
                })
                .collect())
        }
    }

    fn env() -> ExecEnvironment {
        ExecEnvironment::schemas_only(&[concert_singer()], DEFAULT_TIMEOUT)
    }

    #[test]
    fn keeps_top_candidate_when_it_executes() {
        let p = Fixed(vec!["SELECT name FROM singer", "SELECT age FROM singer"]);
        let out = pred(&p, &["q".into()], &concert_singer(), &env(), 8).unwrap();
        assert_eq!(out[0].sql, "SELECT name FROM singer");
    }

    #[test]
    fn falls_through_to_second_candidate() {
        let p = Fixed(vec!["SELECT salary FROM singer", "SELECT age FROM singer"]);
        let out = pred(&p, &["q".into()], &concert_singer(), &env(), 8).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].sql, "SELECT age FROM singer");
        assert_eq!(out[0].score, -1.0);
    }

    #[test]
    fn drops_questions_without_executable_candidate() {
        let p = Fixed(vec!["SELECT salary FROM singer", "SELEC"]);
        let out = pred(&p, &["q".into(), "r".into()], &concert_singer(), &env(), 8).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn beam_limits_candidates_considered() {
        let p = Fixed(vec!["SELECT salary FROM singer", "SELECT age FROM singer"]);
        assert!(pred(&p, &["q".into()], &concert_singer(), &env(), 1).unwrap().is_empty());
    }

    #[test]
    fn exact_match_rules() {
        assert!(exact_match("SELECT a FROM t", "SELECT a FROM t"));
        assert!(exact_match("select A.x from A", "SELECT a.x FROM a"));
        assert!(!exact_match("SELECT a.x FROM a", "SELECT a.y FROM a"));
        assert!(exact_match("SELECT x FROM t WHERE y = 'p' AND z > 3", "SELECT x FROM t WHERE z > 9 AND y = 'q'"));
        assert!(exact_match("SELECT T1.x FROM t AS T1", "SELECT t.x FROM t"));
        assert!(exact_match("SELECT x FROM t ORDER BY x", "SELECT x FROM t ORDER BY x ASC"));
        assert!(!exact_match("SELECT x FROM t ORDER BY x", "SELECT x FROM t ORDER BY x DESC"));
    }

    #[test]
    fn exact_match_is_symmetric_for_unparseable_text() {
        assert!(exact_match("not  sql", "NOT sql"));
        assert!(!exact_match("not sql", "SELECT a FROM t"));
    }
}
