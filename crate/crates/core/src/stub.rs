//! Deterministic stand-ins for the three trained components, for testing
//! the synthesis pipeline without any model.

use std::collections::BTreeMap;

use crate::entity::extract_entity_sequence;
use crate::error::Result;
use crate::parser::{Parser, ScoredSql};
use crate::schema::{AnnotatedPair, EntitySequence, SchemaGraph};
use crate::synthesis::{EntitySampler, QuestionGenerator, ScoredQuestion};

/// Cycles through fixed entity sequences per database.
pub struct CyclingSampler {
    pub sequences: BTreeMap<String, Vec<EntitySequence>>,
}

impl CyclingSampler {
    /// The entity sequences of `pairs`; pairs whose SQL yields no sequence
    /// are skipped.
    pub fn from_pairs(pairs: &[AnnotatedPair], schemas: &[SchemaGraph]) -> Self {
        let mut sequences: BTreeMap<String, Vec<EntitySequence>> = BTreeMap::new();
        for p in pairs {
            let Some(schema) = schemas.iter().find(|s| s.db_id == p.db_id) else {
                continue;
            };
            if let Ok(seq) = extract_entity_sequence(&p.sql, schema) {
                sequences.entry(p.db_id.clone()).or_default().push(seq);
            }
        }
        CyclingSampler { sequences }
    }
}

impl EntitySampler for CyclingSampler {
    fn sample(&self, schema: &SchemaGraph, n: usize, _temperature: f64, seed: u64) -> Result<Vec<EntitySequence>> {
        let Some(seqs) = self.sequences.get(&schema.db_id).filter(|s| !s.is_empty()) else {
            return Ok(Vec::new());
        };
        let start = (seed % seqs.len() as u64) as usize;
        Ok((0..n).map(|i| seqs[(start + i) % seqs.len()].clone()).collect())
    }
}

/// Returns `beam` questions derived from the input text, optionally led by
/// fixed questions (to exercise deduplication against reference data).
#[derive(Default)]
pub struct EchoGenerator {
    pub fixed: Vec<String>,
}

impl QuestionGenerator for EchoGenerator {
    fn generate(&self, input: &str, beam: usize) -> Result<Vec<ScoredQuestion>> {
        let fixed = self.fixed.iter().cloned();
        let echoes = (0..).map(|k| format!("{input} #{k}"));
        Ok(fixed
            .chain(echoes)
            .take(beam)
            .enumerate()
            .map(|(i, question)| ScoredQuestion {
                question,
                score: -(i as f64),
            })
            .collect())
    }
}

/// Answers with SQL picked from a per-database pool by a hash of the
/// question, so different questions often share a logical form.
pub struct PoolParser {
    pub pools: BTreeMap<String, Vec<String>>,
}

impl PoolParser {
    pub fn from_pairs(pairs: &[AnnotatedPair]) -> Self {
        let mut pools: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for p in pairs {
            pools.entry(p.db_id.clone()).or_default().push(p.sql.clone());
        }
        PoolParser { pools }
    }
}

fn fnv(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

impl Parser for PoolParser {
    fn parse_beam(&self, question: &str, schema: &SchemaGraph, beam: usize) -> Result<Vec<ScoredSql>> {
        let Some(pool) = self.pools.get(&schema.db_id).filter(|p| !p.is_empty()) else {
            return Ok(Vec::new());
        };
        let h = fnv(question) as usize;
        Ok((0..beam.min(pool.len()))
            .map(|i| ScoredSql {
                sql: pool[(h + i) % pool.len()].clone(),
                score: -(i as f64),
            })
            .collect())
    }
}

/// A parser whose every candidate fails to execute.
pub struct RejectingParser;

impl Parser for RejectingParser {
    fn parse_beam(&self, _question: &str, _schema: &SchemaGraph, beam: usize) -> Result<Vec<ScoredSql>> {
        Ok((0..beam)
            .map(|i| ScoredSql {
                sql: format!("SELECT missing_column_{i} FROM missing_table"),
                score: -(i as f64),
            })
            .collect())
    }
}
