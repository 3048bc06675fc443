//! Phase II of augmentation: sample entity sequences, generate questions,
//! self-label with the teacher parser, then filter with DEDUP and NO-PARA.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::entity::format_generator_input;
use crate::error::{Error, Result};
use crate::exec::ExecEnvironment;
use crate::parser::{canonical_key, pred_one, Labeled, Parser};
use crate::schema::{AnnotatedPair, EntitySequence, SchemaGraph};
use crate::seed;

/// Samples entity sequences for a schema.
pub trait EntitySampler: Send + Sync {
    fn sample(&self, schema: &SchemaGraph, n: usize, temperature: f64, seed: u64) -> Result<Vec<EntitySequence>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredQuestion {
    pub question: String,
    pub score: f64,
}

/// Maps a formatted entity string to candidate questions. Implementations
/// see only the formatted string, never the schema.
pub trait QuestionGenerator: Send + Sync {
    /// At most `beam` distinct non-empty questions, best first.
    fn generate(&self, input: &str, beam: usize) -> Result<Vec<ScoredQuestion>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    /// Entity sequences sampled per domain.
    pub s1: usize,
    /// Examples kept per entity sequence.
    pub s2: usize,
    pub generator_beam: usize,
    pub parser_beam: usize,
    pub temperature: f64,
    /// Set by the caller for each run; not part of the stored configuration.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            s1: 80,
            s2: 20,
            generator_beam: 20,
            parser_beam: 8,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.s1 == 0 || self.s2 == 0 {
            return bad("s1 and s2 must be at least 1");
        }
        if self.generator_beam < self.s2 {
            return bad("generator beam must be at least s2");
        }
        if self.parser_beam == 0 {
            return bad("parser beam must be at least 1");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesizedExample {
    pub question: String,
    #[serde(rename = "query")]
    pub sql: String,
    pub db_id: String,
    pub entity_sequence: EntitySequence,
    pub generator_score: f64,
    pub parser_score: f64,
    pub aug: bool,
}

impl SynthesizedExample {
    pub fn to_pair(&self) -> AnnotatedPair {
        AnnotatedPair {
            question: self.question.clone(),
            sql: self.sql.clone(),
            db_id: self.db_id.clone(),
        }
    }
}

/// Case-folded, whitespace-collapsed question with trailing punctuation removed.
pub fn normalize_question(q: &str) -> String {
    let collapsed = q.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed
        .trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_string()
}

/// Drops candidates whose normalized question repeats an earlier (higher
/// generator score) candidate or a reference question, and keeps at most
/// `cap` per entity sequence. Survivors keep their input order.
pub fn dedup(candidates: Vec<SynthesizedExample>, reference: &[AnnotatedPair], cap: usize) -> Vec<SynthesizedExample> {
    let mut seen: HashSet<String> = reference.iter().map(|p| normalize_question(&p.question)).collect();
    let mut per_seq: HashMap<(String, String), usize> = HashMap::new();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[b]
            .generator_score
            .total_cmp(&candidates[a].generator_score)
            .then(a.cmp(&b))
    });
    let mut keep = vec![false; candidates.len()];
    for i in order {
        let c = &candidates[i];
        let key = normalize_question(&c.question);
        if seen.contains(&key) {
            continue;
        }
        let n = per_seq
            .entry((c.db_id.clone(), c.entity_sequence.to_string()))
            .or_insert(0);
        if *n >= cap {
            continue;
        }
        *n += 1;
        seen.insert(key);
        keep[i] = true;
    }
    candidates
        .into_iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(c))
        .collect()
}

/// Keeps one question per (db_id, canonical SQL): the highest generator
/// score, ties going to the lexicographically smallest question.
pub fn no_para(candidates: Vec<SynthesizedExample>) -> Vec<SynthesizedExample> {
    let mut best: HashMap<(String, String), usize> = HashMap::new();
    for (i, c) in candidates.iter().enumerate() {
        let key = (c.db_id.clone(), canonical_key(&c.sql));
        match best.get(&key) {
            Some(&j) => {
                let other = &candidates[j];
                let better = c
                    .generator_score
                    .total_cmp(&other.generator_score)
                    .then_with(|| other.question.cmp(&c.question))
                    .is_gt();
                if better {
                    best.insert(key, i);
                }
            }
            None => {
                best.insert(key, i);
            }
        }
    }
    let winners: HashSet<usize> = best.into_values().collect();
    candidates
        .into_iter()
        .enumerate()
        .filter_map(|(i, c)| winners.contains(&i).then_some(c))
        .collect()
}

/// Example counts after each stage of one domain's run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attrition {
    pub db_id: String,
    pub sequences: usize,
    pub after_beam: usize,
    pub after_pred: usize,
    pub after_dedup: usize,
    pub after_no_para: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainOutput {
    pub examples: Vec<SynthesizedExample>,
    pub attrition: Attrition,
}

#[derive(Clone, Copy)]
pub struct Components<'a> {
    pub sampler: &'a dyn EntitySampler,
    pub generator: &'a dyn QuestionGenerator,
    pub parser: &'a dyn Parser,
}

pub fn synthesize_domain(
    schema: &SchemaGraph,
    env: &ExecEnvironment,
    models: Components<'_>,
    reference: &[AnnotatedPair],
    config: &SynthesisConfig,
) -> Result<DomainOutput> {
    config.validate()?;
    let mut attrition = Attrition {
        db_id: schema.db_id.clone(),
        ..Default::default()
    };
    let sample_seed = seed::derive(config.seed, &format!("synthesis/{}", schema.db_id));
    let sequences = models
        .sampler
        .sample(schema, config.s1, config.temperature, sample_seed)?;
    attrition.sequences = sequences.len();

    let mut labels: HashMap<String, Option<Labeled>> = HashMap::new();
    let mut labeled = Vec::new();
    for seq in sequences.iter().filter(|s| !s.is_empty()) {
        let input = format_generator_input(seq, schema)?;
        let questions = models.generator.generate(&input, config.generator_beam)?;
        attrition.after_beam += questions.len();
        for q in questions {
            let label = match labels.get(&q.question) {
                Some(l) => l.clone(),
                None => {
                    let l = pred_one(models.parser, &q.question, schema, env, config.parser_beam)?;
                    labels.insert(q.question.clone(), l.clone());
                    l
                }
            };
            if let Some(l) = label {
                labeled.push(SynthesizedExample {
                    question: q.question,
                    sql: l.sql,
                    db_id: schema.db_id.clone(),
                    entity_sequence: seq.clone(),
                    generator_score: q.score,
                    parser_score: l.score,
                    aug: true,
                });
            }
        }
    }
    attrition.after_pred = labeled.len();
    let deduped = dedup(labeled, reference, config.s2);
    attrition.after_dedup = deduped.len();
    let examples = no_para(deduped);
    attrition.after_no_para = examples.len();
    log::info!(
        "{}: {} sequences, {} generated, {} labeled, {} after dedup, {} kept",
        schema.db_id,
        attrition.sequences,
        attrition.after_beam,
        attrition.after_pred,
        attrition.after_dedup,
        attrition.after_no_para
    );
    Ok(DomainOutput { examples, attrition })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthesisMode {
    TrainDomains,
    ZeroShotDomains,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOutput {
    pub examples: Vec<SynthesizedExample>,
    pub attrition: Vec<Attrition>,
}

/// Runs every selected domain in the order given. Training domains are
/// deduplicated against all of `reference`, zero-shot domains against
/// nothing.
pub fn synthesize(
    train_domains: &[SchemaGraph],
    zero_shot_domains: &[SchemaGraph],
    mode: SynthesisMode,
    reference: &[AnnotatedPair],
    env: &ExecEnvironment,
    models: Components<'_>,
    config: &SynthesisConfig,
) -> Result<SynthesisOutput> {
    config.validate()?;
    let mut jobs: Vec<(&SchemaGraph, &[AnnotatedPair])> = Vec::new();
    if mode != SynthesisMode::ZeroShotDomains {
        for s in train_domains {
            jobs.push((s, reference));
        }
    }
    if mode != SynthesisMode::TrainDomains {
        for s in zero_shot_domains {
            jobs.push((s, &[]));
        }
    }
    let mut out = SynthesisOutput {
        examples: Vec::new(),
        attrition: Vec::new(),
    };
    for (schema, refs) in jobs {
        let d = synthesize_domain(schema, env, models, refs, config)?;
        out.examples.extend(d.examples);
        out.attrition.push(d.attrition);
    }
    Ok(out)
}
