//! Reference text-to-SQL parser: a BiLSTM question encoder, a schema
//! encoder over column and table names with question-match features, and an
//! LSTM decoder that emits grammar actions. Keywords come from a fixed
//! output layer; columns and tables are chosen by pointing at their
//! encodings. Decoding is masked by the grammar, so every candidate is a
//! well-formed query over the given schema.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use candle_core::{DType, Tensor, D};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sqlaug_core::parser::{Parser, ScoredSql};
use sqlaug_core::schema::{find_schema, AnnotatedPair, ColumnType, SchemaGraph};
use sqlaug_core::{Error, Result};

use crate::grammar::{replay, Action, Cursor, Kw, Program};
use crate::nn::{
    additive_mask, attend, cpu, weighted_mean, BiLstm, CResult, Init, Linear, LstmCell, LstmState, OptimConfig,
    Params, SavedTensor, Trainer, NEG_INF,
};
use crate::text::{name_tokens, tokenize, HashEmbedding};
use crate::{read_json, write_json, TrainLog};

const STAGE: &str = "parser";
const N_KW: usize = Kw::ALL.len();
const START: usize = N_KW;
const COL_STATIC: usize = 8;

fn nn_err(e: candle_core::Error) -> Error {
    Error::component(STAGE, e)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParserConfig {
    pub dim: usize,
    pub hidden: usize,
    pub buckets: usize,
    pub max_actions: usize,
    pub beam: usize,
}

impl Default for ParserConfig {
    fn default() -> Self {
        ParserConfig {
            dim: 64,
            hidden: 64,
            buckets: 4096,
            max_actions: 40,
            beam: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParserTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip: f64,
    /// Set by the caller for each run; not part of the stored configuration.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for ParserTrainConfig {
    fn default() -> Self {
        ParserTrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 30,
            clip: 1.0,
            seed: 0,
        }
    }
}

impl ParserTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.epochs == 0 || !(self.clip > 0.0) {
            return Err(Error::InvalidArgument(
                "learning rate, batch size, epochs and clip must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Training curve plus how many examples the grammar could represent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParserTrainLog {
    pub log: TrainLog,
    pub used: usize,
    pub skipped: usize,
}

pub struct ParserModel {
    pub config: ParserConfig,
    params: Params,
    emb: HashEmbedding,
    q_enc: BiLstm,
    init: Linear,
    col_proj: Linear,
    tab_proj: Linear,
    kw_table: Tensor,
    act_col: Linear,
    act_tab: Linear,
    decoder: LstmCell,
    att: Linear,
    out: Linear,
    kw_out: Linear,
    col_ptr: Linear,
    tab_ptr: Linear,
    trained: bool,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    kind: String,
    config: ParserConfig,
    params: BTreeMap<String, SavedTensor>,
}

/// Question and schema text features for one example.
struct Input<'a> {
    schema: &'a SchemaGraph,
    tokens: Vec<String>,
    flags: Vec<[f32; 2]>,
    col_static: Vec<[f32; COL_STATIC]>,
    col_hits: Vec<Vec<usize>>,
    tab_static: Vec<f32>,
    tab_hits: Vec<Vec<usize>>,
}

fn matchable(t: &str) -> bool {
    !t.starts_with("@@") && t.chars().any(|c| c.is_alphanumeric())
}

impl<'a> Input<'a> {
    fn new(question: &str, schema: &'a SchemaGraph) -> Self {
        let mut tokens = tokenize(&question.to_lowercase());
        if tokens.is_empty() {
            tokens.push("?".into());
        }
        let words = |name: &str| -> BTreeSet<String> { name_tokens(name).into_iter().filter(|t| matchable(t)).collect() };
        let hits = |names: &BTreeSet<String>| -> (f32, Vec<usize>) {
            let pos: Vec<usize> = (0..tokens.len()).filter(|&i| names.contains(&tokens[i])).collect();
            let found = names.iter().filter(|w| tokens.contains(w)).count();
            let frac = if names.is_empty() { 0.0 } else { found as f32 / names.len() as f32 };
            (frac, pos)
        };
        let mut col_words = BTreeSet::new();
        let mut tab_words = BTreeSet::new();
        let mut col_static = Vec::new();
        let mut col_hits = Vec::new();
        for (i, c) in schema.columns.iter().enumerate() {
            let w = words(&c.name);
            let (frac, pos) = hits(&w);
            let mut f = [0f32; COL_STATIC];
            f[c.ty.index()] = 1.0;
            f[ColumnType::ALL.len()] = schema.primary_keys.contains(&i) as u8 as f32;
            f[ColumnType::ALL.len() + 1] = schema.foreign_keys.iter().any(|&(a, b)| a == i || b == i) as u8 as f32;
            f[ColumnType::ALL.len() + 2] = frac;
            col_static.push(f);
            col_hits.push(pos);
            col_words.extend(w);
        }
        let mut tab_static = Vec::new();
        let mut tab_hits = Vec::new();
        for t in &schema.tables {
            let w = words(t);
            let (frac, pos) = hits(&w);
            tab_static.push(frac);
            tab_hits.push(pos);
            tab_words.extend(w);
        }
        let flags = tokens
            .iter()
            .map(|t| [col_words.contains(t) as u8 as f32, tab_words.contains(t) as u8 as f32])
            .collect();
        Input {
            schema,
            tokens,
            flags,
            col_static,
            col_hits,
            tab_static,
            tab_hits,
        }
    }
}

/// A training example: input features, gold actions and the grammar's
/// allowed set before each action, in schema-local layout
/// (`keywords | columns | tables`).
struct Prepared<'a> {
    input: Input<'a>,
    targets: Vec<usize>,
    allowed: Vec<Vec<usize>>,
}

fn local_index(a: Action, schema: &SchemaGraph) -> usize {
    match a {
        Action::Kw(k) => k.index(),
        Action::Col(c) => N_KW + c,
        Action::Table(t) => N_KW + schema.columns.len() + t,
    }
}

fn allowed_local(cur: &Cursor, schema: &SchemaGraph) -> Vec<usize> {
    let a = cur.allowed(schema);
    let mut out: Vec<usize> = a.keywords.iter().map(|k| k.index()).collect();
    if a.columns {
        out.extend((0..schema.columns.len()).filter(|&c| cur.column_in_scope(schema, c)).map(|c| N_KW + c));
    }
    out.extend(a.tables.iter().map(|t| N_KW + schema.columns.len() + t));
    out
}

fn prepare<'a>(question: &str, sql: &str, schema: &'a SchemaGraph) -> Result<Prepared<'a>> {
    let actions = Program::from_sql(sql, schema)?.actions();
    let mut cur = Cursor::new();
    let mut allowed = Vec::with_capacity(actions.len());
    for &a in &actions {
        if !cur.permits(schema, a) {
            return Err(Error::InvalidArgument(format!("action {a} is not permitted by the grammar")));
        }
        allowed.push(allowed_local(&cur, schema));
        cur.apply(a);
    }
    Ok(Prepared {
        input: Input::new(question, schema),
        targets: actions.iter().map(|&a| local_index(a, schema)).collect(),
        allowed,
    })
}

/// Encoded batch: question states, schema encodings and the action
/// embedding table, all padded to the batch maximum.
struct Encoded {
    q: Tensor,
    q_mask: Tensor,
    cols: Tensor,
    tabs: Tensor,
    /// `[B, E, d]` with `E = N_KW + 1 + C + T`
    act_table: Tensor,
    init: LstmState,
    c_max: usize,
    t_max: usize,
}

impl Encoded {
    fn actions(&self) -> usize {
        N_KW + self.c_max + self.t_max
    }

    /// Position of a schema-local action index in the padded batch layout.
    fn batch_index(&self, local: usize, schema: &SchemaGraph) -> usize {
        let c = schema.columns.len();
        if local < N_KW + c {
            local
        } else {
            N_KW + self.c_max + (local - N_KW - c)
        }
    }

    /// Row of the action embedding table for a padded action index.
    fn embedding_row(&self, batch_index: usize) -> usize {
        if batch_index < N_KW {
            batch_index
        } else {
            batch_index + 1
        }
    }

    fn repeat(&self, k: usize) -> CResult<Encoded> {
        Ok(Encoded {
            q: self.q.repeat((k, 1, 1))?,
            q_mask: self.q_mask.repeat((k, 1))?,
            cols: self.cols.repeat((k, 1, 1))?,
            tabs: self.tabs.repeat((k, 1, 1))?,
            act_table: self.act_table.clone(),
            init: self.init.clone(),
            c_max: self.c_max,
            t_max: self.t_max,
        })
    }
}

fn pooling(hits: &[Vec<usize>], rows: usize, s: usize) -> Vec<f32> {
    let mut out = vec![0f32; rows * s];
    for (r, pos) in hits.iter().enumerate() {
        for &p in pos {
            out[r * s + p] = 1.0 / pos.len() as f32;
        }
    }
    out
}

impl ParserModel {
    pub fn new(config: ParserConfig, seed: u64) -> Result<Self> {
        Self::build(config, seed).map_err(nn_err)
    }

    fn build(config: ParserConfig, seed: u64) -> CResult<Self> {
        let mut p = Params::new(seed);
        let (d, h) = (config.dim, config.hidden);
        let h2 = 2 * h;
        Ok(ParserModel {
            emb: HashEmbedding::new(&mut p, "emb", config.buckets, d)?,
            q_enc: BiLstm::new(&mut p, "q_enc", d + 2, h)?,
            init: Linear::new(&mut p, "init", h2, h2, true)?,
            col_proj: Linear::new(&mut p, "col_proj", 2 * d + COL_STATIC + h2, h2, true)?,
            tab_proj: Linear::new(&mut p, "tab_proj", d + 1 + h2, h2, true)?,
            kw_table: p.tensor("kw_table", &[N_KW + 1, d], Init::Uniform(0.1))?,
            act_col: Linear::new(&mut p, "act_col", h2, d, true)?,
            act_tab: Linear::new(&mut p, "act_tab", h2, d, true)?,
            decoder: LstmCell::new(&mut p, "dec", d + h2, h2)?,
            att: Linear::new(&mut p, "att", h2, h2, false)?,
            out: Linear::new(&mut p, "out", 2 * h2, h2, true)?,
            kw_out: Linear::new(&mut p, "kw_out", h2, N_KW, true)?,
            col_ptr: Linear::new(&mut p, "col_ptr", h2, h2, false)?,
            tab_ptr: Linear::new(&mut p, "tab_ptr", h2, h2, false)?,
            params: p,
            config,
            trained: false,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_parameters()
    }

    /// Parameter values by name, for comparing training runs.
    pub fn parameters(&self) -> Result<BTreeMap<String, Vec<f32>>> {
        Ok(self
            .params
            .save()
            .map_err(nn_err)?
            .into_iter()
            .map(|(k, v)| (k, v.data))
            .collect())
    }

    fn encode(&self, inputs: &[&Input<'_>]) -> CResult<Encoded> {
        let b = inputs.len();
        let d = self.config.dim;
        let s = inputs.iter().map(|i| i.tokens.len()).max().unwrap();
        let c_max = inputs.iter().map(|i| i.schema.columns.len()).max().unwrap();
        let t_max = inputs.iter().map(|i| i.schema.tables.len()).max().unwrap();

        let mut flat: Vec<&str> = Vec::with_capacity(b * s);
        let mut flags = vec![0f32; b * s * 2];
        let mut valid = vec![0f32; b * s];
        for (i, inp) in inputs.iter().enumerate() {
            for j in 0..s {
                match inp.tokens.get(j) {
                    Some(t) => {
                        flat.push(t);
                        valid[i * s + j] = 1.0;
                        flags[(i * s + j) * 2..(i * s + j) * 2 + 2].copy_from_slice(&inp.flags[j]);
                    }
                    None => flat.push("?"),
                }
            }
        }
        let x = self.emb.embed(&flat)?.reshape((b, s, d))?;
        let x = Tensor::cat(&[&x, &Tensor::from_vec(flags, (b, s, 2), &cpu())?], 2)?;
        let keep = Tensor::from_vec(valid.clone(), (b, s), &cpu())?;
        let (q, sf, sb) = self.q_enc.forward(&x, &keep)?;
        let q_mask = additive_mask(&valid, &[b, s])?;

        let mut col_names = Vec::with_capacity(b * c_max);
        let mut col_tables = Vec::with_capacity(b * c_max);
        let mut col_static = vec![0f32; b * c_max * COL_STATIC];
        let mut col_pool = Vec::with_capacity(b * c_max * s);
        let mut tab_names = Vec::with_capacity(b * t_max);
        let mut tab_static = vec![0f32; b * t_max];
        let mut tab_pool = Vec::with_capacity(b * t_max * s);
        for (i, inp) in inputs.iter().enumerate() {
            let sc = inp.schema;
            for c in 0..c_max {
                match sc.columns.get(c) {
                    Some(col) => {
                        col_names.push(name_tokens(&col.name));
                        col_tables.push(name_tokens(&sc.tables[col.table]));
                        let o = (i * c_max + c) * COL_STATIC;
                        col_static[o..o + COL_STATIC].copy_from_slice(&inp.col_static[c]);
                    }
                    None => {
                        col_names.push(Vec::new());
                        col_tables.push(Vec::new());
                    }
                }
            }
            col_pool.extend(pooling(&inp.col_hits, c_max, s));
            for t in 0..t_max {
                match sc.tables.get(t) {
                    Some(name) => {
                        tab_names.push(name_tokens(name));
                        tab_static[i * t_max + t] = inp.tab_static[t];
                    }
                    None => tab_names.push(Vec::new()),
                }
            }
            tab_pool.extend(pooling(&inp.tab_hits, t_max, s));
        }
        let col_matched = Tensor::from_vec(col_pool, (b, c_max, s), &cpu())?.matmul(&q)?;
        let cols = Tensor::cat(
            &[
                &self.emb.embed_groups(&col_names)?.reshape((b, c_max, d))?,
                &self.emb.embed_groups(&col_tables)?.reshape((b, c_max, d))?,
                &Tensor::from_vec(col_static, (b, c_max, COL_STATIC), &cpu())?,
                &col_matched,
            ],
            2,
        )?;
        let cols = self.col_proj.forward(&cols)?.tanh()?;
        let tab_matched = Tensor::from_vec(tab_pool, (b, t_max, s), &cpu())?.matmul(&q)?;
        let tabs = Tensor::cat(
            &[
                &self.emb.embed_groups(&tab_names)?.reshape((b, t_max, d))?,
                &Tensor::from_vec(tab_static, (b, t_max, 1), &cpu())?,
                &tab_matched,
            ],
            2,
        )?;
        let tabs = self.tab_proj.forward(&tabs)?.tanh()?;
        let act_table = Tensor::cat(
            &[
                &self.kw_table.unsqueeze(0)?.broadcast_as((b, N_KW + 1, d))?.contiguous()?,
                &self.act_col.forward(&cols)?,
                &self.act_tab.forward(&tabs)?,
            ],
            1,
        )?;
        let init = self.init.forward(&Tensor::cat(&[&sf.h, &sb.h], 1)?)?.tanh()?;
        Ok(Encoded {
            q,
            q_mask,
            cols,
            tabs,
            act_table,
            init: LstmState {
                c: init.zeros_like()?,
                h: init,
            },
            c_max,
            t_max,
        })
    }

    /// Log-probabilities `[B, A]` of the next action.
    fn step(
        &self,
        enc: &Encoded,
        x: &Tensor,
        ctx: &Tensor,
        state: &LstmState,
        mask: &Tensor,
    ) -> CResult<(LstmState, Tensor, Tensor)> {
        let state = self.decoder.step(&Tensor::cat(&[x, ctx], 1)?, state)?;
        let (_, ctx) = attend(&enc.q, &self.att.forward(&state.h)?, &enc.q_mask, &enc.q)?;
        let o = self.out.forward(&Tensor::cat(&[&state.h, &ctx], 1)?)?.tanh()?;
        let kw = self.kw_out.forward(&o)?;
        let col = enc.cols.matmul(&self.col_ptr.forward(&o)?.unsqueeze(2)?)?.squeeze(2)?;
        let tab = enc.tabs.matmul(&self.tab_ptr.forward(&o)?.unsqueeze(2)?)?.squeeze(2)?;
        let logits = Tensor::cat(&[&kw, &col, &tab], 1)?.add(mask)?;
        let logp = candle_nn::ops::log_softmax(&logits, D::Minus1)?;
        Ok((state, ctx, logp))
    }

    /// Per-example negative log-likelihood `[B]` under teacher forcing.
    fn batch_nll(&self, batch: &[&Prepared<'_>]) -> CResult<Tensor> {
        let b = batch.len();
        let inputs: Vec<&Input<'_>> = batch.iter().map(|p| &p.input).collect();
        let enc = self.encode(&inputs)?;
        let a = enc.actions();
        let e = N_KW + 1 + enc.c_max + enc.t_max;
        let steps = batch.iter().map(|p| p.targets.len()).max().unwrap();
        let mut rows = Vec::with_capacity(b * steps);
        for (i, p) in batch.iter().enumerate() {
            for t in 0..steps {
                let row = match t {
                    0 => START,
                    _ => match p.targets.get(t - 1) {
                        Some(&l) => enc.embedding_row(enc.batch_index(l, p.input.schema)),
                        None => START,
                    },
                };
                rows.push((i * e + row) as u32);
            }
        }
        let d = self.config.dim;
        let inputs = enc
            .act_table
            .reshape((b * e, d))?
            .index_select(&Tensor::from_vec(rows, b * steps, &cpu())?, 0)?
            .reshape((b, steps, d))?;
        let mut state = enc.init.clone();
        let mut ctx = Tensor::zeros((b, enc.q.dim(2)?), DType::F32, &cpu())?;
        let mut total: Option<Tensor> = None;
        for t in 0..steps {
            let mut mask = vec![0f32; b * a];
            let mut target = vec![0u32; b];
            let mut valid = vec![0f32; b];
            for (i, p) in batch.iter().enumerate() {
                if t < p.targets.len() {
                    let row = &mut mask[i * a..(i + 1) * a];
                    row.fill(NEG_INF);
                    for &l in &p.allowed[t] {
                        row[enc.batch_index(l, p.input.schema)] = 0.0;
                    }
                    target[i] = enc.batch_index(p.targets[t], p.input.schema) as u32;
                    valid[i] = 1.0;
                }
            }
            let mask = Tensor::from_vec(mask, (b, a), &cpu())?;
            let x = inputs.narrow(1, t, 1)?.squeeze(1)?;
            let (ns, nctx, logp) = self.step(&enc, &x, &ctx, &state, &mask)?;
            state = ns;
            ctx = nctx;
            let picked = logp
                .gather(&Tensor::from_vec(target, (b, 1), &cpu())?, 1)?
                .squeeze(1)?
                .neg()?
                .mul(&Tensor::from_vec(valid, b, &cpu())?)?;
            total = Some(match total {
                Some(acc) => acc.add(&picked)?,
                None => picked,
            });
        }
        Ok(total.unwrap())
    }

    /// Negative log-likelihood of each example's gold SQL, computed one
    /// example at a time.
    pub fn example_losses(&self, examples: &[AnnotatedPair], schemas: &[SchemaGraph]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(examples.len());
        for ex in examples {
            let p = prepare(&ex.question, &ex.sql, find_schema(schemas, &ex.db_id)?)?;
            let nll = self.batch_nll(&[&p]).and_then(|t| t.to_vec1::<f32>()).map_err(nn_err)?;
            out.push(nll[0] as f64);
        }
        Ok(out)
    }

    /// The training objective on one batch: `Σ wᵢ·NLLᵢ / Σ wᵢ`.
    pub fn batch_loss(&self, batch: &[(AnnotatedPair, f64)], schemas: &[SchemaGraph]) -> Result<f64> {
        let mut prepared = Vec::new();
        let mut weights = Vec::new();
        for (ex, w) in batch {
            prepared.push(prepare(&ex.question, &ex.sql, find_schema(schemas, &ex.db_id)?)?);
            weights.push(*w as f32);
        }
        let refs: Vec<&Prepared<'_>> = prepared.iter().collect();
        let loss = self
            .batch_nll(&refs)
            .and_then(|nll| weighted_mean(&nll, &weights))
            .and_then(|l| l.to_scalar::<f32>())
            .map_err(nn_err)?;
        Ok(loss as f64)
    }

    pub fn parse_beam(&self, question: &str, schema: &SchemaGraph, beam: usize) -> Result<Vec<ScoredSql>> {
        if !self.trained {
            return Err(Error::component(STAGE, "model is not trained"));
        }
        if beam == 0 {
            return Err(Error::InvalidArgument("beam size must be at least 1".into()));
        }
        if schema.tables.is_empty() || schema.columns.is_empty() {
            return Ok(Vec::new());
        }
        self.beam_search(question, schema, beam).map_err(nn_err)
    }

    fn beam_search(&self, question: &str, schema: &SchemaGraph, beam: usize) -> CResult<Vec<ScoredSql>> {
        struct Hyp {
            cursor: Cursor,
            last: Option<usize>,
            logp: f64,
        }
        let input = Input::new(question, schema);
        let enc1 = self.encode(&[&input])?;
        let a = enc1.actions();
        let table = enc1.act_table.squeeze(0)?;
        let mut live = vec![Hyp {
            cursor: Cursor::new(),
            last: None,
            logp: 0.0,
        }];
        let mut state = enc1.init.clone();
        let mut ctx = Tensor::zeros((1, enc1.q.dim(2)?), DType::F32, &cpu())?;
        let mut finished: Vec<(f64, Program)> = Vec::new();
        let c = schema.columns.len();
        let decode = |i: usize| -> Action {
            if i < N_KW {
                Action::Kw(Kw::ALL[i])
            } else if i < N_KW + c {
                Action::Col(i - N_KW)
            } else {
                Action::Table(i - N_KW - c)
            }
        };
        for _ in 0..self.config.max_actions {
            let k = live.len();
            let enc = enc1.repeat(k)?;
            let rows: Vec<u32> = live
                .iter()
                .map(|h| h.last.map(|l| enc.embedding_row(l)).unwrap_or(START) as u32)
                .collect();
            let x = table.index_select(&Tensor::from_vec(rows, k, &cpu())?, 0)?;
            let mut mask = vec![NEG_INF; k * a];
            for (i, h) in live.iter().enumerate() {
                for l in allowed_local(&h.cursor, schema) {
                    mask[i * a + l] = 0.0;
                }
            }
            let mask_t = Tensor::from_vec(mask.clone(), (k, a), &cpu())?;
            let (ns, nctx, logp) = self.step(&enc, &x, &ctx, &state, &mask_t)?;
            let logp = logp.to_vec2::<f32>()?;
            let mut cands: Vec<(f64, usize, usize)> = Vec::new();
            for (i, h) in live.iter().enumerate() {
                let mut opts: Vec<(f64, usize)> = (0..a)
                    .filter(|&j| mask[i * a + j] == 0.0)
                    .map(|j| (h.logp + logp[i][j] as f64, j))
                    .collect();
                opts.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
                cands.extend(opts.into_iter().take(beam).map(|(s, j)| (s, i, j)));
            }
            cands.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
            let mut next = Vec::new();
            let mut parents = Vec::new();
            for (score, parent, j) in cands {
                if next.len() >= beam || finished.len() >= beam {
                    break;
                }
                let mut cursor = live[parent].cursor.clone();
                cursor.apply(decode(j));
                if cursor.is_done() {
                    finished.push((score, cursor.program));
                } else {
                    next.push(Hyp {
                        cursor,
                        last: Some(j),
                        logp: score,
                    });
                    parents.push(parent as u32);
                }
            }
            if finished.len() >= beam || next.is_empty() {
                break;
            }
            let idx = Tensor::from_vec(parents.clone(), parents.len(), &cpu())?;
            state = LstmState {
                h: ns.h.index_select(&idx, 0)?,
                c: ns.c.index_select(&idx, 0)?,
            };
            ctx = nctx.index_select(&idx, 0)?;
            live = next;
        }
        finished.sort_by(|x, y| y.0.total_cmp(&x.0));
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for (score, program) in finished {
            let sql = program.render(schema);
            if seen.insert(sql.clone()) {
                out.push(ScoredSql { sql, score });
            }
        }
        out.truncate(beam);
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let ck = Checkpoint {
            kind: "parser".into(),
            config: self.config.clone(),
            params: self.params.save().map_err(nn_err)?,
        };
        write_json(path.as_ref(), &ck)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Checkpoint = read_json(path.as_ref())?;
        if ck.kind != "parser" {
            return Err(Error::component(STAGE, format!("checkpoint kind is {}", ck.kind)));
        }
        let m = Self::new(ck.config, 0)?;
        m.params.load(&ck.params).map_err(nn_err)?;
        Ok(ParserModel { trained: true, ..m })
    }
}

impl Parser for ParserModel {
    fn parse_beam(&self, question: &str, schema: &SchemaGraph, beam: usize) -> Result<Vec<ScoredSql>> {
        ParserModel::parse_beam(self, question, schema, beam)
    }
}

/// Trains a fresh parser on unweighted examples.
pub fn train_parser(
    examples: &[AnnotatedPair],
    schemas: &[SchemaGraph],
    model_config: ParserConfig,
    config: &ParserTrainConfig,
) -> Result<(ParserModel, ParserTrainLog)> {
    let weighted: Vec<(AnnotatedPair, f64)> = examples.iter().map(|e| (e.clone(), 1.0)).collect();
    let model = ParserModel::new(model_config, config.seed)?;
    train_weighted(model, &weighted, schemas, config)
}

/// Continues training `model` on weighted examples. Each batch minimizes
/// `Σ wᵢ·NLLᵢ / Σ wᵢ`; examples of weight zero are dropped up front and
/// examples outside the grammar are skipped and counted.
pub fn train_weighted(
    mut model: ParserModel,
    examples: &[(AnnotatedPair, f64)],
    schemas: &[SchemaGraph],
    config: &ParserTrainConfig,
) -> Result<(ParserModel, ParserTrainLog)> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::component(STAGE, "empty training set"));
    }
    let mut prepared = Vec::new();
    let mut weights = Vec::new();
    let mut skipped = 0;
    for (ex, w) in examples {
        if !(*w >= 0.0) || !w.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid example weight {w}")));
        }
        let schema = find_schema(schemas, &ex.db_id)?;
        if *w == 0.0 {
            continue;
        }
        match prepare(&ex.question, &ex.sql, schema) {
            Ok(p) => {
                prepared.push(p);
                weights.push(*w as f32);
            }
            Err(e) => {
                log::debug!("skipping `{}`: {e}", ex.sql);
                skipped += 1;
            }
        }
    }
    if prepared.is_empty() {
        return Err(Error::component(STAGE, "no training example fits the parser grammar"));
    }
    let log = fit(&model, &prepared, &weights, config).map_err(nn_err)?;
    model.trained = true;
    Ok((
        model,
        ParserTrainLog {
            log,
            used: prepared.len(),
            skipped,
        },
    ))
}

fn fit(model: &ParserModel, data: &[Prepared<'_>], weights: &[f32], config: &ParserTrainConfig) -> CResult<TrainLog> {
    let mut trainer = Trainer::new(
        &model.params,
        &OptimConfig {
            learning_rate: config.learning_rate,
            clip: config.clip,
        },
    )?;
    let total_w: f64 = weights.iter().map(|&w| w as f64).sum();
    let dataset_loss = |m: &ParserModel| -> CResult<f64> {
        let mut sum = 0f64;
        let idx: Vec<usize> = (0..data.len()).collect();
        for chunk in idx.chunks(config.batch_size) {
            let batch: Vec<&Prepared<'_>> = chunk.iter().map(|&i| &data[i]).collect();
            let nll = m.batch_nll(&batch)?.to_vec1::<f32>()?;
            sum += chunk.iter().zip(nll).map(|(&i, l)| weights[i] as f64 * l as f64).sum::<f64>();
        }
        Ok(sum / total_w)
    };
    let mut log = TrainLog {
        initial_loss: dataset_loss(model)?,
        epoch_loss: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7a7a);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0f64;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Prepared<'_>> = chunk.iter().map(|&i| &data[i]).collect();
            let w: Vec<f32> = chunk.iter().map(|&i| weights[i]).collect();
            let nll = model.batch_nll(&batch)?;
            let loss = weighted_mean(&nll, &w)?;
            sum += loss.to_scalar::<f32>()? as f64 * w.iter().map(|&x| x as f64).sum::<f64>();
            trainer.step(&loss)?;
        }
        let mean = sum / total_w;
        log::debug!("parser epoch {epoch}: loss {mean:.4}");
        log.epoch_loss.push(mean);
    }
    Ok(log)
}

/// Whether `sql` can be represented by the parser grammar.
pub fn in_grammar(sql: &str, schema: &SchemaGraph) -> bool {
    Program::from_sql(sql, schema)
        .map(|p| replay(&p.actions(), schema).is_ok())
        .unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sqlaug_core::toy::{self, ToyConfig};

    #[test]
    fn untrained_model_refuses_to_parse() {
        let toy = toy::build(&ToyConfig::default()).unwrap();
        let m = ParserModel::new(ParserConfig::default(), 0).unwrap();
        assert!(m.parse_beam("How many?", &toy.train_schemas[0], 1).is_err());
    }

    #[test]
    fn padded_batch_matches_single_examples() {
        let toy = toy::build(&ToyConfig {
            pairs_per_domain: 3,
            ..ToyConfig::default()
        })
        .unwrap();
        let schemas = toy.all_schemas();
        let m = ParserModel::new(ParserConfig::default(), 1).unwrap();
        let pairs: Vec<AnnotatedPair> = toy.train_pairs.iter().take(6).cloned().collect();
        let single = m.example_losses(&pairs, &schemas).unwrap();
        let prepared: Vec<Prepared<'_>> = pairs
            .iter()
            .map(|p| prepare(&p.question, &p.sql, find_schema(&schemas, &p.db_id).unwrap()).unwrap())
            .collect();
        let refs: Vec<&Prepared<'_>> = prepared.iter().collect();
        let batched = m.batch_nll(&refs).unwrap().to_vec1::<f32>().unwrap();
        for (a, b) in single.iter().zip(batched) {
            assert!((a - b as f64).abs() < 1e-4 * a.abs().max(1.0), "{a} vs {b}");
        }
    }
}
