//! Autoregressive entity sampler: a single-layer LSTM decoder that points
//! at schema columns or at an end-of-sequence key, conditioned on the
//! domain name.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{Tensor, D};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sqlaug_core::schema::{humanize, ColumnType, EntitySequence, SchemaGraph};
use sqlaug_core::synthesis::EntitySampler;
use sqlaug_core::{Error, Result};

use crate::nn::{cpu, CResult, Init, Linear, LstmCell, OptimConfig, Params, SavedTensor, Trainer, NEG_INF};
use crate::text::{name_tokens, HashEmbedding};
use crate::{read_json, write_json, TrainLog};

const STAGE: &str = "sampler";

fn nn_err(e: candle_core::Error) -> Error {
    Error::component(STAGE, e)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub dim: usize,
    pub hidden: usize,
    pub buckets: usize,
    /// Longest sampled sequence, in entities.
    pub max_entities: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            dim: 64,
            hidden: 64,
            buckets: 4096,
            max_entities: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Set by the caller for each run; not part of the stored configuration.
    #[serde(skip)]
    pub seed: u64,
    /// Longest training sequence in decoder steps, counting end-of-sequence.
    pub max_len: usize,
    pub clip: f64,
}

impl Default for SamplerTrainConfig {
    fn default() -> Self {
        SamplerTrainConfig {
            learning_rate: 5e-3,
            epochs: 30,
            batch_size: 16,
            seed: 0,
            max_len: 9,
            clip: 1.0,
        }
    }
}

pub struct SamplerModel {
    pub config: SamplerConfig,
    params: Params,
    emb: HashEmbedding,
    col_proj: Linear,
    start_proj: Linear,
    lstm: LstmCell,
    wq: Linear,
    wk: Linear,
    v: Tensor,
    eos: Tensor,
    trained: bool,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    kind: String,
    config: SamplerConfig,
    params: BTreeMap<String, SavedTensor>,
}

/// Training example: column indices into one schema.
struct Target {
    schema: usize,
    columns: Vec<usize>,
    terminated: bool,
}

/// Per-schema tensors used by every decoding step.
struct Encoded {
    /// `[1 + C, dim]`: end-of-sequence key first, then the columns.
    keys: Tensor,
    /// `[dim]` start input derived from the domain name.
    start: Tensor,
}

const N_FEATURES: usize = ColumnType::ALL.len() + 2;

impl SamplerModel {
    pub fn new(config: SamplerConfig, seed: u64) -> Result<Self> {
        Self::build(config, seed).map_err(nn_err)
    }

    fn build(config: SamplerConfig, seed: u64) -> CResult<Self> {
        let mut p = Params::new(seed);
        let d = config.dim;
        let emb = HashEmbedding::new(&mut p, "emb", config.buckets, d)?;
        let col_proj = Linear::new(&mut p, "col", 2 * d + N_FEATURES, d, true)?;
        let start_proj = Linear::new(&mut p, "start", d, d, true)?;
        let lstm = LstmCell::new(&mut p, "dec", d, config.hidden)?;
        let wq = Linear::new(&mut p, "wq", config.hidden, d, false)?;
        let wk = Linear::new(&mut p, "wk", d, d, true)?;
        let v = p.tensor("v", &[d], Init::Uniform(0.1))?;
        let eos = p.tensor("eos", &[d], Init::Uniform(0.1))?;
        Ok(SamplerModel {
            config,
            params: p,
            emb,
            col_proj,
            start_proj,
            lstm,
            wq,
            wk,
            v,
            eos,
            trained: false,
        })
    }

    /// A model whose every step is uniform over the allowed choices.
    pub fn uniform(config: SamplerConfig, seed: u64) -> Result<Self> {
        let mut m = Self::new(config, seed)?;
        let zeros = m.v.zeros_like().map_err(nn_err)?;
        m.params.set("v", &zeros).map_err(nn_err)?;
        m.trained = true;
        Ok(m)
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    fn encode(&self, schema: &SchemaGraph) -> CResult<Encoded> {
        let names: Vec<Vec<String>> = schema.columns.iter().map(|c| name_tokens(&c.name)).collect();
        let tables: Vec<Vec<String>> = schema
            .columns
            .iter()
            .map(|c| name_tokens(&schema.tables[c.table]))
            .collect();
        let fk_cols: std::collections::BTreeSet<usize> =
            schema.foreign_keys.iter().flat_map(|&(a, b)| [a, b]).collect();
        let mut feats = Vec::with_capacity(schema.columns.len() * N_FEATURES);
        for (i, c) in schema.columns.iter().enumerate() {
            let mut f = [0f32; N_FEATURES];
            f[c.ty.index()] = 1.0;
            f[ColumnType::ALL.len()] = schema.primary_keys.contains(&i) as u8 as f32;
            f[ColumnType::ALL.len() + 1] = fk_cols.contains(&i) as u8 as f32;
            feats.extend_from_slice(&f);
        }
        let c = schema.columns.len();
        let feats = Tensor::from_vec(feats, (c, N_FEATURES), &cpu())?;
        let x = Tensor::cat(&[&self.emb.embed_groups(&names)?, &self.emb.embed_groups(&tables)?, &feats], 1)?;
        let cols = self.col_proj.forward(&x)?.tanh()?;
        let keys = Tensor::cat(&[&self.eos.unsqueeze(0)?, &cols], 0)?;
        let db = self.emb.embed_groups(&[name_tokens(&humanize(&schema.db_id))])?;
        let start = self.start_proj.forward(&db)?.tanh()?.squeeze(0)?;
        Ok(Encoded { keys, start })
    }

    /// Per-example negative log-likelihood `[B]` under teacher forcing.
    fn batch_nll(&self, schemas: &[SchemaGraph], batch: &[&Target]) -> CResult<Tensor> {
        let mut cache: BTreeMap<usize, Encoded> = BTreeMap::new();
        for t in batch {
            if !cache.contains_key(&t.schema) {
                cache.insert(t.schema, self.encode(&schemas[t.schema])?);
            }
        }
        let b = batch.len();
        let a = batch.iter().map(|t| schemas[t.schema].columns.len() + 1).max().unwrap();
        let d = self.config.dim;
        let mut keys = Vec::with_capacity(b);
        let mut starts = Vec::with_capacity(b);
        for t in batch {
            let e = &cache[&t.schema];
            let n = e.keys.dim(0)?;
            let k = if n < a {
                Tensor::cat(&[&e.keys, &Tensor::zeros((a - n, d), candle_core::DType::F32, &cpu())?], 0)?
            } else {
                e.keys.clone()
            };
            keys.push(k);
            starts.push(e.start.clone());
        }
        let keys = Tensor::stack(&keys, 0)?; // [B, A, d]
        let flat_keys = keys.reshape((b * a, d))?;
        let proj_keys = self.wk.forward(&keys)?;
        let steps = batch
            .iter()
            .map(|t| t.columns.len() + t.terminated as usize)
            .max()
            .unwrap();
        let mut state = self.lstm.zero_state(b)?;
        let mut input = Tensor::stack(&starts, 0)?;
        let mut total: Option<Tensor> = None;
        for step in 0..steps {
            state = self.lstm.step(&input, &state)?;
            let mut mask = vec![0f32; b * a];
            let mut target = vec![0u32; b];
            let mut valid = vec![0f32; b];
            let mut next = vec![0u32; b];
            for (i, t) in batch.iter().enumerate() {
                let n = schemas[t.schema].columns.len() + 1;
                for j in n..a {
                    mask[i * a + j] = NEG_INF;
                }
                for &c in t.columns.iter().take(step) {
                    mask[i * a + c + 1] = NEG_INF;
                }
                if step < t.columns.len() {
                    target[i] = (t.columns[step] + 1) as u32;
                    valid[i] = 1.0;
                } else if step == t.columns.len() && t.terminated {
                    target[i] = 0;
                    valid[i] = 1.0;
                }
                next[i] = (i * a) as u32 + target[i];
            }
            let logits = self.scores(&proj_keys, &state.h)?;
            let logits = logits.add(&Tensor::from_vec(mask, (b, a), &cpu())?)?;
            let logp = candle_nn::ops::log_softmax(&logits, D::Minus1)?;
            let picked = logp
                .gather(&Tensor::from_vec(target, (b, 1), &cpu())?, 1)?
                .squeeze(1)?;
            let picked = picked.mul(&Tensor::from_vec(valid, b, &cpu())?)?;
            total = Some(match total {
                Some(t) => t.sub(&picked)?,
                None => picked.neg()?,
            });
            input = flat_keys.index_select(&Tensor::from_vec(next, b, &cpu())?, 0)?;
        }
        Ok(total.unwrap())
    }

    /// `v · tanh(Wq h + Wk k)` for every key, `[B, A]`.
    fn scores(&self, proj_keys: &Tensor, h: &Tensor) -> CResult<Tensor> {
        let q = self.wq.forward(h)?.unsqueeze(1)?;
        proj_keys.broadcast_add(&q)?.tanh()?.broadcast_matmul(&self.v.unsqueeze(1)?)?.squeeze(2)
    }

    fn targets(schemas: &[SchemaGraph], sequences: &[EntitySequence], max_entities: usize) -> Result<Vec<Target>> {
        let mut out = Vec::with_capacity(sequences.len());
        for seq in sequences {
            let si = schemas
                .iter()
                .position(|s| s.db_id == seq.db_name)
                .ok_or_else(|| Error::UnknownDb(seq.db_name.clone()))?;
            let schema = &schemas[si];
            let mut columns = Vec::with_capacity(seq.len());
            for e in &seq.entities {
                columns.push(schema.entity_index(e).ok_or_else(|| Error::Unresolved {
                    db_id: schema.db_id.clone(),
                    reference: e.to_string(),
                })?);
            }
            let mut terminated = seq.terminated;
            if columns.len() > max_entities {
                columns.truncate(max_entities);
                terminated = false;
            }
            out.push(Target {
                schema: si,
                columns,
                terminated,
            });
        }
        Ok(out)
    }

    /// Σ log p(eₜ | e₍<t₎, G) over the sequence, including the
    /// end-of-sequence step when the sequence is terminated.
    pub fn sequence_log_prob(&self, schema: &SchemaGraph, seq: &EntitySequence) -> Result<f64> {
        let targets = Self::targets(std::slice::from_ref(schema), &[seq.clone()], usize::MAX)?;
        let nll = self
            .batch_nll(std::slice::from_ref(schema), &[&targets[0]])
            .and_then(|t| t.to_vec1::<f32>())
            .map_err(nn_err)?;
        Ok(-(nll[0] as f64))
    }

    fn mean_nll(&self, schemas: &[SchemaGraph], targets: &[Target], batch_size: usize) -> CResult<f64> {
        let mut sum = 0f64;
        for chunk in targets.chunks(batch_size.max(1)) {
            let refs: Vec<&Target> = chunk.iter().collect();
            let nll = self.batch_nll(schemas, &refs)?.to_vec1::<f32>()?;
            sum += nll.iter().map(|&x| x as f64).sum::<f64>();
        }
        Ok(sum / targets.len() as f64)
    }

    pub fn sample(&self, schema: &SchemaGraph, n: usize, temperature: f64, seed: u64) -> Result<Vec<EntitySequence>> {
        if !self.trained {
            return Err(Error::component(STAGE, "model is not trained"));
        }
        if schema.columns.is_empty() {
            return Err(Error::InvalidArgument(format!("schema {} has no columns", schema.db_id)));
        }
        if !(temperature > 0.0) {
            return Err(Error::InvalidArgument("temperature must be positive".into()));
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chosen = self.sample_indices(schema, n, temperature, &mut rng).map_err(nn_err)?;
        chosen
            .into_iter()
            .map(|(cols, terminated)| {
                EntitySequence::new(
                    schema.db_id.clone(),
                    cols.into_iter().map(|c| schema.entity(c)).collect(),
                    terminated,
                )
            })
            .collect()
    }

    fn sample_indices(
        &self,
        schema: &SchemaGraph,
        n: usize,
        temperature: f64,
        rng: &mut ChaCha8Rng,
    ) -> CResult<Vec<(Vec<usize>, bool)>> {
        let enc = self.encode(schema)?;
        let a = enc.keys.dim(0)?;
        let proj_keys = self.wk.forward(&enc.keys.unsqueeze(0)?)?;
        let mut state = self.lstm.zero_state(n)?;
        let mut input = enc.start.unsqueeze(0)?.repeat((n, 1))?;
        let mut seqs: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut done = vec![false; n];
        let mut terminated = vec![false; n];
        for _ in 0..=self.config.max_entities.min(a - 1) {
            if done.iter().all(|&d| d) {
                break;
            }
            state = self.lstm.step(&input, &state)?;
            let logits = self.scores(&proj_keys, &state.h)?.to_vec2::<f32>()?;
            let mut next = vec![0u32; n];
            for i in 0..n {
                if done[i] {
                    continue;
                }
                if seqs[i].len() >= self.config.max_entities {
                    done[i] = true;
                    continue;
                }
                let mut allowed: Vec<usize> = vec![0];
                allowed.extend((1..a).filter(|&j| !seqs[i].contains(&(j - 1))));
                let pick = choose(&logits[i], &allowed, temperature, rng);
                if pick == 0 {
                    done[i] = true;
                    terminated[i] = true;
                } else {
                    seqs[i].push(pick - 1);
                    next[i] = pick as u32;
                }
            }
            input = enc.keys.index_select(&Tensor::from_vec(next, n, &cpu())?, 0)?;
        }
        Ok(seqs.into_iter().zip(terminated).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let ck = Checkpoint {
            kind: "sampler".into(),
            config: self.config.clone(),
            params: self.params.save().map_err(nn_err)?,
        };
        write_json(path.as_ref(), &ck)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Checkpoint = read_json(path.as_ref())?;
        if ck.kind != "sampler" {
            return Err(Error::component(STAGE, format!("checkpoint kind is {}", ck.kind)));
        }
        let mut m = Self::new(ck.config, 0)?;
        m.params.load(&ck.params).map_err(nn_err)?;
        m.trained = true;
        Ok(m)
    }
}

/// Picks an index from `allowed` by softmax(logits / temperature); very
/// small temperatures pick the arg-max (lowest index on ties).
fn choose(logits: &[f32], allowed: &[usize], temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    if temperature < 1e-6 {
        let mut best = allowed[0];
        for &j in allowed {
            if logits[j] > logits[best] {
                best = j;
            }
        }
        return best;
    }
    let m = allowed.iter().map(|&j| logits[j] as f64).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = allowed
        .iter()
        .map(|&j| ((logits[j] as f64 - m) / temperature).exp())
        .collect();
    let total: f64 = w.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (k, wk) in w.iter().enumerate() {
        if x < *wk {
            return allowed[k];
        }
        x -= wk;
    }
    *allowed.last().unwrap()
}

impl EntitySampler for SamplerModel {
    fn sample(&self, schema: &SchemaGraph, n: usize, temperature: f64, seed: u64) -> Result<Vec<EntitySequence>> {
        SamplerModel::sample(self, schema, n, temperature, seed)
    }
}

/// Maximum-likelihood training with teacher forcing.
pub fn train_sampler(
    schemas: &[SchemaGraph],
    sequences: &[EntitySequence],
    model_config: SamplerConfig,
    config: &SamplerTrainConfig,
) -> Result<(SamplerModel, TrainLog)> {
    if config.max_len < 2 {
        return Err(Error::InvalidArgument("max sequence length must be at least 2".into()));
    }
    let usable: Vec<EntitySequence> = sequences.iter().filter(|s| !s.is_empty()).cloned().collect();
    if usable.is_empty() {
        return Err(Error::component(STAGE, "empty training set"));
    }
    let model_config = SamplerConfig {
        max_entities: config.max_len - 1,
        ..model_config
    };
    let mut model = SamplerModel::new(model_config, config.seed)?;
    let targets = SamplerModel::targets(schemas, &usable, model.config.max_entities)?;
    let log = fit(&mut model, schemas, &targets, config).map_err(nn_err)?;
    model.trained = true;
    Ok((model, log))
}

fn fit(model: &mut SamplerModel, schemas: &[SchemaGraph], targets: &[Target], config: &SamplerTrainConfig) -> CResult<TrainLog> {
    let mut trainer = Trainer::new(
        &model.params,
        &OptimConfig {
            learning_rate: config.learning_rate,
            clip: config.clip,
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5a5a);
    let mut log = TrainLog {
        initial_loss: model.mean_nll(schemas, targets, config.batch_size)?,
        epoch_loss: Vec::with_capacity(config.epochs),
    };
    let mut order: Vec<usize> = (0..targets.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0f64;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<&Target> = chunk.iter().map(|&i| &targets[i]).collect();
            let nll = model.batch_nll(schemas, &batch)?;
            sum += nll.sum_all()?.to_scalar::<f32>()? as f64;
            let loss = nll.mean_all()?;
            trainer.step(&loss)?;
        }
        let mean = sum / targets.len() as f64;
        log::debug!("sampler epoch {epoch}: nll {mean:.4}");
        log.epoch_loss.push(mean);
    }
    Ok(log)
}

/// Length distribution for the random-sampling ablation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LengthDistribution {
    Fixed(usize),
    /// Weight of each length; index 0 is length 1.
    Weights(Vec<f64>),
}

impl LengthDistribution {
    /// Empirical lengths of non-empty training sequences.
    pub fn empirical(sequences: &[EntitySequence]) -> Result<Self> {
        let max = sequences.iter().map(EntitySequence::len).max().unwrap_or(0);
        if max == 0 {
            return Err(Error::InvalidArgument("no non-empty sequences".into()));
        }
        let mut w = vec![0.0; max];
        for s in sequences.iter().filter(|s| !s.is_empty()) {
            w[s.len() - 1] += 1.0;
        }
        Ok(LengthDistribution::Weights(w))
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        match self {
            LengthDistribution::Fixed(n) => *n,
            LengthDistribution::Weights(w) => {
                let total: f64 = w.iter().sum();
                let mut x = rng.random::<f64>() * total;
                for (i, wi) in w.iter().enumerate() {
                    if x < *wi {
                        return i + 1;
                    }
                    x -= wi;
                }
                w.len()
            }
        }
    }
}

/// Uniformly random distinct entities.
#[derive(Clone, Debug)]
pub struct RandomSampler {
    pub lengths: LengthDistribution,
}

pub fn sample_random_entities(
    schema: &SchemaGraph,
    n: usize,
    lengths: &LengthDistribution,
    seed: u64,
) -> Result<Vec<EntitySequence>> {
    let k = schema.columns.len();
    if k == 0 {
        return Err(Error::InvalidArgument(format!("schema {} has no columns", schema.db_id)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = lengths.draw(&mut rng);
        if len == 0 || len > k {
            return Err(Error::InvalidArgument(format!(
                "cannot draw {len} distinct entities from {k} columns"
            )));
        }
        let cols = rand::seq::index::sample(&mut rng, k, len);
        out.push(EntitySequence::new(
            schema.db_id.clone(),
            cols.into_iter().map(|c| schema.entity(c)).collect(),
            true,
        )?);
    }
    Ok(out)
}

impl EntitySampler for RandomSampler {
    fn sample(&self, schema: &SchemaGraph, n: usize, _temperature: f64, seed: u64) -> Result<Vec<EntitySequence>> {
        // lengths beyond the schema size are clipped rather than rejected here
        let k = schema.columns.len();
        let lengths = match &self.lengths {
            LengthDistribution::Fixed(l) => LengthDistribution::Fixed((*l).min(k)),
            LengthDistribution::Weights(w) => LengthDistribution::Weights(w.iter().take(k).cloned().collect()),
        };
        sample_random_entities(schema, n, &lengths, seed)
    }
}
