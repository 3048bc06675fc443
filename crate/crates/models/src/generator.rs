//! From-scratch question generator: BiLSTM encoder over the formatted
//! entity string, attentional LSTM decoder with a copy mechanism, and
//! length-normalized beam search.
//!
//! The output vocabulary holds only words seen in questions of at least two
//! domains (one when the corpus has fewer than three), so domain-specific
//! words such as column names have to be copied from the input. This is
//! what lets the model phrase questions about schemas it never saw.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use candle_core::{DType, Tensor, D};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sqlaug_core::synthesis::{QuestionGenerator, ScoredQuestion};
use sqlaug_core::{Error, Result};

use crate::nn::{attend, cpu, additive_mask, BiLstm, CResult, Linear, LstmCell, LstmState, OptimConfig, Params, SavedTensor, Trainer};
use crate::text::{detokenize, tokenize, HashEmbedding};
use crate::{read_json, write_json, TrainLog};

const STAGE: &str = "generator";
const EOS: &str = "</s>";
const UNK: &str = "<unk>";
const BOS: &str = "<s>";

fn nn_err(e: candle_core::Error) -> Error {
    Error::component(STAGE, e)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub dim: usize,
    pub hidden: usize,
    pub buckets: usize,
    pub max_output_len: usize,
    pub length_penalty: f64,
    /// Minimum number of domains a word must occur in to enter the output
    /// vocabulary. `None` picks 2 for corpora with three or more domains, else 1.
    pub vocab_min_domains: Option<usize>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            dim: 64,
            hidden: 64,
            buckets: 4096,
            max_output_len: 64,
            length_penalty: 1.0,
            vocab_min_domains: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip: f64,
    pub warmup_steps: usize,
    /// Set by the caller for each run; not part of the stored configuration.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for GeneratorTrainConfig {
    fn default() -> Self {
        GeneratorTrainConfig {
            learning_rate: 3e-4,
            batch_size: 8,
            epochs: 3,
            clip: 1.0,
            warmup_steps: 0,
            seed: 0,
        }
    }
}

impl GeneratorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.epochs == 0 || !(self.clip > 0.0) {
            return Err(Error::InvalidArgument(
                "learning rate, batch size, epochs and clip must be positive".into(),
            ));
        }
        Ok(())
    }
}

pub struct GeneratorModel {
    pub config: GeneratorConfig,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    params: Params,
    emb: HashEmbedding,
    encoder: BiLstm,
    bridge_h: Linear,
    bridge_c: Linear,
    decoder: LstmCell,
    att: Linear,
    out: Linear,
    vocab_out: Linear,
    gen_gate: Linear,
    trained: bool,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    kind: String,
    config: GeneratorConfig,
    vocab: Vec<String>,
    params: BTreeMap<String, SavedTensor>,
}

struct Example {
    src: Vec<String>,
    tgt: Vec<String>,
}

struct Encoded {
    /// `[B, S, 2H]`
    states: Tensor,
    /// `[B, S]` additive
    mask: Tensor,
    init: LstmState,
}

/// Domain of a formatted input: the text before the first ` : `.
fn input_domain(input: &str) -> &str {
    input.split(" : ").next().unwrap_or(input)
}

pub fn build_vocab(pairs: &[(String, String)], min_domains: Option<usize>) -> Vec<String> {
    let mut domains: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    let mut all: BTreeSet<&str> = BTreeSet::new();
    for (input, q) in pairs {
        let d = input_domain(input);
        all.insert(d);
        for t in tokenize(q) {
            domains.entry(t).or_default().insert(d);
        }
    }
    let threshold = min_domains.unwrap_or(if all.len() >= 3 { 2 } else { 1 });
    let mut vocab = vec![EOS.to_string(), UNK.to_string()];
    vocab.extend(
        domains
            .into_iter()
            .filter(|(_, ds)| ds.len() >= threshold)
            .map(|(t, _)| t),
    );
    vocab
}

impl GeneratorModel {
    pub fn new(config: GeneratorConfig, vocab: Vec<String>, seed: u64) -> Result<Self> {
        Self::build(config, vocab, seed).map_err(nn_err)
    }

    fn build(config: GeneratorConfig, vocab: Vec<String>, seed: u64) -> CResult<Self> {
        let mut p = Params::new(seed);
        let (d, h) = (config.dim, config.hidden);
        let emb = HashEmbedding::new(&mut p, "emb", config.buckets, d)?;
        let encoder = BiLstm::new(&mut p, "enc", d, h)?;
        let bridge_h = Linear::new(&mut p, "bridge_h", 2 * h, 2 * h, true)?;
        let bridge_c = Linear::new(&mut p, "bridge_c", 2 * h, 2 * h, true)?;
        let decoder = LstmCell::new(&mut p, "dec", d + 2 * h, 2 * h)?;
        let att = Linear::new(&mut p, "att", 2 * h, 2 * h, false)?;
        let out = Linear::new(&mut p, "out", 4 * h, d, true)?;
        let vocab_out = Linear::new(&mut p, "vocab", d, vocab.len(), true)?;
        let gen_gate = Linear::new(&mut p, "gate", 4 * h + d, 1, true)?;
        let index = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(GeneratorModel {
            config,
            vocab,
            index,
            params: p,
            emb,
            encoder,
            bridge_h,
            bridge_c,
            decoder,
            att,
            out,
            vocab_out,
            gen_gate,
            trained: false,
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn encode(&self, sources: &[&[String]]) -> CResult<Encoded> {
        let b = sources.len();
        let s = sources.iter().map(|x| x.len()).max().unwrap_or(1).max(1);
        let mut flat: Vec<&str> = Vec::with_capacity(b * s);
        let mut valid = vec![0f32; b * s];
        for (i, src) in sources.iter().enumerate() {
            for j in 0..s {
                match src.get(j) {
                    Some(t) => {
                        flat.push(t);
                        valid[i * s + j] = 1.0;
                    }
                    None => flat.push(EOS),
                }
            }
        }
        let x = self.emb.embed(&flat)?.reshape((b, s, self.config.dim))?;
        let keep = Tensor::from_vec(valid.clone(), (b, s), &cpu())?;
        let (states, sf, sb) = self.encoder.forward(&x, &keep)?;
        let hs = Tensor::cat(&[&sf.h, &sb.h], 1)?;
        let cs = Tensor::cat(&[&sf.c, &sb.c], 1)?;
        Ok(Encoded {
            states,
            mask: additive_mask(&valid, &[b, s])?,
            init: LstmState {
                h: self.bridge_h.forward(&hs)?.tanh()?,
                c: self.bridge_c.forward(&cs)?,
            },
        })
    }

    /// One decoder step. Returns the new state, the attention context and
    /// the output distribution over `vocab ++ source positions`.
    fn step(
        &self,
        enc: &Encoded,
        x: &Tensor,
        ctx: &Tensor,
        state: &LstmState,
    ) -> CResult<(LstmState, Tensor, Tensor)> {
        let input = Tensor::cat(&[x, ctx], 1)?;
        let state = self.decoder.step(&input, state)?;
        let q = self.att.forward(&state.h)?;
        let (w, ctx) = attend(&enc.states, &q, &enc.mask, &enc.states)?;
        let hc = Tensor::cat(&[&state.h, &ctx], 1)?;
        let o = self.out.forward(&hc)?.tanh()?;
        let pv = candle_nn::ops::softmax(&self.vocab_out.forward(&o)?, D::Minus1)?;
        let gate = candle_nn::ops::sigmoid(&self.gen_gate.forward(&Tensor::cat(&[&hc, x], 1)?)?)?;
        let p = Tensor::cat(
            &[
                &pv.broadcast_mul(&gate)?,
                &w.broadcast_mul(&gate.affine(-1.0, 1.0)?)?,
            ],
            1,
        )?;
        Ok((state, ctx, p))
    }

    fn batch_nll(&self, batch: &[&Example]) -> CResult<Tensor> {
        let b = batch.len();
        let sources: Vec<&[String]> = batch.iter().map(|e| e.src.as_slice()).collect();
        let enc = self.encode(&sources)?;
        let s = enc.states.dim(1)?;
        let v = self.vocab.len();
        let steps = batch.iter().map(|e| e.tgt.len() + 1).max().unwrap();
        let mut prev: Vec<&str> = Vec::with_capacity(b * steps);
        for e in batch {
            for t in 0..steps {
                prev.push(if t == 0 {
                    BOS
                } else {
                    e.tgt.get(t - 1).map(String::as_str).unwrap_or(EOS)
                });
            }
        }
        let inputs = self.emb.embed(&prev)?.reshape((b, steps, self.config.dim))?;
        let mut state = enc.init.clone();
        let mut ctx = Tensor::zeros((b, s * 0 + enc.states.dim(2)?), DType::F32, &cpu())?;
        let mut total: Option<Tensor> = None;
        for t in 0..steps {
            let x = inputs.narrow(1, t, 1)?.squeeze(1)?;
            let (ns, nctx, p) = self.step(&enc, &x, &ctx, &state)?;
            state = ns;
            ctx = nctx;
            let mut target = vec![0f32; b * (v + s)];
            let mut valid = vec![0f32; b];
            for (i, e) in batch.iter().enumerate() {
                let y = if t < e.tgt.len() {
                    e.tgt[t].as_str()
                } else if t == e.tgt.len() {
                    EOS
                } else {
                    continue;
                };
                valid[i] = 1.0;
                let row = &mut target[i * (v + s)..(i + 1) * (v + s)];
                let mut hit = false;
                if let Some(&k) = self.index.get(y) {
                    row[k] = 1.0;
                    hit = true;
                }
                for (j, src) in e.src.iter().enumerate() {
                    if src == y {
                        row[v + j] = 1.0;
                        hit = true;
                    }
                }
                if !hit {
                    row[self.index[UNK]] = 1.0;
                }
            }
            let target = Tensor::from_vec(target, (b, v + s), &cpu())?;
            let prob = p.mul(&target)?.sum(1)?;
            let nll = prob.affine(1.0, 1e-10)?.log()?.neg()?;
            let nll = nll.mul(&Tensor::from_vec(valid, b, &cpu())?)?;
            total = Some(match total {
                Some(acc) => acc.add(&nll)?,
                None => nll,
            });
        }
        Ok(total.unwrap())
    }

    fn mean_nll(&self, examples: &[Example], batch_size: usize) -> CResult<f64> {
        let mut sum = 0f64;
        for chunk in examples.chunks(batch_size.max(1)) {
            let refs: Vec<&Example> = chunk.iter().collect();
            sum += self.batch_nll(&refs)?.sum_all()?.to_scalar::<f32>()? as f64;
        }
        Ok(sum / examples.len() as f64)
    }

    /// Mean per-example negative log-likelihood of `(input, question)` pairs.
    pub fn loss(&self, pairs: &[(String, String)]) -> Result<f64> {
        let examples = to_examples(pairs);
        self.mean_nll(&examples, 16).map_err(nn_err)
    }

    pub fn generate(&self, input: &str, beam: usize) -> Result<Vec<ScoredQuestion>> {
        if !self.trained {
            return Err(Error::component(STAGE, "model is not trained"));
        }
        if beam == 0 {
            return Err(Error::InvalidArgument("beam size must be at least 1".into()));
        }
        self.beam_search(input, beam).map_err(nn_err)
    }

    fn beam_search(&self, input: &str, beam: usize) -> CResult<Vec<ScoredQuestion>> {
        struct Hyp {
            tokens: Vec<String>,
            logp: f64,
        }
        let src = tokenize(input);
        let enc1 = self.encode(&[src.as_slice()])?;
        let s = enc1.states.dim(1)?;
        let v = self.vocab.len();
        let expand = |k: usize| -> CResult<Encoded> {
            Ok(Encoded {
                states: enc1.states.repeat((k, 1, 1))?,
                mask: enc1.mask.repeat((k, 1))?,
                init: enc1.init.clone(),
            })
        };
        let mut live = vec![Hyp {
            tokens: Vec::new(),
            logp: 0.0,
        }];
        let mut state = enc1.init.clone();
        let mut ctx = Tensor::zeros((1, enc1.states.dim(2)?), DType::F32, &cpu())?;
        let mut finished: Vec<Hyp> = Vec::new();
        let unk = self.index[UNK];
        for step in 0..self.config.max_output_len {
            let k = live.len();
            let enc = expand(k)?;
            let prev: Vec<&str> = live
                .iter()
                .map(|h| h.tokens.last().map(String::as_str).unwrap_or(BOS))
                .collect();
            let x = self.emb.embed(&prev)?;
            let (ns, nctx, p) = self.step(&enc, &x, &ctx, &state)?;
            let p = p.to_vec2::<f32>()?;
            // (logp, parent, token)
            let mut cands: Vec<(f64, usize, String)> = Vec::new();
            for (hi, h) in live.iter().enumerate() {
                let mut by_token: BTreeMap<&str, f64> = BTreeMap::new();
                for (j, &pj) in p[hi][..v].iter().enumerate() {
                    if j != unk {
                        *by_token.entry(self.vocab[j].as_str()).or_default() += pj as f64;
                    }
                }
                for (j, t) in src.iter().enumerate() {
                    *by_token.entry(t.as_str()).or_default() += p[hi][v + j] as f64;
                }
                if step == 0 {
                    by_token.remove(EOS);
                }
                let mut options: Vec<(&str, f64)> = by_token.into_iter().filter(|(_, q)| *q > 0.0).collect();
                options.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
                for (t, q) in options.into_iter().take(beam) {
                    cands.push((h.logp + q.ln(), hi, t.to_string()));
                }
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::new();
            let mut parents = Vec::new();
            for (logp, parent, tok) in cands {
                if next.len() >= beam {
                    break;
                }
                let mut tokens = live[parent].tokens.clone();
                if tok == EOS {
                    finished.push(Hyp { tokens, logp });
                    if finished.len() >= beam {
                        break;
                    }
                } else {
                    tokens.push(tok);
                    next.push(Hyp { tokens, logp });
                    parents.push(parent as u32);
                }
            }
            if finished.len() >= beam || next.is_empty() {
                live.clear();
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
        if finished.is_empty() {
            finished = live;
        }
        let _ = s;
        let penalty = self.config.length_penalty;
        let mut scored: Vec<ScoredQuestion> = finished
            .into_iter()
            .map(|h| {
                let len = (h.tokens.len() + 1) as f64;
                ScoredQuestion {
                    question: detokenize(&h.tokens),
                    score: h.logp / len.powf(penalty),
                }
            })
            .filter(|q| !q.question.is_empty())
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.question.cmp(&b.question)));
        let mut seen = BTreeSet::new();
        scored.retain(|q| seen.insert(q.question.clone()));
        scored.truncate(beam);
        Ok(scored)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let ck = Checkpoint {
            kind: "generator".into(),
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self.params.save().map_err(nn_err)?,
        };
        write_json(path.as_ref(), &ck)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Checkpoint = read_json(path.as_ref())?;
        if ck.kind != "generator" {
            return Err(Error::component(STAGE, format!("checkpoint kind is {}", ck.kind)));
        }
        let mut m = Self::new(ck.config, ck.vocab, 0)?;
        m.params.load(&ck.params).map_err(nn_err)?;
        m.trained = true;
        Ok(m)
    }
}

impl QuestionGenerator for GeneratorModel {
    fn generate(&self, input: &str, beam: usize) -> Result<Vec<ScoredQuestion>> {
        GeneratorModel::generate(self, input, beam)
    }
}

fn to_examples(pairs: &[(String, String)]) -> Vec<Example> {
    pairs
        .iter()
        .map(|(i, q)| Example {
            src: tokenize(i),
            tgt: tokenize(q),
        })
        .collect()
}

pub fn train_generator(
    pairs: &[(String, String)],
    model_config: GeneratorConfig,
    config: &GeneratorTrainConfig,
) -> Result<(GeneratorModel, TrainLog)> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::component(STAGE, "empty training corpus"));
    }
    let vocab = build_vocab(pairs, model_config.vocab_min_domains);
    let mut model = GeneratorModel::new(model_config, vocab, config.seed)?;
    let examples = to_examples(pairs);
    let log = fit(&mut model, &examples, config).map_err(nn_err)?;
    model.trained = true;
    Ok((model, log))
}

fn fit(model: &mut GeneratorModel, examples: &[Example], config: &GeneratorTrainConfig) -> CResult<TrainLog> {
    let mut trainer = Trainer::new(
        &model.params,
        &OptimConfig {
            learning_rate: config.learning_rate,
            clip: config.clip,
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6e6e);
    let mut log = TrainLog {
        initial_loss: model.mean_nll(examples, config.batch_size)?,
        epoch_loss: Vec::new(),
    };
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut updates = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0f64;
        for chunk in order.chunks(config.batch_size) {
            if config.warmup_steps > 0 {
                let f = ((updates + 1) as f64 / config.warmup_steps as f64).min(1.0);
                trainer.set_learning_rate(config.learning_rate * f);
            }
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let nll = model.batch_nll(&batch)?;
            sum += nll.sum_all()?.to_scalar::<f32>()? as f64;
            trainer.step(&nll.mean_all()?)?;
            updates += 1;
        }
        let mean = sum / examples.len() as f64;
        log::debug!("generator epoch {epoch}: nll {mean:.4}");
        log.epoch_loss.push(mean);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_threshold_depends_on_domain_count() {
        let pairs: Vec<(String, String)> = [
            ("a : t x number", "How many x?"),
            ("b : t y number", "How many y?"),
            ("c : t z number", "List z."),
        ]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        let v = build_vocab(&pairs, None);
        assert!(v.contains(&"How".to_string()));
        assert!(v.contains(&"?".to_string()));
        assert!(!v.contains(&"List".to_string()));
        assert!(!v.contains(&"x".to_string()));
        let v1 = build_vocab(&pairs[..2], None);
        assert!(v1.contains(&"x".to_string()));
    }

    #[test]
    fn untrained_model_refuses_to_generate() {
        let m = GeneratorModel::new(GeneratorConfig::default(), vec![EOS.into(), UNK.into()], 0).unwrap();
        assert!(m.generate("d : t x number", 2).is_err());
    }
}
