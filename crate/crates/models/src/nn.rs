//! Parameter store, layers and the optimizer loop shared by all models.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type CResult<T> = candle_core::Result<T>;

pub const NEG_INF: f32 = -1e9;

pub fn cpu() -> Device {
    Device::Cpu
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Const(f32),
    /// Glorot uniform over the first and last dimensions.
    Xavier,
    Uniform(f32),
}

/// Named trainable tensors initialized from a seeded generator.
pub struct Params {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
}

#[derive(Serialize, Deserialize)]
pub struct SavedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Params {
    pub fn new(seed: u64) -> Self {
        Params {
            vars: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn tensor(&mut self, name: &str, shape: &[usize], init: Init) -> CResult<Tensor> {
        assert!(!self.vars.contains_key(name), "duplicate parameter {name}");
        let n: usize = shape.iter().product();
        let data: Vec<f32> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Xavier => {
                let fan_in = shape[0] as f32;
                let fan_out = *shape.last().unwrap() as f32;
                let a = (6.0 / (fan_in + fan_out)).sqrt();
                (0..n).map(|_| self.rng.random_range(-a..a)).collect()
            }
            Init::Uniform(a) => (0..n).map(|_| self.rng.random_range(-a..a)).collect(),
        };
        let var = Var::from_tensor(&Tensor::from_vec(data, shape, &cpu())?)?;
        let t = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(t)
    }

    pub fn set(&self, name: &str, value: &Tensor) -> CResult<()> {
        match self.vars.get(name) {
            Some(v) => v.set(value),
            None => candle_core::bail!("unknown parameter {name}"),
        }
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn save(&self) -> CResult<BTreeMap<String, SavedTensor>> {
        self.vars
            .iter()
            .map(|(k, v)| {
                Ok((
                    k.clone(),
                    SavedTensor {
                        shape: v.dims().to_vec(),
                        data: v.flatten_all()?.to_vec1()?,
                    },
                ))
            })
            .collect()
    }

    /// Overwrites every parameter with the saved values; names and shapes
    /// must match exactly.
    pub fn load(&self, saved: &BTreeMap<String, SavedTensor>) -> CResult<()> {
        if saved.len() != self.vars.len() {
            candle_core::bail!("checkpoint has {} tensors, model has {}", saved.len(), self.vars.len());
        }
        for (k, v) in &self.vars {
            let s = saved
                .get(k)
                .ok_or_else(|| candle_core::Error::Msg(format!("checkpoint lacks {k}")))?;
            if s.shape != v.dims() {
                candle_core::bail!("shape mismatch for {k}: {:?} vs {:?}", s.shape, v.dims());
            }
            v.set(&Tensor::from_slice(&s.data, s.shape.as_slice(), &cpu())?)?;
        }
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }
}

pub struct Linear {
    w: Tensor,
    b: Option<Tensor>,
}

impl Linear {
    pub fn new(p: &mut Params, name: &str, input: usize, output: usize, bias: bool) -> CResult<Self> {
        Ok(Linear {
            w: p.tensor(&format!("{name}.w"), &[input, output], Init::Xavier)?,
            b: if bias {
                Some(p.tensor(&format!("{name}.b"), &[output], Init::Zeros)?)
            } else {
                None
            },
        })
    }

    /// Works on `[.., input]` for any number of leading dimensions.
    pub fn forward(&self, x: &Tensor) -> CResult<Tensor> {
        let y = if x.rank() == 2 {
            x.matmul(&self.w)?
        } else {
            x.broadcast_matmul(&self.w)?
        };
        match &self.b {
            Some(b) => y.broadcast_add(b),
            None => Ok(y),
        }
    }
}

pub struct LstmCell {
    wi: Tensor,
    wh: Tensor,
    b: Tensor,
    pub hidden: usize,
}

#[derive(Clone)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmCell {
    pub fn new(p: &mut Params, name: &str, input: usize, hidden: usize) -> CResult<Self> {
        let wi = p.tensor(&format!("{name}.wi"), &[input, 4 * hidden], Init::Xavier)?;
        let wh = p.tensor(&format!("{name}.wh"), &[hidden, 4 * hidden], Init::Xavier)?;
        // forget-gate bias starts at 1
        let mut bias = vec![0f32; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        let b = p.tensor(&format!("{name}.b"), &[4 * hidden], Init::Zeros)?;
        p.set(&format!("{name}.b"), &Tensor::from_vec(bias, 4 * hidden, &cpu())?)?;
        Ok(LstmCell { wi, wh, b, hidden })
    }

    pub fn zero_state(&self, batch: usize) -> CResult<LstmState> {
        let z = Tensor::zeros((batch, self.hidden), DType::F32, &cpu())?;
        Ok(LstmState { h: z.clone(), c: z })
    }

    pub fn step(&self, x: &Tensor, s: &LstmState) -> CResult<LstmState> {
        let gates = x
            .matmul(&self.wi)?
            .add(&s.h.matmul(&self.wh)?)?
            .broadcast_add(&self.b)?;
        let g = gates.chunk(4, 1)?;
        let i = candle_nn::ops::sigmoid(&g[0])?;
        let f = candle_nn::ops::sigmoid(&g[1])?;
        let cand = g[2].tanh()?;
        let o = candle_nn::ops::sigmoid(&g[3])?;
        let c = f.mul(&s.c)?.add(&i.mul(&cand)?)?;
        let h = o.mul(&c.tanh()?)?;
        Ok(LstmState { h, c })
    }

    /// Step that leaves rows with `keep == 0` unchanged. `keep` is `[B, 1]`.
    pub fn masked_step(&self, x: &Tensor, s: &LstmState, keep: &Tensor) -> CResult<LstmState> {
        let n = self.step(x, s)?;
        let drop = keep.affine(-1.0, 1.0)?;
        Ok(LstmState {
            h: n.h.broadcast_mul(keep)?.add(&s.h.broadcast_mul(&drop)?)?,
            c: n.c.broadcast_mul(keep)?.add(&s.c.broadcast_mul(&drop)?)?,
        })
    }
}

/// Bidirectional LSTM over a padded batch `[B, T, in]` with lengths given
/// by `mask` (`[B, T]`, 1 for real tokens). Returns `[B, T, 2H]` with padded
/// positions zeroed, plus the final forward and backward hidden states.
pub struct BiLstm {
    fwd: LstmCell,
    bwd: LstmCell,
}

impl BiLstm {
    pub fn new(p: &mut Params, name: &str, input: usize, hidden: usize) -> CResult<Self> {
        Ok(BiLstm {
            fwd: LstmCell::new(p, &format!("{name}.fwd"), input, hidden)?,
            bwd: LstmCell::new(p, &format!("{name}.bwd"), input, hidden)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mask: &Tensor) -> CResult<(Tensor, LstmState, LstmState)> {
        let (b, t, _) = x.dims3()?;
        let mut sf = self.fwd.zero_state(b)?;
        let mut sb = self.bwd.zero_state(b)?;
        let mut outs_f = Vec::with_capacity(t);
        let mut outs_b = vec![None; t];
        for i in 0..t {
            let keep = mask.narrow(1, i, 1)?;
            sf = self.fwd.masked_step(&x.narrow(1, i, 1)?.squeeze(1)?, &sf, &keep)?;
            outs_f.push(sf.h.broadcast_mul(&keep)?);
        }
        for i in (0..t).rev() {
            let keep = mask.narrow(1, i, 1)?;
            sb = self.bwd.masked_step(&x.narrow(1, i, 1)?.squeeze(1)?, &sb, &keep)?;
            outs_b[i] = Some(sb.h.broadcast_mul(&keep)?);
        }
        let f = Tensor::stack(&outs_f, 1)?;
        let bw: Vec<Tensor> = outs_b.into_iter().map(|o| o.unwrap()).collect();
        let bw = Tensor::stack(&bw, 1)?;
        Ok((Tensor::cat(&[&f, &bw], 2)?, sf, sb))
    }
}

/// Masked softmax attention. `keys` `[B, T, K]`, `query` `[B, K]`, `mask`
/// `[B, T]` additive (0 or NEG_INF). Returns weights `[B, T]` and the
/// weighted sum of `values` (`[B, T, V]`) as `[B, V]`.
pub fn attend(keys: &Tensor, query: &Tensor, mask: &Tensor, values: &Tensor) -> CResult<(Tensor, Tensor)> {
    let scores = keys.matmul(&query.unsqueeze(2)?)?.squeeze(2)?.add(mask)?;
    let w = candle_nn::ops::softmax(&scores, D::Minus1)?;
    let ctx = w.unsqueeze(1)?.matmul(values)?.squeeze(1)?;
    Ok((w, ctx))
}

/// Additive mask from 0/1 validity values.
pub fn additive_mask(valid: &[f32], shape: &[usize]) -> CResult<Tensor> {
    let v: Vec<f32> = valid.iter().map(|&x| if x > 0.0 { 0.0 } else { NEG_INF }).collect();
    Tensor::from_vec(v, shape, &cpu())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub clip: f64,
}

/// Adam with optional global-norm gradient clipping.
pub struct Trainer {
    opt: AdamW,
    vars: Vec<Var>,
    clip: f64,
}

impl Trainer {
    pub fn new(params: &Params, config: &OptimConfig) -> CResult<Self> {
        let vars = params.vars();
        let opt = AdamW::new(
            vars.clone(),
            ParamsAdamW {
                lr: config.learning_rate,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay: 0.0,
            },
        )?;
        Ok(Trainer {
            opt,
            vars,
            clip: config.clip,
        })
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.opt.set_learning_rate(lr);
    }

    /// Backpropagates `loss`, clips and applies one update.
    pub fn step(&mut self, loss: &Tensor) -> CResult<()> {
        let mut grads = loss.backward()?;
        if self.clip > 0.0 {
            let mut sq = 0f64;
            for v in &self.vars {
                if let Some(g) = grads.get(v) {
                    sq += g.sqr()?.sum_all()?.to_scalar::<f32>()? as f64;
                }
            }
            let norm = sq.sqrt();
            if norm > self.clip {
                let scale = self.clip / norm;
                for v in &self.vars {
                    if let Some(g) = grads.remove(v) {
                        grads.insert(v, g.affine(scale, 0.0)?);
                    }
                }
            }
        }
        self.opt.step(&grads)
    }
}

/// Σ wᵢ·ℓᵢ / Σ wᵢ over a batch.
pub fn weighted_mean(losses: &Tensor, weights: &[f32]) -> CResult<Tensor> {
    let w = Tensor::from_slice(weights, weights.len(), &cpu())?;
    let total: f32 = weights.iter().sum();
    losses.mul(&w)?.sum_all()?.affine(1.0 / total as f64, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded() {
        let mut a = Params::new(3);
        let mut b = Params::new(3);
        let ta = a.tensor("x", &[4, 5], Init::Xavier).unwrap();
        let tb = b.tensor("x", &[4, 5], Init::Xavier).unwrap();
        assert_eq!(
            ta.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            tb.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
    }

    #[test]
    fn save_and_load_round_trip() {
        let mut a = Params::new(1);
        a.tensor("x", &[3, 2], Init::Xavier).unwrap();
        let saved = a.save().unwrap();
        let mut b = Params::new(2);
        let tb = b.tensor("x", &[3, 2], Init::Xavier).unwrap();
        b.load(&saved).unwrap();
        assert_eq!(tb.flatten_all().unwrap().to_vec1::<f32>().unwrap(), saved["x"].data);
    }

    #[test]
    fn masked_step_freezes_padded_rows() {
        let mut p = Params::new(0);
        let cell = LstmCell::new(&mut p, "l", 3, 4).unwrap();
        let s = cell.zero_state(2).unwrap();
        let x = Tensor::ones((2, 3), DType::F32, &cpu()).unwrap();
        let keep = Tensor::from_vec(vec![1f32, 0.0], (2, 1), &cpu()).unwrap();
        let n = cell.masked_step(&x, &s, &keep).unwrap();
        let h = n.h.to_vec2::<f32>().unwrap();
        assert!(h[0].iter().any(|v| *v != 0.0));
        assert!(h[1].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn weighted_mean_matches_hand_computation() {
        let l = Tensor::from_vec(vec![2f32, 4.0, 8.0], 3, &cpu()).unwrap();
        let m = weighted_mean(&l, &[1.0, 0.5, 0.5]).unwrap().to_scalar::<f32>().unwrap();
        assert!((m - (2.0 + 2.0 + 4.0) / 2.0).abs() < 1e-6);
    }

    #[test]
    fn adam_reduces_a_quadratic() {
        let mut p = Params::new(0);
        let x = p.tensor("x", &[3], Init::Const(2.0)).unwrap();
        let mut t = Trainer::new(&p, &OptimConfig { learning_rate: 0.1, clip: 1.0 }).unwrap();
        let start = x.sqr().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
        for _ in 0..50 {
            let loss = x.sqr().unwrap().sum_all().unwrap();
            t.step(&loss).unwrap();
        }
        let end = x.sqr().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(end < start * 0.1);
    }
}
