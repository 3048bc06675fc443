//! Tokenization and vocabulary-free token embeddings.
//!
//! Words are split from trailing punctuation, and plural endings become
//! separate suffix tokens (`cities` -> `city @@ies`), so a plural in a
//! question lines up with the singular schema name. Tokens are embedded as
//! the mean of hashed features: the word itself and its character trigrams.

use std::collections::HashMap;

use candle_core::{Tensor, D};

use crate::nn::{cpu, CResult, Init, Params};

pub const SUFFIX_S: &str = "@@s";
pub const SUFFIX_IES: &str = "@@ies";
const TRAILING: &[char] = &[',', '.', '?', '!', ';', ':'];

fn is_glued(tok: &str) -> bool {
    tok == SUFFIX_S || tok == SUFFIX_IES || (tok.len() == 1 && tok.starts_with(TRAILING))
}

fn split_word(word: &str, out: &mut Vec<String>) {
    let alpha = word.chars().all(|c| c.is_ascii_alphabetic());
    if alpha && word.len() > 4 && word.ends_with("ies") {
        out.push(format!("{}y", &word[..word.len() - 3]));
        out.push(SUFFIX_IES.to_string());
    } else if alpha && word.len() > 3 && word.ends_with('s') && !word.ends_with("ss") {
        out.push(word[..word.len() - 1].to_string());
        out.push(SUFFIX_S.to_string());
    } else {
        out.push(word.to_string());
    }
}

/// Lossless for single-spaced text: `detokenize(&tokenize(s)) == s`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let body = chunk.trim_end_matches(TRAILING);
        let tail = &chunk[body.len()..];
        if !body.is_empty() {
            split_word(body, &mut out);
        }
        for c in tail.chars() {
            out.push(c.to_string());
        }
    }
    out
}

pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut s = String::new();
    for t in tokens {
        let t = t.as_ref();
        if t == SUFFIX_IES && s.ends_with('y') {
            s.pop();
            s.push_str("ies");
        } else if t == SUFFIX_S {
            s.push('s');
        } else if is_glued(t) && !s.is_empty() {
            s.push_str(t);
        } else {
            if !s.is_empty() {
                s.push(' ');
            }
            s.push_str(t);
        }
    }
    s
}

/// Lower-cased words of an identifier or humanized name, suffix-split.
pub fn name_tokens(name: &str) -> Vec<String> {
    tokenize(&name.replace('_', " ").to_lowercase())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn token_features(token: &str, buckets: usize) -> Vec<u32> {
    let t = token.to_lowercase();
    let mut f = vec![(fnv1a(format!("w|{t}").as_bytes()) % buckets as u64) as u32];
    let chars: Vec<char> = format!("<{t}>").chars().collect();
    if chars.len() >= 3 {
        for w in chars.windows(3) {
            let g: String = w.iter().collect();
            f.push((fnv1a(format!("g|{g}").as_bytes()) % buckets as u64) as u32);
        }
    }
    f
}

pub struct HashEmbedding {
    table: Tensor,
    pub buckets: usize,
    pub dim: usize,
}

impl HashEmbedding {
    pub fn new(p: &mut Params, name: &str, buckets: usize, dim: usize) -> CResult<Self> {
        Ok(HashEmbedding {
            table: p.tensor(name, &[buckets, dim], Init::Uniform(0.1))?,
            buckets,
            dim,
        })
    }

    /// Embeddings `[N, dim]` for `tokens`, computed once per distinct token.
    pub fn embed<S: AsRef<str>>(&self, tokens: &[S]) -> CResult<Tensor> {
        if tokens.is_empty() {
            return Tensor::zeros((0, self.dim), candle_core::DType::F32, &cpu());
        }
        let mut unique: HashMap<&str, u32> = HashMap::new();
        let mut order: Vec<&str> = Vec::new();
        let positions: Vec<u32> = tokens
            .iter()
            .map(|t| {
                let t = t.as_ref();
                *unique.entry(t).or_insert_with(|| {
                    order.push(t);
                    (order.len() - 1) as u32
                })
            })
            .collect();
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for (u, t) in order.iter().enumerate() {
            for f in token_features(t, self.buckets) {
                ids.push(f);
                rows.push(u);
            }
        }
        let mut pool = vec![0f32; order.len() * ids.len()];
        let mut counts = vec![0f32; order.len()];
        for &r in &rows {
            counts[r] += 1.0;
        }
        for (j, &r) in rows.iter().enumerate() {
            pool[r * ids.len() + j] = 1.0 / counts[r];
        }
        let n_ids = ids.len();
        let feats = self.table.index_select(&Tensor::from_vec(ids, n_ids, &cpu())?, 0)?;
        let pool = Tensor::from_vec(pool, (order.len(), n_ids), &cpu())?;
        let per_unique = pool.matmul(&feats)?;
        let n = positions.len();
        per_unique.index_select(&Tensor::from_vec(positions, n, &cpu())?, 0)
    }

    /// Mean embedding of each group of tokens, `[groups, dim]`.
    pub fn embed_groups(&self, groups: &[Vec<String>]) -> CResult<Tensor> {
        let flat: Vec<&str> = groups.iter().flatten().map(String::as_str).collect();
        let e = self.embed(&flat)?;
        let mut pool = vec![0f32; groups.len() * flat.len()];
        let mut j = 0;
        for (g, toks) in groups.iter().enumerate() {
            for _ in toks {
                pool[g * flat.len() + j] = 1.0 / toks.len() as f32;
                j += 1;
            }
        }
        let pool = Tensor::from_vec(pool, (groups.len(), flat.len()), &cpu())?;
        pool.matmul(&e)
    }
}

/// Row-wise mean over `[N, dim]` -> `[dim]`.
pub fn mean_rows(t: &Tensor) -> CResult<Tensor> {
    t.mean(D::Minus2)
}
