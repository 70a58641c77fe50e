//! Contextual token encoder and self-attentive sentence pooling.
//!
//! A sequence `u_1..u_n` is wrapped as `[CLS] u_1..u_n [SEP]`, embedded with
//! learned token and position tables, and passed through `blocks` layers of
//! multi-head scaled dot-product self-attention followed by a two-layer
//! feed-forward, each with a residual connection. Pooling computes
//! `a = softmax(tanh(H·W₁)·w₂)` over all `n + 2` rows and returns `aᵀ·H`.

mod vocab;

use rand::Rng;

pub use vocab::{Vocab, CLS, PAD, SEP, UNK};

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Session, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub max_len: usize,
    /// Width `d_a` of the pooling attention.
    pub pool_dim: usize,
    pub ff_dim: usize,
    pub leaky_slope: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            blocks: 2,
            heads: 4,
            max_len: 64,
            pool_dim: 32,
            ff_dim: 128,
            leaky_slope: 0.01,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("dim", self.dim),
            ("blocks", self.blocks),
            ("heads", self.heads),
            ("max_len", self.max_len),
            ("pool_dim", self.pool_dim),
            ("ff_dim", self.ff_dim),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("encoder {name} must be >= 1")));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Encoder output: rows are `h_CLS, h_1..h_n, h_SEP`, then any padding rows.
#[derive(Clone, Copy, Debug)]
pub struct HiddenStates {
    pub states: Var,
    pub tokens: usize,
}

impl HiddenStates {
    /// Number of real rows (`n + 2`).
    pub fn rows(&self) -> usize {
        self.tokens + 2
    }
}

/// Pooled sentence vector (1×d) and its attention weights ((n+2)×1).
#[derive(Clone, Copy, Debug)]
pub struct Pooled {
    pub rep: Var,
    pub weights: Var,
}

#[derive(Clone, Debug)]
struct Block {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    vocab_size: usize,
    tok_emb: ParamId,
    pos_emb: ParamId,
    blocks: Vec<Block>,
    pool_w1: ParamId,
    pool_w2: ParamId,
}

impl Encoder {
    /// Registers parameters under `prefix.` in `store`.
    pub fn new<R: Rng>(
        prefix: &str,
        config: EncoderConfig,
        vocab_size: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let name = |s: &str| format!("{prefix}.{s}");
        // A lookup is a product with a one-hot row: fan-in 1.
        let tok_emb = store.insert_uniform(name("tok_emb"), vec![vocab_size, d], 1, rng)?;
        let pos_emb = store.insert_uniform(name("pos_emb"), vec![config.max_len + 2, d], 1, rng)?;
        let mut blocks = Vec::with_capacity(config.blocks);
        for b in 0..config.blocks {
            let bn = |s: &str| format!("{prefix}.block{b}.{s}");
            blocks.push(Block {
                wq: store.insert_uniform(bn("wq"), vec![d, d], d, rng)?,
                wk: store.insert_uniform(bn("wk"), vec![d, d], d, rng)?,
                wv: store.insert_uniform(bn("wv"), vec![d, d], d, rng)?,
                wo: store.insert_uniform(bn("wo"), vec![d, d], d, rng)?,
                ff1_w: store.insert_uniform(bn("ff1_w"), vec![d, config.ff_dim], d, rng)?,
                ff1_b: store.insert_uniform(bn("ff1_b"), vec![config.ff_dim], d, rng)?,
                ff2_w: store.insert_uniform(bn("ff2_w"), vec![config.ff_dim, d], config.ff_dim, rng)?,
                ff2_b: store.insert_uniform(bn("ff2_b"), vec![d], config.ff_dim, rng)?,
            });
        }
        let pool_w1 = store.insert_uniform(name("pool_w1"), vec![d, config.pool_dim], d, rng)?;
        let pool_w2 = store.insert_uniform(name("pool_w2"), vec![config.pool_dim, 1], config.pool_dim, rng)?;
        Ok(Self {
            config,
            vocab_size,
            tok_emb,
            pos_emb,
            blocks,
            pool_w1,
            pool_w2,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Encodes `[CLS] ids [SEP]`. Ids outside the vocabulary read as UNK.
    pub fn encode(&self, s: &mut Session<'_>, ids: &[usize]) -> Result<HiddenStates> {
        self.encode_padded(s, ids, ids.len())
    }

    /// Like [`Encoder::encode`] but appends PAD rows up to `pad_to` tokens.
    /// Padding is masked out as attention keys, so real rows are unaffected.
    pub fn encode_padded(
        &self,
        s: &mut Session<'_>,
        ids: &[usize],
        pad_to: usize,
    ) -> Result<HiddenStates> {
        let n = ids.len();
        if n == 0 {
            return Err(Error::contract("cannot encode an empty sequence"));
        }
        let padded = pad_to.max(n);
        if padded > self.config.max_len {
            return Err(Error::Overlength {
                len: padded,
                max: self.config.max_len,
            });
        }
        let mut seq = Vec::with_capacity(padded + 2);
        seq.push(CLS);
        seq.extend(ids.iter().map(|&i| if i < self.vocab_size { i } else { UNK }));
        seq.push(SEP);
        seq.resize(padded + 2, PAD);
        let len = seq.len();

        let tok_table = s.param(self.tok_emb);
        let pos_table = s.param(self.pos_emb);
        let tok = s.tape.gather_rows(tok_table, &seq)?;
        let pos = s.tape.slice_rows(pos_table, 0, len)?;
        let mut x = s.tape.add(tok, pos)?;

        let mask: Option<Vec<bool>> = (padded > n).then(|| {
            (0..len)
                .flat_map(|_| (0..len).map(|k| k < n + 2))
                .collect()
        });
        for block in &self.blocks {
            x = self.block_forward(s, block, x, mask.as_deref())?;
        }
        Ok(HiddenStates {
            states: x,
            tokens: n,
        })
    }

    fn block_forward(
        &self,
        s: &mut Session<'_>,
        block: &Block,
        x: Var,
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        let d = self.config.dim;
        let dh = d / self.config.heads;
        let (wq, wk, wv, wo) = (
            s.param(block.wq),
            s.param(block.wk),
            s.param(block.wv),
            s.param(block.wo),
        );
        let q = s.tape.matmul(x, wq)?;
        let k = s.tape.matmul(x, wk)?;
        let v = s.tape.matmul(x, wv)?;
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = s.tape.slice_cols(q, lo, hi)?;
            let kh = s.tape.slice_cols(k, lo, hi)?;
            let vh = s.tape.slice_cols(v, lo, hi)?;
            let kt = s.tape.transpose(kh)?;
            let scores = s.tape.matmul(qh, kt)?;
            let scores = s.tape.scale(scores, 1.0 / (dh as f64).sqrt());
            let attn = match mask {
                Some(m) => s.tape.masked_softmax_rows(scores, m)?,
                None => s.tape.softmax(scores, 1)?,
            };
            heads.push(s.tape.matmul(attn, vh)?);
        }
        let cat = s.tape.concat_cols(&heads)?;
        let proj = s.tape.matmul(cat, wo)?;
        let x = s.tape.add(x, proj)?;

        let (w1, b1, w2, b2) = (
            s.param(block.ff1_w),
            s.param(block.ff1_b),
            s.param(block.ff2_w),
            s.param(block.ff2_b),
        );
        let hidden = s.tape.matmul(x, w1)?;
        let hidden = s.tape.add_row(hidden, b1)?;
        let hidden = s.tape.leaky_relu(hidden, self.config.leaky_slope);
        let out = s.tape.matmul(hidden, w2)?;
        let out = s.tape.add_row(out, b2)?;
        s.tape.add(x, out)
    }

    /// Self-attentive pooling over the `n + 2` real rows of `h`.
    pub fn pool(&self, s: &mut Session<'_>, h: &HiddenStates) -> Result<Pooled> {
        let rows = s.tape.value(h.states).rows();
        let states = if rows == h.rows() {
            h.states
        } else {
            s.tape.slice_rows(h.states, 0, h.rows())?
        };
        let (w1, w2) = (s.param(self.pool_w1), s.param(self.pool_w2));
        self_attentive_pool(&mut s.tape, states, w1, w2)
    }

    /// `encode` followed by `pool`.
    pub fn encode_pooled(&self, s: &mut Session<'_>, ids: &[usize]) -> Result<(HiddenStates, Pooled)> {
        let h = self.encode(s, ids)?;
        let p = self.pool(s, &h)?;
        Ok((h, p))
    }
}

/// `a = softmax(tanh(H·W₁)·w₂)`, `r = aᵀ·H` for `H` (L×d), `W₁` (d×d_a),
/// `w₂` (d_a×1).
pub fn self_attentive_pool(tape: &mut Tape, h: Var, w1: Var, w2: Var) -> Result<Pooled> {
    let proj = tape.matmul(h, w1)?;
    let proj = tape.tanh(proj);
    let scores = tape.matmul(proj, w2)?;
    let weights = tape.softmax(scores, 0)?;
    let wt = tape.transpose(weights)?;
    let rep = tape.matmul(wt, h)?;
    Ok(Pooled { rep, weights })
}
