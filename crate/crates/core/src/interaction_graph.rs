//! Dynamic intent–slot interaction graph and graph-attention propagation.
//!
//! Nodes `0..m` are the selected intents (initialised with their label
//! embeddings), nodes `m..m+n` are the tokens (initialised with their
//! projected states). Intents form a clique, tokens link to neighbours within
//! `window`, and token `i` links to intent `j` when its relevance
//! `δ_ij = softmax_over_tokens(ĥ_i·e_j/√d)` exceeds the threshold.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::linalg::dot;
use crate::numerics::{ParamId, ParamStore, Session, Tape, Var};

/// `δ[i][j]` for token states `h_hat` (n×d) and intent embeddings (m×d),
/// normalised over tokens for each intent.
pub fn relevance(h_hat: &[f64], intents: &[f64], d: usize) -> Result<Vec<f64>> {
    if d == 0 || h_hat.len() % d != 0 || intents.len() % d != 0 {
        return Err(Error::Dimension {
            op: "relevance",
            left: vec![h_hat.len(), d],
            right: vec![intents.len(), d],
        });
    }
    let (n, m) = (h_hat.len() / d, intents.len() / d);
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0; n * m];
    for j in 0..m {
        let e = &intents[j * d..(j + 1) * d];
        let scores: Vec<f64> = (0..n)
            .map(|i| dot(&h_hat[i * d..(i + 1) * d], e) * scale)
            .collect();
        let probs = crate::numerics::softmax_slice(&scores);
        for (i, p) in probs.into_iter().enumerate() {
            out[i * m + j] = p;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionGraph {
    intents: usize,
    slots: usize,
    window: usize,
    threshold: f64,
    /// n×m, row = token, column = intent.
    relevance: Vec<f64>,
    /// Pairs `(a, b)` with `a < b`, intent indices.
    pub intent_intent: Vec<(usize, usize)>,
    /// Pairs `(a, b)` with `a < b`, token indices.
    pub slot_slot: Vec<(usize, usize)>,
    /// Pairs `(token, intent)`.
    pub intent_slot: Vec<(usize, usize)>,
}

impl InteractionGraph {
    /// Builds the edge sets from a precomputed relevance matrix (n×m).
    pub fn from_relevance(
        relevance: Vec<f64>,
        slots: usize,
        intents: usize,
        window: usize,
        threshold: f64,
    ) -> Result<Self> {
        if intents == 0 {
            return Err(Error::contract("interaction graph needs at least one intent"));
        }
        if slots == 0 {
            return Err(Error::contract("interaction graph needs at least one token"));
        }
        if !(0.0..1.0).contains(&threshold) {
            return Err(Error::contract(format!(
                "relevance threshold must lie in [0, 1), got {threshold}"
            )));
        }
        if relevance.len() != slots * intents {
            return Err(Error::Dimension {
                op: "build_graph",
                left: vec![slots, intents],
                right: vec![relevance.len()],
            });
        }
        let mut intent_intent = Vec::new();
        for a in 0..intents {
            for b in a + 1..intents {
                intent_intent.push((a, b));
            }
        }
        let mut slot_slot = Vec::new();
        for a in 0..slots {
            for b in a + 1..slots.min(a + window + 1) {
                slot_slot.push((a, b));
            }
        }
        let mut intent_slot = Vec::new();
        for i in 0..slots {
            for j in 0..intents {
                if relevance[i * intents + j] > threshold {
                    intent_slot.push((i, j));
                }
            }
        }
        Ok(Self {
            intents,
            slots,
            window,
            threshold,
            relevance,
            intent_intent,
            slot_slot,
            intent_slot,
        })
    }

    pub fn intents(&self) -> usize {
        self.intents
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn nodes(&self) -> usize {
        self.intents + self.slots
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn relevance(&self) -> &[f64] {
        &self.relevance
    }

    /// Node index of token `i`.
    pub fn slot_node(&self, i: usize) -> usize {
        self.intents + i
    }

    /// Symmetric N×N neighbourhood mask including self-loops.
    pub fn adjacency(&self) -> Vec<bool> {
        let n = self.nodes();
        let mut adj = vec![false; n * n];
        let mut link = |a: usize, b: usize| {
            adj[a * n + b] = true;
            adj[b * n + a] = true;
        };
        for i in 0..n {
            link(i, i);
        }
        for &(a, b) in &self.intent_intent {
            link(a, b);
        }
        for &(a, b) in &self.slot_slot {
            link(self.intents + a, self.intents + b);
        }
        for &(t, j) in &self.intent_slot {
            link(self.intents + t, j);
        }
        adj
    }
}

/// Computes relevance from tape values and builds the graph.
pub fn build_graph(
    tape: &Tape,
    h_hat: Var,
    intent_embs: Var,
    window: usize,
    threshold: f64,
) -> Result<InteractionGraph> {
    let (th, te) = (tape.value(h_hat), tape.value(intent_embs));
    let (n, d) = th.dims2()?;
    let (m, d2) = te.dims2()?;
    if d != d2 {
        return Err(Error::Dimension {
            op: "build_graph",
            left: th.shape().to_vec(),
            right: te.shape().to_vec(),
        });
    }
    if m == 0 {
        return Err(Error::contract("interaction graph needs at least one intent"));
    }
    let rel = relevance(th.values(), te.values(), d)?;
    InteractionGraph::from_relevance(rel, n, m, window, threshold)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GatActivation {
    LeakyRelu(f64),
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatConfig {
    pub layers: usize,
    pub heads: usize,
    pub activation: GatActivation,
    /// Slope of the LeakyReLU inside the attention scores.
    pub attn_slope: f64,
}

impl Default for GatConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 1,
            activation: GatActivation::LeakyRelu(0.01),
            attn_slope: 0.2,
        }
    }
}

#[derive(Clone, Debug)]
struct GatLayer {
    w: ParamId,
    a_src: ParamId,
    a_dst: ParamId,
}

/// Per-layer shared projection `W_g` and attention vectors.
#[derive(Clone, Debug)]
pub struct GatParams {
    config: GatConfig,
    dim: usize,
    layers: Vec<GatLayer>,
}

/// Node states after propagation plus the attention matrices
/// (one N×N matrix per layer and head).
#[derive(Clone, Debug)]
pub struct GatOutput {
    pub intent_states: Var,
    pub slot_states: Var,
    pub attention: Vec<Vec<Var>>,
}

impl GatParams {
    pub fn new<R: Rng>(
        config: GatConfig,
        dim: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        if config.layers == 0 || config.heads == 0 || dim % config.heads != 0 {
            return Err(Error::Config(format!(
                "GAT needs >= 1 layer and a head count dividing {dim}"
            )));
        }
        let dh = dim / config.heads;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            layers.push(GatLayer {
                w: store.insert_uniform(format!("gat.layer{l}.w"), vec![dim, dim], dim, rng)?,
                a_src: store.insert_uniform(format!("gat.layer{l}.a_src"), vec![dim, 1], 2 * dh, rng)?,
                a_dst: store.insert_uniform(format!("gat.layer{l}.a_dst"), vec![dim, 1], 2 * dh, rng)?,
            });
        }
        Ok(Self {
            config,
            dim,
            layers,
        })
    }

    pub fn config(&self) -> &GatConfig {
        &self.config
    }

    pub fn forward(
        &self,
        s: &mut Session<'_>,
        graph: &InteractionGraph,
        intent_states: Var,
        slot_states: Var,
    ) -> Result<GatOutput> {
        let layers: Vec<(Var, Var, Var)> = self
            .layers
            .iter()
            .map(|l| (s.param(l.w), s.param(l.a_src), s.param(l.a_dst)))
            .collect();
        gat_forward(
            &mut s.tape,
            graph,
            intent_states,
            slot_states,
            &layers,
            self.config.heads,
            self.config.activation,
            self.config.attn_slope,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Runs every layer: `g_i' = σ(Σ_{j∈N(i)∪{i}} α_ij·W_g·g_j)` with
/// `α_i· = softmax_N(i)(LeakyReLU(a_srcᵀ·W_g·g_i + a_dstᵀ·W_g·g_j))`, slot and
/// intent neighbours normalised jointly.
#[allow(clippy::too_many_arguments)]
pub fn gat_forward(
    tape: &mut Tape,
    graph: &InteractionGraph,
    intent_states: Var,
    slot_states: Var,
    layers: &[(Var, Var, Var)],
    heads: usize,
    activation: GatActivation,
    attn_slope: f64,
) -> Result<GatOutput> {
    let mask = graph.adjacency();
    let mut x = tape.concat_rows(&[intent_states, slot_states])?;
    let d = tape.value(x).cols();
    if d % heads != 0 {
        return Err(Error::contract(format!("{heads} heads do not divide {d}")));
    }
    let dh = d / heads;
    let mut attention = Vec::with_capacity(layers.len());
    for &(w, a_src, a_dst) in layers {
        let z = tape.matmul(x, w)?;
        let mut outs = Vec::with_capacity(heads);
        let mut layer_attn = Vec::with_capacity(heads);
        for h in 0..heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let zh = if heads == 1 { z } else { tape.slice_cols(z, lo, hi)? };
            let (asrc, adst) = if heads == 1 {
                (a_src, a_dst)
            } else {
                (tape.slice_rows(a_src, lo, hi)?, tape.slice_rows(a_dst, lo, hi)?)
            };
            let src = tape.matmul(zh, asrc)?;
            let dst = tape.matmul(zh, adst)?;
            let scores = tape.add_outer(src, dst);
            let scores = tape.leaky_relu(scores, attn_slope);
            let alpha = tape.masked_softmax_rows(scores, &mask)?;
            outs.push(tape.matmul(alpha, zh)?);
            layer_attn.push(alpha);
        }
        let agg = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        x = match activation {
            GatActivation::LeakyRelu(slope) => tape.leaky_relu(agg, slope),
            GatActivation::Sigmoid => tape.sigmoid(agg),
        };
        attention.push(layer_attn);
    }
    let m = graph.intents();
    let intent_out = tape.slice_rows(x, 0, m)?;
    let slot_out = tape.slice_rows(x, m, graph.nodes())?;
    Ok(GatOutput {
        intent_states: intent_out,
        slot_states: slot_out,
        attention,
    })
}
