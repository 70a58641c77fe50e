//! The full network: utterance and label encoders, label spaces, intent and
//! count heads, the interaction graph (or its ablation), and the slot head.

use std::fmt::Write as _;

use rand::Rng;

use super::config::TrainConfig;
use crate::data_io::{Sample, Vocabularies};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::intent_decoder::{CountHead, IntentHead, IntentPrediction};
use crate::interaction_graph::{build_graph, GatParams, InteractionGraph};
use crate::label_space::{embed_labels, inject, LabelSpace};
use crate::numerics::{ParamStore, Session, Var};
use crate::slot_decoder::{decode_slots, SlotHead};

/// Samples per tape when running inference.
const PREDICT_CHUNK: usize = 16;

#[derive(Clone, Debug)]
pub struct Model {
    config: TrainConfig,
    vocabs: Vocabularies,
    utterance: Encoder,
    labels: Encoder,
    intent_head: IntentHead,
    count_head: CountHead,
    gat: GatParams,
    slot_head: SlotHead,
}

/// Intent and slot label spaces for one tape.
#[derive(Clone, Copy, Debug)]
pub struct LabelSpaces {
    pub intent: LabelSpace,
    pub slot: LabelSpace,
}

/// Everything one utterance produces on the tape.
#[derive(Clone, Debug)]
pub struct Forward {
    /// 1×|I| pre-sigmoid scores.
    pub intent_logits: Var,
    /// 1×max_count.
    pub count_logits: Var,
    /// n×|S|.
    pub slot_logits: Var,
    /// Sentence representation fed to the intent head (1×d).
    pub r_hat: Var,
    /// Token representations fed to the graph (n×d).
    pub h_hat: Var,
    /// Intents that became graph nodes.
    pub selected: Vec<usize>,
    pub graph: Option<InteractionGraph>,
    /// Per layer, per head, (m+n)×(m+n).
    pub attention: Vec<Vec<Var>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub intents: IntentPrediction,
    pub slots: Vec<usize>,
    /// Row-major n×|S|.
    pub slot_probs: Vec<f64>,
}

impl Model {
    /// Registers every parameter in `store`. All parameters exist whatever
    /// the ablation flags, so checkpoints share one layout.
    pub fn new<R: Rng>(
        config: &TrainConfig,
        vocabs: Vocabularies,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let utterance = Encoder::new("utt", config.encoder(), vocabs.tokens.len(), store, rng)?;
        let labels = Encoder::new("label", config.encoder(), vocabs.label_words.len(), store, rng)?;
        let intent_head = IntentHead::new(d, vocabs.intents.len(), config.leaky_slope, store, rng)?;
        let count_head = CountHead::new(d, config.max_count, store, rng)?;
        let gat = GatParams::new(config.gat(), d, store, rng)?;
        let slot_head = SlotHead::new(d, vocabs.slots.len(), store, rng)?;
        Ok(Self {
            config: config.clone(),
            vocabs,
            utterance,
            labels,
            intent_head,
            count_head,
            gat,
            slot_head,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn vocabs(&self) -> &Vocabularies {
        &self.vocabs
    }

    /// Encodes every label name and builds both spaces.
    pub fn label_spaces(&self, s: &mut Session<'_>) -> Result<LabelSpaces> {
        let words = &self.vocabs.label_words;
        let ridge = self.config.ridge;
        Ok(LabelSpaces {
            intent: embed_labels(s, &self.vocabs.intents, &self.labels, words, ridge)?,
            slot: embed_labels(s, &self.vocabs.slots, &self.labels, words, ridge)?,
        })
    }

    /// Runs one utterance. `forced` supplies graph intents (teacher forcing);
    /// otherwise the predicted top-k intents are used.
    pub fn forward<S: AsRef<str>>(
        &self,
        s: &mut Session<'_>,
        spaces: &LabelSpaces,
        tokens: &[S],
        forced: Option<&[usize]>,
    ) -> Result<Forward> {
        let n = tokens.len();
        let ids = self.vocabs.tokens.ids(tokens);
        let h = self.utterance.encode(s, &ids)?;
        let pooled = self.utterance.pool(s, &h)?;
        let h_cls = s.tape.slice_rows(h.states, 0, 1)?;
        let token_states = s.tape.slice_rows(h.states, 1, n + 1)?;

        let (r_hat, h_hat) = if self.config.disable_lsi {
            (pooled.rep, token_states)
        } else {
            let r = inject(&mut s.tape, pooled.rep, &spaces.intent)?.projected;
            let t = inject(&mut s.tape, token_states, &spaces.slot)?.projected;
            (r, t)
        };

        let intent_logits = self.intent_head.logits(s, r_hat)?;
        let count_logits = self.count_head.logits(s, h_cls)?;
        let selected = match forced {
            Some(gold) => gold.to_vec(),
            None => self.decide_intents(s, intent_logits, count_logits)?.selected,
        };
        if selected.is_empty() {
            return Err(Error::contract("graph needs at least one intent"));
        }

        let embs = s.tape.gather_rows(spaces.intent.basis, &selected)?;
        let embs = if self.config.label_grad {
            embs
        } else {
            let value = s.tape.value(embs).clone();
            s.tape.constant(value)
        };

        let (slot_states, graph, attention) = if self.config.disable_gil {
            (intent_attention(s, h_hat, embs, self.config.dim)?, None, Vec::new())
        } else {
            let delta = self.config.delta.unwrap_or(if n > 1 { 1.0 / n as f64 } else { 0.0 });
            let graph = build_graph(&s.tape, h_hat, embs, self.config.window, delta)?;
            let out = self.gat.forward(s, &graph, embs, h_hat)?;
            (out.slot_states, Some(graph), out.attention)
        };
        let slot_logits = self.slot_head.logits(s, slot_states)?;
        Ok(Forward {
            intent_logits,
            count_logits,
            slot_logits,
            r_hat,
            h_hat,
            selected,
            graph,
            attention,
        })
    }

    fn decide_intents(
        &self,
        s: &Session<'_>,
        intent_logits: Var,
        count_logits: Var,
    ) -> Result<IntentPrediction> {
        let probs = s
            .tape
            .value(intent_logits)
            .values()
            .iter()
            .map(|&z| 1.0 / (1.0 + (-z).exp()))
            .collect();
        IntentPrediction::decide(probs, s.tape.value(count_logits).values())
    }

    /// Inference with predicted intents feeding the graph.
    pub fn predict<S: AsRef<str>>(&self, store: &ParamStore, utterances: &[Vec<S>]) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(utterances.len());
        for chunk in utterances.chunks(PREDICT_CHUNK) {
            let mut s = Session::new(store);
            let spaces = self.label_spaces(&mut s)?;
            for tokens in chunk {
                let f = self.forward(&mut s, &spaces, tokens, None)?;
                let intents = self.decide_intents(&s, f.intent_logits, f.count_logits)?;
                let slots = decode_slots(s.tape.value(f.slot_logits).values(), self.vocabs.slots.len());
                out.push(Prediction {
                    intents,
                    slots: slots.labels,
                    slot_probs: slots.probs,
                });
            }
        }
        Ok(out)
    }

    /// Predictions rendered as samples (same tokens, predicted labels).
    pub fn predict_samples(&self, store: &ParamStore, samples: &[Sample]) -> Result<Vec<Sample>> {
        let tokens: Vec<Vec<String>> = samples.iter().map(|s| s.tokens.clone()).collect();
        let preds = self.predict(store, &tokens)?;
        Ok(samples
            .iter()
            .zip(preds)
            .map(|(s, p)| Sample {
                tokens: s.tokens.clone(),
                slots: p
                    .slots
                    .iter()
                    .map(|&i| self.vocabs.slots.name(i).to_string())
                    .collect(),
                intents: p
                    .intents
                    .selected
                    .iter()
                    .map(|&i| self.vocabs.intents.name(i).to_string())
                    .collect(),
            })
            .collect())
    }

    /// Relevance and attention matrices for one utterance.
    pub fn inspect<S: AsRef<str>>(&self, store: &ParamStore, tokens: &[S]) -> Result<Inspection> {
        let mut s = Session::new(store);
        let spaces = self.label_spaces(&mut s)?;
        let f = self.forward(&mut s, &spaces, tokens, None)?;
        let intents: Vec<String> = f
            .selected
            .iter()
            .map(|&i| self.vocabs.intents.name(i).to_string())
            .collect();
        let tokens: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
        let attention = f
            .attention
            .iter()
            .map(|layer| layer.iter().map(|&a| s.tape.value(a).values().to_vec()).collect())
            .collect();
        Ok(Inspection {
            relevance: f.graph.as_ref().map(|g| g.relevance().to_vec()),
            threshold: f.graph.as_ref().map(InteractionGraph::threshold),
            tokens,
            intents,
            attention,
        })
    }
}

/// Scaled dot-product attention of tokens over intent embeddings, added to
/// the token states. Stands in for the graph when it is ablated.
fn intent_attention(s: &mut Session<'_>, h_hat: Var, embs: Var, d: usize) -> Result<Var> {
    let et = s.tape.transpose(embs)?;
    let scores = s.tape.matmul(h_hat, et)?;
    let scores = s.tape.scale(scores, 1.0 / (d as f64).sqrt());
    let attn = s.tape.softmax(scores, 1)?;
    let ctx = s.tape.matmul(attn, embs)?;
    s.tape.add(h_hat, ctx)
}

/// Graph internals for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Inspection {
    pub tokens: Vec<String>,
    pub intents: Vec<String>,
    /// Row-major n×m; absent when the graph is ablated.
    pub relevance: Option<Vec<f64>>,
    pub threshold: Option<f64>,
    /// Per layer, per head, row-major N×N with intents first.
    pub attention: Vec<Vec<Vec<f64>>>,
}

impl Inspection {
    pub fn node_names(&self) -> Vec<String> {
        self.intents
            .iter()
            .map(|i| format!("intent:{i}"))
            .chain(self.tokens.iter().enumerate().map(|(k, t)| format!("token{k}:{t}")))
            .collect()
    }

    /// `token,<intent>...` header then one row per token.
    pub fn relevance_csv(&self) -> Option<String> {
        let rel = self.relevance.as_ref()?;
        let m = self.intents.len();
        let mut out = String::from("token");
        for i in &self.intents {
            out.push(',');
            out.push_str(&csv_field(i));
        }
        out.push('\n');
        for (t, row) in self.tokens.iter().zip(rel.chunks(m)) {
            out.push_str(&csv_field(t));
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        Some(out)
    }

    /// Rows are source nodes, columns their (possible) neighbours; 0 marks
    /// a non-edge.
    pub fn attention_csv(&self, layer: usize, head: usize) -> Option<String> {
        let a = self.attention.get(layer)?.get(head)?;
        let names = self.node_names();
        let mut out = String::from("node");
        for n in &names {
            out.push(',');
            out.push_str(&csv_field(n));
        }
        out.push('\n');
        for (name, row) in names.iter().zip(a.chunks(names.len())) {
            out.push_str(&csv_field(name));
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        Some(out)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
