use rand::Rng;

use crate::error::Result;
use crate::numerics::{argmax, softmax_slice, ParamId, ParamStore, Session, Var};

/// Affine map from final token states to slot-label logits.
#[derive(Clone, Debug)]
pub struct SlotHead {
    w: ParamId,
    b: ParamId,
}

impl SlotHead {
    pub fn new<R: Rng>(dim: usize, labels: usize, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w: store.insert_uniform("slot.w", vec![dim, labels], dim, rng)?,
            b: store.insert_uniform("slot.b", vec![labels], dim, rng)?,
        })
    }

    /// Logits (n×|S|) for token states (n×d).
    pub fn logits(&self, s: &mut Session<'_>, states: Var) -> Result<Var> {
        let (w, b) = (s.param(self.w), s.param(self.b));
        let out = s.tape.matmul(states, w)?;
        s.tape.add_row(out, b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlotPrediction {
    pub labels: Vec<usize>,
    /// Row-major n×|S| distribution.
    pub probs: Vec<f64>,
}

/// Per-row softmax and argmax (lowest index on ties).
pub fn decode_slots(logits: &[f64], labels: usize) -> SlotPrediction {
    let mut probs = Vec::with_capacity(logits.len());
    let mut out = Vec::with_capacity(logits.len() / labels.max(1));
    for row in logits.chunks(labels) {
        let p = softmax_slice(row);
        out.push(argmax(&p));
        probs.extend(p);
    }
    SlotPrediction { labels: out, probs }
}
