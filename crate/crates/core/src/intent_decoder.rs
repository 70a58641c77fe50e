//! Multi-intent probabilities, intent-count prediction, and count-guided
//! top-k selection.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{argmax, ParamId, ParamStore, Session, Tape, Var};

/// `p = σ(W_I·LeakyReLU(W_u·r̂ + b_u) + b_I)`, returned as pre-sigmoid logits
/// (1×|I|); callers apply the sigmoid or feed the logits to a BCE loss.
pub fn intent_logits(
    tape: &mut Tape,
    r_hat: Var,
    w_u: Var,
    b_u: Var,
    w_i: Var,
    b_i: Var,
    slope: f64,
) -> Result<Var> {
    let hidden = tape.matmul(r_hat, w_u)?;
    let hidden = tape.add_row(hidden, b_u)?;
    let hidden = tape.leaky_relu(hidden, slope);
    let out = tape.matmul(hidden, w_i)?;
    tape.add_row(out, b_i)
}

#[derive(Clone, Debug)]
pub struct IntentHead {
    w_u: ParamId,
    b_u: ParamId,
    w_i: ParamId,
    b_i: ParamId,
    slope: f64,
}

impl IntentHead {
    pub fn new<R: Rng>(
        dim: usize,
        intents: usize,
        slope: f64,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w_u: store.insert_uniform("intent.w_u", vec![dim, dim], dim, rng)?,
            b_u: store.insert_uniform("intent.b_u", vec![dim], dim, rng)?,
            w_i: store.insert_uniform("intent.w_i", vec![dim, intents], dim, rng)?,
            b_i: store.insert_uniform("intent.b_i", vec![intents], dim, rng)?,
            slope,
        })
    }

    pub fn logits(&self, s: &mut Session<'_>, r_hat: Var) -> Result<Var> {
        let (w_u, b_u, w_i, b_i) = (
            s.param(self.w_u),
            s.param(self.b_u),
            s.param(self.w_i),
            s.param(self.b_i),
        );
        intent_logits(&mut s.tape, r_hat, w_u, b_u, w_i, b_i, self.slope)
    }

    pub fn probs(&self, s: &mut Session<'_>, r_hat: Var) -> Result<Var> {
        let logits = self.logits(s, r_hat)?;
        Ok(s.tape.sigmoid(logits))
    }
}

/// Softmax classifier over intent counts; class `k` means `k + 1` intents.
/// Reads the raw `h_CLS` row.
#[derive(Clone, Debug)]
pub struct CountHead {
    w: ParamId,
    b: ParamId,
    max_count: usize,
}

impl CountHead {
    pub fn new<R: Rng>(
        dim: usize,
        max_count: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        if max_count == 0 {
            return Err(Error::Config("max intent count must be >= 1".into()));
        }
        Ok(Self {
            w: store.insert_uniform("count.w", vec![dim, max_count], dim, rng)?,
            b: store.insert_uniform("count.b", vec![max_count], dim, rng)?,
            max_count,
        })
    }

    pub fn max_count(&self) -> usize {
        self.max_count
    }

    /// Logits (1×max_count).
    pub fn logits(&self, s: &mut Session<'_>, h_cls: Var) -> Result<Var> {
        let (w, b) = (s.param(self.w), s.param(self.b));
        let out = s.tape.matmul(h_cls, w)?;
        s.tape.add_row(out, b)
    }
}

/// Predicted count from count-head logits (argmax, lowest index on ties).
pub fn count_from_logits(logits: &[f64]) -> usize {
    argmax(logits) + 1
}

/// Indices of the `k` largest probabilities in descending order; ties go to
/// the lower index.
pub fn select_top_k(p: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > p.len() {
        return Err(Error::contract(format!(
            "top-k needs 1 <= k <= {}, got {k}",
            p.len()
        )));
    }
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntentPrediction {
    pub probs: Vec<f64>,
    pub count: usize,
    pub selected: Vec<usize>,
}

impl IntentPrediction {
    /// Picks `min(count, |I|)` intents from `probs`.
    pub fn decide(probs: Vec<f64>, count_logits: &[f64]) -> Result<Self> {
        let count = count_from_logits(count_logits);
        let selected = select_top_k(&probs, count.min(probs.len()))?;
        Ok(Self {
            probs,
            count,
            selected,
        })
    }
}
