use std::collections::BTreeSet;

use super::config::TrainConfig;
use super::model::{LabelSpaces, Model};
use crate::data_io::{Sample, Vocabularies};
use crate::error::{Error, Result};
use crate::label_space::{l_inter, l_intra_paired, l_re};
use crate::numerics::{Session, Var};

/// A sample with its labels resolved to ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<String>,
    pub intents: Vec<usize>,
    pub slots: Vec<usize>,
}

/// Resolves label names; unknown labels and over-long intent lists are
/// data errors naming the sample.
pub fn to_examples(samples: &[Sample], vocabs: &Vocabularies, max_count: usize) -> Result<Vec<Example>> {
    samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            if s.intents.len() > max_count {
                return Err(Error::Data(format!(
                    "sample {k} ({}) has {} intents but max_count is {max_count}",
                    s.tokens.join(" "),
                    s.intents.len()
                )));
            }
            let intents = s
                .intents
                .iter()
                .map(|i| {
                    vocabs
                        .intents
                        .index_of(i)
                        .ok_or_else(|| Error::Data(format!("sample {k}: unknown intent {i}")))
                })
                .collect::<Result<_>>()?;
            let slots = s
                .slots
                .iter()
                .map(|t| {
                    vocabs
                        .slots
                        .index_of(t)
                        .ok_or_else(|| Error::Data(format!("sample {k}: unknown slot tag {t}")))
                })
                .collect::<Result<_>>()?;
            Ok(Example {
                tokens: s.tokens.clone(),
                intents,
                slots,
            })
        })
        .collect()
}

/// Batch means of the five loss terms and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub intent: f64,
    pub slot: f64,
    pub count: f64,
    pub reg_intent: f64,
    pub reg_slot: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.total,
            self.intent,
            self.slot,
            self.count,
            self.reg_intent,
            self.reg_slot,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub(crate) fn accumulate(&mut self, other: &LossBreakdown, weight: f64) {
        self.total += weight * other.total;
        self.intent += weight * other.intent;
        self.slot += weight * other.slot;
        self.count += weight * other.count;
        self.reg_intent += weight * other.reg_intent;
        self.reg_slot += weight * other.reg_slot;
    }
}

struct Terms {
    intent: Var,
    slot: Var,
    count: Var,
    reg_intent: Var,
    reg_slot: Var,
}

/// For intents, L_RE pulls `r̂` toward every gold intent embedding; for
/// slots, L_inter uses the distinct gold tags of the utterance and L_intra
/// pairs each token with the embedding of its own gold tag.
///
/// `α(L_ID + γL_RE^I) + β(L_SF + γL_RE^S) + (1−α)L_IND`, each term averaged
/// over the batch. L_ID is binary cross-entropy on the intent logits; L_SF
/// and L_IND are categorical cross-entropies.
pub fn joint_loss(
    s: &mut Session<'_>,
    model: &Model,
    spaces: &LabelSpaces,
    batch: &[Example],
    config: &TrainConfig,
) -> Result<(Var, LossBreakdown)> {
    if batch.is_empty() {
        return Err(Error::contract("joint loss needs a non-empty batch"));
    }
    let n_intents = model.vocabs().intents.len();
    let max_count = config.max_count;
    let mut per_sample: Vec<Terms> = Vec::with_capacity(batch.len());
    for (k, ex) in batch.iter().enumerate() {
        let count = ex.intents.len();
        if count == 0 || count > max_count {
            return Err(Error::Data(format!(
                "batch sample {k} ({}) has {count} intents; expected 1..={max_count}",
                ex.tokens.join(" ")
            )));
        }
        let forced = config.teacher_forcing.then_some(ex.intents.as_slice());
        let f = model.forward(s, spaces, &ex.tokens, forced)?;

        let mut hot = vec![0.0; n_intents];
        for &i in &ex.intents {
            hot[i] = 1.0;
        }
        let intent = s.tape.bce_with_logits(f.intent_logits, &hot)?;
        let slot = s.tape.softmax_cross_entropy(f.slot_logits, &ex.slots)?;
        let count_loss = s.tape.softmax_cross_entropy(f.count_logits, &[count - 1])?;

        let lambda = config.lambda;
        let reg_intent = l_re(&mut s.tape, &spaces.intent, f.r_hat, &ex.intents, lambda, config.exclude_self)?;
        let gold_slots: Vec<usize> = ex.slots.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let reg_slot = {
            let inter = l_inter(&mut s.tape, &spaces.slot, &gold_slots, config.exclude_self)?;
            let gold_rows = s.tape.gather_rows(spaces.slot.basis, &ex.slots)?;
            let intra = l_intra_paired(&mut s.tape, f.h_hat, gold_rows)?;
            let intra = s.tape.scale(intra, lambda);
            s.tape.add(inter, intra)?
        };
        per_sample.push(Terms {
            intent,
            slot,
            count: count_loss,
            reg_intent,
            reg_slot,
        });
    }

    let inv = 1.0 / batch.len() as f64;
    let mut mean = |pick: fn(&Terms) -> Var| -> Result<Var> {
        let mut acc = pick(&per_sample[0]);
        for t in &per_sample[1..] {
            acc = s.tape.add(acc, pick(t))?;
        }
        Ok(s.tape.scale(acc, inv))
    };
    let l_id = mean(|t| t.intent)?;
    let l_sf = mean(|t| t.slot)?;
    let l_ind = mean(|t| t.count)?;
    let re_i = mean(|t| t.reg_intent)?;
    let re_s = mean(|t| t.reg_slot)?;

    let (alpha, beta, gamma) = (config.alpha, config.beta, config.effective_gamma());
    let t = &mut s.tape;
    let reg = t.scale(re_i, gamma);
    let intent_part = t.add(l_id, reg)?;
    let intent_part = t.scale(intent_part, alpha);
    let reg = t.scale(re_s, gamma);
    let slot_part = t.add(l_sf, reg)?;
    let slot_part = t.scale(slot_part, beta);
    let count_part = t.scale(l_ind, 1.0 - alpha);
    let total = t.add(intent_part, slot_part)?;
    let total = t.add(total, count_part)?;

    let item = |v: Var| t.value(v).values()[0];
    let breakdown = LossBreakdown {
        total: item(total),
        intent: item(l_id),
        slot: item(l_sf),
        count: item(l_ind),
        reg_intent: item(re_i),
        reg_slot: item(re_s),
    };
    Ok((total, breakdown))
}

