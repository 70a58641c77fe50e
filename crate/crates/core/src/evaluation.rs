//! Slot F1, intent accuracy and sentence-level overall accuracy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::data_io::{serialize_corpus, Sample};
use crate::error::{Error, Result};
use crate::io_util::write_atomic;

/// A labelled span `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

/// Lenient CoNLL chunking: `B-x` opens a span, and so does an `I-x` that
/// does not continue a span of type `x`.
pub fn extract_spans<S: AsRef<str>>(tags: &[S]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let tag = tag.as_ref();
        let (prefix, ty) = match tag.split_once('-') {
            Some((p @ ("B" | "I"), ty)) => (p, ty),
            _ => ("O", ""),
        };
        if let Some((start, cur)) = open {
            if prefix != "I" || ty != cur {
                spans.push(Span {
                    start,
                    end: i,
                    label: cur.to_string(),
                });
                open = None;
            }
        }
        if prefix == "B" || (prefix == "I" && open.is_none()) {
            open = Some((i, ty));
        }
    }
    if let Some((start, cur)) = open {
        spans.push(Span {
            start,
            end: tags.len(),
            label: cur.to_string(),
        });
    }
    spans
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SpanCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl SpanCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2PR/(P+R)`, evaluated as `2TP/(2TP+FP+FN)`; 0 when either side has
    /// no spans, 1 when both are empty.
    pub fn f1(&self) -> f64 {
        if self.tp + self.fp + self.fn_ == 0 {
            return 1.0;
        }
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    fn add(&mut self, other: SpanCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SlotScores {
    pub counts: SpanCounts,
    pub per_class: BTreeMap<String, SpanCounts>,
}

impl SlotScores {
    pub fn f1(&self) -> f64 {
        self.counts.f1()
    }
}

pub fn slot_f1<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<SlotScores> {
    if gold.len() != pred.len() {
        return Err(Error::contract(format!(
            "{} gold sequences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut scores = SlotScores::default();
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::contract(format!(
                "sequence {i}: {} gold tags but {} predicted",
                g.len(),
                p.len()
            )));
        }
        let gs: BTreeSet<Span> = extract_spans(g).into_iter().collect();
        let ps: BTreeSet<Span> = extract_spans(p).into_iter().collect();
        for span in gs.union(&ps) {
            let c = match (gs.contains(span), ps.contains(span)) {
                (true, true) => SpanCounts { tp: 1, fp: 0, fn_: 0 },
                (false, true) => SpanCounts { tp: 0, fp: 1, fn_: 0 },
                _ => SpanCounts { tp: 0, fp: 0, fn_: 1 },
            };
            scores.counts.add(c);
            scores.per_class.entry(span.label.clone()).or_default().add(c);
        }
    }
    Ok(scores)
}

/// Fraction of utterances whose predicted intent set equals the gold set.
pub fn intent_acc<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<f64> {
    if gold.len() != pred.len() {
        return Err(Error::contract("intent sequences are not aligned"));
    }
    let hits = gold
        .iter()
        .zip(pred)
        .filter(|(g, p)| same_set(g, p))
        .count();
    Ok(ratio(hits, gold.len()))
}

fn same_set<S: AsRef<str>>(a: &[S], b: &[S]) -> bool {
    let a: BTreeSet<&str> = a.iter().map(AsRef::as_ref).collect();
    let b: BTreeSet<&str> = b.iter().map(AsRef::as_ref).collect();
    a == b
}

/// Utterances with both the intent set and every slot tag correct.
pub fn overall_acc(gold: &[Sample], pred: &[Sample]) -> Result<f64> {
    Ok(evaluate(gold, pred)?.overall_acc)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub samples: usize,
    pub slot_f1: f64,
    pub slot_precision: f64,
    pub slot_recall: f64,
    pub intent_acc: f64,
    /// Fraction of utterances with every slot tag correct.
    pub slot_sentence_acc: f64,
    pub overall_acc: f64,
    pub counts: SpanCounts,
    pub per_class: BTreeMap<String, SpanCounts>,
}

pub fn evaluate(gold: &[Sample], pred: &[Sample]) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::contract(format!(
            "{} gold samples but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let gold_tags: Vec<Vec<&str>> = gold.iter().map(|s| tags(s)).collect();
    let pred_tags: Vec<Vec<&str>> = pred.iter().map(|s| tags(s)).collect();
    let slots = slot_f1(&gold_tags, &pred_tags)?;
    let (mut intent_hits, mut slot_hits, mut both) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        let intent_ok = same_set(&g.intents, &p.intents);
        let slot_ok = g.slots == p.slots;
        intent_hits += usize::from(intent_ok);
        slot_hits += usize::from(slot_ok);
        both += usize::from(intent_ok && slot_ok);
    }
    let n = gold.len();
    Ok(EvalReport {
        samples: n,
        slot_f1: slots.f1(),
        slot_precision: slots.counts.precision(),
        slot_recall: slots.counts.recall(),
        intent_acc: ratio(intent_hits, n),
        slot_sentence_acc: ratio(slot_hits, n),
        overall_acc: ratio(both, n),
        counts: slots.counts,
        per_class: slots.per_class,
    })
}

fn tags(s: &Sample) -> Vec<&str> {
    s.slots.iter().map(String::as_str).collect()
}

impl EvalReport {
    /// Aligned human-readable table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16} {:>8}", "metric", "value");
        for (name, v) in [
            ("slot_f1", self.slot_f1),
            ("intent_acc", self.intent_acc),
            ("overall_acc", self.overall_acc),
            ("slot_sent_acc", self.slot_sentence_acc),
        ] {
            let _ = writeln!(out, "{name:<16} {v:>8.4}");
        }
        let width = self
            .per_class
            .keys()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max(10);
        let _ = writeln!(
            out,
            "\n{:<width$} {:>6} {:>6} {:>6} {:>8} {:>8} {:>8}",
            "slot", "tp", "fp", "fn", "prec", "recall", "f1"
        );
        let rows = self
            .per_class
            .iter()
            .map(|(k, c)| (k.as_str(), c))
            .chain(std::iter::once(("(all)", &self.counts)));
        for (name, c) in rows {
            let _ = writeln!(
                out,
                "{:<width$} {:>6} {:>6} {:>6} {:>8.4} {:>8.4} {:>8.4}",
                name,
                c.tp,
                c.fp,
                c.fn_,
                c.precision(),
                c.recall(),
                c.f1()
            );
        }
        out
    }

    /// Machine-readable `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "samples={}", self.samples);
        let _ = writeln!(out, "slot_f1={}", self.slot_f1);
        let _ = writeln!(out, "slot_precision={}", self.slot_precision);
        let _ = writeln!(out, "slot_recall={}", self.slot_recall);
        let _ = writeln!(out, "intent_acc={}", self.intent_acc);
        let _ = writeln!(out, "slot_sentence_acc={}", self.slot_sentence_acc);
        let _ = writeln!(out, "overall_acc={}", self.overall_acc);
        let _ = writeln!(out, "span_tp={}", self.counts.tp);
        let _ = writeln!(out, "span_fp={}", self.counts.fp);
        let _ = writeln!(out, "span_fn={}", self.counts.fn_);
        out
    }
}

/// Predictions in corpus format.
pub fn write_predictions(path: &Path, predictions: &[Sample]) -> Result<()> {
    write_atomic(path, serialize_corpus(predictions).as_bytes())
}
