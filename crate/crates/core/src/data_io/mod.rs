//! Corpus files, vocabularies and label sets, and synthetic corpora.
//!
//! A corpus holds samples separated by blank lines. Each sample is one
//! `token<SPACE>tag` line per token followed by a single line with its
//! intents joined by `#`:
//!
//! ```text
//! listen O
//! winter B-playlist
//! song O
//! AddToPlaylist
//! ```

mod synthetic;

use std::collections::BTreeSet;
use std::path::Path;

pub use synthetic::{generate_synthetic, Grammar, SyntheticCorpus, SyntheticSpec, TemplatePart};

use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::io_util::{read_to_string, write_atomic};
use crate::label_space::{LabelSet, Task, Verbalizer};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub tokens: Vec<String>,
    pub slots: Vec<String>,
    pub intents: Vec<String>,
}

impl Sample {
    pub fn new(tokens: Vec<String>, slots: Vec<String>, intents: Vec<String>) -> Result<Self> {
        let s = Self {
            tokens,
            slots,
            intents,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Data("sample has no tokens".into()));
        }
        if self.tokens.len() != self.slots.len() {
            return Err(Error::Data(format!(
                "{} tokens but {} slot tags",
                self.tokens.len(),
                self.slots.len()
            )));
        }
        if let Some(bad) = self.slots.iter().find(|t| !is_bio_tag(t)) {
            return Err(Error::Data(format!("malformed BIO tag {bad}")));
        }
        if self.intents.is_empty() {
            return Err(Error::Data("sample has no intents".into()));
        }
        let unique: BTreeSet<&String> = self.intents.iter().collect();
        if unique.len() != self.intents.len() {
            return Err(Error::Data("duplicate intent in sample".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// `O`, `B-x` or `I-x` with a non-empty `x`.
pub fn is_bio_tag(tag: &str) -> bool {
    tag == "O"
        || tag
            .strip_prefix("B-")
            .or_else(|| tag.strip_prefix("I-"))
            .is_some_and(|rest| !rest.is_empty())
}

pub fn parse_corpus(path: &Path) -> Result<Vec<Sample>> {
    let text = read_to_string(path)?;
    parse_corpus_str(&text, &path.display().to_string())
}

/// Parses corpus text; `origin` names the source in error messages.
pub fn parse_corpus_str(text: &str, origin: &str) -> Result<Vec<Sample>> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut samples = Vec::new();
    let mut block: Vec<(usize, Vec<&str>)> = Vec::new();
    let lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut flush = |block: &mut Vec<(usize, Vec<&str>)>| -> Result<()> {
        if block.is_empty() {
            return Ok(());
        }
        let (intent_line, intent_fields) = block.pop().expect("non-empty block");
        if intent_fields.len() != 1 {
            return Err(err(
                intent_line,
                "expected an intent line after the tokens".into(),
            ));
        }
        if block.is_empty() {
            return Err(err(intent_line, "sample has no tokens".into()));
        }
        let mut tokens = Vec::with_capacity(block.len());
        let mut slots = Vec::with_capacity(block.len());
        for (line, fields) in block.drain(..) {
            if fields.len() != 2 {
                return Err(err(
                    line,
                    format!("expected `token tag`, found {} field(s)", fields.len()),
                ));
            }
            if !is_bio_tag(fields[1]) {
                return Err(err(line, format!("malformed BIO tag {}", fields[1])));
            }
            tokens.push(fields[0].to_string());
            slots.push(fields[1].to_string());
        }
        let mut intents: Vec<String> = Vec::new();
        for name in intent_fields[0].split('#') {
            if name.is_empty() {
                return Err(err(intent_line, "empty intent name".into()));
            }
            if intents.iter().any(|i| i == name) {
                return Err(err(intent_line, format!("duplicate intent {name}")));
            }
            intents.push(name.to_string());
        }
        samples.push(Sample {
            tokens,
            slots,
            intents,
        });
        Ok(())
    };
    for (no, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            flush(&mut block)?;
        } else {
            block.push((no, fields));
        }
    }
    flush(&mut block)?;
    Ok(samples)
}

pub fn serialize_corpus(samples: &[Sample]) -> String {
    let mut out = String::new();
    for s in samples {
        for (t, tag) in s.tokens.iter().zip(&s.slots) {
            out.push_str(t);
            out.push(' ');
            out.push_str(tag);
            out.push('\n');
        }
        out.push_str(&s.intents.join("#"));
        out.push_str("\n\n");
    }
    out
}

pub fn write_corpus(path: &Path, samples: &[Sample]) -> Result<()> {
    write_atomic(path, serialize_corpus(samples).as_bytes())
}

/// Vocabularies and label sets derived from a training corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabularies {
    pub tokens: Vocab,
    pub intents: LabelSet,
    pub slots: LabelSet,
    /// Words of the verbalized label names, for the label encoder.
    pub label_words: Vocab,
}

/// Token vocab in first-occurrence order; label sets sorted
/// lexicographically (slot set always contains `O`).
pub fn build_vocab(samples: &[Sample], verbalizer: &Verbalizer) -> Result<Vocabularies> {
    if samples.is_empty() {
        return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut tokens = Vocab::new();
    let mut intents = BTreeSet::new();
    let mut slots = BTreeSet::new();
    slots.insert("O".to_string());
    for s in samples {
        for t in &s.tokens {
            tokens.add(t);
        }
        intents.extend(s.intents.iter().cloned());
        slots.extend(s.slots.iter().cloned());
    }
    let intents = LabelSet::new(Task::Intent, intents.into_iter().collect(), verbalizer)?;
    let slots = LabelSet::new(Task::Slot, slots.into_iter().collect(), verbalizer)?;
    let label_words = label_vocab(&intents, &slots);
    Ok(Vocabularies {
        tokens,
        intents,
        slots,
        label_words,
    })
}

pub fn label_vocab(intents: &LabelSet, slots: &LabelSet) -> Vocab {
    let mut v = Vocab::new();
    for set in [intents, slots] {
        for i in 0..set.len() {
            for w in set.words(i) {
                v.add(w);
            }
        }
    }
    v
}

/// Splits consecutive chunks of the given sizes off the front of `samples`.
pub fn split_corpus(samples: &[Sample], sizes: &[usize]) -> Result<Vec<Vec<Sample>>> {
    let total: usize = sizes.iter().sum();
    if total > samples.len() {
        return Err(Error::Data(format!(
            "requested {total} samples but corpus has {}",
            samples.len()
        )));
    }
    let mut out = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for &n in sizes {
        out.push(samples[offset..offset + n].to_vec());
        offset += n;
    }
    Ok(out)
}
