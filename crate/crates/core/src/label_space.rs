//! Label spaces built from encoded label names, best-approximation
//! projection onto them, and the label-aware regularizers.
//!
//! For a basis `R` (one label embedding per row) and an input `x`, the
//! projection solves the Gram system `(R·Rᵀ + ridge·I)·w = R·x` and returns
//! `x̂ = Rᵀ·w`, the closest point to `x` in the span of the labels. Every step
//! is recorded on the tape, so gradients reach both `x` and the label encoder.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use crate::encoder::{Encoder, Vocab};
use crate::error::{Error, Result};
use crate::io_util::read_to_string;
use crate::numerics::{Session, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Intent,
    Slot,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Intent => "intent",
            Task::Slot => "slot",
        })
    }
}

/// Rewrites label names as plain words.
///
/// Slot tags expand their BIO prefix (`B-` → `begin`, `I-` → `inside`,
/// `O` → `outside`) and split the remainder on punctuation; intent names are
/// split on separators. Each fragment is then looked up in the override
/// table, which may also map a whole label name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verbalizer {
    overrides: HashMap<String, String>,
}

impl Default for Verbalizer {
    fn default() -> Self {
        let overrides = [
            ("PER", "person"),
            ("LOC", "location"),
            ("ORG", "organization"),
            ("MISC", "miscellaneous"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Self { overrides }
    }
}

impl Verbalizer {
    pub fn empty() -> Self {
        Self {
            overrides: HashMap::new(),
        }
    }

    pub fn insert(&mut self, fragment: impl Into<String>, replacement: impl Into<String>) {
        self.overrides.insert(fragment.into(), replacement.into());
    }

    /// Reads `fragment<TAB>replacement` lines on top of the built-in table.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn with_override_file(mut self, path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (raw, repl) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: "expected fragment<TAB>replacement".into(),
            })?;
            if raw.is_empty() || repl.trim().is_empty() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: "empty fragment or replacement".into(),
                });
            }
            self.insert(raw, repl.trim());
        }
        Ok(self)
    }

    pub fn verbalize(&self, label: &str, task: Task) -> Vec<String> {
        if let Some(full) = self.overrides.get(label) {
            return split_words(full);
        }
        let mut words = Vec::new();
        let tail = match task {
            Task::Intent => label,
            Task::Slot => {
                if label == "O" {
                    return vec!["outside".to_string()];
                }
                if let Some(rest) = label.strip_prefix("B-") {
                    words.push("begin".to_string());
                    rest
                } else if let Some(rest) = label.strip_prefix("I-") {
                    words.push("inside".to_string());
                    rest
                } else {
                    label
                }
            }
        };
        for fragment in tail.split(|c: char| !c.is_alphanumeric()).filter(|f| !f.is_empty()) {
            match self.overrides.get(fragment) {
                Some(repl) => words.extend(split_words(repl)),
                None => words.push(fragment.to_lowercase()),
            }
        }
        if words.is_empty() {
            words.push(label.to_lowercase());
        }
        words
    }
}

fn split_words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

/// Ordered label names of one task with their verbalized forms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    task: Task,
    names: Vec<String>,
    words: Vec<Vec<String>>,
    index: HashMap<String, usize>,
}

impl LabelSet {
    pub fn new(task: Task, names: Vec<String>, verbalizer: &Verbalizer) -> Result<Self> {
        let words = names.iter().map(|n| verbalizer.verbalize(n, task)).collect();
        Self::from_parts(task, names, words)
    }

    /// Label set with explicitly given verbalized forms.
    pub fn from_parts(task: Task, names: Vec<String>, words: Vec<Vec<String>>) -> Result<Self> {
        if names.len() != words.len() {
            return Err(Error::contract("one word sequence per label name required"));
        }
        if let Some(i) = words.iter().position(Vec::is_empty) {
            return Err(Error::Data(format!("{task} label {} has no words", names[i])));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(Error::Data(format!("empty {task} label name")));
            }
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate {task} label {n}")));
            }
        }
        Ok(Self {
            task,
            names,
            words,
            index,
        })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn words(&self, i: usize) -> &[String] {
        &self.words[i]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// One `name<TAB>words` line per label.
    pub fn to_text(&self) -> String {
        self.names
            .iter()
            .zip(&self.words)
            .map(|(n, w)| format!("{n}\t{}\n", w.join(" ")))
            .collect()
    }

    /// Inverse of [`LabelSet::to_text`].
    pub fn parse(task: Task, text: &str, origin: &str) -> Result<Self> {
        let mut names = Vec::new();
        let mut words = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (name, w) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: "expected name<TAB>words".into(),
            })?;
            names.push(name.to_string());
            words.push(split_words(w));
        }
        Self::from_parts(task, names, words)
    }
}

/// Label basis `R` (|φ|×d) and its Gram matrix, both on the tape.
#[derive(Clone, Copy, Debug)]
pub struct LabelSpace {
    pub task: Task,
    pub basis: Var,
    pub gram: Var,
    pub ridge: f64,
}

impl LabelSpace {
    /// Space spanned by the rows of `basis`.
    pub fn from_basis(tape: &mut Tape, task: Task, basis: Var, ridge: f64) -> Result<Self> {
        let bt = tape.transpose(basis)?;
        let gram = tape.matmul(basis, bt)?;
        Ok(Self {
            task,
            basis,
            gram,
            ridge,
        })
    }

    pub fn size(&self, tape: &Tape) -> usize {
        tape.value(self.basis).rows()
    }
}

/// Encodes and pools every verbalized label, then assembles the Gram matrix.
pub fn embed_labels(
    s: &mut Session<'_>,
    set: &LabelSet,
    encoder: &Encoder,
    vocab: &Vocab,
    ridge: f64,
) -> Result<LabelSpace> {
    if set.is_empty() {
        return Err(Error::Data(format!("{} label set is empty", set.task())));
    }
    let mut reps = Vec::with_capacity(set.len());
    for i in 0..set.len() {
        let ids = vocab.ids(set.words(i));
        let (_, pooled) = encoder.encode_pooled(s, &ids)?;
        reps.push(pooled.rep);
    }
    let basis = s.tape.concat_rows(&reps)?;
    LabelSpace::from_basis(&mut s.tape, set.task(), basis, ridge)
}

/// Result of projecting the rows of `input` onto a label space.
#[derive(Clone, Copy, Debug)]
pub struct Projection {
    pub input: Var,
    /// Coefficients, |φ|×k (one column per projected row).
    pub coeffs: Var,
    /// Projected rows, k×d.
    pub projected: Var,
}

/// Projects each row of `x` (k×d) onto the span of `space.basis`.
pub fn inject(tape: &mut Tape, x: Var, space: &LabelSpace) -> Result<Projection> {
    let xt = tape.transpose(x)?;
    let rhs = tape.matmul(space.basis, xt)?;
    let coeffs = tape.solve_spd(space.gram, rhs, space.ridge)?;
    let ct = tape.transpose(coeffs)?;
    let projected = tape.matmul(ct, space.basis)?;
    Ok(Projection {
        input: x,
        coeffs,
        projected,
    })
}

/// `1 + (1/(Q·|φ|)) Σ_{i∈gold} Σ_j cos(r_i, r_j)`.
///
/// With `exclude_self` the `j = i` terms are dropped and the normaliser
/// becomes `Q·(|φ|−1)`.
pub fn l_inter(tape: &mut Tape, space: &LabelSpace, gold: &[usize], exclude_self: bool) -> Result<Var> {
    if gold.is_empty() {
        return Err(Error::contract("l_inter needs at least one gold label"));
    }
    let size = space.size(tape);
    let unit = tape.normalize_rows(space.basis)?;
    let unit_t = tape.transpose(unit)?;
    let cos = tape.matmul(unit, unit_t)?;
    let rows = tape.gather_rows(cos, gold)?;
    let q = gold.len();
    let (total, denom) = if exclude_self {
        let mut mask = vec![1.0; q * size];
        for (r, &g) in gold.iter().enumerate() {
            mask[r * size + g] = 0.0;
        }
        let mask = tape.constant(Tensor::matrix(q, size, mask)?);
        let kept = tape.mul(rows, mask)?;
        (tape.sum(kept), q * (size - 1))
    } else {
        (tape.sum(rows), q * size)
    };
    let one = tape.constant(Tensor::scalar(1.0));
    if denom == 0 {
        return Ok(one);
    }
    let avg = tape.scale(total, 1.0 / denom as f64);
    tape.add(one, avg)
}

/// `(1/(P·Q)) Σ_i Σ_j ‖samples_i − gold_j‖²`.
pub fn l_intra(tape: &mut Tape, samples: Var, gold_reps: Var) -> Result<Var> {
    let d = tape.pairwise_sq_dist(samples, gold_reps)?;
    Ok(tape.mean(d))
}

/// `(1/P) Σ_i ‖samples_i − gold_i‖²`: each sample paired with its own gold
/// label only (`Q = 1` per sample), as for tokens in slot filling.
pub fn l_intra_paired(tape: &mut Tape, samples: Var, gold_reps: Var) -> Result<Var> {
    let (ls, lg) = (tape.value(samples).shape().to_vec(), tape.value(gold_reps).shape().to_vec());
    if ls != lg {
        return Err(Error::Dimension {
            op: "l_intra_paired",
            left: ls,
            right: lg,
        });
    }
    let rows = tape.value(samples).rows();
    let diff = tape.sub(samples, gold_reps)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / rows as f64))
}

/// `L_inter + λ·L_intra`, with the gold representations taken from the basis.
pub fn l_re(
    tape: &mut Tape,
    space: &LabelSpace,
    samples: Var,
    gold: &[usize],
    lambda: f64,
    exclude_self: bool,
) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(Error::contract(format!("lambda must be >= 0, got {lambda}")));
    }
    let inter = l_inter(tape, space, gold, exclude_self)?;
    if lambda == 0.0 {
        return Ok(inter);
    }
    let gold_reps = tape.gather_rows(space.basis, gold)?;
    let intra = l_intra(tape, samples, gold_reps)?;
    let intra = tape.scale(intra, lambda);
    tape.add(inter, intra)
}
