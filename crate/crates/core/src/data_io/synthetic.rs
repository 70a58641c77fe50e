//! Template grammar corpora with labels correct by construction.
//!
//! Every intent owns a keyword, a set of slot types and a few templates.
//! A slot type owns a small lexicon of one- and two-word values. Samples with
//! `k` intents join `k` single-intent clauses with "and". Intent counts are
//! mixed uniformly over `1..=max_intents`: for `S` samples and `M` counts,
//! count `c` appears `S / M` times plus one more when `c - 1 < S % M`.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Sample;
use crate::error::{Error, Result};

const INTENT_NAMES: [&str; 10] = [
    "AddToPlaylist",
    "PlayMusic",
    "GetWeather",
    "BookRestaurant",
    "RateBook",
    "SearchCreativeWork",
    "SearchScreeningEvent",
    "BookFlight",
    "FindRoute",
    "SetAlarm",
];

const KEYWORDS: [&str; 10] = [
    "add", "play", "weather", "reserve", "rate", "find", "showtimes", "fly", "route", "alarm",
];

const SLOT_NAMES: [&str; 10] = [
    "playlist", "artist", "city", "restaurant", "rating", "title", "movie", "airport",
    "destination", "time",
];

const FILLERS: [&str; 12] = [
    "please", "the", "a", "me", "for", "to", "in", "with", "some", "now", "can", "you",
];

const SYLLABLES: [&str; 16] = [
    "ba", "ko", "ri", "mu", "te", "sa", "lo", "ne", "vi", "da", "pe", "zu", "go", "fi", "ra", "mo",
];

const LEXICON_SIZE: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub intents: usize,
    pub slot_types_per_intent: usize,
    pub templates_per_intent: usize,
    pub samples: usize,
    pub max_intents: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            intents: 5,
            slot_types_per_intent: 1,
            templates_per_intent: 3,
            samples: 300,
            max_intents: 2,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.intents,
            self.slot_types_per_intent,
            self.templates_per_intent,
            self.samples,
            self.max_intents,
        ];
        if counts.contains(&0) {
            return Err(Error::Config("synthetic spec counts must be >= 1".into()));
        }
        if self.max_intents > 3 || self.max_intents > self.intents {
            return Err(Error::Config(format!(
                "max intents per utterance must be <= min(3, intents), got {}",
                self.max_intents
            )));
        }
        Ok(())
    }

    /// Exact number of samples carrying `count` intents.
    pub fn expected_count(&self, count: usize) -> usize {
        if count == 0 || count > self.max_intents {
            return 0;
        }
        self.samples / self.max_intents + usize::from(count - 1 < self.samples % self.max_intents)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TemplatePart {
    Word(String),
    Keyword,
    /// Index into the intent's slot types.
    Slot(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntentGrammar {
    pub name: String,
    pub keyword: String,
    /// Indices into [`Grammar::slot_types`].
    pub slot_types: Vec<usize>,
    pub templates: Vec<Vec<TemplatePart>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotType {
    pub name: String,
    /// Each value is one or more words.
    pub lexicon: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grammar {
    pub intents: Vec<IntentGrammar>,
    pub slot_types: Vec<SlotType>,
}

impl Grammar {
    /// Human-readable description written beside a generated corpus.
    pub fn manifest(&self, spec: &SyntheticSpec) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# synthetic corpus grammar");
        let _ = writeln!(
            out,
            "intents={} slot_types_per_intent={} templates_per_intent={} samples={} max_intents={} seed={}",
            spec.intents,
            spec.slot_types_per_intent,
            spec.templates_per_intent,
            spec.samples,
            spec.max_intents,
            spec.seed
        );
        for c in 1..=spec.max_intents {
            let _ = writeln!(out, "count {c}: {} samples", spec.expected_count(c));
        }
        for st in &self.slot_types {
            let values: Vec<String> = st.lexicon.iter().map(|v| v.join(" ")).collect();
            let _ = writeln!(out, "slot {}: {}", st.name, values.join(" | "));
        }
        for ig in &self.intents {
            let _ = writeln!(out, "intent {} keyword={}", ig.name, ig.keyword);
            for t in &ig.templates {
                let parts: Vec<String> = t
                    .iter()
                    .map(|p| match p {
                        TemplatePart::Word(w) => w.clone(),
                        TemplatePart::Keyword => format!("<{}>", ig.keyword),
                        TemplatePart::Slot(k) => {
                            format!("[{}]", self.slot_types[ig.slot_types[*k]].name)
                        }
                    })
                    .collect();
                let _ = writeln!(out, "  {}", parts.join(" "));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub samples: Vec<Sample>,
    pub grammar: Grammar,
    pub manifest: String,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let grammar = build_grammar(spec, &mut rng);

    let mut counts: Vec<usize> = (0..spec.samples).map(|s| s % spec.max_intents + 1).collect();
    counts.shuffle(&mut rng);

    let all: Vec<usize> = (0..spec.intents).collect();
    let mut samples = Vec::with_capacity(spec.samples);
    for count in counts {
        let chosen: Vec<usize> = all.choose_multiple(&mut rng, count).copied().collect();
        let (mut tokens, mut slots) = (Vec::new(), Vec::new());
        for (c, &intent) in chosen.iter().enumerate() {
            if c > 0 {
                tokens.push("and".to_string());
                slots.push("O".to_string());
            }
            let ig = &grammar.intents[intent];
            let template = ig.templates.choose(&mut rng).expect("templates >= 1");
            for part in template {
                match part {
                    TemplatePart::Word(w) => {
                        tokens.push(w.clone());
                        slots.push("O".into());
                    }
                    TemplatePart::Keyword => {
                        tokens.push(ig.keyword.clone());
                        slots.push("O".into());
                    }
                    TemplatePart::Slot(k) => {
                        let st = &grammar.slot_types[ig.slot_types[*k]];
                        let value = st.lexicon.choose(&mut rng).expect("lexicon non-empty");
                        for (i, w) in value.iter().enumerate() {
                            tokens.push(w.clone());
                            let prefix = if i == 0 { "B" } else { "I" };
                            slots.push(format!("{prefix}-{}", st.name));
                        }
                    }
                }
            }
        }
        let intents = chosen.iter().map(|&i| grammar.intents[i].name.clone()).collect();
        samples.push(Sample::new(tokens, slots, intents)?);
    }
    let manifest = grammar.manifest(spec);
    Ok(SyntheticCorpus {
        samples,
        grammar,
        manifest,
    })
}

fn build_grammar<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Grammar {
    let mut used: HashSet<String> = FILLERS.iter().map(|s| s.to_string()).collect();
    used.insert("and".into());
    used.extend(KEYWORDS.iter().map(|s| s.to_string()));

    let mut slot_types = Vec::new();
    let mut intents = Vec::with_capacity(spec.intents);
    for i in 0..spec.intents {
        let name = INTENT_NAMES
            .get(i)
            .map_or_else(|| format!("Intent{i}"), |s| s.to_string());
        let keyword = KEYWORDS
            .get(i)
            .map_or_else(|| fresh_word(rng, &mut used, 3), |s| s.to_string());
        let mut own = Vec::with_capacity(spec.slot_types_per_intent);
        for _ in 0..spec.slot_types_per_intent {
            let idx = slot_types.len();
            let name = SLOT_NAMES
                .get(idx)
                .map_or_else(|| format!("slot{idx}"), |s| s.to_string());
            // Alternate one- and two-word values so I- tags occur.
            let lexicon = (0..LEXICON_SIZE)
                .map(|v| (0..1 + v % 2).map(|_| fresh_word(rng, &mut used, 2)).collect())
                .collect();
            slot_types.push(SlotType { name, lexicon });
            own.push(idx);
        }
        let templates = (0..spec.templates_per_intent)
            .map(|_| build_template(own.len(), rng))
            .collect();
        intents.push(IntentGrammar {
            name,
            keyword,
            slot_types: own,
            templates,
        });
    }
    Grammar {
        intents,
        slot_types,
    }
}

fn build_template<R: Rng>(slot_count: usize, rng: &mut R) -> Vec<TemplatePart> {
    let filler = |rng: &mut R| TemplatePart::Word(FILLERS.choose(rng).unwrap().to_string());
    let mut parts = Vec::new();
    for _ in 0..rng.gen_range(0..=2) {
        parts.push(filler(rng));
    }
    parts.push(TemplatePart::Keyword);
    let mut order: Vec<usize> = (0..slot_count).collect();
    order.shuffle(rng);
    for k in order {
        parts.push(filler(rng));
        parts.push(TemplatePart::Slot(k));
    }
    if rng.gen_bool(0.5) {
        parts.push(filler(rng));
    }
    parts
}

fn fresh_word<R: Rng>(rng: &mut R, used: &mut HashSet<String>, syllables: usize) -> String {
    loop {
        let w: String = (0..syllables)
            .map(|_| *SYLLABLES.choose(rng).unwrap())
            .collect();
        if used.insert(w.clone()) {
            return w;
        }
    }
}
