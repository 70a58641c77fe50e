#![allow(dead_code)]

use dgif_core::data_io::{build_vocab, generate_synthetic, split_corpus, Sample, SyntheticSpec, Vocabularies};
use dgif_core::label_space::Verbalizer;
use dgif_core::training::TrainConfig;
use rand::Rng;

pub fn uniform(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn sample(tokens: &str, tags: &str, intents: &str) -> Sample {
    let split = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    Sample::new(split(tokens), split(tags), split(intents)).unwrap()
}

/// Default synthetic corpus cut into 200 train / 50 validation / 50 test.
pub fn synthetic_splits() -> (Vec<Sample>, Vec<Sample>, Vec<Sample>) {
    let corpus = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let mut parts = split_corpus(&corpus.samples, &[200, 50, 50]).unwrap().into_iter();
    (parts.next().unwrap(), parts.next().unwrap(), parts.next().unwrap())
}

/// A d=8 model small enough for finite differences.
pub fn tiny_config() -> TrainConfig {
    TrainConfig {
        dim: 8,
        heads: 2,
        ff_dim: 8,
        pool_dim: 4,
        max_len: 16,
        ..TrainConfig::default()
    }
}

pub fn tiny_batch() -> (Vec<Sample>, Vocabularies) {
    let samples = vec![
        sample("play jazz now", "O B-genre O", "PlayMusic"),
        sample("add it to rock and play", "O O O B-playlist O O", "AddToPlaylist PlayMusic"),
    ];
    let vocabs = build_vocab(&samples, &Verbalizer::default()).unwrap();
    (samples, vocabs)
}

/// Six cases covering exact matches, orphan I- tags, boundary errors and
/// multi-intent mismatches. Hand-computed: TP=4, FP=2, FN=2, slot F1 2/3,
/// intent acc 4/6, slot sentence acc 2/6, overall 1/6.
pub fn golden_fixture() -> (Vec<Sample>, Vec<Sample>) {
    let gold = vec![
        sample("a b c", "B-a I-a O", "X"),
        sample("a b c", "O B-b I-b", "Y"),
        sample("a b", "I-a O", "X Y"),
        sample("a b c", "B-a I-a O", "X"),
        sample("a b c", "B-a O B-b", "X Y"),
        sample("a b c", "O O O", "Z"),
    ];
    let pred = vec![
        sample("a b c", "B-a I-a O", "X"),
        sample("a b c", "O I-b I-b", "Y"),
        sample("a b", "B-a O", "X"),
        sample("a b c", "B-a O O", "X"),
        sample("a b c", "B-b O B-b", "Y X"),
        sample("a b c", "O O O", "X Z"),
    ];
    (gold, pred)
}
