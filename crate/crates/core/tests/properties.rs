use std::collections::BTreeMap;

use dgif_core::data_io::{generate_synthetic, is_bio_tag, parse_corpus_str, serialize_corpus, Sample, SyntheticSpec};
use dgif_core::encoder::Vocab;
use dgif_core::evaluation::evaluate;
use dgif_core::intent_decoder::select_top_k;
use dgif_core::interaction_graph::{gat_forward, relevance, GatActivation, InteractionGraph};
use dgif_core::label_space::{inject, LabelSpace, Task};
use dgif_core::numerics::{Tape, Tensor};
use proptest::prelude::*;

fn word() -> impl Strategy<Value = String> {
    "[a-z]{1,6}"
}

fn tag() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("O".to_string()),
        "[a-c]{1,3}".prop_map(|t| format!("B-{t}")),
        "[a-c]{1,3}".prop_map(|t| format!("I-{t}")),
    ]
}

fn sample() -> impl Strategy<Value = Sample> {
    (1usize..8)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(word(), n),
                prop::collection::vec(tag(), n),
                prop::collection::btree_set("[A-Z][a-z]{1,5}", 1..4),
            )
        })
        .prop_map(|(tokens, slots, intents)| Sample::new(tokens, slots, intents.into_iter().collect()).unwrap())
}

/// A prediction perturbing some tags and intents of `gold`.
fn noisy(gold: &[Sample], flips: &[(bool, bool)]) -> Vec<Sample> {
    gold.iter()
        .zip(flips.iter().cycle())
        .map(|(s, &(tags, intents))| {
            let mut p = s.clone();
            if tags {
                p.slots[0] = if p.slots[0] == "O" { "B-zz".into() } else { "O".into() };
            }
            if intents {
                p.intents.push("extra_9".into());
            }
            p
        })
        .collect()
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corpus_round_trips(samples in prop::collection::vec(sample(), 0..6)) {
        let text = serialize_corpus(&samples);
        prop_assert_eq!(parse_corpus_str(&text, "mem").unwrap(), samples);
    }

    #[test]
    fn generated_corpora_satisfy_sample_invariants(
        intents in 1usize..=5,
        slot_types in 1usize..=3,
        templates in 1usize..=3,
        n in 1usize..60,
        max in 1usize..=3,
        seed in any::<u64>(),
    ) {
        let spec = SyntheticSpec {
            intents,
            slot_types_per_intent: slot_types,
            templates_per_intent: templates,
            samples: n,
            max_intents: max.min(intents),
            seed,
        };
        let corpus = generate_synthetic(&spec).unwrap();
        prop_assert_eq!(corpus.samples.len(), n);
        let mut hist = BTreeMap::new();
        for s in &corpus.samples {
            s.validate().unwrap();
            prop_assert!(s.slots.iter().all(|t| is_bio_tag(t)));
            prop_assert!((1..=spec.max_intents).contains(&s.intents.len()));
            *hist.entry(s.intents.len()).or_insert(0usize) += 1;
        }
        for (count, seen) in hist {
            prop_assert_eq!(seen, spec.expected_count(count));
        }
    }

    #[test]
    fn vocab_text_round_trips(tokens in prop::collection::vec(word(), 0..20)) {
        let v = Vocab::from_tokens(tokens.iter().map(String::as_str));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        let back = Vocab::load(&path).unwrap();
        prop_assert_eq!(back.len(), v.len());
        for t in &tokens {
            prop_assert_eq!(back.id(t), v.id(t));
        }
    }

    #[test]
    fn top_k_is_invariant_under_monotone_maps(p in prop::collection::vec(0.0f64..1.0, 1..8), k in 1usize..8) {
        let k = k.min(p.len());
        let logit: Vec<f64> = p.iter().map(|x| (x + 1e-3).ln() * 3.0 + 1.0).collect();
        prop_assert_eq!(select_top_k(&p, k).unwrap(), select_top_k(&logit, k).unwrap());
    }

    #[test]
    fn projection_is_linear_and_idempotent(
        basis in matrix(3, 6),
        x in matrix(1, 6),
        y in matrix(1, 6),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let mut t = Tape::new();
        let r = t.leaf(Tensor::matrix(3, 6, basis).unwrap());
        let gram = {
            let rt = t.transpose(r).unwrap();
            t.matmul(r, rt).unwrap()
        };
        let g = t.value(gram).clone();
        // Skip nearly dependent bases.
        let det = g.at(0, 0) * (g.at(1, 1) * g.at(2, 2) - g.at(1, 2) * g.at(2, 1))
            - g.at(0, 1) * (g.at(1, 0) * g.at(2, 2) - g.at(1, 2) * g.at(2, 0))
            + g.at(0, 2) * (g.at(1, 0) * g.at(2, 1) - g.at(1, 1) * g.at(2, 0));
        prop_assume!(det > 1e-2);
        let space = LabelSpace::from_basis(&mut t, Task::Slot, r, 0.0).unwrap();
        let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let xs = t.leaf(Tensor::matrix(3, 6, [x, y, combo].concat()).unwrap());
        let p = inject(&mut t, xs, &space).unwrap();
        let proj = t.value(p.projected).clone();
        for c in 0..6 {
            let lin = a * proj.at(0, c) + b * proj.at(1, c);
            prop_assert!((proj.at(2, c) - lin).abs() < 1e-9);
        }
        let again = inject(&mut t, p.projected, &space).unwrap();
        let twice = t.value(again.projected);
        for (u, v) in twice.values().iter().zip(proj.values()) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn metric_invariants(
        gold in prop::collection::vec(sample(), 1..8),
        flips in prop::collection::vec((any::<bool>(), any::<bool>()), 1..8),
        rotate in 0usize..8,
    ) {
        let pred = noisy(&gold, &flips);
        let r = evaluate(&gold, &pred).unwrap();
        prop_assert!(r.overall_acc <= r.intent_acc);
        prop_assert!(r.overall_acc <= r.slot_sentence_acc);
        for v in [r.slot_f1, r.slot_precision, r.slot_recall, r.intent_acc, r.overall_acc] {
            prop_assert!((0.0..=1.0).contains(&v));
        }

        let (mut g2, mut p2) = (gold.clone(), pred.clone());
        let k = rotate % gold.len();
        g2.rotate_left(k);
        p2.rotate_left(k);
        prop_assert_eq!(evaluate(&g2, &p2).unwrap().slot_f1, r.slot_f1);

        let own = evaluate(&gold, &gold).unwrap();
        prop_assert_eq!((own.slot_f1, own.intent_acc, own.overall_acc), (1.0, 1.0, 1.0));
    }

    #[test]
    fn relevance_columns_are_distributions(n in 1usize..7, m in 1usize..4, seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let h: Vec<f64> = (0..n * 4).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let e: Vec<f64> = (0..m * 4).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let rel = relevance(&h, &e, 4).unwrap();
        for j in 0..m {
            let col: f64 = (0..n).map(|i| rel[i * m + j]).sum();
            prop_assert!((col - 1.0).abs() < 1e-12);
            prop_assert!((0..n).all(|i| rel[i * m + j] >= 0.0));
        }
    }

    #[test]
    fn gat_is_equivariant_to_intent_order(
        intents in matrix(2, 4),
        slots in matrix(3, 4),
        w in matrix(4, 4),
        a_src in matrix(4, 1),
        a_dst in matrix(4, 1),
        rel in prop::collection::vec(0.0f64..1.0, 6),
    ) {
        let run = |order: [usize; 2]| {
            let mut t = Tape::new();
            let rows: Vec<f64> = order.iter().flat_map(|&i| intents[i * 4..(i + 1) * 4].to_vec()).collect();
            let iv = t.leaf(Tensor::matrix(2, 4, rows).unwrap());
            let sv = t.leaf(Tensor::matrix(3, 4, slots.clone()).unwrap());
            let wv = t.leaf(Tensor::matrix(4, 4, w.clone()).unwrap());
            let av = t.leaf(Tensor::matrix(4, 1, a_src.clone()).unwrap());
            let dv = t.leaf(Tensor::matrix(4, 1, a_dst.clone()).unwrap());
            let r: Vec<f64> = (0..3).flat_map(|i| order.iter().map(|&j| rel[i * 2 + j]).collect::<Vec<_>>()).collect();
            let g = InteractionGraph::from_relevance(r, 3, 2, 1, 0.4).unwrap();
            let out = gat_forward(&mut t, &g, iv, sv, &[(wv, av, dv), (wv, av, dv)], 2, GatActivation::LeakyRelu(0.01), 0.2).unwrap();
            (t.value(out.intent_states).clone(), t.value(out.slot_states).clone())
        };
        let (i0, s0) = run([0, 1]);
        let (i1, s1) = run([1, 0]);
        for (u, v) in s0.values().iter().zip(s1.values()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
        for c in 0..4 {
            prop_assert!((i0.at(0, c) - i1.at(1, c)).abs() < 1e-12);
            prop_assert!((i0.at(1, c) - i1.at(0, c)).abs() < 1e-12);
        }
    }
}
