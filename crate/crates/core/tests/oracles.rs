mod support;

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use recomb::artificial::{generate_examples, generate_world, EntityStyle, World};
use recomb::corpus::{Dataset, DomainConfig};
use recomb::decoding::{beam_search, greedy_decode};
use recomb::neural::{action_distribution, encode, initial_state, token_log_prob};
use recomb::scfg::{abs_entities, init_grammar, sample_example};
use support::*;

#[test]
fn analytic_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let model = tiny_model(2, 3, 0.5, &mut rng);
        let x = random_utterance(3, &mut rng);
        let y = random_logical_form(&x, 3, &mut rng);
        let (rel, at) = gradient_check(&model, &x, &y, 1e-3, 1e-8);
        assert!(rel < 1e-4, "{x:?} -> {y:?}: {at} (rel {rel:e})");
    }
}

#[test]
fn token_probability_matches_action_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let model = tiny_model(2, 3, 1.0, &mut rng);
        let x = random_utterance(4, &mut rng);
        let input = model.prepare_input(&x);
        let enc = encode(&model.params, &input.ids).unwrap();
        let s: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dist = action_distribution(&model.params, &s, &enc, &input.copy_mask).unwrap();
        let (pw, pc) = naive_actions(&model.params, &s, &enc, &input.copy_mask);
        for tok in surface_tokens(&model, &x) {
            let want = brute_force_token_prob(&pw, &pc, &model.output_vocab, &x, &tok).ln();
            let got = token_log_prob(&dist, &model.output_vocab, &tok, &input.surface).unwrap();
            assert!((got - want).abs() < 1e-12, "{tok}: {got} vs {want}");
        }
        // a masked-only token is unreachable
        if x.iter().any(|t| t == "_r") {
            assert!(token_log_prob(&dist, &model.output_vocab, "_r", &input.surface).is_err());
        }
    }
}

#[test]
fn initial_state_distribution_sums_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let model = tiny_model(3, 4, 1.0, &mut rng);
    let x = toks("a b _r c");
    let input = model.prepare_input(&x);
    let enc = encode(&model.params, &input.ids).unwrap();
    let s0 = initial_state(&model.params, &enc);
    let dist = action_distribution(&model.params, &s0.s, &enc, &input.copy_mask).unwrap();
    assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(dist[model.output_vocab.len() + 2], 0.0);
}

#[test]
fn wide_beam_finds_exhaustive_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for trial in 0..20 {
        let model = tiny_model(2, 3, 2.0, &mut rng);
        let x = random_utterance(3, &mut rng);
        let max_len = 1 + trial % 2;
        let all = enumerate_outputs(&model, &x, max_len);
        let best = all.iter().max_by(|a, b| a.2.total_cmp(&b.2)).unwrap();
        let beam = beam_search(&model, &x, all.len(), max_len).unwrap();
        assert_eq!(beam.len(), all.len());
        assert_eq!((&beam[0].tokens, beam[0].ended_with_eos), (&best.0, best.1));
        assert!((beam[0].score - best.2).abs() < 1e-10);
        let mut want: Vec<f64> = all.iter().map(|o| o.2).collect();
        want.sort_by(|a, b| b.total_cmp(a));
        for (d, w) in beam.iter().zip(&want) {
            assert!((d.score - w).abs() < 1e-10);
        }
    }
}

#[test]
fn unit_beam_is_greedy() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..20 {
        let model = tiny_model(2, 3, 2.0, &mut rng);
        let x = random_utterance(3, &mut rng);
        let beam = beam_search(&model, &x, 1, 6).unwrap();
        let greedy = greedy_decode(&model, &x, 6).unwrap();
        assert_eq!(beam[0].tokens, greedy.tokens);
        assert_eq!(beam[0].ended_with_eos, greedy.ended_with_eos);
        assert!((beam[0].score - greedy.score).abs() < 1e-12);
    }
}

#[test]
fn sampler_matches_derivation_enumeration() {
    let ds = Dataset::parse(GEO_EXAMPLES).unwrap();
    let cfg = DomainConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/geo.toml")).unwrap();
    let g = abs_entities(&init_grammar(&ds).unwrap(), &cfg);
    let exact = derivation_distribution(&g);
    assert_eq!(exact.len(), 4);
    assert!((exact.values().sum::<f64>() - 1.0).abs() < 1e-12);

    let n = 8000;
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut counts = std::collections::BTreeMap::new();
    for _ in 0..n {
        let ex = sample_example(&g, &mut rng).unwrap();
        *counts.entry((ex.utterance, ex.logical_form)).or_insert(0usize) += 1;
    }
    for (pair, p) in &exact {
        let k = counts.get(pair).copied().unwrap_or(0) as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((k - n as f64 * p).abs() < 5.0 * sigma, "{pair:?}: {k} vs {}", n as f64 * p);
    }
    assert!(counts.keys().all(|k| exact.contains_key(k)));
}

/// Reference denotation by structural recursion over `( rel expr )`.
fn denote(world: &World, lf: &[String]) -> (BTreeSet<String>, usize) {
    if lf[0] != "(" {
        let e = lf[0].trim_start_matches('_').to_owned();
        return (BTreeSet::from([e]), 1);
    }
    let rel = lf[1].trim_start_matches('_');
    let (inner, used) = denote(world, &lf[2..]);
    assert_eq!(lf[2 + used], ")");
    let out = world.pairs(rel).into_iter().filter(|(a, _)| inner.contains(a)).map(|(_, b)| b).collect();
    (out, used + 3)
}

#[test]
fn executor_agrees_with_recursive_evaluator() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let world = generate_world(12, 5, &mut rng).unwrap();
    for depth in 1..=4 {
        for style in [EntityStyle::Bare, EntityStyle::Prefixed] {
            for ex in generate_examples(&world, depth, 40, style, &mut rng).unwrap() {
                let (want, used) = denote(&world, &ex.logical_form);
                assert_eq!(used, ex.logical_form.len());
                assert_eq!(world.execute(&ex.logical_form).unwrap(), want);
            }
        }
    }
}
