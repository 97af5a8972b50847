//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use recomb::corpus::{Vocabulary, EOS};
use recomb::neural::{
    action_distribution, advance, attend, encode, initial_state, log_likelihood, sequence_log_likelihood,
    EncoderStates, ModelConfig, ModelParams, Seq2Seq,
};
use recomb::scfg::{Grammar, Symbol};

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

pub const INPUT_POOL: [&str; 4] = ["a", "b", "c", "_r"];
pub const OUTPUT_POOL: [&str; 2] = ["X", "a"];

/// Tiny copying model: `a` is writable and copyable, `b`/`c` copy-only,
/// `_r` never copyable. Output vocabulary has 4 entries with `<unk>`/`<eos>`.
pub fn tiny_model<R: Rng>(embed: usize, hidden: usize, scale: f64, rng: &mut R) -> Seq2Seq {
    let config = ModelConfig { embed_dim: embed, hidden, ..ModelConfig::default() };
    let mut m = Seq2Seq::new(config, Vocabulary::from_tokens(INPUT_POOL), Vocabulary::from_tokens(OUTPUT_POOL), rng);
    m.params = ModelParams::uniform(m.params.dims(), scale, rng);
    m
}

pub fn random_utterance<R: Rng>(max_len: usize, rng: &mut R) -> Vec<String> {
    let m = rng.gen_range(1..=max_len);
    (0..m).map(|_| INPUT_POOL.choose(rng).unwrap().to_string()).collect()
}

/// A reachable logical form: each token is writable or copyable from `utterance`.
pub fn random_logical_form<R: Rng>(utterance: &[String], max_len: usize, rng: &mut R) -> Vec<String> {
    let mut pool: Vec<String> = OUTPUT_POOL.iter().map(|s| s.to_string()).collect();
    pool.extend(utterance.iter().filter(|t| !t.starts_with('_')).cloned());
    let n = rng.gen_range(1..=max_len);
    (0..n).map(|_| pool.choose(rng).unwrap().clone()).collect()
}

/// Largest relative error between analytic gradients and the fourth-order
/// central difference `(-f(+2h) + 8f(+h) - 8f(-h) + f(-2h)) / 12h` over every
/// parameter coordinate. Coordinates where both are below `floor` in
/// magnitude are compared against `floor` instead.
pub fn gradient_check(model: &Seq2Seq, utterance: &[String], lf: &[String], h: f64, floor: f64) -> (f64, String) {
    let input = model.prepare_input(utterance);
    let targets = model.prepare_targets(&input, lf).unwrap();
    let (_, grad) = sequence_log_likelihood(&model.params, &input, &targets).unwrap();
    let mut worst = (0.0, String::new());
    let mut p = model.params.clone();
    for ti in 0..ModelParams::NAMES.len() {
        let len = grad.tensors()[ti].1.data().len();
        for k in 0..len {
            let orig = p.tensors()[ti].1.data()[k];
            let mut at = |delta: f64| {
                p.tensors_mut()[ti].1.data_mut()[k] = orig + delta;
                log_likelihood(&p, &input, &targets).unwrap()
            };
            let numeric = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
            p.tensors_mut()[ti].1.data_mut()[k] = orig;
            let analytic = grad.tensors()[ti].1.data()[k];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(floor);
            if rel > worst.0 {
                worst = (rel, format!("{}[{k}]: analytic {analytic:e}, numeric {numeric:e}", ModelParams::NAMES[ti]));
            }
        }
    }
    worst
}

/// Action probabilities computed from scratch: write logits `U [s; c]`,
/// copy logits `s^T W_a b_i`, one softmax over writes and unmasked copies.
pub fn naive_actions(params: &ModelParams, s: &[f64], enc: &EncoderStates, mask: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let (h, two_h) = params.w_a.shape();
    debug_assert_eq!(s.len(), h);
    let scores: Vec<f64> = enc
        .b
        .iter()
        .map(|b| {
            let mut e = 0.0;
            for (r, s_r) in s.iter().enumerate().take(h) {
                for (w, b_c) in params.w_a.row(r).iter().zip(b) {
                    e += s_r * w * b_c;
                }
            }
            e
        })
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|e| (e - max).exp()).sum();
    let mut context = vec![0.0; two_h];
    for (e, b) in scores.iter().zip(&enc.b) {
        for (c, x) in context.iter_mut().zip(b) {
            *c += (e - max).exp() / z * x;
        }
    }
    let q: Vec<f64> = s.iter().chain(&context).copied().collect();
    let writes: Vec<f64> =
        (0..params.u.rows()).map(|w| params.u.row(w).iter().zip(&q).map(|(a, b)| a * b).sum()).collect();
    let copies: Vec<f64> = scores.iter().zip(mask).map(|(e, &m)| if m { *e } else { f64::NEG_INFINITY }).collect();
    let top = writes.iter().chain(&copies).cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = writes.iter().chain(&copies).map(|l| (l - top).exp()).sum();
    let pw = writes.iter().map(|l| (l - top).exp() / total).collect();
    let pc = copies.iter().map(|l| (l - top).exp() / total).collect();
    (pw, pc)
}

/// Enumerates every action, keeps those spelling `target`, sums.
pub fn brute_force_token_prob(pw: &[f64], pc: &[f64], vocab: &Vocabulary, surface: &[String], target: &str) -> f64 {
    let writes = pw.iter().enumerate().map(|(w, p)| (vocab.token(w).to_owned(), *p));
    let copies = pc.iter().zip(surface).map(|(p, t)| (t.clone(), *p));
    writes.chain(copies).filter(|(tok, _)| tok == target).map(|(_, p)| p).sum()
}

/// Every distinct surface token the decoder can emit for `utterance`.
pub fn surface_tokens(model: &Seq2Seq, utterance: &[String]) -> Vec<String> {
    let mut out: Vec<String> = model.output_vocab.tokens().to_vec();
    let input = model.prepare_input(utterance);
    for (t, &m) in input.surface.iter().zip(&input.copy_mask) {
        if m && !out.contains(t) {
            out.push(t.clone());
        }
    }
    out
}

/// Log probability of a complete output (stopping with `<eos>` or at the
/// cap), summing action probabilities per step with no log-space merging.
pub fn sequence_score(model: &Seq2Seq, utterance: &[String], tokens: &[String], ended_with_eos: bool) -> f64 {
    let input = model.prepare_input(utterance);
    let enc = encode(&model.params, &input.ids).unwrap();
    let mut state = initial_state(&model.params, &enc);
    let eos = EOS.to_string();
    let mut score = 0.0;
    for tok in tokens.iter().chain(ended_with_eos.then_some(&eos)) {
        let dist = action_distribution(&model.params, &state.s, &enc, &input.copy_mask).unwrap();
        let v = model.output_vocab.len();
        let p = brute_force_token_prob(&dist[..v], &dist[v..], &model.output_vocab, &input.surface, tok);
        score += p.ln();
        let ctx = attend(&model.params, &state.s, &enc).context;
        state = advance(&model.params, &state, model.feed_id(tok), &ctx);
    }
    score
}

/// All outputs of at most `max_len` steps with their scores: token
/// sequences shorter than `max_len` followed by `<eos>`, and sequences of
/// exactly `max_len` non-`<eos>` tokens.
pub fn enumerate_outputs(model: &Seq2Seq, utterance: &[String], max_len: usize) -> Vec<(Vec<String>, bool, f64)> {
    let vocab: Vec<String> = surface_tokens(model, utterance).into_iter().filter(|t| t != EOS).collect();
    let mut prefixes: Vec<Vec<String>> = vec![Vec::new()];
    let mut out = Vec::new();
    for len in 0..=max_len {
        for p in &prefixes {
            if len < max_len {
                out.push((p.clone(), true, sequence_score(model, utterance, p, true)));
            } else {
                out.push((p.clone(), false, sequence_score(model, utterance, p, false)));
            }
        }
        if len < max_len {
            prefixes = prefixes
                .iter()
                .flat_map(|p| vocab.iter().map(move |t| [p.clone(), vec![t.clone()]].concat()))
                .collect();
        }
    }
    out
}

/// Exact distribution over derived pairs under uniform top-down rule
/// choice, by enumerating every derivation (the grammar must be acyclic).
pub fn derivation_distribution(g: &Grammar) -> BTreeMap<(Vec<String>, Vec<String>), f64> {
    let mut out = BTreeMap::new();
    for (x, y, p) in expand(g, g.root()) {
        *out.entry((x, y)).or_insert(0.0) += p;
    }
    out
}

type Weighted = (Vec<String>, Vec<String>, f64);
type Pair = (Vec<String>, Vec<String>);

fn expand(g: &Grammar, category: &str) -> Vec<Weighted> {
    let ids = g.rules_for(category);
    let mut all = Vec::new();
    for &r in ids {
        let rule = &g.rules()[r];
        let mut partial: Vec<(BTreeMap<u32, Pair>, f64)> = vec![(BTreeMap::new(), 1.0 / ids.len() as f64)];
        for sym in &rule.alpha {
            if let Symbol::NonTerminal { category, id } = sym {
                let subs = expand(g, category);
                partial = partial
                    .into_iter()
                    .flat_map(|(m, p)| {
                        subs.iter().map(move |(x, y, q)| {
                            let mut m = m.clone();
                            m.insert(*id, (x.clone(), y.clone()));
                            (m, p * q)
                        })
                    })
                    .collect();
            }
        }
        for (m, p) in partial {
            let side = |syms: &[Symbol], pick: fn(&Pair) -> &Vec<String>| {
                syms.iter()
                    .flat_map(|s| match s {
                        Symbol::Terminal(t) => vec![t.clone()],
                        Symbol::NonTerminal { id, .. } => pick(&m[id]).clone(),
                    })
                    .collect::<Vec<_>>()
            };
            all.push((side(&rule.alpha, |c| &c.0), side(&rule.beta, |c| &c.1), p));
        }
    }
    all
}

/// A border question and a highest-mountain question over Geo.
pub const GEO_EXAMPLES: &str = "what states border texas ?\tanswer ( NV , ( state ( V0 ) , next_to ( V0 , NV ) , const ( V0 , stateid ( texas ) ) ) )\n\
what is the highest mountain in ohio ?\tanswer ( NV , highest ( V0 , ( mountain ( V0 ) , loc ( V0 , NV ) , const ( V0 , stateid ( ohio ) ) ) ) )\n";
