//! Beam search over surface tokens, parenthesis repair and accuracy.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{Example, EOS};
use crate::neural::{
    advance, encode, initial_state, step_logits, DecoderState, NeuralError, PreparedInput, Seq2Seq, StepLogits,
};

/// Cap on decoder steps for an `m`-token utterance.
pub fn default_max_len(m: usize) -> usize {
    4 * m + 20
}

fn ln_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Log probability of every distinct surface token at one step, writes and
/// copies of the same spelling merged. Writes come first in vocabulary
/// order, then copy-only tokens in input order.
pub fn surface_log_probs(model: &Seq2Seq, st: &StepLogits, input: &PreparedInput) -> Vec<(String, f64)> {
    let eos = model.eos_id();
    let mut out: Vec<(String, f64)> =
        model.output_vocab.tokens().iter().enumerate().map(|(w, tok)| (tok.clone(), st.write_log_prob(w))).collect();
    for (i, tok) in input.surface.iter().enumerate() {
        if !input.copy_mask[i] {
            continue;
        }
        let lp = st.copy_log_prob(i, &input.copy_mask);
        match model.output_vocab.get(tok).filter(|&w| w != eos) {
            Some(w) => out[w].1 = ln_add_exp(out[w].1, lp),
            None => match out[model.output_vocab.len()..].iter_mut().find(|(t, _)| t == tok) {
                Some(entry) => entry.1 = ln_add_exp(entry.1, lp),
                None => out.push((tok.clone(), lp)),
            },
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted tokens, `<eos>` excluded.
    pub tokens: Vec<String>,
    pub state: DecoderState,
    pub score: f64,
    /// Ended with `<eos>` rather than by hitting the length cap.
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    pub tokens: Vec<String>,
    pub score: f64,
    pub ended_with_eos: bool,
}

struct Candidate {
    parent: usize,
    token: String,
    score: f64,
}

/// Up to `beam_size` complete hypotheses, best first. A hypothesis is
/// complete when it emits `<eos>` or has taken `max_len` steps.
pub fn beam_search(
    model: &Seq2Seq,
    utterance: &[String],
    beam_size: usize,
    max_len: usize,
) -> Result<Vec<Decoded>, NeuralError> {
    if beam_size == 0 || max_len == 0 {
        return Ok(Vec::new());
    }
    let input = model.prepare_input(utterance);
    let enc = encode(&model.params, &input.ids)?;
    let mut live =
        vec![Hypothesis { tokens: Vec::new(), state: initial_state(&model.params, &enc), score: 0.0, finished: false }];
    let mut done: Vec<Decoded> = Vec::new();

    for step in 1..=max_len {
        let mut contexts = Vec::with_capacity(live.len());
        let mut cands = Vec::new();
        for (parent, h) in live.iter().enumerate() {
            let st = step_logits(&model.params, &h.state.s, &enc, &input.copy_mask)?;
            for (token, lp) in surface_log_probs(model, &st, &input) {
                if lp > f64::NEG_INFINITY {
                    cands.push(Candidate { parent, token, score: h.score + lp });
                }
            }
            contexts.push(st.attention.context);
        }
        // stable: ties keep generation order
        cands.sort_by(|a, b| b.score.total_cmp(&a.score));
        cands.truncate(beam_size);

        let mut next = Vec::new();
        for c in cands {
            let parent = &live[c.parent];
            if c.token == EOS {
                done.push(Decoded { tokens: parent.tokens.clone(), score: c.score, ended_with_eos: true });
                continue;
            }
            let mut tokens = parent.tokens.clone();
            tokens.push(c.token.clone());
            if step == max_len {
                done.push(Decoded { tokens, score: c.score, ended_with_eos: false });
                continue;
            }
            let state = advance(&model.params, &parent.state, model.feed_id(&c.token), &contexts[c.parent]);
            next.push(Hypothesis { tokens, state, score: c.score, finished: false });
        }
        live = next;
        if live.is_empty() {
            break;
        }
        // scores only fall, so a full set of better finished results is final
        if done.len() >= beam_size {
            let mut scores: Vec<f64> = done.iter().map(|d| d.score).collect();
            scores.sort_by(|a, b| b.total_cmp(a));
            if live[0].score <= scores[beam_size - 1] {
                break;
            }
        }
    }
    done.sort_by(|a, b| b.score.total_cmp(&a.score));
    done.truncate(beam_size);
    Ok(done)
}

/// Most likely surface token at every step.
pub fn greedy_decode(model: &Seq2Seq, utterance: &[String], max_len: usize) -> Result<Decoded, NeuralError> {
    let input = model.prepare_input(utterance);
    let enc = encode(&model.params, &input.ids)?;
    let mut state = initial_state(&model.params, &enc);
    let mut tokens = Vec::new();
    let mut score = 0.0;
    for _ in 0..max_len {
        let st = step_logits(&model.params, &state.s, &enc, &input.copy_mask)?;
        let mut best: Option<(String, f64)> = None;
        for (tok, lp) in surface_log_probs(model, &st, &input) {
            if best.as_ref().is_none_or(|(_, b)| lp > *b) {
                best = Some((tok, lp));
            }
        }
        let (tok, lp) = best.expect("output vocabulary is nonempty");
        score += lp;
        if tok == EOS {
            return Ok(Decoded { tokens, score, ended_with_eos: true });
        }
        state = advance(&model.params, &state, model.feed_id(&tok), &st.attention.context);
        tokens.push(tok);
    }
    Ok(Decoded { tokens, score, ended_with_eos: false })
}

/// Score of emitting `tokens` then `<eos>` (or stopping at the cap if
/// `ended_with_eos` is false), summing merged per-step log probabilities.
pub fn replay_score(
    model: &Seq2Seq,
    utterance: &[String],
    tokens: &[String],
    ended_with_eos: bool,
) -> Result<f64, NeuralError> {
    let input = model.prepare_input(utterance);
    let enc = encode(&model.params, &input.ids)?;
    let mut state = initial_state(&model.params, &enc);
    let mut score = 0.0;
    let tail = ended_with_eos.then(|| EOS.to_string());
    for tok in tokens.iter().chain(tail.iter()) {
        let st = step_logits(&model.params, &state.s, &enc, &input.copy_mask)?;
        let lp = surface_log_probs(model, &st, &input)
            .into_iter()
            .find(|(t, _)| t == tok)
            .map_or(f64::NEG_INFINITY, |(_, lp)| lp);
        score += lp;
        state = advance(&model.params, &state, model.feed_id(tok), &st.attention.context);
    }
    Ok(score)
}

/// Appends the `)` needed to close every open `(`. Input whose depth goes
/// negative is returned unchanged with `false`.
pub fn balance_parentheses(tokens: &[String]) -> (Vec<String>, bool) {
    let mut depth: usize = 0;
    for t in tokens {
        match t.as_str() {
            "(" => depth += 1,
            ")" => match depth.checked_sub(1) {
                Some(d) => depth = d,
                None => return (tokens.to_vec(), false),
            },
            _ => {}
        }
    }
    let mut out = tokens.to_vec();
    out.extend(std::iter::repeat_n(")".to_string(), depth));
    (out, true)
}

/// Maps logical forms to denotations for denotation-match evaluation.
pub trait Executor {
    type Denotation: PartialEq;
    type Error;
    fn execute(&self, logical_form: &[String]) -> Result<Self::Denotation, Self::Error>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalMode {
    Exact,
    Denotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub example_id: usize,
    pub correct: bool,
    pub gold: String,
    pub predicted: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    fn from_records(records: Vec<EvalRecord>) -> Self {
        let correct = records.iter().filter(|r| r.correct).count();
        let accuracy = if records.is_empty() { 0.0 } else { correct as f64 / records.len() as f64 };
        EvalReport { accuracy, records }
    }

    pub fn correct(&self) -> usize {
        self.records.iter().filter(|r| r.correct).count()
    }
}

/// Judges one example given its beam (best first). Exact mode compares the
/// balanced top hypothesis; denotation mode takes the first balanced
/// hypothesis that executes and compares denotations.
pub fn score_prediction<E: Executor>(
    gold: &[String],
    beam: &[Decoded],
    mode: EvalMode,
    executor: Option<&E>,
) -> (bool, Option<(Vec<String>, f64)>) {
    match mode {
        EvalMode::Exact => match beam.first() {
            Some(top) => {
                let (pred, _) = balance_parentheses(&top.tokens);
                (pred == gold, Some((pred, top.score)))
            }
            None => (false, None),
        },
        EvalMode::Denotation => {
            let Some(exec) = executor else { return (false, None) };
            let Ok(want) = exec.execute(gold) else { return (false, None) };
            for hyp in beam {
                let (pred, _) = balance_parentheses(&hyp.tokens);
                if let Ok(got) = exec.execute(&pred) {
                    return (got == want, Some((pred, hyp.score)));
                }
            }
            (false, None)
        }
    }
}

pub fn evaluate<E: Executor>(
    model: &Seq2Seq,
    test: &[Example],
    beam_size: usize,
    mode: EvalMode,
    executor: Option<&E>,
) -> Result<EvalReport, NeuralError> {
    let mut records = Vec::with_capacity(test.len());
    for (example_id, ex) in test.iter().enumerate() {
        let beam = beam_search(model, &ex.utterance, beam_size, default_max_len(ex.utterance.len()))?;
        let (correct, pred) = score_prediction(&ex.logical_form, &beam, mode, executor);
        let (predicted, score) = pred.map_or((String::new(), f64::NEG_INFINITY), |(p, s)| (p.join(" "), s));
        records.push(EvalRecord { example_id, correct, gold: ex.logical_form.join(" "), predicted, score });
    }
    Ok(EvalReport::from_records(records))
}

/// Executor for exact mode, where none is needed.
pub struct NoExecutor;

impl Executor for NoExecutor {
    type Denotation = ();
    type Error = ();
    fn execute(&self, _: &[String]) -> Result<(), ()> {
        Err(())
    }
}

/// CSV `example_id,correct,gold,predicted,score`.
pub fn write_report_csv<W: Write>(report: &EvalReport, w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["example_id", "correct", "gold", "predicted", "score"])?;
    for r in &report.records {
        out.write_record([
            r.example_id.to_string(),
            u8::from(r.correct).to_string(),
            r.gold.clone(),
            r.predicted.clone(),
            r.score.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{split_tokens, Vocabulary};
    use crate::neural::ModelConfig;
    use rand::SeedableRng;

    fn toks(s: &str) -> Vec<String> {
        split_tokens(s)
    }

    fn model(seed: u64) -> Seq2Seq {
        let cfg = ModelConfig { embed_dim: 3, hidden: 4, ..ModelConfig::default() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m =
            Seq2Seq::new(cfg, Vocabulary::build(["a", "b", "ent:1"]), Vocabulary::from_tokens(["x", "y"]), &mut rng);
        for (_, t) in m.params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= 15.0);
        }
        m
    }

    #[test]
    fn balance_cases() {
        assert_eq!(balance_parentheses(&toks("( a ( b")), (toks("( a ( b ) )"), true));
        assert_eq!(balance_parentheses(&toks("( a )")), (toks("( a )"), true));
        assert_eq!(balance_parentheses(&toks(") a")), (toks(") a"), false));
    }

    #[test]
    fn merged_probabilities_sum_to_one() {
        let m = model(2);
        let input = m.prepare_input(&toks("a ent:1 b"));
        let enc = encode(&m.params, &input.ids).unwrap();
        let s = initial_state(&m.params, &enc);
        let st = step_logits(&m.params, &s.s, &enc, &input.copy_mask).unwrap();
        let dist = surface_log_probs(&m, &st, &input);
        let total: f64 = dist.iter().map(|(_, lp)| lp.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(dist.iter().any(|(t, _)| t == "ent:1"));
    }

    #[test]
    fn beam_one_is_greedy() {
        for seed in 0..10 {
            let m = model(seed);
            let x = toks("a ent:1 b");
            let g = greedy_decode(&m, &x, 6).unwrap();
            let b = beam_search(&m, &x, 1, 6).unwrap();
            assert_eq!(b, vec![g]);
        }
    }

    #[test]
    fn beam_scores_replay() {
        let m = model(4);
        let x = toks("ent:1 a");
        let beam = beam_search(&m, &x, 5, 5).unwrap();
        assert!(!beam.is_empty());
        for d in &beam {
            let r = replay_score(&m, &x, &d.tokens, d.ended_with_eos).unwrap();
            assert!((r - d.score).abs() < 1e-9);
        }
        assert_eq!(beam, beam_search(&m, &x, 5, 5).unwrap());
    }

    struct Parity;
    impl Executor for Parity {
        type Denotation = usize;
        type Error = ();
        fn execute(&self, lf: &[String]) -> Result<usize, ()> {
            if lf.iter().any(|t| t == "bad") {
                Err(())
            } else {
                Ok(lf.len() % 2)
            }
        }
    }

    #[test]
    fn denotation_skips_failing_candidates() {
        let beam = vec![
            Decoded { tokens: toks("bad"), score: -1.0, ended_with_eos: true },
            Decoded { tokens: toks("q r"), score: -2.0, ended_with_eos: true },
        ];
        let gold = toks("a b");
        let (ok, pred) = score_prediction(&gold, &beam, EvalMode::Denotation, Some(&Parity));
        assert!(ok);
        assert_eq!(pred.unwrap().0, toks("q r"));
        let (ok, _) = score_prediction(&gold, &beam, EvalMode::Exact, Some(&Parity));
        assert!(!ok);
        let (ok, pred) = score_prediction::<Parity>(&gold, &[], EvalMode::Exact, None);
        assert!(!ok && pred.is_none());
    }

    #[test]
    fn report_csv_format() {
        let report = EvalReport::from_records(vec![EvalRecord {
            example_id: 0,
            correct: true,
            gold: "( a )".into(),
            predicted: "( a )".into(),
            score: -0.5,
        }]);
        let mut buf = Vec::new();
        write_report_csv(&report, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "example_id,correct,gold,predicted,score\n0,1,( a ),( a ),-0.5\n");
        assert_eq!(report.accuracy, 1.0);
    }
}
