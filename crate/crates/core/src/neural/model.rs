use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{axpy, dot, log_sum_exp, Matrix};
use super::lstm::{lstm_forward, lstm_step, StepCache};
use super::params::{Dims, ModelParams, INIT_SCALE};
use super::NeuralError;
use crate::corpus::{is_copyable_token, Vocabulary, EOS, UNK};

/// Bidirectional encoder output for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStates {
    /// `b_i = [h_i^F; h_i^B]`, one per input position.
    pub b: Vec<Vec<f64>>,
    pub h_m_f: Vec<f64>,
    pub h_1_b: Vec<f64>,
}

impl EncoderStates {
    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }
}

pub(crate) struct EncoderCache {
    pub fwd: Vec<StepCache>,
    pub bwd: Vec<StepCache>,
}

/// Decoder hidden state `s_j` with its LSTM memory.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub s: Vec<f64>,
    pub memory: Vec<f64>,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
}

/// One decoder step's joint action scores.
#[derive(Debug, Clone)]
pub struct StepLogits {
    pub attention: Attention,
    pub write: Vec<f64>,
    /// Log normalizer over every write and every unmasked copy.
    pub lse: f64,
}

impl StepLogits {
    pub fn write_log_prob(&self, w: usize) -> f64 {
        self.write[w] - self.lse
    }

    pub fn copy_log_prob(&self, i: usize, mask: &[bool]) -> f64 {
        if mask[i] {
            self.attention.scores[i] - self.lse
        } else {
            f64::NEG_INFINITY
        }
    }
}

fn check_ids(ids: &[usize], vocab: usize) -> Result<(), NeuralError> {
    if ids.is_empty() {
        return Err(NeuralError::EmptyInput);
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
        return Err(NeuralError::ShapeMismatch(format!("input id {bad} outside vocabulary of {vocab}")));
    }
    Ok(())
}

pub fn encode(params: &ModelParams, input_ids: &[usize]) -> Result<EncoderStates, NeuralError> {
    encode_cached(params, input_ids).map(|(enc, _)| enc)
}

pub(crate) fn encode_cached(
    params: &ModelParams,
    input_ids: &[usize],
) -> Result<(EncoderStates, EncoderCache), NeuralError> {
    check_ids(input_ids, params.embed_in.rows())?;
    let m = input_ids.len();
    let xs: Vec<&[f64]> = input_ids.iter().map(|&i| params.embed_in.row(i)).collect();
    let (hf, fwd) = lstm_forward(&params.enc_fwd, &xs)?;
    let rev: Vec<&[f64]> = xs.iter().rev().copied().collect();
    let (hb_rev, bwd) = lstm_forward(&params.enc_bwd, &rev)?;
    let b = (0..m).map(|i| super::linalg::concat(&[&hf[i], &hb_rev[m - 1 - i]])).collect();
    let enc = EncoderStates { b, h_m_f: hf[m - 1].clone(), h_1_b: hb_rev[m - 1].clone() };
    Ok((enc, EncoderCache { fwd, bwd }))
}

/// `s_1 = tanh(W_s [h_m^F; h_1^B])`, memory zero.
pub fn initial_state(params: &ModelParams, enc: &EncoderStates) -> DecoderState {
    let q = super::linalg::concat(&[&enc.h_m_f, &enc.h_1_b]);
    let mut s = vec![0.0; params.w_s.rows()];
    params.w_s.matvec(&q, &mut s);
    s.iter_mut().for_each(|v| *v = v.tanh());
    let memory = vec![0.0; s.len()];
    DecoderState { s, memory, step: 1 }
}

pub fn attend(params: &ModelParams, s: &[f64], enc: &EncoderStates) -> Attention {
    let mut u = vec![0.0; params.w_a.cols()];
    params.w_a.tmatvec_acc(s, &mut u);
    let scores: Vec<f64> = enc.b.iter().map(|b| dot(&u, b)).collect();
    let lse = log_sum_exp(scores.iter().copied());
    let weights: Vec<f64> = scores.iter().map(|e| (e - lse).exp()).collect();
    let mut context = vec![0.0; u.len()];
    for (a, b) in weights.iter().zip(&enc.b) {
        axpy(&mut context, *a, b);
    }
    Attention { scores, weights, context }
}

pub fn step_logits(
    params: &ModelParams,
    s: &[f64],
    enc: &EncoderStates,
    copy_mask: &[bool],
) -> Result<StepLogits, NeuralError> {
    if copy_mask.len() != enc.len() {
        return Err(NeuralError::ShapeMismatch(format!(
            "copy mask has {} entries for {} input positions",
            copy_mask.len(),
            enc.len()
        )));
    }
    if params.u.rows() == 0 && !copy_mask.iter().any(|&c| c) {
        return Err(NeuralError::AllMasked);
    }
    let attention = attend(params, s, enc);
    let q = super::linalg::concat(&[s, &attention.context]);
    let mut write = vec![0.0; params.u.rows()];
    params.u.matvec(&q, &mut write);
    let copies = attention.scores.iter().zip(copy_mask).filter(|(_, &c)| c).map(|(e, _)| *e);
    let lse = log_sum_exp(write.iter().copied().chain(copies));
    Ok(StepLogits { attention, write, lse })
}

/// Probabilities of every `Write[w]` followed by every `Copy[i]`; masked
/// copies get exactly zero.
pub fn action_distribution(
    params: &ModelParams,
    s: &[f64],
    enc: &EncoderStates,
    copy_mask: &[bool],
) -> Result<Vec<f64>, NeuralError> {
    let st = step_logits(params, s, enc, copy_mask)?;
    let mut p: Vec<f64> = st.write.iter().map(|l| (l - st.lse).exp()).collect();
    p.extend((0..enc.len()).map(|i| if copy_mask[i] { (st.attention.scores[i] - st.lse).exp() } else { 0.0 }));
    Ok(p)
}

/// Log of the total probability of actions yielding `target`: its write (if
/// in the output vocabulary) plus every copy of an input position spelling it.
pub fn token_log_prob(
    dist: &[f64],
    output_vocab: &Vocabulary,
    target: &str,
    input_surface: &[String],
) -> Result<f64, NeuralError> {
    let v = output_vocab.len();
    if dist.len() != v + input_surface.len() {
        return Err(NeuralError::ShapeMismatch("distribution does not match vocabulary and input".into()));
    }
    let mut reachable = false;
    let mut total = 0.0;
    if let Some(w) = output_vocab.get(target) {
        reachable = true;
        total += dist[w];
    }
    for (i, x) in input_surface.iter().enumerate() {
        if x == target && dist[v + i] > 0.0 {
            reachable = true;
            total += dist[v + i];
        }
    }
    if !reachable {
        return Err(NeuralError::UnreachableTarget(target.to_owned()));
    }
    Ok(total.ln())
}

/// `s_{j+1}, memory_{j+1} = LSTM([phi_out(y_j); c_j], s_j)`.
pub fn advance(params: &ModelParams, state: &DecoderState, feed_id: usize, context: &[f64]) -> DecoderState {
    let x = super::linalg::concat(&[params.embed_out.row(feed_id), context]);
    let (s, memory, _) =
        lstm_step(&params.dec, &x, &state.s, &state.memory).expect("decoder shapes are fixed by ModelParams");
    DecoderState { s, memory, step: state.step + 1 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    /// When false every copy action is masked out.
    pub copy: bool,
    pub non_copyable_prefixes: Vec<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { embed_dim: 100, hidden: 200, copy: true, non_copyable_prefixes: vec!["_".into()] }
    }
}

/// An utterance mapped for the encoder plus what copying needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedInput {
    pub ids: Vec<usize>,
    pub surface: Vec<String>,
    pub copy_mask: Vec<bool>,
}

/// One gold output step.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub write: Option<usize>,
    pub copies: Vec<usize>,
    /// Output embedding row fed to the next step.
    pub feed: usize,
}

/// The trainable parser: parameters plus the vocabularies that index them.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq {
    pub config: ModelConfig,
    pub input_vocab: Vocabulary,
    pub output_vocab: Vocabulary,
    pub params: ModelParams,
}

impl Seq2Seq {
    /// Fresh model with uniform initialization. `<unk>` is added to both
    /// vocabularies and `<eos>` to the output one if missing.
    pub fn new<R: Rng + ?Sized>(
        config: ModelConfig,
        mut input_vocab: Vocabulary,
        mut output_vocab: Vocabulary,
        rng: &mut R,
    ) -> Self {
        input_vocab.insert(UNK);
        output_vocab.insert(UNK);
        output_vocab.insert(EOS);
        let dims = Dims {
            input_vocab: input_vocab.len(),
            output_vocab: output_vocab.len(),
            embed: config.embed_dim,
            hidden: config.hidden,
        };
        let params = ModelParams::uniform(dims, INIT_SCALE, rng);
        Seq2Seq { config, input_vocab, output_vocab, params }
    }

    pub fn from_parts(
        config: ModelConfig,
        input_vocab: Vocabulary,
        output_vocab: Vocabulary,
        params: ModelParams,
    ) -> Result<Self, NeuralError> {
        let d = params.dims();
        if d.input_vocab != input_vocab.len()
            || d.output_vocab != output_vocab.len()
            || d.embed != config.embed_dim
            || d.hidden != config.hidden
        {
            return Err(NeuralError::ShapeMismatch("parameters disagree with config or vocabularies".into()));
        }
        if !output_vocab.contains(EOS) || !output_vocab.contains(UNK) {
            return Err(NeuralError::ShapeMismatch("output vocabulary lacks <unk> or <eos>".into()));
        }
        if !input_vocab.contains(UNK) {
            return Err(NeuralError::ShapeMismatch("input vocabulary lacks <unk>".into()));
        }
        Ok(Seq2Seq { config, input_vocab, output_vocab, params })
    }

    pub fn eos_id(&self) -> usize {
        self.output_vocab.get(EOS).expect("output vocabulary always holds <eos>")
    }

    pub fn unk_out_id(&self) -> usize {
        self.output_vocab.get(UNK).expect("output vocabulary always holds <unk>")
    }

    pub fn is_copyable(&self, token: &str) -> bool {
        self.config.copy && is_copyable_token(token, &self.config.non_copyable_prefixes)
    }

    pub fn prepare_input(&self, utterance: &[String]) -> PreparedInput {
        PreparedInput {
            ids: utterance.iter().map(|t| self.input_vocab.id_or_unk(t)).collect(),
            surface: utterance.to_vec(),
            copy_mask: utterance.iter().map(|t| self.is_copyable(t)).collect(),
        }
    }

    /// Gold steps for `logical_form` followed by `<eos>`.
    pub fn prepare_targets(&self, input: &PreparedInput, logical_form: &[String]) -> Result<Vec<Target>, NeuralError> {
        let eos = self.eos_id();
        let mut out = Vec::with_capacity(logical_form.len() + 1);
        for y in logical_form {
            let write = self.output_vocab.get(y).filter(|&w| w != eos);
            let copies: Vec<usize> =
                (0..input.surface.len()).filter(|&i| input.copy_mask[i] && &input.surface[i] == y).collect();
            if write.is_none() && copies.is_empty() {
                return Err(NeuralError::UnreachableTarget(y.clone()));
            }
            out.push(Target { write, copies, feed: self.feed_id(y) });
        }
        out.push(Target { write: Some(eos), copies: Vec::new(), feed: eos });
        Ok(out)
    }

    /// Output embedding row for a previously emitted token.
    pub fn feed_id(&self, token: &str) -> usize {
        self.output_vocab.get(token).unwrap_or_else(|| self.unk_out_id())
    }

    pub fn log_likelihood(&self, utterance: &[String], logical_form: &[String]) -> Result<f64, NeuralError> {
        let input = self.prepare_input(utterance);
        let targets = self.prepare_targets(&input, logical_form)?;
        super::grad::log_likelihood(&self.params, &input, &targets)
    }
}

/// Embedding-table row accessor used by the gradient code.
pub(crate) fn row_add(m: &mut Matrix, r: usize, v: &[f64]) {
    axpy(m.row_mut(r), 1.0, v);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::linalg::softmax;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> Dims {
        Dims { input_vocab: 6, output_vocab: 3, embed: 3, hidden: 2 }
    }

    fn random_params(seed: u64) -> ModelParams {
        ModelParams::uniform(dims(), 0.5, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn zero_params_encode_to_zero() {
        let p = ModelParams::zeros(dims());
        let enc = encode(&p, &[1, 2, 3]).unwrap();
        assert_eq!(enc.len(), 3);
        assert!(enc.b.iter().all(|b| b.iter().all(|&v| v == 0.0) && b.len() == 4));
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(encode(&ModelParams::zeros(dims()), &[]), Err(NeuralError::EmptyInput)));
    }

    #[test]
    fn single_token_boundary_states() {
        let p = random_params(3);
        let enc = encode(&p, &[4]).unwrap();
        assert_eq!(enc.b[0][..2], enc.h_m_f[..]);
        assert_eq!(enc.b[0][2..], enc.h_1_b[..]);
    }

    #[test]
    fn palindrome_with_tied_cells_is_mirror_symmetric() {
        let mut p = random_params(5);
        p.enc_bwd = p.enc_fwd.clone();
        let enc = encode(&p, &[1, 2, 3, 2, 1]).unwrap();
        let m = enc.len();
        for i in 0..m {
            let (f, b) = enc.b[i].split_at(2);
            let (f2, b2) = enc.b[m - 1 - i].split_at(2);
            assert_eq!(f, b2);
            assert_eq!(b, f2);
        }
    }

    #[test]
    fn zero_attention_is_uniform() {
        let mut p = random_params(9);
        p.w_a.fill(0.0);
        let enc = encode(&p, &[1, 2, 3]).unwrap();
        let att = attend(&p, &[0.3, -0.2], &enc);
        for a in &att.weights {
            assert!((a - 1.0 / 3.0).abs() < 1e-15);
        }
        for k in 0..4 {
            let mean = enc.b.iter().map(|b| b[k]).sum::<f64>() / 3.0;
            assert!((att.context[k] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_logits_give_uniform_actions() {
        let p = ModelParams::zeros(dims());
        let enc = encode(&p, &[1, 2]).unwrap();
        let d = action_distribution(&p, &[0.0, 0.0], &enc, &[true, true]).unwrap();
        assert_eq!(d.len(), 5);
        assert!(d.iter().all(|x| (x - 0.2).abs() < 1e-15));
        let d = action_distribution(&p, &[0.0, 0.0], &enc, &[false, false]).unwrap();
        assert!((d[..3].iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(&d[3..], &[0.0, 0.0]);
    }

    #[test]
    fn action_distribution_matches_explicit_normalization() {
        let p = random_params(11);
        let enc = encode(&p, &[2, 5]).unwrap();
        let s = [0.4, -0.7];
        let d = action_distribution(&p, &s, &enc, &[true, true]).unwrap();
        let att = attend(&p, &s, &enc);
        let mut logits = Vec::new();
        for w in 0..3 {
            let row = p.u.row(w);
            let q = [s[0], s[1], att.context[0], att.context[1], att.context[2], att.context[3]];
            logits.push(row.iter().zip(q).map(|(a, b)| a * b).sum::<f64>());
        }
        logits.extend(att.scores.iter().copied());
        let expect = softmax(&logits);
        for (a, b) in d.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn token_log_prob_uniform_case() {
        let vocab = Vocabulary::from_tokens(["a", "b", "c"]);
        let surface = vec!["b".to_string(), "z".to_string()];
        let dist = vec![0.2; 5];
        let lp = token_log_prob(&dist, &vocab, "b", &surface).unwrap();
        assert!((lp - 0.4f64.ln()).abs() < 1e-15);
        assert!((token_log_prob(&dist, &vocab, "a", &surface).unwrap() - 0.2f64.ln()).abs() < 1e-15);
        assert!((token_log_prob(&dist, &vocab, "z", &surface).unwrap() - 0.2f64.ln()).abs() < 1e-15);
        assert!(matches!(token_log_prob(&dist, &vocab, "q", &surface), Err(NeuralError::UnreachableTarget(_))));
    }
}
