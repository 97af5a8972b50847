//! Teacher-forced log-likelihood of a gold output sequence and its exact
//! gradient by reverse accumulation.

use super::linalg::{axpy, concat, log_sum_exp};
use super::lstm::{lstm_backward, lstm_step, lstm_step_backward, StepCache};
use super::model::{
    encode_cached, initial_state, row_add, step_logits, EncoderStates, PreparedInput, StepLogits, Target,
};
use super::params::ModelParams;
use super::NeuralError;

struct Step {
    s: Vec<f64>,
    logits: StepLogits,
    log_p: f64,
    /// Transition into the next step; absent after the last target.
    transition: Option<StepCache>,
}

fn check(input: &PreparedInput, targets: &[Target]) -> Result<(), NeuralError> {
    if input.copy_mask.len() != input.ids.len() || input.surface.len() != input.ids.len() {
        return Err(NeuralError::ShapeMismatch("prepared input fields differ in length".into()));
    }
    if targets.is_empty() {
        return Err(NeuralError::EmptyInput);
    }
    for t in targets {
        if t.write.is_none() && t.copies.is_empty() {
            return Err(NeuralError::UnreachableTarget(format!("step feeding row {}", t.feed)));
        }
        if let Some(&i) = t.copies.iter().find(|&&i| !input.copy_mask[i]) {
            return Err(NeuralError::ShapeMismatch(format!("copy of masked position {i}")));
        }
    }
    Ok(())
}

fn target_lse(st: &StepLogits, t: &Target) -> f64 {
    let w = t.write.map(|w| st.write[w]);
    let c = t.copies.iter().map(|&i| st.attention.scores[i]);
    log_sum_exp(w.into_iter().chain(c))
}

fn forward(
    params: &ModelParams,
    enc: &EncoderStates,
    input: &PreparedInput,
    targets: &[Target],
    keep_caches: bool,
) -> Result<(f64, Vec<Step>), NeuralError> {
    let mut state = initial_state(params, enc);
    let mut total = 0.0;
    let mut steps = Vec::with_capacity(targets.len());
    for (j, t) in targets.iter().enumerate() {
        let logits = step_logits(params, &state.s, enc, &input.copy_mask)?;
        let log_p = target_lse(&logits, t) - logits.lse;
        total += log_p;
        let mut transition = None;
        let s = state.s.clone();
        if j + 1 < targets.len() {
            let x = concat(&[params.embed_out.row(t.feed), &logits.attention.context]);
            let (h, c, cache) = lstm_step(&params.dec, &x, &state.s, &state.memory)?;
            state.s = h;
            state.memory = c;
            if keep_caches {
                transition = Some(cache);
            }
        }
        if keep_caches {
            steps.push(Step { s, logits, log_p, transition });
        }
    }
    Ok((total, steps))
}

/// Sum over steps of the log marginal probability of each gold token.
pub fn log_likelihood(params: &ModelParams, input: &PreparedInput, targets: &[Target]) -> Result<f64, NeuralError> {
    check(input, targets)?;
    let (enc, _) = encode_cached(params, &input.ids)?;
    forward(params, &enc, input, targets, false).map(|(v, _)| v)
}

/// Log-likelihood and its gradient with respect to every parameter.
pub fn sequence_log_likelihood(
    params: &ModelParams,
    input: &PreparedInput,
    targets: &[Target],
) -> Result<(f64, ModelParams), NeuralError> {
    let mut grad = ModelParams::zeros(params.dims());
    let v = accumulate_gradient(params, input, targets, &mut grad)?;
    Ok((v, grad))
}

/// Like [`sequence_log_likelihood`] but adds into an existing buffer.
pub fn accumulate_gradient(
    params: &ModelParams,
    input: &PreparedInput,
    targets: &[Target],
    grad: &mut ModelParams,
) -> Result<f64, NeuralError> {
    check(input, targets)?;
    let (enc, enc_cache) = encode_cached(params, &input.ids)?;
    let (total, steps) = forward(params, &enc, input, targets, true)?;
    let hd = params.w_s.rows();
    let m = enc.len();

    let mut db = vec![vec![0.0; 2 * hd]; m];
    let mut ds_next = vec![0.0; hd];
    let mut dmem_next = vec![0.0; hd];
    for (step, t) in steps.iter().zip(targets).rev() {
        let att = &step.logits.attention;
        let mut ds = vec![0.0; hd];
        let mut dc = vec![0.0; 2 * hd];

        if let Some(cache) = &step.transition {
            let (dx, dh_prev, dmem_prev) = lstm_step_backward(&params.dec, cache, &ds_next, &dmem_next, &mut grad.dec);
            let e = params.embed_out.cols();
            row_add(&mut grad.embed_out, t.feed, &dx[..e]);
            axpy(&mut dc, 1.0, &dx[e..]);
            axpy(&mut ds, 1.0, &dh_prev);
            dmem_next = dmem_prev;
        } else {
            dmem_next = vec![0.0; hd];
        }

        // d log p / d logit_k = [k in gold] p_k / P(gold) - p_k
        let st = &step.logits;
        let gold_lse = step.log_p + st.lse;
        let mut gw: Vec<f64> = st.write.iter().map(|l| -(l - st.lse).exp()).collect();
        if let Some(w) = t.write {
            gw[w] += (st.write[w] - gold_lse).exp();
        }
        let mut de: Vec<f64> =
            (0..m).map(|i| if input.copy_mask[i] { -(att.scores[i] - st.lse).exp() } else { 0.0 }).collect();
        for &i in &t.copies {
            de[i] += (att.scores[i] - gold_lse).exp();
        }

        let q = concat(&[&step.s, &att.context]);
        grad.u.outer_acc(&gw, &q);
        let mut dq = vec![0.0; 3 * hd];
        params.u.tmatvec_acc(&gw, &mut dq);
        axpy(&mut ds, 1.0, &dq[..hd]);
        axpy(&mut dc, 1.0, &dq[hd..]);

        // context and attention weights
        let da: Vec<f64> = enc.b.iter().map(|b| super::linalg::dot(&dc, b)).collect();
        let mean: f64 = att.weights.iter().zip(&da).map(|(a, d)| a * d).sum();
        for i in 0..m {
            de[i] += att.weights[i] * (da[i] - mean);
            axpy(&mut db[i], att.weights[i], &dc);
        }

        // scores e_i = s^T W_a b_i
        let mut u = vec![0.0; 2 * hd];
        params.w_a.tmatvec_acc(&step.s, &mut u);
        let mut du = vec![0.0; 2 * hd];
        for i in 0..m {
            if de[i] != 0.0 {
                axpy(&mut du, de[i], &enc.b[i]);
                axpy(&mut db[i], de[i], &u);
            }
        }
        grad.w_a.outer_acc(&step.s, &du);
        params.w_a.matvec_acc(&du, &mut ds);

        ds_next = ds;
    }

    // s_1 = tanh(W_s q0)
    let s1 = &steps[0].s;
    let dz: Vec<f64> = ds_next.iter().zip(s1).map(|(d, s)| d * (1.0 - s * s)).collect();
    let q0 = concat(&[&enc.h_m_f, &enc.h_1_b]);
    grad.w_s.outer_acc(&dz, &q0);
    let mut dq0 = vec![0.0; 2 * hd];
    params.w_s.tmatvec_acc(&dz, &mut dq0);

    let mut dhf: Vec<Vec<f64>> = db.iter().map(|b| b[..hd].to_vec()).collect();
    let mut dhb_rev: Vec<Vec<f64>> = db.iter().rev().map(|b| b[hd..].to_vec()).collect();
    axpy(&mut dhf[m - 1], 1.0, &dq0[..hd]);
    axpy(&mut dhb_rev[m - 1], 1.0, &dq0[hd..]);
    let dx_f = lstm_backward(&params.enc_fwd, &enc_cache.fwd, &dhf, &mut grad.enc_fwd);
    let dx_b = lstm_backward(&params.enc_bwd, &enc_cache.bwd, &dhb_rev, &mut grad.enc_bwd);
    for (i, &id) in input.ids.iter().enumerate() {
        row_add(&mut grad.embed_in, id, &dx_f[i]);
        row_add(&mut grad.embed_in, id, &dx_b[m - 1 - i]);
    }
    Ok(total)
}
