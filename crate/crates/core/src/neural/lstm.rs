use super::linalg::{sigmoid, Matrix};
use super::params::LstmCell;
use super::NeuralError;

/// Everything one step needs for its backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    xh: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// One LSTM update. Returns `(h, c, cache)`.
pub fn lstm_step(
    cell: &LstmCell,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, StepCache), NeuralError> {
    let hd = cell.hidden();
    if x.len() != cell.input() || h_prev.len() != hd || c_prev.len() != hd {
        return Err(NeuralError::ShapeMismatch(format!(
            "lstm step expects input {} and state {}, got {} / {} / {}",
            cell.input(),
            hd,
            x.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let mut xh = Vec::with_capacity(x.len() + hd);
    xh.extend_from_slice(x);
    xh.extend_from_slice(h_prev);
    let mut z = vec![0.0; 4 * hd];
    cell.w.matvec(&xh, &mut z);
    for (zk, bk) in z.iter_mut().zip(cell.b.data()) {
        *zk += bk;
    }
    let i: Vec<f64> = z[..hd].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = z[hd..2 * hd].iter().map(|&v| sigmoid(v)).collect();
    let o: Vec<f64> = z[2 * hd..3 * hd].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = z[3 * hd..].iter().map(|&v| v.tanh()).collect();
    let c: Vec<f64> = (0..hd).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = (0..hd).map(|k| o[k] * tanh_c[k]).collect();
    let cache = StepCache { xh, i, f, o, g, c_prev: c_prev.to_vec(), tanh_c };
    Ok((h, c, cache))
}

/// Backward through one step given gradients on its outputs `h` and `c`.
/// Accumulates into `grad` and returns `(dx, dh_prev, dc_prev)`.
pub fn lstm_step_backward(
    cell: &LstmCell,
    cache: &StepCache,
    dh: &[f64],
    dc: &[f64],
    grad: &mut LstmCell,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hd = cell.hidden();
    let StepCache { xh, i, f, o, g, c_prev, tanh_c } = cache;
    let mut dz = vec![0.0; 4 * hd];
    let mut dc_prev = vec![0.0; hd];
    for k in 0..hd {
        let dct = dc[k] + dh[k] * o[k] * (1.0 - tanh_c[k] * tanh_c[k]);
        dz[k] = dct * g[k] * i[k] * (1.0 - i[k]);
        dz[hd + k] = dct * c_prev[k] * f[k] * (1.0 - f[k]);
        dz[2 * hd + k] = dh[k] * tanh_c[k] * o[k] * (1.0 - o[k]);
        dz[3 * hd + k] = dct * i[k] * (1.0 - g[k] * g[k]);
        dc_prev[k] = dct * f[k];
    }
    grad.w.outer_acc(&dz, xh);
    add_into(&mut grad.b, &dz);
    let mut dxh = vec![0.0; xh.len()];
    cell.w.tmatvec_acc(&dz, &mut dxh);
    let dh_prev = dxh.split_off(cell.input());
    (dxh, dh_prev, dc_prev)
}

fn add_into(m: &mut Matrix, v: &[f64]) {
    for (a, b) in m.data_mut().iter_mut().zip(v) {
        *a += b;
    }
}

/// Runs the cell over `xs` from zero state, returning every hidden state
/// and the step caches.
pub fn lstm_forward(cell: &LstmCell, xs: &[&[f64]]) -> Result<(Vec<Vec<f64>>, Vec<StepCache>), NeuralError> {
    let hd = cell.hidden();
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    let mut hs = Vec::with_capacity(xs.len());
    let mut caches = Vec::with_capacity(xs.len());
    for x in xs {
        let (h2, c2, cache) = lstm_step(cell, x, &h, &c)?;
        hs.push(h2.clone());
        caches.push(cache);
        h = h2;
        c = c2;
    }
    Ok((hs, caches))
}

/// Backward through [`lstm_forward`]. `dhs[t]` is the gradient on the t-th
/// hidden state from outside the recurrence; returns per-step input grads.
pub fn lstm_backward(cell: &LstmCell, caches: &[StepCache], dhs: &[Vec<f64>], grad: &mut LstmCell) -> Vec<Vec<f64>> {
    let hd = cell.hidden();
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    let mut dxs = vec![Vec::new(); caches.len()];
    for t in (0..caches.len()).rev() {
        let dh: Vec<f64> = dhs[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
        let (dx, dh_prev, dc_prev) = lstm_step_backward(cell, &caches[t], &dh, &dc_next, grad);
        dxs[t] = dx;
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
    dxs
}
