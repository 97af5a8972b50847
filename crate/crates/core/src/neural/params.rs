use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::Matrix;

/// Uniform initialization range, `[-INIT_SCALE, INIT_SCALE]`.
pub const INIT_SCALE: f64 = 0.1;

/// Sizes that fix every parameter shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input_vocab: usize,
    pub output_vocab: usize,
    pub embed: usize,
    pub hidden: usize,
}

/// LSTM weights. Rows of `w` and `b` are grouped as input, forget, output
/// gate and candidate, `hidden` rows each; columns of `w` are `[x; h_prev]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub w: Matrix,
    pub b: Matrix,
}

impl LstmCell {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmCell { w: Matrix::zeros(4 * hidden, input + hidden), b: Matrix::zeros(1, 4 * hidden) }
    }

    pub fn hidden(&self) -> usize {
        self.b.cols() / 4
    }

    pub fn input(&self) -> usize {
        self.w.cols() - self.hidden()
    }
}

/// Every learnable tensor of the copying encoder-decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Input word embeddings, one row per input-vocabulary id.
    pub embed_in: Matrix,
    /// Output token embeddings fed back into the decoder.
    pub embed_out: Matrix,
    pub enc_fwd: LstmCell,
    pub enc_bwd: LstmCell,
    /// Decoder cell over `[embed_out(y), context]`.
    pub dec: LstmCell,
    /// Maps `[h_fwd_last, h_bwd_first]` to the first decoder state.
    pub w_s: Matrix,
    /// Bilinear attention, `score_i = s^T w_a b_i`.
    pub w_a: Matrix,
    /// Write logits over the output vocabulary from `[s, context]`.
    pub u: Matrix,
}

impl ModelParams {
    pub fn zeros(d: Dims) -> Self {
        let h = d.hidden;
        ModelParams {
            embed_in: Matrix::zeros(d.input_vocab, d.embed),
            embed_out: Matrix::zeros(d.output_vocab, d.embed),
            enc_fwd: LstmCell::zeros(d.embed, h),
            enc_bwd: LstmCell::zeros(d.embed, h),
            dec: LstmCell::zeros(d.embed + 2 * h, h),
            w_s: Matrix::zeros(h, 2 * h),
            w_a: Matrix::zeros(h, 2 * h),
            u: Matrix::zeros(d.output_vocab, 3 * h),
        }
    }

    /// Every entry drawn uniformly from `[-scale, scale]`, tensors in
    /// [`ModelParams::tensors`] order.
    pub fn uniform<R: Rng + ?Sized>(d: Dims, scale: f64, rng: &mut R) -> Self {
        let mut p = ModelParams::zeros(d);
        for (_, t) in p.tensors_mut() {
            for x in t.data_mut() {
                *x = rng.gen_range(-scale..=scale);
            }
        }
        p
    }

    pub fn dims(&self) -> Dims {
        Dims {
            input_vocab: self.embed_in.rows(),
            output_vocab: self.u.rows(),
            embed: self.embed_in.cols(),
            hidden: self.w_s.rows(),
        }
    }

    pub const NAMES: [&'static str; 11] = [
        "embed_in",
        "embed_out",
        "enc_fwd.w",
        "enc_fwd.b",
        "enc_bwd.w",
        "enc_bwd.b",
        "dec.w",
        "dec.b",
        "w_s",
        "w_a",
        "u",
    ];

    pub fn tensors(&self) -> [(&'static str, &Matrix); 11] {
        let n = Self::NAMES;
        [
            (n[0], &self.embed_in),
            (n[1], &self.embed_out),
            (n[2], &self.enc_fwd.w),
            (n[3], &self.enc_fwd.b),
            (n[4], &self.enc_bwd.w),
            (n[5], &self.enc_bwd.b),
            (n[6], &self.dec.w),
            (n[7], &self.dec.b),
            (n[8], &self.w_s),
            (n[9], &self.w_a),
            (n[10], &self.u),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Matrix); 11] {
        let n = Self::NAMES;
        [
            (n[0], &mut self.embed_in),
            (n[1], &mut self.embed_out),
            (n[2], &mut self.enc_fwd.w),
            (n[3], &mut self.enc_fwd.b),
            (n[4], &mut self.enc_bwd.w),
            (n[5], &mut self.enc_bwd.b),
            (n[6], &mut self.dec.w),
            (n[7], &mut self.dec.b),
            (n[8], &mut self.w_s),
            (n[9], &mut self.w_a),
            (n[10], &mut self.u),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data().len()).sum()
    }

    pub fn zero(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.sum_sq()).sum::<f64>().sqrt()
    }

    /// `self += a * other`
    pub fn add_scaled(&mut self, a: f64, other: &ModelParams) {
        for ((_, t), (_, o)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            t.add_scaled(a, o);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors().iter().flat_map(|(_, t)| t.data().iter()).fold(0.0, |m: f64, x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.data().iter().all(|x| x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn dims() -> Dims {
        Dims { input_vocab: 7, output_vocab: 5, embed: 4, hidden: 3 }
    }

    #[test]
    fn shapes_are_consistent() {
        let p = ModelParams::zeros(dims());
        assert_eq!(p.dims(), dims());
        assert_eq!(p.dec.input(), 4 + 6);
        assert_eq!(p.dec.hidden(), 3);
        assert_eq!(p.u.shape(), (5, 9));
        assert_eq!(p.w_a.shape(), (3, 6));
    }

    #[test]
    fn init_within_range() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::uniform(dims(), INIT_SCALE, &mut rng);
        assert!(p.max_abs() <= INIT_SCALE);
        assert!(p.max_abs() > 0.05);
    }
}
