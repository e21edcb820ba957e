//! Layer kernels. The public functions are single-sample reference entry
//! points; the `*_batch` variants are what the network uses.

use rand::Rng;

use super::gemm::sgemm;
use super::network::Mode;
use super::{NnError, Tensor};
use crate::seed;

/// Valid-padding, stride-1 convolution of a `[c_in, len]` input with
/// `[c_out, c_in, k]` weights: `out[c, t] = bias[c] + Σ_{i,k} w[c,i,k]·in[i,t+k]`.
pub fn conv1d_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let (&[c_in, len], &[c_out, w_in, k]) = (input.shape(), weight.shape()) else {
        return Err(NnError::Shape(format!(
            "conv1d expects [C_in, L] input and [C_out, C_in, K] weights, got {:?} and {:?}",
            input.shape(),
            weight.shape()
        )));
    };
    if w_in != c_in || bias.shape() != [c_out] {
        return Err(NnError::Shape(format!(
            "conv1d weight {:?} / bias {:?} do not match {c_in} input channels",
            weight.shape(),
            bias.shape()
        )));
    }
    if len < k {
        return Err(NnError::Shape(format!("input length {len} shorter than kernel {k}")));
    }
    let out_len = len - k + 1;
    let mut out = vec![0.0; c_out * out_len];
    let mut col = Vec::new();
    conv1d_batch(input.data(), 1, c_in, len, weight.data(), bias.data(), c_out, k, &mut out, &mut col);
    Tensor::new(vec![c_out, out_len], out)
}

/// Affine map `weight·input + bias` with `[f_out, f_in]` weights.
pub fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let (&[f_in], &[f_out, w_in]) = (input.shape(), weight.shape()) else {
        return Err(NnError::Shape(format!(
            "dense expects [F_in] input and [F_out, F_in] weights, got {:?} and {:?}",
            input.shape(),
            weight.shape()
        )));
    };
    if w_in != f_in || bias.shape() != [f_out] {
        return Err(NnError::Shape(format!(
            "dense weight {:?} / bias {:?} do not match input width {f_in}",
            weight.shape(),
            bias.shape()
        )));
    }
    let mut out = vec![0.0; f_out];
    dense_batch(input.data(), 1, f_in, weight.data(), bias.data(), f_out, &mut out);
    Tensor::new(vec![f_out], out)
}

/// Numerically stable softmax (max subtraction, `f64` accumulation).
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&z| (z as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / sum) as f32).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, returning the loss and
/// the probabilities.
pub fn softmax_ce(logits: &[f32], label: usize) -> (f64, Vec<f32>) {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let sum: f64 = logits.iter().map(|&z| (z as f64 - max).exp()).sum();
    let log_sum = sum.ln();
    let loss = -(logits[label] as f64 - max - log_sum);
    (loss, softmax(logits))
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1/(1 − rate)`; eval mode is identity.
pub fn dropout(input: &Tensor, rate: f32, mode: Mode, seed: u64) -> Tensor {
    let mut out = input.clone();
    if mode == Mode::Train && rate > 0.0 {
        let mask = dropout_mask(input.len(), rate, &mut seed::rng(seed));
        out.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
    }
    out
}

pub(crate) fn dropout_mask(len: usize, rate: f32, rng: &mut impl Rng) -> Vec<f32> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f32>() < rate { 0.0 } else { keep })
        .collect()
}

/// Fills `col` (`[c_in·k, out_len]`) with the sliding windows of one sample.
fn im2col(x: &[f32], c_in: usize, len: usize, k: usize, col: &mut Vec<f32>) {
    let out_len = len - k + 1;
    col.clear();
    col.reserve(c_in * k * out_len);
    for i in 0..c_in {
        let row = &x[i * len..(i + 1) * len];
        for kk in 0..k {
            col.extend_from_slice(&row[kk..kk + out_len]);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_batch(
    input: &[f32],
    batch: usize,
    c_in: usize,
    len: usize,
    weight: &[f32],
    bias: &[f32],
    c_out: usize,
    k: usize,
    out: &mut [f32],
    col: &mut Vec<f32>,
) {
    let out_len = len - k + 1;
    let ck = c_in * k;
    for b in 0..batch {
        let x = &input[b * c_in * len..(b + 1) * c_in * len];
        let y = &mut out[b * c_out * out_len..(b + 1) * c_out * out_len];
        for (c, row) in y.chunks_exact_mut(out_len).enumerate() {
            row.fill(bias[c]);
        }
        im2col(x, c_in, len, k, col);
        sgemm(c_out, ck, out_len, weight, (ck, 1), col, (out_len, 1), 1.0, y, out_len);
    }
}

/// Accumulates weight and bias gradients and, when `grad_input` is given,
/// writes the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward_batch(
    input: &[f32],
    grad_out: &[f32],
    batch: usize,
    c_in: usize,
    len: usize,
    weight: &[f32],
    c_out: usize,
    k: usize,
    grad_weight: &mut [f32],
    grad_bias: &mut [f32],
    mut grad_input: Option<&mut [f32]>,
    col: &mut Vec<f32>,
) {
    let out_len = len - k + 1;
    let ck = c_in * k;
    let mut dcol = vec![0.0f32; if grad_input.is_some() { ck * out_len } else { 0 }];
    for b in 0..batch {
        let x = &input[b * c_in * len..(b + 1) * c_in * len];
        let g = &grad_out[b * c_out * out_len..(b + 1) * c_out * out_len];
        for (c, row) in g.chunks_exact(out_len).enumerate() {
            grad_bias[c] += row.iter().map(|&v| v as f64).sum::<f64>() as f32;
        }
        im2col(x, c_in, len, k, col);
        // dW[c_out, ck] += g[c_out, out_len] · colᵀ
        sgemm(c_out, out_len, ck, g, (out_len, 1), col, (1, out_len), 1.0, grad_weight, ck);
        if let Some(gi) = grad_input.as_deref_mut() {
            // dcol[ck, out_len] = Wᵀ · g
            sgemm(ck, c_out, out_len, weight, (1, ck), g, (out_len, 1), 0.0, &mut dcol, out_len);
            let dx = &mut gi[b * c_in * len..(b + 1) * c_in * len];
            dx.fill(0.0);
            for i in 0..c_in {
                let row = &mut dx[i * len..(i + 1) * len];
                for kk in 0..k {
                    let src = &dcol[(i * k + kk) * out_len..(i * k + kk + 1) * out_len];
                    row[kk..kk + out_len].iter_mut().zip(src).for_each(|(d, s)| *d += s);
                }
            }
        }
    }
}

pub(crate) fn dense_batch(
    input: &[f32],
    batch: usize,
    f_in: usize,
    weight: &[f32],
    bias: &[f32],
    f_out: usize,
    out: &mut [f32],
) {
    for row in out[..batch * f_out].chunks_exact_mut(f_out) {
        row.copy_from_slice(bias);
    }
    if batch == 1 {
        // GEMM would pack the whole weight matrix for a single row.
        for (o, w) in out.iter_mut().zip(weight.chunks_exact(f_in)) {
            *o += dot(w, &input[..f_in]);
        }
        return;
    }
    // out[batch, f_out] += in[batch, f_in] · Wᵀ
    sgemm(batch, f_in, f_out, input, (f_in, 1), weight, (1, f_in), 1.0, out, f_out);
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 16];
    let (ca, cb) = (a.chunks_exact(16), b.chunks_exact(16));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..16 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f32 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f32>() + tail
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward_batch(
    input: &[f32],
    grad_out: &[f32],
    batch: usize,
    f_in: usize,
    weight: &[f32],
    f_out: usize,
    grad_weight: &mut [f32],
    grad_bias: &mut [f32],
    grad_input: Option<&mut [f32]>,
) {
    for (o, gb) in grad_bias.iter_mut().enumerate() {
        *gb += (0..batch).map(|b| grad_out[b * f_out + o] as f64).sum::<f64>() as f32;
    }
    // dW[f_out, f_in] += gᵀ · in
    sgemm(f_out, batch, f_in, grad_out, (1, f_out), input, (f_in, 1), 1.0, grad_weight, f_in);
    if let Some(gi) = grad_input {
        // dIn[batch, f_in] = g · W
        sgemm(batch, f_out, f_in, grad_out, (f_out, 1), weight, (f_in, 1), 0.0, gi, f_in);
    }
}
