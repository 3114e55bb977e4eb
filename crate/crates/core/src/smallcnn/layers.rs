//! Single-sample layer kernels on channel-major (`C x H x W`) buffers.
//!
//! Every backward function takes the upstream gradient and returns the
//! gradient with respect to its input (and parameters, where it has any).
//! Accumulation order is fixed, so results are bit-reproducible.

use crate::numerics::{axpy, dot};

/// Stride-1 "same" convolution with an odd square kernel.
///
/// `weights` is `out_c x in_c x k x k`, `bias` is `out_c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.k * self.k
    }

    fn widx(&self, o: usize, c: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_c + c) * self.k + ky) * self.k + kx
    }

    /// Visit every (kernel tap, output row, column range, input offset)
    /// overlap for one (output, input) channel pair.
    fn taps(&self) -> impl Iterator<Item = (usize, usize, isize, isize)> + '_ {
        let p = (self.k / 2) as isize;
        (0..self.k).flat_map(move |ky| (0..self.k).map(move |kx| (ky, kx, ky as isize - p, kx as isize - p)))
    }

    fn rows(&self, dy: isize) -> std::ops::Range<usize> {
        let h = self.h as isize;
        (0.max(-dy) as usize)..((h.min(h - dy)).max(0) as usize)
    }

    fn cols(&self, dx: isize) -> std::ops::Range<usize> {
        let w = self.w as isize;
        (0.max(-dx) as usize)..((w.min(w - dx)).max(0) as usize)
    }
}

pub fn conv_forward(s: &ConvShape, x: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let plane = s.h * s.w;
    debug_assert_eq!(x.len(), s.in_c * plane);
    let mut y = vec![0.0; s.out_c * plane];
    for o in 0..s.out_c {
        let yo = &mut y[o * plane..(o + 1) * plane];
        yo.iter_mut().for_each(|v| *v = bias[o]);
        for c in 0..s.in_c {
            let xc = &x[c * plane..(c + 1) * plane];
            for (ky, kx, dy, dx) in s.taps() {
                let wv = weights[s.widx(o, c, ky, kx)];
                let cols = s.cols(dx);
                for r in s.rows(dy) {
                    let src = (r as isize + dy) as usize * s.w;
                    let dst = &mut yo[r * s.w + cols.start..r * s.w + cols.end];
                    let from = (src as isize + cols.start as isize + dx) as usize;
                    axpy(wv, &xc[from..from + cols.len()], dst);
                }
            }
        }
    }
    y
}

/// Returns `(dx, dweights, dbias)`.
pub fn conv_backward(s: &ConvShape, x: &[f64], weights: &[f64], dy_out: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane = s.h * s.w;
    let mut dx = vec![0.0; s.in_c * plane];
    let mut dw = vec![0.0; s.weight_len()];
    let mut db = vec![0.0; s.out_c];
    for o in 0..s.out_c {
        let go = &dy_out[o * plane..(o + 1) * plane];
        db[o] = go.iter().sum();
        for c in 0..s.in_c {
            let xc = &x[c * plane..(c + 1) * plane];
            for (ky, kx, dy, ddx) in s.taps() {
                let wi = s.widx(o, c, ky, kx);
                let wv = weights[wi];
                let cols = s.cols(ddx);
                let mut acc = 0.0;
                for r in s.rows(dy) {
                    let g = &go[r * s.w + cols.start..r * s.w + cols.end];
                    let from = ((r as isize + dy) as usize * s.w) as isize + cols.start as isize + ddx;
                    let from = from as usize;
                    acc += dot(g, &xc[from..from + cols.len()]);
                    axpy(wv, g, &mut dx[c * plane + from..c * plane + from + cols.len()]);
                }
                dw[wi] += acc;
            }
        }
    }
    (dx, dw, db)
}

pub fn relu_forward(pre: &[f64]) -> Vec<f64> {
    pre.iter().map(|&v| v.max(0.0)).collect()
}

pub fn relu_backward(pre: &[f64], dy: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(dy)
        .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
        .collect()
}

/// 3x3 stride-1 max pool over valid neighbors (no padding values).
/// Returns the pooled map and, per output, the flat input index that won
/// (first maximum in row-major kernel order).
pub fn maxpool3_forward(x: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let mut y = vec![0.0; c * h * w];
    let mut arg = vec![0; c * h * w];
    for ch in 0..c {
        let base = ch * h * w;
        for r in 0..h {
            for col in 0..w {
                let mut best = usize::MAX;
                for rr in r.saturating_sub(1)..(r + 2).min(h) {
                    for cc in col.saturating_sub(1)..(col + 2).min(w) {
                        let i = base + rr * w + cc;
                        if best == usize::MAX || x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                y[base + r * w + col] = x[best];
                arg[base + r * w + col] = best;
            }
        }
    }
    (y, arg)
}

pub fn maxpool3_backward(arg: &[usize], dy: &[f64], input_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (&i, &g) in arg.iter().zip(dy) {
        dx[i] += g;
    }
    dx
}

pub fn gap_forward(x: &[f64], c: usize, plane: usize) -> Vec<f64> {
    (0..c)
        .map(|ch| x[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64)
        .collect()
}

pub fn gap_backward(dy: &[f64], plane: usize) -> Vec<f64> {
    dy.iter()
        .flat_map(|&g| std::iter::repeat_n(g / plane as f64, plane))
        .collect()
}

/// `y = W x + b`, `W` is `out x in` row-major.
pub fn dense_forward(x: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, b)| dot(&weights[o * n_in..(o + 1) * n_in], x) + b)
        .collect()
}

/// Returns `(dx, dweights, dbias)`.
pub fn dense_backward(x: &[f64], weights: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n_in = x.len();
    let mut dx = vec![0.0; n_in];
    let mut dw = vec![0.0; weights.len()];
    for (o, &g) in dy.iter().enumerate() {
        axpy(g, x, &mut dw[o * n_in..(o + 1) * n_in]);
        axpy(g, &weights[o * n_in..(o + 1) * n_in], &mut dx);
    }
    (dx, dw, dy.to_vec())
}

/// Channel concatenation of channel-major maps that share a plane size.
pub fn concat(parts: &[&[f64]]) -> Vec<f64> {
    parts.concat()
}

/// Inverse of [`concat`]: slice the upstream gradient back per part.
pub fn concat_backward<'a>(dy: &'a [f64], lens: &[usize]) -> Vec<&'a [f64]> {
    let mut out = Vec::with_capacity(lens.len());
    let mut start = 0;
    for &l in lens {
        out.push(&dy[start..start + l]);
        start += l;
    }
    out
}

/// Cross-entropy of softmax(logits) against `label`; returns the loss and
/// the gradient with respect to the logits.
pub fn softmax_xent(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let loss = crate::numerics::log_sum_exp(logits) - logits[label];
    let mut p = logits.to_vec();
    crate::numerics::softmax_in_place(&mut p);
    p[label] -= 1.0;
    (loss, p)
}
