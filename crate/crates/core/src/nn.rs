//! Layers over the tape: dense, layer norm, packed 1-D convolutions and
//! multi-head attention.
//!
//! Layers only hold [`ParamId`]s; values live in the owning [`ParamSet`] and
//! reach the tape through a [`Bound`].

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math;
use crate::params::{Bound, ParamId, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Matrix;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(ps: &mut ParamSet, name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let w = ps.add_uniform(&format!("{name}.w"), d_in, d_out, d_in, rng);
        let b = ps.add_zeros(&format!("{name}.b"), 1, d_out);
        Self { w, b, d_in, d_out }
    }

    pub fn forward(&self, t: &mut Tape, p: &Bound, x: Var) -> Var {
        let y = t.matmul(x, p.var(self.w));
        t.add_row(y, p.var(self.b))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(ps: &mut ParamSet, name: &str, dim: usize) -> Self {
        let gain = ps.add(&format!("{name}.g"), Matrix::filled(1, dim, 1.0));
        let bias = ps.add_zeros(&format!("{name}.b"), 1, dim);
        Self { gain, bias }
    }

    pub fn forward(&self, t: &mut Tape, p: &Bound, x: Var) -> Var {
        t.layer_norm(x, p.var(self.gain), p.var(self.bias), Self::EPS)
    }
}

/// How convolutions read past the ends of a segment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    Zero,
    /// Wraps around within each segment; makes stride-aligned shifts exact.
    Circular,
}

/// Row offsets of consecutive segments.
fn offsets(segments: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    segments
        .iter()
        .map(|&n| {
            let o = acc;
            acc += n;
            o
        })
        .collect()
}

/// Temporal convolution over packed sequences.
///
/// The input stacks several sequences row-wise (`Σ len × c_in`); `segments`
/// lists their lengths and no window ever crosses a segment boundary. The
/// weight is laid out `(kernel · c_in) × c_out`, tap-major.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = kernel * c_in;
        let w = ps.add_uniform(&format!("{name}.w"), fan_in, c_out, fan_in, rng);
        let b = ps.add_zeros(&format!("{name}.b"), 1, c_out);
        Self { w, b, c_in, c_out, kernel, stride, pad }
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad).saturating_sub(self.kernel) / self.stride + 1
    }

    pub fn forward(&self, t: &mut Tape, p: &Bound, x: Var, segments: &[usize], padding: Padding) -> (Var, Vec<usize>) {
        let mut index = Vec::new();
        let mut out_segments = Vec::with_capacity(segments.len());
        for (&len, off) in segments.iter().zip(offsets(segments)) {
            let n_out = self.out_len(len);
            for o in 0..n_out {
                for k in 0..self.kernel {
                    let src = (o * self.stride + k) as isize - self.pad as isize;
                    index.push(if (0..len as isize).contains(&src) {
                        Some(off + src as usize)
                    } else {
                        match padding {
                            Padding::Zero => None,
                            Padding::Circular => Some(off + src.rem_euclid(len as isize) as usize),
                        }
                    });
                }
            }
            out_segments.push(n_out);
        }
        let rows: usize = out_segments.iter().sum();
        let windows = t.gather_rows(x, index);
        let windows = t.reshape(windows, rows, self.kernel * self.c_in);
        let y = t.matmul(windows, p.var(self.w));
        (t.add_row(y, p.var(self.b)), out_segments)
    }
}

/// Transposed temporal convolution over packed sequences:
/// `y[o] = Σ_k x[i] · W_k` over `o = i·stride + k − pad`.
#[derive(Clone, Debug)]
pub struct ConvTranspose1d {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = kernel * c_in / stride;
        let w = ps.add_uniform(&format!("{name}.w"), kernel * c_in, c_out, fan_in, rng);
        let b = ps.add_zeros(&format!("{name}.b"), 1, c_out);
        Self { w, b, c_in, c_out, kernel, stride, pad }
    }

    pub fn out_len(&self, len: usize) -> usize {
        ((len.max(1) - 1) * self.stride + self.kernel).saturating_sub(2 * self.pad)
    }

    pub fn forward(&self, t: &mut Tape, p: &Bound, x: Var, segments: &[usize]) -> (Var, Vec<usize>) {
        let mut index = Vec::new();
        let mut out_segments = Vec::with_capacity(segments.len());
        for (&len, off) in segments.iter().zip(offsets(segments)) {
            let n_out = self.out_len(len);
            for o in 0..n_out {
                for k in 0..self.kernel {
                    let num = (o + self.pad) as isize - k as isize;
                    let hit = num >= 0 && num % self.stride as isize == 0 && ((num / self.stride as isize) as usize) < len;
                    index.push(hit.then(|| off + num as usize / self.stride));
                }
            }
            out_segments.push(n_out);
        }
        let rows: usize = out_segments.iter().sum();
        let windows = t.gather_rows(x, index);
        let windows = t.reshape(windows, rows, self.kernel * self.c_in);
        let y = t.matmul(windows, p.var(self.w));
        (t.add_row(y, p.var(self.b)), out_segments)
    }
}

/// Multi-head scaled dot-product attention with separate query and
/// key/value inputs (self-attention passes the same var twice).
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(ps: &mut ParamSet, name: &str, d: usize, d_kv: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(heads > 0 && d.is_multiple_of(heads), "width must split evenly across heads");
        Self {
            q: Linear::new(ps, &format!("{name}.q"), d, d, rng),
            k: Linear::new(ps, &format!("{name}.k"), d_kv, d, rng),
            v: Linear::new(ps, &format!("{name}.v"), d_kv, d, rng),
            o: Linear::new(ps, &format!("{name}.o"), d, d, rng),
            heads,
        }
    }

    pub fn forward(&self, t: &mut Tape, p: &Bound, xq: Var, xkv: Var) -> Var {
        let q = self.q.forward(t, p, xq);
        let k = self.k.forward(t, p, xkv);
        let v = self.v.forward(t, p, xkv);
        let d = t.shape(q).1;
        let dh = d / self.heads;
        let scale = 1.0 / math::sqrt(dh as f64);
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = t.slice_cols(q, h * dh, dh);
            let kh = t.slice_cols(k, h * dh, dh);
            let vh = t.slice_cols(v, h * dh, dh);
            let s = t.matmul_nt(qh, kh);
            let s = t.scale(s, scale);
            let a = t.softmax_rows(s);
            outs.push(t.matmul(a, vh));
        }
        let cat = if outs.len() == 1 { outs[0] } else { t.concat_cols(&outs) };
        self.o.forward(t, p, cat)
    }
}

/// `[sin(v·ω_k), cos(v·ω_k)]` features with geometric frequencies
/// `ω_k = max_period^(−k/half)`.
pub fn sinusoidal(values: &[f64], dim: usize, max_period: f64) -> Matrix {
    let half = dim / 2;
    Matrix::from_fn(values.len(), dim, |r, c| {
        let k = c % half.max(1);
        let w = math::powf(max_period, -(k as f64) / half.max(1) as f64);
        if c < half {
            math::sin(values[r] * w)
        } else if c < 2 * half {
            math::cos(values[r] * w)
        } else {
            0.0
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn naive_conv(x: &Matrix, w: &Matrix, b: &Matrix, k: usize, s: usize, p: usize) -> Matrix {
        let (len, c_in) = x.shape();
        let n_out = (len + 2 * p - k) / s + 1;
        Matrix::from_fn(n_out, w.cols(), |o, co| {
            let mut acc = b.get(0, co);
            for kk in 0..k {
                let i = (o * s + kk) as isize - p as isize;
                if i >= 0 && (i as usize) < len {
                    for ci in 0..c_in {
                        acc += x.get(i as usize, ci) * w.get(kk * c_in + ci, co);
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv_matches_direct_loop_per_segment() {
        let mut r = rng::seeded(1);
        let mut ps = ParamSet::new();
        let conv = Conv1d::new(&mut ps, "c", 3, 5, 4, 2, 1, &mut r);
        let a = rng::normal_matrix(&mut r, 9, 3);
        let b = rng::normal_matrix(&mut r, 6, 3);
        let mut t = Tape::new();
        let p = ps.bind(&mut t, false);
        let x = t.constant(Matrix::from_vec(15, 3, [a.as_slice(), b.as_slice()].concat()));
        let (y, segs) = conv.forward(&mut t, &p, x, &[9, 6], Padding::Zero);
        assert_eq!(segs, [4, 3]);
        let want = [naive_conv(&a, ps.get(conv.w), ps.get(conv.b), 4, 2, 1), naive_conv(&b, ps.get(conv.w), ps.get(conv.b), 4, 2, 1)];
        let got = t.value(y);
        let mut row = 0;
        for w in &want {
            for o in 0..w.rows() {
                for c in 0..5 {
                    assert!((got.get(row, c) - w.get(o, c)).abs() < 1e-12);
                }
                row += 1;
            }
        }
    }

    #[test]
    fn transposed_conv_doubles_length_and_matches_scatter() {
        let mut r = rng::seeded(2);
        let mut ps = ParamSet::new();
        let conv = ConvTranspose1d::new(&mut ps, "u", 2, 3, 4, 2, 1, &mut r);
        let x = rng::normal_matrix(&mut r, 5, 2);
        let mut t = Tape::new();
        let p = ps.bind(&mut t, false);
        let xv = t.constant(x.clone());
        let (y, segs) = conv.forward(&mut t, &p, xv, &[5]);
        assert_eq!(segs, [10]);
        // scatter form: every input row contributes to output rows 2i + k - 1
        let w = ps.get(conv.w);
        let mut want = Matrix::zeros(10, 3);
        for i in 0..5 {
            for k in 0..4 {
                let o = (2 * i + k) as isize - 1;
                if (0..10).contains(&o) {
                    for co in 0..3 {
                        let mut acc = 0.0;
                        for ci in 0..2 {
                            acc += x.get(i, ci) * w.get(k * 2 + ci, co);
                        }
                        want.set(o as usize, co, want.get(o as usize, co) + acc);
                    }
                }
            }
        }
        assert!(t.value(y).sub(&want).max_abs() < 1e-12);
    }

    #[test]
    fn attention_rows_are_convex_combinations_of_values() {
        let mut r = rng::seeded(3);
        let mut ps = ParamSet::new();
        let att = Attention::new(&mut ps, "a", 4, 6, 1, &mut r);
        let mut t = Tape::new();
        let p = ps.bind(&mut t, false);
        let q = t.constant(rng::normal_matrix(&mut r, 3, 4));
        let kv = t.constant(Matrix::filled(5, 6, 0.5));
        // identical keys/values: every query returns o(v(0.5))
        let y = att.forward(&mut t, &p, q, kv);
        for row in 1..3 {
            for c in 0..4 {
                assert!((t.value(y).get(row, c) - t.value(y).get(0, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sinusoidal_shape() {
        let m = sinusoidal(&[0.0, 1.0], 8, 10_000.0);
        assert_eq!(m.shape(), (2, 8));
        assert_eq!(m.row(0), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }
}
