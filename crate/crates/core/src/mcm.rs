//! Morphology critic: a GRU over latent sequences whose final hidden state
//! is mapped by a small MLP to 24 bone lengths.
//!
//! After pretraining on encoded real motion it is frozen. The generator binds
//! its parameters as tape constants, so they can never receive gradient.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::math;
use crate::nn::Linear;
use crate::optim::{optimizer_step, AdamConfig, AdamState};
use crate::params::{Bound, ParamSet};
use crate::rng;
use crate::skeleton::{BoneLengths, NUM_BONES};
use crate::tape::{Tape, Var};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmConfig {
    pub latent_dim: usize,
    pub hidden: usize,
}

impl Default for McmConfig {
    fn default() -> Self {
        Self { latent_dim: 64, hidden: 128 }
    }
}

#[derive(Clone, Debug)]
pub struct Mcm {
    pub cfg: McmConfig,
    pub params: ParamSet,
    /// Fixed input standardization, set from training latents.
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    w_in: Linear,
    w_hid: Linear,
    head1: Linear,
    head2: Linear,
}

impl Mcm {
    pub fn new(cfg: McmConfig, seed: u64) -> Result<Self> {
        if cfg.latent_dim == 0 || cfg.hidden == 0 {
            return Err(Error::Config("critic widths must be positive".into()));
        }
        let mut r = rng::derive(seed, 0x3c3);
        let mut ps = ParamSet::new();
        let (d, h) = (cfg.latent_dim, cfg.hidden);
        // gate blocks are laid out [reset | update | candidate]
        let w_in = Linear::new(&mut ps, "mcm.w_in", d, 3 * h, &mut r);
        let w_hid = Linear::new(&mut ps, "mcm.w_hid", h, 3 * h, &mut r);
        let head1 = Linear::new(&mut ps, "mcm.head1", h, h, &mut r);
        let head2 = Linear::new(&mut ps, "mcm.head2", h, NUM_BONES, &mut r);
        Ok(Self { input_mean: alloc::vec![0.0; d], input_std: alloc::vec![1.0; d], cfg, params: ps, w_in, w_hid, head1, head2 })
    }

    /// Sets the input standardization from a collection of latent sequences.
    pub fn fit_input_stats<'a>(&mut self, latents: impl IntoIterator<Item = &'a Matrix>) -> Result<()> {
        let d = self.cfg.latent_dim;
        let (mut n, mut sum, mut sq) = (0usize, alloc::vec![0.0; d], alloc::vec![0.0; d]);
        for z in latents {
            for r in 0..z.rows() {
                for (c, v) in z.row(r).iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let nf = n as f64;
        self.input_mean = sum.iter().map(|s| s / nf).collect();
        self.input_std = sq.iter().zip(&self.input_mean).map(|(q, m)| math::sqrt((q / nf - m * m).max(0.0)).max(1e-6)).collect();
        Ok(())
    }

    /// Final hidden state (`1 × hidden`) after running over the rows of `z`.
    pub fn hidden_tape(&self, t: &mut Tape, p: &Bound, z: Var) -> Var {
        let h_dim = self.cfg.hidden;
        let mean: Vec<f64> = self.input_mean.iter().map(|m| -m).collect();
        let inv: Vec<f64> = self.input_std.iter().map(|s| 1.0 / s).collect();
        let shift = t.constant(Matrix::row_vector(mean));
        let scale = t.constant(Matrix::row_vector(inv));
        let zs = t.add_row(z, shift);
        let zs = t.mul_row(zs, scale);
        let xi = self.w_in.forward(t, p, zs);
        let mut h = t.constant(Matrix::zeros(1, h_dim));
        for step in 0..t.shape(z).0 {
            let x = t.slice_rows(xi, step, 1);
            h = self.step_tape(t, p, x, h);
        }
        h
    }

    /// One recurrence step given the precomputed input projection `x` (`1 × 3H`).
    fn step_tape(&self, t: &mut Tape, p: &Bound, x: Var, h: Var) -> Var {
        let hd = self.cfg.hidden;
        let hh = self.w_hid.forward(t, p, h);
        let (xr, xu, xn) = (t.slice_cols(x, 0, hd), t.slice_cols(x, hd, hd), t.slice_cols(x, 2 * hd, hd));
        let (hr, hu, hn) = (t.slice_cols(hh, 0, hd), t.slice_cols(hh, hd, hd), t.slice_cols(hh, 2 * hd, hd));
        let r = t.add(xr, hr);
        let r = t.sigmoid(r);
        let u = t.add(xu, hu);
        let u = t.sigmoid(u);
        let gated = t.mul(r, hn);
        let n = t.add(xn, gated);
        let n = t.tanh(n);
        // h' = (1 − u) ⊙ n + u ⊙ h
        let d = t.sub(h, n);
        let ud = t.mul(u, d);
        t.add(n, ud)
    }

    /// `1 × 24` prediction for a `T × d` latent sequence.
    pub fn predict_tape(&self, t: &mut Tape, p: &Bound, z: Var) -> Var {
        let h = self.hidden_tape(t, p, z);
        let a = self.head1.forward(t, p, h);
        let a = t.silu(a);
        self.head2.forward(t, p, a)
    }

    fn check(&self, z: &Matrix) -> Result<()> {
        if z.rows() == 0 {
            return Err(Error::TooShort { min: 1, got: 0 });
        }
        if z.cols() != self.cfg.latent_dim {
            return Err(invalid(format!("latent width {} != {}", z.cols(), self.cfg.latent_dim)));
        }
        Ok(())
    }

    pub fn predict(&self, z: &Matrix) -> Result<Vec<f64>> {
        self.check(z)?;
        let mut t = Tape::new();
        let p = self.params.bind(&mut t, false);
        let zv = t.constant(z.clone());
        let out = self.predict_tape(&mut t, &p, zv);
        Ok(t.value(out).as_slice().to_vec())
    }

    /// Closed-form GRU step on plain vectors; `x` is the raw (unstandardized) latent.
    pub fn reference_step(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let hd = self.cfg.hidden;
        let xs: Vec<f64> = x.iter().zip(&self.input_mean).zip(&self.input_std).map(|((v, m), s)| (v - m) * (1.0 / s)).collect();
        let affine = |lin: &Linear, v: &[f64]| -> Vec<f64> {
            let w = self.params.get(lin.w);
            let b = self.params.get(lin.b);
            (0..w.cols()).map(|o| b.get(0, o) + v.iter().enumerate().map(|(i, a)| a * w.get(i, o)).sum::<f64>()).collect()
        };
        let gi = affine(&self.w_in, &xs);
        let gh = affine(&self.w_hid, h);
        (0..hd)
            .map(|k| {
                let r = math::sigmoid(gi[k] + gh[k]);
                let u = math::sigmoid(gi[hd + k] + gh[hd + k]);
                let n = math::tanh(gi[2 * hd + k] + r * gh[2 * hd + k]);
                (1.0 - u) * n + u * h[k]
            })
            .collect()
    }

    pub fn final_hidden(&self, z: &Matrix) -> Result<Vec<f64>> {
        self.check(z)?;
        let mut t = Tape::new();
        let p = self.params.bind(&mut t, false);
        let zv = t.constant(z.clone());
        let h = self.hidden_tape(&mut t, &p, zv);
        Ok(t.value(h).as_slice().to_vec())
    }

    /// `‖f(z) − b‖²` on the tape.
    pub fn pretrain_loss_tape(&self, t: &mut Tape, p: &Bound, z: Var, b: &BoneLengths) -> Var {
        let pred = self.predict_tape(t, p, z);
        let target = t.constant(Matrix::row_vector(b.0.to_vec()));
        let d = t.sub(pred, target);
        t.sum_squares(d)
    }

    pub fn pretrain_loss(&self, z: &Matrix, b: &BoneLengths) -> Result<f64> {
        let pred = self.predict(z)?;
        Ok(pred.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum())
    }

    /// Mean pretraining loss over the batch and one optimizer step.
    pub fn train_step(&mut self, batch: &[(&Matrix, &BoneLengths)], state: &mut AdamState, adam: &AdamConfig) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut t = Tape::new();
        let p = self.params.bind(&mut t, true);
        let mut losses = Vec::with_capacity(batch.len());
        for (z, b) in batch {
            self.check(z)?;
            let zv = t.constant((*z).clone());
            losses.push(self.pretrain_loss_tape(&mut t, &p, zv, b));
        }
        let all = t.concat_cols(&losses);
        let loss = t.mean(all);
        let value = t.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("critic pretraining loss {value}")));
        }
        let g = t.backward(loss);
        let grads = p.grads(&t, &g);
        optimizer_step(&mut self.params, &grads, state, adam)?;
        Ok(value)
    }
}

/// `T × d` sequence whose rows in `mask` come from `live` (in mask order) and
/// all other rows from `base`. Pass a detached `base` to stop gradient at the
/// unmasked positions.
pub fn assemble_masked(t: &mut Tape, base: Var, live: Var, mask: &[usize]) -> Var {
    let rows = t.shape(base).0;
    let mut index: Vec<Option<usize>> = (0..rows).map(Some).collect();
    for (k, &i) in mask.iter().enumerate() {
        index[i] = Some(rows + k);
    }
    if mask.is_empty() {
        return t.gather_rows(base, index);
    }
    let stacked = t.concat_rows(&[base, live]);
    t.gather_rows(stacked, index)
}

/// Guidance penalty `‖f(Ẑ) − b‖²` through a frozen critic. `mcm_bound` must
/// come from `bind(.., false)`.
pub fn morph_guide_loss(t: &mut Tape, mcm: &Mcm, mcm_bound: &Bound, z_hat: Var, b: &BoneLengths) -> Var {
    mcm.pretrain_loss_tape(t, mcm_bound, z_hat, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Mcm {
        let mut m = Mcm::new(McmConfig { latent_dim: 5, hidden: 6 }, 2).unwrap();
        m.input_mean = alloc::vec![0.1, -0.2, 0.0, 0.3, 0.05];
        m.input_std = alloc::vec![1.5, 0.7, 1.0, 2.0, 0.9];
        m
    }

    #[test]
    fn recurrence_matches_closed_form_steps() {
        let m = small();
        let z = rng::normal_matrix(&mut rng::seeded(3), 4, 5);
        let mut h = alloc::vec![0.0; 6];
        for r in 0..4 {
            h = m.reference_step(z.row(r), &h);
            let got = m.final_hidden(&z.select_rows(&(0..=r).collect::<Vec<_>>())).unwrap();
            for (a, b) in got.iter().zip(&h) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
        assert_eq!(m.predict(&z).unwrap(), m.predict(&z).unwrap());
        assert!(m.predict(&Matrix::zeros(0, 5)).is_err());
    }

    #[test]
    fn loss_is_quadratic_in_residual() {
        let m = small();
        let z = rng::normal_matrix(&mut rng::seeded(4), 3, 5);
        let pred = m.predict(&z).unwrap();
        let exact = BoneLengths(core::array::from_fn(|i| pred[i]));
        assert_eq!(m.pretrain_loss(&z, &exact).unwrap(), 0.0);
        let off1 = BoneLengths(core::array::from_fn(|i| pred[i] + 0.1));
        let off2 = BoneLengths(core::array::from_fn(|i| pred[i] + 0.2));
        let (l1, l2) = (m.pretrain_loss(&z, &off1).unwrap(), m.pretrain_loss(&z, &off2).unwrap());
        assert!((l2 - 4.0 * l1).abs() <= 1e-12);
    }

    #[test]
    fn guide_gradient_only_reaches_masked_rows() {
        let m = small();
        let z = rng::normal_matrix(&mut rng::seeded(5), 5, 5);
        let b = BoneLengths([0.3; 24]);
        let mask = [1, 3];
        let mut t = Tape::new();
        let p = m.params.bind(&mut t, false);
        let zl = t.leaf(z);
        let base = t.detach(zl);
        let live = t.select_rows(zl, &mask);
        let zh = assemble_masked(&mut t, base, live, &mask);
        let loss = morph_guide_loss(&mut t, &m, &p, zh, &b);
        let g = t.backward(loss);
        let gz = g.get(zl).unwrap();
        for r in [0, 2, 4] {
            assert!(gz.row(r).iter().all(|&v| v == 0.0));
        }
        assert!(gz.row(1).iter().any(|&v| v != 0.0));
        assert!(p.vars().iter().all(|&v| g.get(v).is_none()));
    }
}
