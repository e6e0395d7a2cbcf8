//! Conditional graph VAE over bone-length vectors.
//!
//! Nodes are the 24 bones, adjacent when they share a joint. Each node
//! carries its length plus a projection of the species condition, and the
//! projection is appended again before every graph layer. The decoder's
//! final softplus keeps sampled lengths nonnegative.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::math;
use crate::nn::Linear;
use crate::optim::{optimizer_step, AdamConfig, AdamState};
use crate::params::{Bound, ParamId, ParamSet};
use crate::rng;
use crate::skeleton::{forward_kinematics_tpose, BoneLengths, SkeletonTopology, TPose, NUM_BONES};
use crate::tape::{Tape, Var};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CgaeConfig {
    pub d_z: usize,
    pub hidden: usize,
    pub cond_dim: usize,
    /// Width of the projected condition appended to every node.
    pub cond_proj: usize,
    pub beta: f64,
}

impl Default for CgaeConfig {
    fn default() -> Self {
        Self { d_z: 16, hidden: 64, cond_dim: 64, cond_proj: 16, beta: 1e-3 }
    }
}

/// Bone adjacency with self-loops: bones touch when they share a joint.
pub fn bone_graph(topo: &SkeletonTopology) -> Matrix {
    let edges = topo.bone_edges();
    let n = edges.len();
    Matrix::from_fn(n, n, |i, j| {
        let (a, b) = edges[i];
        let (c, d) = edges[j];
        if i == j || a == c || a == d || b == c || b == d {
            1.0
        } else {
            0.0
        }
    })
}

/// `D^{-1/2} A D^{-1/2}` with `D` the row sums of `A`.
pub fn normalized_adjacency(adj: &Matrix) -> Matrix {
    let n = adj.rows();
    let d: Vec<f64> = (0..n).map(|i| adj.row(i).iter().sum::<f64>()).collect();
    Matrix::from_fn(n, n, |i, j| {
        let s = d[i] * d[j];
        if s > 0.0 {
            adj.get(i, j) / math::sqrt(s)
        } else {
            0.0
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Softplus,
}

/// One propagation step `act(Â X W + b)` on plain matrices.
pub fn gcn_layer(x: &Matrix, adj_norm: &Matrix, w: &Matrix, b: &Matrix, act: Activation) -> Result<Matrix> {
    if adj_norm.rows() != adj_norm.cols() || adj_norm.cols() != x.rows() || x.cols() != w.rows() || b.shape() != (1, w.cols()) {
        return Err(Error::ShapeMismatch(format!(
            "gcn: adj {:?}, x {:?}, w {:?}, b {:?}",
            adj_norm.shape(),
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let mut y = adj_norm.matmul(x).matmul(w);
    for r in 0..y.rows() {
        for (v, bb) in y.row_mut(r).iter_mut().zip(b.as_slice()) {
            *v += bb;
        }
    }
    Ok(match act {
        Activation::Linear => y,
        Activation::Softplus => y.map(math::softplus),
    })
}

fn gcn_tape(t: &mut Tape, adj: Var, x: Var, layer: &Linear, p: &Bound, act: Activation) -> Var {
    let ax = t.matmul(adj, x);
    let y = layer.forward(t, p, ax);
    match act {
        Activation::Linear => y,
        Activation::Softplus => t.softplus(y),
    }
}

/// Reparameterized sample `mu + exp(logvar / 2) ⊙ noise`.
pub fn reparameterize(mu: &[f64], logvar: &[f64], noise: &[f64]) -> Vec<f64> {
    mu.iter().zip(logvar).zip(noise).map(|((m, lv), n)| m + math::exp(0.5 * lv) * n).collect()
}

/// KL of `N(mu, diag(exp(logvar)))` from the standard normal.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu.iter().zip(logvar).map(|(m, lv)| math::exp(*lv) + m * m - 1.0 - lv).sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgaeLosses {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// One training example: canonical lengths and the species condition.
#[derive(Clone, Debug, PartialEq)]
pub struct CgaeSample {
    pub bones: BoneLengths,
    pub cond: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Cgae {
    pub cfg: CgaeConfig,
    pub params: ParamSet,
    adj: Matrix,
    cond: Linear,
    enc: [Linear; 2],
    mu: Linear,
    logvar: Linear,
    dec_in: Linear,
    dec: [Linear; 2],
}

impl Cgae {
    pub fn new(cfg: CgaeConfig, topo: &SkeletonTopology, seed: u64) -> Result<Self> {
        if cfg.d_z == 0 || cfg.hidden == 0 || cfg.cond_dim == 0 {
            return Err(Error::Config("cgae widths must be positive".into()));
        }
        if !(cfg.beta >= 0.0 && cfg.beta.is_finite()) {
            return Err(Error::Config("cgae beta must be finite and nonnegative".into()));
        }
        let mut r = rng::derive(seed, 0xc6ae);
        let mut ps = ParamSet::new();
        let (h, k) = (cfg.hidden, cfg.cond_proj);
        let cond = Linear::new(&mut ps, "cgae.cond", cfg.cond_dim, k, &mut r);
        let enc = [Linear::new(&mut ps, "cgae.enc0", 1 + k, h, &mut r), Linear::new(&mut ps, "cgae.enc1", h + k, h, &mut r)];
        let mu = Linear::new(&mut ps, "cgae.mu", NUM_BONES * h, cfg.d_z, &mut r);
        let logvar = Linear::new(&mut ps, "cgae.logvar", NUM_BONES * h, cfg.d_z, &mut r);
        let dec_in = Linear::new(&mut ps, "cgae.dec_in", cfg.d_z + k, NUM_BONES * h, &mut r);
        let dec = [Linear::new(&mut ps, "cgae.dec0", h + k, h, &mut r), Linear::new(&mut ps, "cgae.dec1", h + k, 1, &mut r)];
        let adj = normalized_adjacency(&bone_graph(topo));
        Ok(Self { cfg, params: ps, adj, cond, enc, mu, logvar, dec_in, dec })
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.find(name)
    }

    /// Projected condition repeated on every node.
    fn node_cond(&self, t: &mut Tape, p: &Bound, c: Var) -> Var {
        let proj = self.cond.forward(t, p, c);
        t.gather_rows(proj, vec![Some(0); NUM_BONES])
    }

    /// `(mu, logvar)`, each `1 × d_z`; `b` is `1 × 24`, `c` is `1 × cond_dim`.
    pub fn encode_tape(&self, t: &mut Tape, p: &Bound, b: Var, c: Var) -> (Var, Var) {
        let adj = t.constant(self.adj.clone());
        let nc = self.node_cond(t, p, c);
        let nodes = t.reshape(b, NUM_BONES, 1);
        let x = t.concat_cols(&[nodes, nc]);
        let x = gcn_tape(t, adj, x, &self.enc[0], p, Activation::Softplus);
        let x = t.concat_cols(&[x, nc]);
        let x = gcn_tape(t, adj, x, &self.enc[1], p, Activation::Softplus);
        let flat = t.reshape(x, 1, NUM_BONES * self.cfg.hidden);
        (self.mu.forward(t, p, flat), self.logvar.forward(t, p, flat))
    }

    /// Nonnegative `1 × 24` lengths from `z` (`1 × d_z`).
    pub fn decode_tape(&self, t: &mut Tape, p: &Bound, z: Var, c: Var) -> Var {
        let adj = t.constant(self.adj.clone());
        let proj = self.cond.forward(t, p, c);
        let zc = t.concat_cols(&[z, proj]);
        let x = self.dec_in.forward(t, p, zc);
        let x = t.softplus(x);
        let x = t.reshape(x, NUM_BONES, self.cfg.hidden);
        let nc = t.gather_rows(proj, vec![Some(0); NUM_BONES]);
        let x = t.concat_cols(&[x, nc]);
        let x = gcn_tape(t, adj, x, &self.dec[0], p, Activation::Softplus);
        let x = t.concat_cols(&[x, nc]);
        let x = gcn_tape(t, adj, x, &self.dec[1], p, Activation::Linear);
        let x = t.softplus(x);
        t.reshape(x, 1, NUM_BONES)
    }

    /// `(total, recon, kl)` for one example with fixed reparameterization noise.
    pub fn loss_tape(&self, t: &mut Tape, p: &Bound, sample: &CgaeSample, noise: &[f64]) -> (Var, Var, Var) {
        let b = t.constant(Matrix::row_vector(sample.bones.0.to_vec()));
        let c = t.constant(Matrix::row_vector(sample.cond.clone()));
        let (mu, logvar) = self.encode_tape(t, p, b, c);
        let eps = t.constant(Matrix::row_vector(noise.to_vec()));
        let half = t.scale(logvar, 0.5);
        let std = t.exp(half);
        let spread = t.mul(std, eps);
        let z = t.add(mu, spread);
        let b_hat = self.decode_tape(t, p, z, c);
        let diff = t.sub(b_hat, b);
        let recon = t.sum_squares(diff);
        // 0.5 Σ (exp(lv) + mu² − 1 − lv)
        let var = t.exp(logvar);
        let mu2 = t.mul(mu, mu);
        let a = t.add(var, mu2);
        let a = t.sub(a, logvar);
        let s = t.sum(a);
        let s = t.add_scalar(s, -(self.cfg.d_z as f64));
        let kl = t.scale(s, 0.5);
        let weighted = t.scale(kl, self.cfg.beta);
        let total = t.add(recon, weighted);
        (total, recon, kl)
    }

    fn check_cond(&self, c: &[f64]) -> Result<()> {
        if c.len() != self.cfg.cond_dim {
            return Err(invalid(format!("condition width {} != {}", c.len(), self.cfg.cond_dim)));
        }
        Ok(())
    }

    pub fn encode(&self, b: &BoneLengths, c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_cond(c)?;
        let mut t = Tape::new();
        let p = self.params.bind(&mut t, false);
        let bv = t.constant(Matrix::row_vector(b.0.to_vec()));
        let cv = t.constant(Matrix::row_vector(c.to_vec()));
        let (mu, lv) = self.encode_tape(&mut t, &p, bv, cv);
        Ok((t.value(mu).as_slice().to_vec(), t.value(lv).as_slice().to_vec()))
    }

    pub fn decode(&self, z: &[f64], c: &[f64]) -> Result<BoneLengths> {
        self.check_cond(c)?;
        if z.len() != self.cfg.d_z {
            return Err(invalid(format!("latent width {} != {}", z.len(), self.cfg.d_z)));
        }
        let mut t = Tape::new();
        let p = self.params.bind(&mut t, false);
        let zv = t.constant(Matrix::row_vector(z.to_vec()));
        let cv = t.constant(Matrix::row_vector(c.to_vec()));
        let out = self.decode_tape(&mut t, &p, zv, cv);
        BoneLengths::from_slice(t.value(out).as_slice())
    }

    pub fn loss(&self, sample: &CgaeSample, noise: &[f64]) -> Result<CgaeLosses> {
        self.check_cond(&sample.cond)?;
        let mut t = Tape::new();
        let p = self.params.bind(&mut t, false);
        let (total, recon, kl) = self.loss_tape(&mut t, &p, sample, noise);
        Ok(CgaeLosses { total: t.scalar(total), recon: t.scalar(recon), kl: t.scalar(kl) })
    }

    /// Lengths decoded from a seeded prior draw.
    pub fn sample_bone_lengths(&self, c: &[f64], seed: u64) -> Result<BoneLengths> {
        let mut r = rng::derive(seed, 0x7905e);
        let z: Vec<f64> = (0..self.cfg.d_z).map(|_| rng::normal(&mut r)).collect();
        self.decode(&z, c)
    }

    pub fn sample_tpose(&self, c: &[f64], seed: u64, topo: &SkeletonTopology) -> Result<TPose> {
        forward_kinematics_tpose(&self.sample_bone_lengths(c, seed)?, topo)
    }

    /// Mean batch loss and one optimizer step. Noise comes from `seed`.
    pub fn train_step(&mut self, batch: &[CgaeSample], seed: u64, state: &mut AdamState, adam: &AdamConfig) -> Result<CgaeLosses> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut r = rng::derive(seed, 0xc6ae_5eed);
        let mut t = Tape::new();
        let p = self.params.bind(&mut t, true);
        let mut totals = Vec::with_capacity(batch.len());
        let (mut recon_sum, mut kl_sum) = (0.0, 0.0);
        for s in batch {
            self.check_cond(&s.cond)?;
            let noise: Vec<f64> = (0..self.cfg.d_z).map(|_| rng::normal(&mut r)).collect();
            let (total, recon, kl) = self.loss_tape(&mut t, &p, s, &noise);
            recon_sum += t.scalar(recon);
            kl_sum += t.scalar(kl);
            totals.push(total);
        }
        let all = t.concat_cols(&totals);
        let loss = t.mean(all);
        let n = batch.len() as f64;
        let out = CgaeLosses { total: t.scalar(loss), recon: recon_sum / n, kl: kl_sum / n };
        if !out.total.is_finite() {
            return Err(Error::NonFinite(format!("cgae loss {} (recon {}, kl {})", out.total, out.recon, out.kl)));
        }
        let g = t.backward(loss);
        let grads = p.grads(&t, &g);
        optimizer_step(&mut self.params, &grads, state, adam)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::canonical_topology;

    #[test]
    fn graph_structure() {
        let topo = canonical_topology();
        let a = bone_graph(&topo);
        let mut edges = 0;
        for i in 0..24 {
            assert_eq!(a.get(i, i), 1.0);
            for j in 0..24 {
                assert_eq!(a.get(i, j), a.get(j, i));
                if i < j && a.get(i, j) == 1.0 {
                    edges += 1;
                }
            }
        }
        // brute force: pairs of distinct bones sharing an endpoint
        let e = topo.bone_edges();
        let mut want = 0;
        for i in 0..24 {
            for j in i + 1..24 {
                let (p, c) = e[i];
                let (q, d) = e[j];
                if [p, c].iter().any(|x| *x == q || *x == d) {
                    want += 1;
                }
            }
        }
        assert_eq!(edges, want);
        // the first spine bone touches every bone leaving the pelvis
        for (f, &(p, _)) in e.iter().enumerate() {
            if p == 0 {
                assert_eq!(a.get(0, f), 1.0);
            }
        }
    }

    #[test]
    fn gcn_layer_cases() {
        let one = Matrix::identity(1);
        let x = Matrix::row_vector(vec![0.3, -0.7]);
        let y = gcn_layer(&x, &one, &Matrix::identity(2), &Matrix::zeros(1, 2), Activation::Linear).unwrap();
        assert_eq!(y, x);
        let mut r = rng::seeded(5);
        let adj = normalized_adjacency(&bone_graph(&canonical_topology()));
        let x = rng::normal_matrix(&mut r, 24, 3);
        let z = gcn_layer(&x, &adj, &Matrix::zeros(3, 4), &Matrix::zeros(1, 4), Activation::Linear).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        let w = rng::normal_matrix(&mut r, 3, 4);
        let b = rng::normal_matrix(&mut r, 1, 4);
        let y = gcn_layer(&x, &adj, &w, &b, Activation::Linear).unwrap();
        for i in 0..24 {
            for o in 0..4 {
                let mut acc = b.get(0, o);
                for j in 0..24 {
                    for k in 0..3 {
                        acc += adj.get(i, j) * x.get(j, k) * w.get(k, o);
                    }
                }
                assert!((y.get(i, o) - acc).abs() <= 1e-9);
            }
        }
        assert!(gcn_layer(&x, &adj, &Matrix::zeros(2, 4), &b, Activation::Linear).is_err());
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_divergence(&[0.0; 16], &[0.0; 16]), 0.0);
        let mut mu = [0.0; 16];
        mu[0] = 1.0;
        assert_eq!(kl_divergence(&mu, &[0.0; 16]), 0.5);
        assert_eq!(reparameterize(&[1.0, 2.0], &[0.3, -1.0], &[0.0, 0.0]), vec![1.0, 2.0]);
        assert_eq!(reparameterize(&[1.0, 2.0], &[0.0, 0.0], &[0.5, -1.0]), vec![1.5, 1.0]);
    }

    #[test]
    fn decode_is_nonnegative_and_deterministic() {
        let topo = canonical_topology();
        let m = Cgae::new(CgaeConfig::default(), &topo, 0).unwrap();
        let mut r = rng::seeded(9);
        for _ in 0..50 {
            let z: Vec<f64> = (0..16).map(|_| 3.0 * rng::normal(&mut r)).collect();
            let c: Vec<f64> = (0..64).map(|_| rng::normal(&mut r)).collect();
            let b = m.decode(&z, &c).unwrap();
            assert!(b.iter().all(|&v| v >= 0.0));
            assert_eq!(b, m.decode(&z, &c).unwrap());
        }
        let c = vec![0.1; 64];
        assert_eq!(m.sample_tpose(&c, 3, &topo).unwrap(), m.sample_tpose(&c, 3, &topo).unwrap());
    }
}
