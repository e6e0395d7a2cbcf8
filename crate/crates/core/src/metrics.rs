//! Evaluation metrics and a toy contrastive text-motion matcher.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::features::{bone_lengths_per_frame, compute_norm_stats, MotionSequence, NormStats, FRAME_DIM};
use crate::linalg::{sym_eigen, sym_sqrt};
use crate::math;
use crate::nn::Linear;
use crate::optim::{optimizer_step, AdamConfig, AdamState};
use crate::params::{Bound, ParamSet};
use crate::rng;
use crate::skeleton::{BoneLengths, SkeletonTopology, NUM_BONES};
use crate::tape::{Tape, Var};
use crate::tensor::Matrix;

/// Mean absolute per-frame, per-bone deviation from `b`.
pub fn mme(seq: &MotionSequence, b: &BoneLengths, topo: &SkeletonTopology) -> f64 {
    let lengths = bone_lengths_per_frame(seq, topo);
    let mut total = 0.0;
    for t in 0..lengths.rows() {
        for (x, y) in lengths.row(t).iter().zip(b.iter()) {
            total += (x - y).abs();
        }
    }
    total / (lengths.rows() * NUM_BONES) as f64
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

fn check_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} contains non-finite values")))
    }
}

/// Column means and unbiased covariance of the rows.
pub fn mean_and_covariance(x: &Matrix) -> (Vec<f64>, Matrix) {
    let (n, d) = x.shape();
    let mu: Vec<f64> = (0..d).map(|c| (0..n).map(|r| x.get(r, c)).sum::<f64>() / n as f64).collect();
    let centered = Matrix::from_fn(n, d, |r, c| x.get(r, c) - mu[c]);
    let denom = (n.max(2) - 1) as f64;
    (mu, centered.matmul_tn(&centered).scale(1.0 / denom))
}

/// Fréchet distance between Gaussians given their statistics.
pub fn fid_from_stats(mu_a: &[f64], cov_a: &Matrix, mu_b: &[f64], cov_b: &Matrix) -> Result<f64> {
    let d = mu_a.len();
    if mu_b.len() != d || cov_a.shape() != (d, d) || cov_b.shape() != (d, d) {
        return Err(shape("fid statistics have inconsistent dimensions"));
    }
    let mean_term: f64 = mu_a.iter().zip(mu_b).map(|(a, b)| (a - b) * (a - b)).sum();
    let ra = sym_sqrt(cov_a);
    let m = ra.matmul(cov_b).matmul(&ra);
    let m = m.add(&m.transpose()).scale(0.5);
    let cross: f64 = sym_eigen(&m).values.iter().map(|&l| math::sqrt(l.max(0.0))).sum();
    let trace = |c: &Matrix| (0..d).map(|i| c.get(i, i)).sum::<f64>();
    let value = mean_term + trace(cov_a) + trace(cov_b) - 2.0 * cross;
    if !value.is_finite() {
        return Err(Error::NonFinite("fid".into()));
    }
    Ok(if value < 0.0 && value > -1e-6 { 0.0 } else { value })
}

/// Fréchet distance between two feature batches, covariances regularized by `1e-6·I`.
pub fn fid(a: &Matrix, b: &Matrix) -> Result<f64> {
    check_finite(a, "fid input")?;
    check_finite(b, "fid input")?;
    if a.cols() != b.cols() {
        return Err(shape("fid batches differ in width"));
    }
    if a.rows() < 2 || b.rows() < 2 {
        return Err(invalid("fid needs at least two rows per batch"));
    }
    let reg = Matrix::identity(a.cols()).scale(1e-6);
    let (ma, ca) = mean_and_covariance(a);
    let (mb, cb) = mean_and_covariance(b);
    fid_from_stats(&ma, &ca.add(&reg), &mb, &cb.add(&reg))
}

/// Retrieval accuracy for `k = 1..=max_k`: each text ranks its own motion
/// among `pool_size − 1` random others by Euclidean distance. Ties go to the
/// lower record index.
pub fn r_precision_curve(motion: &Matrix, text: &Matrix, max_k: usize, pool_size: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let n = motion.rows();
    if text.shape() != motion.shape() {
        return Err(shape("motion and text features must be aligned"));
    }
    if pool_size < 2 || n < pool_size {
        return Err(invalid(format!("need at least {pool_size} rows, got {n}")));
    }
    let mut hits = vec![0usize; max_k];
    for i in 0..n {
        let mut pool: Vec<usize> = sample(rng, n - 1, pool_size - 1).into_iter().map(|j| if j >= i { j + 1 } else { j }).collect();
        pool.push(i);
        let own = euclid(text.row(i), motion.row(i));
        let rank = 1 + pool
            .iter()
            .filter(|&&j| j != i)
            .filter(|&&j| {
                let d = euclid(text.row(i), motion.row(j));
                d < own || (d == own && j < i)
            })
            .count();
        for (k, h) in hits.iter_mut().enumerate() {
            if rank <= k + 1 {
                *h += 1;
            }
        }
    }
    Ok(hits.into_iter().map(|h| h as f64 / n as f64).collect())
}

pub fn r_precision(motion: &Matrix, text: &Matrix, k: usize, pool_size: usize, rng: &mut impl Rng) -> Result<f64> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    Ok(r_precision_curve(motion, text, k, pool_size, rng)?[k - 1])
}

/// Mean distance between aligned rows.
pub fn mm_dist(motion: &Matrix, text: &Matrix) -> Result<f64> {
    if motion.shape() != text.shape() || motion.rows() == 0 {
        return Err(shape("motion and text features must be aligned and non-empty"));
    }
    Ok((0..motion.rows()).map(|i| euclid(motion.row(i), text.row(i))).sum::<f64>() / motion.rows() as f64)
}

/// Mean distance over explicit row pairs.
pub fn diversity_of_pairs(feats: &Matrix, pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(a, b)| euclid(feats.row(a), feats.row(b))).sum::<f64>() / pairs.len().max(1) as f64
}

/// Mean distance over `num_pairs` disjoint random pairs.
pub fn diversity(feats: &Matrix, num_pairs: usize, rng: &mut impl Rng) -> Result<f64> {
    if num_pairs == 0 || feats.rows() < 2 * num_pairs {
        return Err(invalid(format!("diversity needs {} rows, got {}", 2 * num_pairs, feats.rows())));
    }
    let mut idx: Vec<usize> = (0..feats.rows()).collect();
    idx.shuffle(rng);
    let pairs: Vec<(usize, usize)> = (0..num_pairs).map(|k| (idx[2 * k], idx[2 * k + 1])).collect();
    Ok(diversity_of_pairs(feats, &pairs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatcherConfig {
    pub text_dim: usize,
    pub hidden: usize,
    pub feat_dim: usize,
    pub temperature: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self { text_dim: 64, hidden: 128, feat_dim: 32, temperature: 0.07 }
    }
}

/// Frame MLP with mean pooling for motions, MLP over sentence vectors for
/// text; both land on the unit sphere of a shared space.
#[derive(Clone, Debug)]
pub struct ToyMatcher {
    pub cfg: MatcherConfig,
    pub params: ParamSet,
    pub stats: NormStats,
    m1: Linear,
    m2: Linear,
    m3: Linear,
    t1: Linear,
    t2: Linear,
}

impl ToyMatcher {
    pub fn new(cfg: MatcherConfig, seed: u64) -> Result<Self> {
        if cfg.hidden == 0 || cfg.feat_dim == 0 || !(cfg.temperature > 0.0) {
            return Err(Error::Config("matcher widths and temperature must be positive".into()));
        }
        let mut r = rng::derive(seed, 0x3a7c);
        let mut ps = ParamSet::new();
        let h = cfg.hidden;
        let m1 = Linear::new(&mut ps, "match.m1", FRAME_DIM, h, &mut r);
        let m2 = Linear::new(&mut ps, "match.m2", h, h, &mut r);
        let m3 = Linear::new(&mut ps, "match.m3", h, cfg.feat_dim, &mut r);
        let t1 = Linear::new(&mut ps, "match.t1", cfg.text_dim, h, &mut r);
        let t2 = Linear::new(&mut ps, "match.t2", h, cfg.feat_dim, &mut r);
        Ok(Self { cfg, params: ps, stats: NormStats::identity(), m1, m2, m3, t1, t2 })
    }

    pub fn fit_stats<'a>(&mut self, seqs: impl IntoIterator<Item = &'a MotionSequence>) -> Result<()> {
        self.stats = compute_norm_stats(seqs)?;
        Ok(())
    }

    fn motion_tape(&self, t: &mut Tape, p: &Bound, seqs: &[&MotionSequence]) -> Var {
        let mut pooled = Vec::with_capacity(seqs.len());
        let mut data = Vec::new();
        for s in seqs {
            data.extend_from_slice(self.stats.normalize(s).frames().as_slice());
        }
        let total: usize = seqs.iter().map(|s| s.len()).sum();
        let x = t.constant(Matrix::from_vec(total, FRAME_DIM, data));
        let h = self.m1.forward(t, p, x);
        let h = t.silu(h);
        let h = self.m2.forward(t, p, h);
        let h = t.silu(h);
        let mut off = 0;
        for s in seqs {
            let part = t.slice_rows(h, off, s.len());
            pooled.push(t.mean_rows(part));
            off += s.len();
        }
        let pooled = t.concat_rows(&pooled);
        let out = self.m3.forward(t, p, pooled);
        t.normalize_rows(out)
    }

    fn text_tape(&self, t: &mut Tape, p: &Bound, sentences: &Matrix) -> Var {
        let x = t.constant(sentences.clone());
        let h = self.t1.forward(t, p, x);
        let h = t.silu(h);
        let out = self.t2.forward(t, p, h);
        t.normalize_rows(out)
    }

    pub fn motion_features(&self, seqs: &[&MotionSequence]) -> Matrix {
        let mut t = Tape::new();
        let p = self.params.bind(&mut t, false);
        let f = self.motion_tape(&mut t, &p, seqs);
        t.value(f).clone()
    }

    /// Rows are sentence vectors.
    pub fn text_features(&self, sentences: &Matrix) -> Matrix {
        let mut t = Tape::new();
        let p = self.params.bind(&mut t, false);
        let f = self.text_tape(&mut t, &p, sentences);
        t.value(f).clone()
    }

    /// Symmetric in-batch cross-entropy over cosine similarities / temperature.
    pub fn train_step(&mut self, seqs: &[&MotionSequence], sentences: &Matrix, state: &mut AdamState, adam: &AdamConfig) -> Result<f64> {
        if seqs.len() != sentences.rows() || seqs.len() < 2 {
            return Err(invalid("matcher batch needs at least two aligned pairs"));
        }
        let mut t = Tape::new();
        let p = self.params.bind(&mut t, true);
        let m = self.motion_tape(&mut t, &p, seqs);
        let x = self.text_tape(&mut t, &p, sentences);
        let logits = t.matmul_nt(x, m);
        let logits = t.scale(logits, 1.0 / self.cfg.temperature);
        let targets: Vec<usize> = (0..seqs.len()).collect();
        let a = t.cross_entropy_rows(logits, targets.clone());
        let mt = t.matmul_nt(m, x);
        let mt = t.scale(mt, 1.0 / self.cfg.temperature);
        let b = t.cross_entropy_rows(mt, targets);
        let s = t.add(a, b);
        let loss = t.scale(s, 0.5);
        let value = t.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("matcher loss {value}")));
        }
        let g = t.backward(loss);
        let grads = p.grads(&t, &g);
        optimizer_step(&mut self.params, &grads, state, adam)?;
        Ok(value)
    }
}

/// Metric name and value pairs, in report order.
pub type MetricTable = Vec<(String, f64)>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fid_closed_forms() {
        let one = Matrix::identity(1);
        assert_eq!(fid_from_stats(&[0.0], &one, &[3.0], &one).unwrap(), 9.0);
        let mut r = rng::seeded(1);
        let a = rng::normal_matrix(&mut r, 50, 4);
        assert!(fid(&a, &a).unwrap().abs() <= 1e-6);
        let b = rng::normal_matrix(&mut r, 40, 4).scale(1.5);
        assert!((fid(&a, &b).unwrap() - fid(&b, &a).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn retrieval_and_distances() {
        let mut r = rng::seeded(2);
        let f = rng::normal_matrix(&mut r, 40, 8);
        assert_eq!(r_precision(&f, &f, 1, 32, &mut r).unwrap(), 1.0);
        let g = rng::normal_matrix(&mut r, 40, 8);
        assert_eq!(r_precision(&f, &g, 32, 32, &mut r).unwrap(), 1.0);
        let curve = r_precision_curve(&f, &g, 5, 32, &mut rng::seeded(3)).unwrap();
        assert!(curve.windows(2).all(|w| w[0] <= w[1]));
        assert!(r_precision(&f, &g, 1, 41, &mut r).is_err());
        assert_eq!(mm_dist(&f, &f).unwrap(), 0.0);
        let shifted = f.map(|v| v);
        let shifted = Matrix::from_fn(40, 8, |i, c| shifted.get(i, c) + if c == 0 { 2.0 } else { 0.0 });
        assert!((mm_dist(&f, &shifted).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(diversity(&Matrix::filled(10, 3, 0.4), 5, &mut r).unwrap(), 0.0);
        assert!(diversity(&f, 21, &mut r).is_err());
    }
}
