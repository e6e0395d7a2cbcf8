//! Convolutional motion autoencoder with 4× temporal downsampling.
//!
//! Encoder: input conv, then two stages of (stride-2 conv, residual blocks),
//! then an output conv to the latent width. Decoder mirrors it with
//! transposed convolutions and finally repeats its last frame up to the
//! requested length (the encoder drops up to three tail frames).
//!
//! Batches are packed: sequences of different lengths are stacked row-wise
//! and every convolution window stays inside its own sequence.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::features::{bone_offset_operator, triple_sum_operator, MotionSequence, NormStats, FRAME_DIM};
use crate::math;
use crate::nn::{Conv1d, ConvTranspose1d, Padding};
use crate::optim::{optimizer_step, AdamConfig, AdamState};
use crate::params::{Bound, ParamSet};
use crate::rng;
use crate::skeleton::{frame_bone_lengths, SkeletonTopology, NUM_BONES};
use crate::tape::{Tape, Var};
use crate::tensor::Matrix;

pub const DOWNSAMPLE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeConfig {
    pub latent_dim: usize,
    pub channels: usize,
    pub res_blocks: usize,
    pub lambda_morph: f64,
    /// Train and run on z-scored features.
    pub normalize: bool,
    pub padding: Padding,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self { latent_dim: 64, channels: 128, res_blocks: 2, lambda_morph: 1.0, normalize: true, padding: Padding::Zero }
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    a: Conv1d,
    b: Conv1d,
}

impl ResBlock {
    fn new(ps: &mut ParamSet, name: &str, c: usize, r: &mut rng::SeededRng) -> Self {
        Self { a: Conv1d::new(ps, &format!("{name}.a"), c, c, 3, 1, 1, r), b: Conv1d::new(ps, &format!("{name}.b"), c, c, 1, 1, 0, r) }
    }

    fn forward(&self, t: &mut Tape, p: &Bound, x: Var, segs: &[usize], pad: Padding) -> Var {
        let h = t.silu(x);
        let (h, _) = self.a.forward(t, p, h, segs, pad);
        let h = t.silu(h);
        let (h, _) = self.b.forward(t, p, h, segs, pad);
        t.add(x, h)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AeLosses {
    pub total: f64,
    pub mse: f64,
    pub morph: f64,
}

#[derive(Clone, Debug)]
pub struct MotionAe {
    pub cfg: AeConfig,
    pub params: ParamSet,
    pub stats: NormStats,
    bone_op: Matrix,
    triple: Matrix,
    enc_in: Conv1d,
    enc_down: Vec<(Conv1d, Vec<ResBlock>)>,
    enc_out: Conv1d,
    dec_in: Conv1d,
    dec_up: Vec<(Vec<ResBlock>, ConvTranspose1d)>,
    dec_out: Conv1d,
}

/// Latent length for a sequence of `len` frames.
pub fn latent_len(len: usize) -> usize {
    len / DOWNSAMPLE
}

impl MotionAe {
    pub fn new(cfg: AeConfig, topo: &SkeletonTopology, seed: u64) -> Result<Self> {
        if cfg.latent_dim == 0 || cfg.channels == 0 {
            return Err(Error::Config("autoencoder widths must be positive".into()));
        }
        if !(cfg.lambda_morph >= 0.0 && cfg.lambda_morph.is_finite()) {
            return Err(Error::Config("lambda_morph must be finite and nonnegative".into()));
        }
        let mut r = rng::derive(seed, 0xae);
        let mut ps = ParamSet::new();
        let c = cfg.channels;
        let enc_in = Conv1d::new(&mut ps, "ae.enc_in", FRAME_DIM, c, 3, 1, 1, &mut r);
        let enc_down = (0..2)
            .map(|s| {
                let down = Conv1d::new(&mut ps, &format!("ae.enc{s}.down"), c, c, 4, 2, 1, &mut r);
                let res = (0..cfg.res_blocks).map(|k| ResBlock::new(&mut ps, &format!("ae.enc{s}.res{k}"), c, &mut r)).collect();
                (down, res)
            })
            .collect();
        let enc_out = Conv1d::new(&mut ps, "ae.enc_out", c, cfg.latent_dim, 3, 1, 1, &mut r);
        let dec_in = Conv1d::new(&mut ps, "ae.dec_in", cfg.latent_dim, c, 3, 1, 1, &mut r);
        let dec_up = (0..2)
            .map(|s| {
                let res = (0..cfg.res_blocks).map(|k| ResBlock::new(&mut ps, &format!("ae.dec{s}.res{k}"), c, &mut r)).collect();
                let up = ConvTranspose1d::new(&mut ps, &format!("ae.dec{s}.up"), c, c, 4, 2, 1, &mut r);
                (res, up)
            })
            .collect();
        let dec_out = Conv1d::new(&mut ps, "ae.dec_out", c, FRAME_DIM, 3, 1, 1, &mut r);
        Ok(Self {
            cfg,
            params: ps,
            stats: NormStats::identity(),
            bone_op: bone_offset_operator(topo),
            triple: triple_sum_operator(),
            enc_in,
            enc_down,
            enc_out,
            dec_in,
            dec_up,
            dec_out,
        })
    }

    /// Installs feature statistics (ignored when normalization is off).
    pub fn set_stats(&mut self, stats: NormStats) {
        self.stats = if self.cfg.normalize { stats } else { NormStats::identity() };
    }

    /// Packed encoder: `Σ L_i × 76` normalized frames to `Σ ⌊L_i/4⌋ × d`.
    pub fn encode_tape(&self, t: &mut Tape, p: &Bound, x: Var, segs: &[usize]) -> (Var, Vec<usize>) {
        let pad = self.cfg.padding;
        let (mut h, mut s) = self.enc_in.forward(t, p, x, segs, pad);
        for (down, res) in &self.enc_down {
            h = t.silu(h);
            (h, s) = down.forward(t, p, h, &s, pad);
            for block in res {
                h = block.forward(t, p, h, &s, pad);
            }
        }
        let h = t.silu(h);
        self.enc_out.forward(t, p, h, &s, pad)
    }

    /// Packed decoder: latents to `Σ target_lens × 76` normalized frames.
    pub fn decode_tape(&self, t: &mut Tape, p: &Bound, z: Var, segs: &[usize], target_lens: &[usize]) -> Var {
        let pad = self.cfg.padding;
        let (mut h, mut s) = self.dec_in.forward(t, p, z, segs, pad);
        for (res, up) in &self.dec_up {
            for block in res {
                h = block.forward(t, p, h, &s, pad);
            }
            (h, s) = up.forward(t, p, h, &s);
            h = t.silu(h);
        }
        let (y, s) = self.dec_out.forward(t, p, h, &s, pad);
        let mut index = Vec::with_capacity(target_lens.iter().sum());
        let mut off = 0;
        for (&n, &len) in s.iter().zip(target_lens) {
            index.extend((0..len).map(|r| Some(off + r.min(n - 1))));
            off += n;
        }
        t.gather_rows(y, index)
    }

    fn normalized(&self, seq: &MotionSequence) -> Matrix {
        self.stats.normalize(seq).into_frames()
    }

    pub fn encode(&self, seq: &MotionSequence) -> Result<Matrix> {
        if seq.len() < DOWNSAMPLE {
            return Err(Error::TooShort { min: DOWNSAMPLE, got: seq.len() });
        }
        let mut t = Tape::new();
        let p = self.params.bind(&mut t, false);
        let x = t.constant(self.normalized(seq));
        let (z, _) = self.encode_tape(&mut t, &p, x, &[seq.len()]);
        Ok(t.value(z).clone())
    }

    pub fn decode(&self, z: &Matrix, target_len: usize) -> Result<MotionSequence> {
        if z.cols() != self.cfg.latent_dim {
            return Err(shape(format!("latent width {} != {}", z.cols(), self.cfg.latent_dim)));
        }
        if z.rows() == 0 || latent_len(target_len) != z.rows() {
            return Err(invalid(format!("target length {target_len} incompatible with {} latents", z.rows())));
        }
        let mut t = Tape::new();
        let p = self.params.bind(&mut t, false);
        let zv = t.constant(z.clone());
        let y = self.decode_tape(&mut t, &p, zv, &[z.rows()], &[target_len]);
        let frames = self.stats.denormalize_matrix(t.value(y));
        MotionSequence::new(frames)
    }

    pub fn reconstruct(&self, seq: &MotionSequence) -> Result<MotionSequence> {
        self.decode(&self.encode(seq)?, seq.len())
    }

    /// Bone lengths of packed denormalized frames, `rows × 24`, on the tape.
    pub fn bone_lengths_tape(&self, t: &mut Tape, frames: Var) -> Var {
        let a = t.constant(self.bone_op.clone());
        let s = t.constant(self.triple.clone());
        let off = t.matmul(frames, a);
        let sq = t.mul(off, off);
        let sums = t.matmul(sq, s);
        t.sqrt(sums)
    }

    /// Per-sequence means, averaged over the batch: returns `(total, mse, morph)`.
    /// `x` holds normalized targets; `x_hat` normalized reconstructions.
    pub fn loss_tape(&self, t: &mut Tape, x: &Matrix, x_hat: Var, segs: &[usize]) -> (Var, Var, Var) {
        let n_seq = segs.len() as f64;
        let weights: Vec<f64> = segs.iter().flat_map(|&l| core::iter::repeat_n(1.0 / (l as f64 * n_seq), l)).collect();
        let w = t.constant(Matrix::row_vector(weights));
        let xv = t.constant(x.clone());
        let diff = t.sub(x_hat, xv);
        let sq = t.mul(diff, diff);
        let ones76 = t.constant(Matrix::filled(FRAME_DIM, 1, 1.0));
        let per_frame = t.matmul(sq, ones76);
        let mse = t.matmul(w, per_frame);

        let std = t.constant(Matrix::row_vector(self.stats.std.clone()));
        let mean = t.constant(Matrix::row_vector(self.stats.mean.clone()));
        let den = t.mul_row(x_hat, std);
        let den = t.add_row(den, mean);
        let b_hat = self.bone_lengths_tape(t, den);
        let b_true = t.constant(self.plain_bone_lengths(&self.stats.denormalize_matrix(x)));
        let bd = t.sub(b_hat, b_true);
        let bsq = t.mul(bd, bd);
        let ones24 = t.constant(Matrix::filled(NUM_BONES, 1, 1.0));
        let per_frame_b = t.matmul(bsq, ones24);
        let morph = t.matmul(w, per_frame_b);

        let weighted = t.scale(morph, self.cfg.lambda_morph);
        let total = t.add(mse, weighted);
        (total, mse, morph)
    }

    fn plain_bone_lengths(&self, frames: &Matrix) -> Matrix {
        let off = frames.matmul(&self.bone_op);
        off.map(|v| v * v).matmul(&self.triple).map(math::sqrt)
    }

    /// One optimizer step on a packed batch of raw sequences.
    pub fn train_step(&mut self, batch: &[&MotionSequence], state: &mut AdamState, adam: &AdamConfig) -> Result<AeLosses> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let segs: Vec<usize> = batch.iter().map(|s| s.len()).collect();
        if let Some(&l) = segs.iter().find(|&&l| l < DOWNSAMPLE) {
            return Err(Error::TooShort { min: DOWNSAMPLE, got: l });
        }
        let mut data = Vec::with_capacity(segs.iter().sum::<usize>() * FRAME_DIM);
        for s in batch {
            data.extend_from_slice(self.normalized(s).as_slice());
        }
        let x = Matrix::from_vec(segs.iter().sum(), FRAME_DIM, data);
        let mut t = Tape::new();
        let p = self.params.bind(&mut t, true);
        let xv = t.constant(x.clone());
        let (z, zsegs) = self.encode_tape(&mut t, &p, xv, &segs);
        let x_hat = self.decode_tape(&mut t, &p, z, &zsegs, &segs);
        let (total, mse, morph) = self.loss_tape(&mut t, &x, x_hat, &segs);
        let out = AeLosses { total: t.scalar(total), mse: t.scalar(mse), morph: t.scalar(morph) };
        if !out.total.is_finite() {
            return Err(Error::NonFinite(format!("autoencoder loss {} (mse {}, morph {})", out.total, out.mse, out.morph)));
        }
        let g = t.backward(total);
        let grads = p.grads(&t, &g);
        optimizer_step(&mut self.params, &grads, state, adam)?;
        Ok(out)
    }
}

/// Reference loss on whole sequences: per-frame squared error in normalized
/// space plus squared bone-length error of the denormalized frames.
pub fn ae_loss(
    x: &MotionSequence,
    x_hat: &MotionSequence,
    stats: &NormStats,
    lambda_morph: f64,
    topo: &SkeletonTopology,
) -> Result<AeLosses> {
    if x.frames().shape() != x_hat.frames().shape() {
        return Err(shape(format!("{:?} vs {:?}", x.frames().shape(), x_hat.frames().shape())));
    }
    let len = x.len() as f64;
    let (xn, xhn) = (stats.normalize(x), stats.normalize(x_hat));
    let mut mse = 0.0;
    let mut morph = 0.0;
    for f in 0..x.len() {
        mse += xn.frame(f).iter().zip(xhn.frame(f)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let b = frame_bone_lengths(&x.local_joints(f), topo)?;
        let bh = frame_bone_lengths(&x_hat.local_joints(f), topo)?;
        morph += b.iter().zip(bh.iter()).map(|(a, c)| (a - c) * (a - c)).sum::<f64>();
    }
    let (mse, morph) = (mse / len, morph / len);
    Ok(AeLosses { total: mse + lambda_morph * morph, mse, morph })
}

impl MotionAe {
    /// Tape loss for whole sequences through the full model (no packing
    /// beyond a single sequence); used by gradient checks.
    pub fn sequence_loss_tape(&self, t: &mut Tape, p: &Bound, seq: &MotionSequence) -> Var {
        let x = self.normalized(seq);
        let xv = t.constant(x.clone());
        let (z, zs) = self.encode_tape(t, p, xv, &[seq.len()]);
        let x_hat = self.decode_tape(t, p, z, &zs, &[seq.len()]);
        self.loss_tape(t, &x, x_hat, &[seq.len()]).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{LIN_VEL_X, ROT_VEL};
    use crate::skeleton::canonical_topology;

    fn tiny(padding: Padding) -> MotionAe {
        let cfg = AeConfig { latent_dim: 8, channels: 8, res_blocks: 1, padding, ..AeConfig::default() };
        MotionAe::new(cfg, &canonical_topology(), 1).unwrap()
    }

    fn random_seq(len: usize, seed: u64) -> MotionSequence {
        MotionSequence::new(rng::normal_matrix(&mut rng::seeded(seed), len, FRAME_DIM).scale(0.3)).unwrap()
    }

    #[test]
    fn latent_lengths() {
        let ae = tiny(Padding::Zero);
        for (l, t) in [(300, 75), (19, 4), (20, 5), (23, 5), (4, 1)] {
            assert_eq!(ae.encode(&random_seq(l, 0)).unwrap().shape(), (t, 8));
        }
        assert_eq!(ae.encode(&random_seq(3, 0)), Err(Error::TooShort { min: 4, got: 3 }));
        let z = ae.encode(&random_seq(20, 1)).unwrap();
        assert_eq!(ae.decode(&z, 20).unwrap().frames().shape(), (20, 76));
        assert_eq!(ae.decode(&z, 23).unwrap().frames().shape(), (23, 76));
        assert_eq!(ae.decode(&z, 20).unwrap(), ae.decode(&z, 20).unwrap());
        assert!(ae.decode(&z, 24).is_err());
    }

    #[test]
    fn packed_batch_matches_single_sequences() {
        let ae = tiny(Padding::Zero);
        let (a, b) = (random_seq(21, 2), random_seq(14, 3));
        let mut t = Tape::new();
        let p = ae.params.bind(&mut t, false);
        let x = t.constant(Matrix::from_vec(35, FRAME_DIM, [a.frames().as_slice(), b.frames().as_slice()].concat()));
        let (z, segs) = ae.encode_tape(&mut t, &p, x, &[21, 14]);
        assert_eq!(segs, [5, 3]);
        let za = ae.encode(&a).unwrap();
        let zb = ae.encode(&b).unwrap();
        let got = t.value(z);
        assert!(got.select_rows(&[0, 1, 2, 3, 4]).sub(&za).max_abs() < 1e-12);
        assert!(got.select_rows(&[5, 6, 7]).sub(&zb).max_abs() < 1e-12);
    }

    #[test]
    fn circular_shift_equivariance() {
        let ae = tiny(Padding::Circular);
        let x = random_seq(32, 4);
        let shifted = MotionSequence::new(Matrix::from_fn(32, FRAME_DIM, |r, c| x.frames().get((r + 28) % 32, c))).unwrap();
        let (z, zs) = (ae.encode(&x).unwrap(), ae.encode(&shifted).unwrap());
        for i in 0..8 {
            for c in 0..8 {
                assert!((zs.get((i + 1) % 8, c) - z.get(i, c)).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn loss_identities_and_oracle() {
        let topo = canonical_topology();
        let mut ae = tiny(Padding::Zero);
        let x = random_seq(12, 5);
        let stats = crate::features::compute_norm_stats([&x, &random_seq(12, 6)]).unwrap();
        ae.set_stats(stats.clone());
        assert_eq!(ae_loss(&x, &x, &stats, 1.0, &topo).unwrap().total, 0.0);
        let mut moved = x.frames().clone();
        for f in 0..12 {
            moved.set(f, ROT_VEL, moved.get(f, ROT_VEL) + 0.4);
            moved.set(f, LIN_VEL_X, moved.get(f, LIN_VEL_X) - 0.2);
        }
        let moved = MotionSequence::new(moved).unwrap();
        let l = ae_loss(&x, &moved, &stats, 1.0, &topo).unwrap();
        assert_eq!(l.morph, 0.0);
        assert!(l.mse > 0.0);

        // tape loss against the per-frame reference
        let y = random_seq(12, 7);
        let want = ae_loss(&x, &y, &stats, 0.7, &topo).unwrap();
        ae.cfg.lambda_morph = 0.7;
        let mut t = Tape::new();
        let yv = t.constant(stats.normalize(&y).into_frames());
        let (total, mse, morph) = ae.loss_tape(&mut t, &stats.normalize(&x).into_frames(), yv, &[12]);
        assert!((t.scalar(mse) - want.mse).abs() <= 1e-9 * want.mse.max(1.0));
        assert!((t.scalar(morph) - want.morph).abs() <= 1e-9 * want.morph.max(1.0));
        assert!((t.scalar(total) - want.total).abs() <= 1e-9 * want.total.max(1.0));
        assert!(ae_loss(&x, &random_seq(11, 0), &stats, 1.0, &topo).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let mut ae = tiny(Padding::Zero);
        let before = ae.params.checksum();
        let mut st = AdamState::new(&ae.params);
        let adam = AdamConfig { lr: 0.0, ..AdamConfig::default() };
        let (a, b) = (random_seq(20, 1), random_seq(26, 2));
        let l = ae.train_step(&[&a, &b], &mut st, &adam).unwrap();
        assert!(l.mse > 0.0);
        assert_eq!(ae.params.checksum(), before);
    }
}
