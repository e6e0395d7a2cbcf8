//! Masked latent generator with a flow-matching completion head.
//!
//! The backbone reads `[p; Z_masked]`, where `p` projects the flattened
//! T-pose and masked rows hold a shared learnable token, adds sinusoidal
//! positions, and runs pre-norm blocks of self-attention, cross-attention to
//! the caption tokens `[s; W]` and a feed-forward layer. Row 0 of the output
//! is dropped; every other row conditions a small velocity network that
//! transports Gaussian noise to the latent at that position.
//!
//! Latents and T-pose coordinates are standardized per dimension with
//! statistics fitted on the training set; public entry points take and
//! return raw values.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embed::TextFeatures;
use crate::error::{invalid, shape, Error, Result};
use crate::math;
use crate::mcm::{assemble_masked, morph_guide_loss, Mcm};
use crate::nn::{sinusoidal, Attention, LayerNorm, Linear};
use crate::optim::{optimizer_step, AdamConfig, AdamState};
use crate::params::{Bound, ParamId, ParamSet};
use crate::rng::{self, SeededRng};
use crate::skeleton::{BoneLengths, TPose, NUM_JOINTS};
use crate::tape::{Tape, Var};
use crate::tensor::Matrix;

pub const TPOSE_DIM: usize = NUM_JOINTS * 3;
const TAU_FEATURES: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub latent_dim: usize,
    pub text_dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub head_width: usize,
    pub head_blocks: usize,
    pub lambda_guide: f64,
    pub text_dropout: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            text_dim: 64,
            blocks: 4,
            heads: 4,
            ffn_width: 256,
            head_width: 128,
            head_blocks: 2,
            lambda_guide: 1.0,
            text_dropout: 0.1,
        }
    }
}

/// Iterative decoding settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferConfig {
    pub rounds: usize,
    pub ode_steps: usize,
    pub omega: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self { rounds: 8, ode_steps: 16, omega: 3.0 }
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln1: LayerNorm,
    self_att: Attention,
    ln2: LayerNorm,
    cross: Attention,
    ln3: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Clone, Debug)]
struct VelocityHead {
    z_in: Linear,
    tau_in: Linear,
    h_in: Linear,
    res: Vec<(LayerNorm, Linear, Linear)>,
    ln: LayerNorm,
    out: Linear,
}

/// Flattened T-pose, all 25 joints (the root row is the origin).
pub fn tpose_vector(tpose: &TPose) -> Vec<f64> {
    tpose.joints.iter().flat_map(|j| j.iter().copied()).collect()
}

/// Positions decoded in each round: a seeded permutation of `masked` cut
/// by [`unmask_schedule`]. Every position appears in exactly one round.
pub fn fill_plan(masked: &[usize], rounds: usize, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
    let mut order: Vec<usize> = masked.to_vec();
    order.sort_unstable();
    order.dedup();
    if order.len() != masked.len() {
        return Err(invalid("masked positions must be distinct"));
    }
    order.shuffle(rng);
    let mut filled = 0;
    let mut plan = Vec::with_capacity(rounds);
    for remaining in unmask_schedule(order.len(), rounds) {
        let take = order.len() - remaining - filled;
        plan.push(order[filled..filled + take].to_vec());
        filled += take;
    }
    Ok(plan)
}

/// Training mask: `⌈ρT⌉` distinct positions, `ρ ~ U(0.5, 1)`, sorted.
/// Positions index motion rows `0..T` (context row `i + 1`).
pub fn sample_training_mask(len: usize, rng: &mut impl Rng) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    let rho: f64 = rng.random_range(0.5..1.0);
    let k = (math::ceil(rho * len as f64) as usize).clamp(1, len);
    let mut m = sample(rng, len, k).into_vec();
    m.sort_unstable();
    m
}

/// Positions still masked after each of the `rounds` iterations, starting
/// from `len`: nearest integer to `len · cos(π r / 2R)`, kept strictly
/// decreasing and leaving at least one position per remaining round.
pub fn unmask_schedule(len: usize, rounds: usize) -> Vec<usize> {
    let rounds = rounds.clamp(1, len.max(1));
    let mut prev = len;
    (1..=rounds)
        .map(|r| {
            let target = math::round(len as f64 * math::cos(PI * r as f64 / (2.0 * rounds as f64))) as usize;
            let rem = if r == rounds { 0 } else { target.clamp(rounds - r, prev.saturating_sub(1)) };
            prev = rem;
            rem
        })
        .collect()
}

/// `(1 − τ)·noise + τ·z`, row-wise.
pub fn interpolate(z: &Matrix, noise: &Matrix, tau: &[f64]) -> Matrix {
    Matrix::from_fn(z.rows(), z.cols(), |r, c| (1.0 - tau[r]) * noise.get(r, c) + tau[r] * z.get(r, c))
}

/// Guided velocity `v_u + ω (v_c − v_u)`.
pub fn cfg_velocity(v_cond: &Matrix, v_uncond: &Matrix, omega: f64) -> Matrix {
    if omega == 1.0 {
        return v_cond.clone();
    }
    if omega == 0.0 {
        return v_uncond.clone();
    }
    v_cond.zip_map(v_uncond, |c, u| u + omega * (c - u))
}

/// Fixed-step Euler integration from `τ = 0` to `τ = 1`.
pub fn euler_integrate(z0: &Matrix, steps: usize, mut field: impl FnMut(&Matrix, f64) -> Matrix) -> Matrix {
    let dt = 1.0 / steps as f64;
    let mut z = z0.clone();
    for n in 0..steps {
        let v = field(&z, n as f64 * dt);
        z = z.zip_map(&v, |a, b| a + dt * b);
    }
    z
}

/// Mean over rows of `‖v − target‖²`.
pub fn flow_loss_from_velocity(t: &mut Tape, v: Var, target: &Matrix) -> Var {
    let rows = target.rows() as f64;
    let tv = t.constant(target.clone());
    let d = t.sub(v, tv);
    let s = t.sum_squares(d);
    t.scale(s, 1.0 / rows)
}

/// One-step extrapolation to `τ = 1`: `z_τ + (1 − τ) v`.
pub fn extrapolate_clean(t: &mut Tape, z_tau: &Matrix, tau: &[f64], v: Var) -> Var {
    let w = t.constant(Matrix::from_fn(z_tau.rows(), z_tau.cols(), |r, _| 1.0 - tau[r]));
    let zt = t.constant(z_tau.clone());
    let step = t.mul(v, w);
    t.add(zt, step)
}

/// One generator training example.
#[derive(Clone, Debug)]
pub struct GenSample {
    /// Raw AE latents, `T × d`.
    pub latents: Matrix,
    pub tpose: TPose,
    pub text: TextFeatures,
    pub bones: BoneLengths,
}

/// Random draws for one example in a step.
#[derive(Clone, Debug, PartialEq)]
pub struct GenDraw {
    pub mask: Vec<usize>,
    pub noise: Matrix,
    pub tau: Vec<f64>,
    pub drop_text: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GenLosses {
    pub total: f64,
    pub flow: f64,
    pub guide: f64,
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub cfg: GenConfig,
    pub params: ParamSet,
    pub latent_mean: Vec<f64>,
    pub latent_std: Vec<f64>,
    pub tpose_mean: Vec<f64>,
    pub tpose_std: Vec<f64>,
    mask_token: ParamId,
    null_sentence: ParamId,
    null_word: ParamId,
    tpose_proj: Linear,
    blocks: Vec<Block>,
    ln_out: LayerNorm,
    head: VelocityHead,
}

impl Generator {
    pub fn new(cfg: GenConfig, seed: u64) -> Result<Self> {
        let (d, ds) = (cfg.latent_dim, cfg.text_dim);
        if d == 0 || ds == 0 || cfg.heads == 0 || d % cfg.heads != 0 {
            return Err(Error::Config("generator width must be positive and divisible by heads".into()));
        }
        if !(0.0..=1.0).contains(&cfg.text_dropout) || !(cfg.lambda_guide >= 0.0 && cfg.lambda_guide.is_finite()) {
            return Err(Error::Config("text_dropout must be in [0, 1] and lambda_guide finite, nonnegative".into()));
        }
        let mut r = rng::derive(seed, 0x9e7);
        let mut ps = ParamSet::new();
        let mask_token = ps.add("gen.mask_token", rng::normal_matrix(&mut r, 1, d).scale(0.02));
        let null_sentence = ps.add("gen.null_sentence", rng::normal_matrix(&mut r, 1, ds).scale(0.02));
        let null_word = ps.add("gen.null_word", rng::normal_matrix(&mut r, 1, ds).scale(0.02));
        let tpose_proj = Linear::new(&mut ps, "gen.tpose", TPOSE_DIM, d, &mut r);
        let blocks = (0..cfg.blocks)
            .map(|b| {
                let n = |s: &str| format!("gen.block{b}.{s}");
                Block {
                    ln1: LayerNorm::new(&mut ps, &n("ln1"), d),
                    self_att: Attention::new(&mut ps, &n("self"), d, d, cfg.heads, &mut r),
                    ln2: LayerNorm::new(&mut ps, &n("ln2"), d),
                    cross: Attention::new(&mut ps, &n("cross"), d, ds, cfg.heads, &mut r),
                    ln3: LayerNorm::new(&mut ps, &n("ln3"), d),
                    ff1: Linear::new(&mut ps, &n("ff1"), d, cfg.ffn_width, &mut r),
                    ff2: Linear::new(&mut ps, &n("ff2"), cfg.ffn_width, d, &mut r),
                }
            })
            .collect();
        let ln_out = LayerNorm::new(&mut ps, "gen.ln_out", d);
        let w = cfg.head_width;
        let head = VelocityHead {
            z_in: Linear::new(&mut ps, "gen.head.z", d, w, &mut r),
            tau_in: Linear::new(&mut ps, "gen.head.tau", TAU_FEATURES, w, &mut r),
            h_in: Linear::new(&mut ps, "gen.head.h", d, w, &mut r),
            res: (0..cfg.head_blocks)
                .map(|k| {
                    (
                        LayerNorm::new(&mut ps, &format!("gen.head.res{k}.ln"), w),
                        Linear::new(&mut ps, &format!("gen.head.res{k}.a"), w, w, &mut r),
                        Linear::new(&mut ps, &format!("gen.head.res{k}.b"), w, w, &mut r),
                    )
                })
                .collect(),
            ln: LayerNorm::new(&mut ps, "gen.head.ln", w),
            out: Linear::new(&mut ps, "gen.head.out", w, d, &mut r),
        };
        Ok(Self {
            latent_mean: vec![0.0; d],
            latent_std: vec![1.0; d],
            tpose_mean: vec![0.0; TPOSE_DIM],
            tpose_std: vec![1.0; TPOSE_DIM],
            cfg,
            params: ps,
            mask_token,
            null_sentence,
            null_word,
            tpose_proj,
            blocks,
            ln_out,
            head,
        })
    }

    pub fn mask_token_id(&self) -> ParamId {
        self.mask_token
    }

    pub fn null_ids(&self) -> (ParamId, ParamId) {
        (self.null_sentence, self.null_word)
    }

    /// The learned unconditional text features.
    pub fn null_text_features(&self) -> TextFeatures {
        TextFeatures { sentence: self.params.get(self.null_sentence).as_slice().to_vec(), words: self.params.get(self.null_word).clone() }
    }

    /// Per-dimension latent mean and standard deviation over all rows.
    pub fn fit_latent_stats<'a>(&mut self, latents: impl IntoIterator<Item = &'a Matrix>) -> Result<()> {
        let d = self.cfg.latent_dim;
        let (mut n, mut sum, mut sq) = (0usize, vec![0.0; d], vec![0.0; d]);
        for z in latents {
            if z.cols() != d {
                return Err(shape(format!("latent width {} != {d}", z.cols())));
            }
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
        self.latent_mean = sum.iter().map(|s| s / nf).collect();
        self.latent_std = sq.iter().zip(&self.latent_mean).map(|(q, m)| math::sqrt((q / nf - m * m).max(0.0)).max(1e-6)).collect();
        Ok(())
    }

    /// Per-coordinate mean and standard deviation of flattened T-poses.
    /// Deviations below 1 mm are floored so constant coordinates stay put.
    pub fn fit_tpose_stats<'a>(&mut self, tposes: impl IntoIterator<Item = &'a TPose>) -> Result<()> {
        let (mut n, mut sum, mut sq) = (0usize, vec![0.0; TPOSE_DIM], vec![0.0; TPOSE_DIM]);
        for tp in tposes {
            for (c, v) in tpose_vector(tp).iter().enumerate() {
                sum[c] += v;
                sq[c] += v * v;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let nf = n as f64;
        self.tpose_mean = sum.iter().map(|s| s / nf).collect();
        self.tpose_std = sq.iter().zip(&self.tpose_mean).map(|(q, m)| math::sqrt((q / nf - m * m).max(0.0)).max(1e-3)).collect();
        Ok(())
    }

    fn standardize_tpose(&self, tpose: &[f64]) -> Vec<f64> {
        tpose.iter().zip(self.tpose_mean.iter().zip(&self.tpose_std)).map(|(v, (m, s))| (v - m) / s).collect()
    }

    pub fn standardize(&self, z: &Matrix) -> Matrix {
        Matrix::from_fn(z.rows(), z.cols(), |r, c| (z.get(r, c) - self.latent_mean[c]) / self.latent_std[c])
    }

    pub fn unstandardize(&self, z: &Matrix) -> Matrix {
        Matrix::from_fn(z.rows(), z.cols(), |r, c| z.get(r, c) * self.latent_std[c] + self.latent_mean[c])
    }

    fn check_latents(&self, z: &Matrix) -> Result<()> {
        if z.cols() != self.cfg.latent_dim {
            return Err(shape(format!("latent width {} != {}", z.cols(), self.cfg.latent_dim)));
        }
        if z.rows() == 0 {
            return Err(Error::TooShort { min: 1, got: 0 });
        }
        Ok(())
    }

    fn check_text(&self, text: &TextFeatures) -> Result<()> {
        if text.dim() != self.cfg.text_dim || text.words.cols() != self.cfg.text_dim || text.words.rows() == 0 {
            return Err(shape(format!("text features must be {}-wide with at least one word", self.cfg.text_dim)));
        }
        Ok(())
    }

    /// Cross-attention tokens: the caption's `[s; W]`, or the learned null pair.
    pub fn text_tokens(&self, t: &mut Tape, p: &Bound, text: Option<&TextFeatures>) -> Var {
        match text {
            Some(f) => t.constant(f.tokens()),
            None => t.concat_rows(&[p.var(self.null_sentence), p.var(self.null_word)]),
        }
    }

    /// Backbone input rows (before positions): `[p; Z with masked rows = [M]]`.
    pub fn input_rows_tape(&self, t: &mut Tape, p: &Bound, z_std: &Matrix, mask: &[usize], tpose: &[f64]) -> Var {
        let rows = z_std.rows();
        let tp = t.constant(Matrix::row_vector(self.standardize_tpose(tpose)));
        let prefix = self.tpose_proj.forward(t, p, tp);
        let z = t.constant(z_std.clone());
        let stacked = t.concat_rows(&[z, p.var(self.mask_token)]);
        let mut index: Vec<Option<usize>> = (0..rows).map(Some).collect();
        for &i in mask {
            index[i] = Some(rows);
        }
        let motion = t.gather_rows(stacked, index);
        t.concat_rows(&[prefix, motion])
    }

    /// Context `H`, `(T + 1) × d`, from standardized latents.
    pub fn context_tape(&self, t: &mut Tape, p: &Bound, z_std: &Matrix, mask: &[usize], tpose: &[f64], text: Var) -> Var {
        let d = self.cfg.latent_dim;
        let x = self.input_rows_tape(t, p, z_std, mask, tpose);
        let positions: Vec<f64> = (0..=z_std.rows()).map(|i| i as f64).collect();
        let pos = t.constant(sinusoidal(&positions, d, 10_000.0));
        let mut x = t.add(x, pos);
        for b in &self.blocks {
            let a = b.ln1.forward(t, p, x);
            let a = b.self_att.forward(t, p, a, a);
            x = t.add(x, a);
            let c = b.ln2.forward(t, p, x);
            let c = b.cross.forward(t, p, c, text);
            x = t.add(x, c);
            let f = b.ln3.forward(t, p, x);
            let f = b.ff1.forward(t, p, f);
            let f = t.silu(f);
            let f = b.ff2.forward(t, p, f);
            x = t.add(x, f);
        }
        self.ln_out.forward(t, p, x)
    }

    /// Velocity for rows of `z_tau` at times `tau`, conditioned on rows `h`.
    pub fn velocity_tape(&self, t: &mut Tape, p: &Bound, z_tau: Var, tau: &[f64], h: Var) -> Var {
        let scaled: Vec<f64> = tau.iter().map(|x| 1000.0 * x).collect();
        let temb = t.constant(sinusoidal(&scaled, TAU_FEATURES, 10_000.0));
        let hd = &self.head;
        let a = hd.z_in.forward(t, p, z_tau);
        let b = hd.tau_in.forward(t, p, temb);
        let c = hd.h_in.forward(t, p, h);
        let x = t.add(a, b);
        let mut x = t.add(x, c);
        for (ln, l1, l2) in &hd.res {
            let y = ln.forward(t, p, x);
            let y = l1.forward(t, p, y);
            let y = t.silu(y);
            let y = l2.forward(t, p, y);
            x = t.add(x, y);
        }
        let x = hd.ln.forward(t, p, x);
        let x = t.silu(x);
        hd.out.forward(t, p, x)
    }

    /// Motion rows of `H` at the masked positions.
    pub fn masked_context_rows(t: &mut Tape, h: Var, mask: &[usize]) -> Var {
        let rows: Vec<usize> = mask.iter().map(|i| i + 1).collect();
        t.select_rows(h, &rows)
    }

    /// Draws the per-example randomness for one training step.
    pub fn draw(&self, len: usize, rng: &mut SeededRng) -> GenDraw {
        let mask = sample_training_mask(len, rng);
        let noise = rng::normal_matrix(rng, mask.len(), self.cfg.latent_dim);
        let tau = (0..mask.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let drop_text = rng.random::<f64>() < self.cfg.text_dropout;
        GenDraw { mask, noise, tau, drop_text }
    }

    /// `(total, flow, guide)` for one example. `mcm` is `None` only when the
    /// guidance weight is zero.
    pub fn loss_tape(
        &self,
        t: &mut Tape,
        p: &Bound,
        mcm: Option<(&Mcm, &Bound)>,
        sample: &GenSample,
        draw: &GenDraw,
    ) -> Result<(Var, Var, Var)> {
        self.check_latents(&sample.latents)?;
        self.check_text(&sample.text)?;
        let z_std = self.standardize(&sample.latents);
        if draw.mask.is_empty() {
            let zero = t.constant(Matrix::scalar(0.0));
            return Ok((zero, zero, zero));
        }
        let text = self.text_tokens(t, p, if draw.drop_text { None } else { Some(&sample.text) });
        let h = self.context_tape(t, p, &z_std, &draw.mask, &tpose_vector(&sample.tpose), text);
        let hm = Self::masked_context_rows(t, h, &draw.mask);
        let z_m = z_std.select_rows(&draw.mask);
        let z_tau = interpolate(&z_m, &draw.noise, &draw.tau);
        let ztv = t.constant(z_tau.clone());
        let v = self.velocity_tape(t, p, ztv, &draw.tau, hm);
        let target = z_m.sub(&draw.noise);
        let flow = flow_loss_from_velocity(t, v, &target);
        if self.cfg.lambda_guide == 0.0 {
            let zero = t.constant(Matrix::scalar(0.0));
            return Ok((flow, flow, zero));
        }
        let (critic, critic_bound) = mcm.ok_or_else(|| Error::Config("guidance needs a pretrained critic".into()))?;
        let clean = extrapolate_clean(t, &z_tau, &draw.tau, v);
        let base = t.constant(z_std);
        let z_hat = assemble_masked(t, base, clean, &draw.mask);
        let std = t.constant(Matrix::row_vector(self.latent_std.clone()));
        let mean = t.constant(Matrix::row_vector(self.latent_mean.clone()));
        let raw = t.mul_row(z_hat, std);
        let raw = t.add_row(raw, mean);
        let guide = morph_guide_loss(t, critic, critic_bound, raw, &sample.bones);
        let weighted = t.scale(guide, self.cfg.lambda_guide);
        let total = t.add(flow, weighted);
        Ok((total, flow, guide))
    }

    /// Batch-mean losses and one optimizer step; randomness from `seed`.
    pub fn train_step(
        &mut self,
        batch: &[&GenSample],
        mcm: Option<&Mcm>,
        seed: u64,
        state: &mut AdamState,
        adam: &AdamConfig,
    ) -> Result<GenLosses> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut r = rng::derive(seed, 0x9e7_57e9);
        let mut t = Tape::new();
        let p = self.params.bind(&mut t, true);
        let critic = mcm.map(|m| (m, m.params.bind(&mut t, false)));
        let mut totals = Vec::with_capacity(batch.len());
        let (mut flow_sum, mut guide_sum) = (0.0, 0.0);
        for s in batch {
            let draw = self.draw(s.latents.rows(), &mut r);
            let (total, flow, guide) = self.loss_tape(&mut t, &p, critic.as_ref().map(|(m, b)| (*m, b)), s, &draw)?;
            flow_sum += t.scalar(flow);
            guide_sum += t.scalar(guide);
            totals.push(total);
        }
        let all = t.concat_cols(&totals);
        let loss = t.mean(all);
        let n = batch.len() as f64;
        let out = GenLosses { total: t.scalar(loss), flow: flow_sum / n, guide: guide_sum / n };
        if !out.total.is_finite() {
            return Err(Error::NonFinite(format!("generator loss {} (flow {}, guide {})", out.total, out.flow, out.guide)));
        }
        let g = t.backward(loss);
        let grads = p.grads(&t, &g);
        optimizer_step(&mut self.params, &grads, state, adam)?;
        Ok(out)
    }

    /// Context on plain values; `z` holds raw latents.
    pub fn build_context(&self, z: &Matrix, mask: &[usize], tpose: &TPose, text: Option<&TextFeatures>) -> Result<Matrix> {
        self.check_latents(z)?;
        if let Some(f) = text {
            self.check_text(f)?;
        }
        if mask.iter().any(|&i| i >= z.rows()) {
            return Err(invalid("mask position out of range"));
        }
        let mut t = Tape::new();
        let p = self.params.bind(&mut t, false);
        let tt = self.text_tokens(&mut t, &p, text);
        let h = self.context_tape(&mut t, &p, &self.standardize(z), mask, &tpose_vector(tpose), tt);
        Ok(t.value(h).clone())
    }

    pub fn velocity(&self, z_tau: &Matrix, tau: &[f64], h: &Matrix) -> Matrix {
        let mut t = Tape::new();
        let p = self.params.bind(&mut t, false);
        let zv = t.constant(z_tau.clone());
        let hv = t.constant(h.clone());
        let v = self.velocity_tape(&mut t, &p, zv, tau, hv);
        t.value(v).clone()
    }

    /// Fills `masked` positions of `z_init` (raw latents) by iterative
    /// decoding; every other row is copied through untouched.
    pub fn infill(
        &self,
        z_init: &Matrix,
        masked: &[usize],
        text: &TextFeatures,
        tpose: &TPose,
        cfg: &InferConfig,
        seed: u64,
    ) -> Result<Matrix> {
        self.check_latents(z_init)?;
        self.check_text(text)?;
        if cfg.rounds == 0 || cfg.ode_steps == 0 {
            return Err(Error::Config("rounds and ode_steps must be at least 1".into()));
        }
        if masked.iter().any(|&i| i >= z_init.rows()) {
            return Err(invalid("masked positions must be in range"));
        }
        let mut r = rng::derive(seed, 0x1f3e);
        let plan = fill_plan(masked, cfg.rounds, &mut r)?;
        let tp = tpose_vector(tpose);
        let mut raw = z_init.clone();
        let mut z_std = self.standardize(z_init);
        let mut pending: Vec<usize> = masked.to_vec();
        for chosen in plan {
            let mut t = Tape::new();
            let p = self.params.bind(&mut t, false);
            let cond = self.text_tokens(&mut t, &p, Some(text));
            let h_c = self.context_tape(&mut t, &p, &z_std, &pending, &tp, cond);
            let h_c = Self::masked_context_rows(&mut t, h_c, &chosen);
            let uncond = self.text_tokens(&mut t, &p, None);
            let h_u = self.context_tape(&mut t, &p, &z_std, &pending, &tp, uncond);
            let h_u = Self::masked_context_rows(&mut t, h_u, &chosen);
            let (h_c, h_u) = (t.value(h_c).clone(), t.value(h_u).clone());
            let noise = rng::normal_matrix(&mut r, chosen.len(), self.cfg.latent_dim);
            let z = euler_integrate(&noise, cfg.ode_steps, |z, tau| {
                let taus = vec![tau; z.rows()];
                let v_c = self.velocity(z, &taus, &h_c);
                let v_u = self.velocity(z, &taus, &h_u);
                cfg_velocity(&v_c, &v_u, cfg.omega)
            });
            let z_raw = self.unstandardize(&z);
            for (k, &i) in chosen.iter().enumerate() {
                z_std.row_mut(i).copy_from_slice(z.row(k));
                raw.row_mut(i).copy_from_slice(z_raw.row(k));
            }
            pending.retain(|i| !chosen.contains(i));
        }
        debug_assert!(pending.is_empty());
        Ok(raw)
    }

    /// Generates `len` latent rows from scratch.
    pub fn infer(&self, text: &TextFeatures, tpose: &TPose, len: usize, cfg: &InferConfig, seed: u64) -> Result<Matrix> {
        if len == 0 {
            return Err(Error::TooShort { min: 1, got: 0 });
        }
        let all: Vec<usize> = (0..len).collect();
        self.infill(&Matrix::zeros(len, self.cfg.latent_dim), &all, text, tpose, cfg, seed)
    }
}
