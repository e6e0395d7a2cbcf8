//! Central finite-difference checks of tape gradients.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;

use crate::cgae::{Cgae, CgaeConfig, CgaeSample};
use crate::dataset::{generate_gait, generate_synthetic_species, Gait};
use crate::embed::TextFeatures;
use crate::error::Result;
use crate::features::{MotionSequence, FRAME_DIM};
use crate::generator::{GenConfig, GenDraw, GenSample, Generator};
use crate::mcm::{assemble_masked, morph_guide_loss, Mcm, McmConfig};
use crate::motion_ae::{AeConfig, MotionAe};
use crate::params::{Bound, ParamSet};
use crate::skeleton::{canonical_topology, forward_kinematics_tpose, BoneLengths, NUM_BONES};
use crate::tensor::Matrix;
use crate::rng;
use crate::tape::{Tape, Var};

/// Outcome of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(flat index, analytic, numeric)` of the worst coordinate.
    pub worst: (usize, f64, f64),
}

/// Relative error with an absolute floor for near-zero gradients.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compares the analytic gradient of `loss` with respect to every parameter
/// against central differences of step `h`, on `coords` sampled flat
/// coordinates (all of them if there are fewer).
pub fn check_params(
    params: &mut ParamSet,
    coords: usize,
    h: f64,
    seed: u64,
    mut loss: impl FnMut(&mut Tape, &Bound) -> Var,
) -> GradCheckReport {
    let mut t = Tape::new();
    let p = params.bind(&mut t, true);
    let l = loss(&mut t, &p);
    let g = t.backward(l);
    let analytic: Vec<f64> = p.grads(&t, &g).into_iter().flat_map(|m| m.into_vec()).collect();

    let n = params.numel();
    let picks: Vec<usize> = if n <= coords { (0..n).collect() } else { sample(&mut rng::seeded(seed), n, coords).into_vec() };
    let mut eval = |params: &ParamSet| {
        let mut t = Tape::new();
        let p = params.bind(&mut t, false);
        let l = loss(&mut t, &p);
        t.scalar(l)
    };
    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, worst: (0, 0.0, 0.0) };
    for i in picks {
        let x = params.flat_get(i);
        params.flat_set(i, x + h);
        let up = eval(params);
        params.flat_set(i, x - h);
        let down = eval(params);
        params.flat_set(i, x);
        let numeric = (up - down) / (2.0 * h);
        let e = rel_err(analytic[i], numeric);
        if e >= report.max_rel_err {
            report.max_rel_err = e;
            report.worst = (i, analytic[i], numeric);
        }
        report.checked += 1;
    }
    report
}

/// Finite-difference step used by the micro-model suite.
pub const SUITE_STEP: f64 = 1e-5;

fn random_bones(r: &mut rng::SeededRng) -> BoneLengths {
    let mut b = [0.0; NUM_BONES];
    b.iter_mut().for_each(|x| *x = 0.05 + 0.4 * r.random::<f64>());
    BoneLengths(b)
}

/// CGAE total loss summed over a three-species micro-batch with fixed noise.
pub fn check_cgae(coords: usize, seed: u64) -> Result<GradCheckReport> {
    let cfg = CgaeConfig { d_z: 4, hidden: 8, cond_dim: 6, cond_proj: 3, beta: 0.5 };
    let mut m = Cgae::new(cfg, &canonical_topology(), seed)?;
    let mut r = rng::seeded(seed ^ 0xc6ae);
    let samples: Vec<(CgaeSample, Vec<f64>)> = (0..3)
        .map(|_| {
            let cond = rng::normal_matrix(&mut r, 1, 6).into_vec();
            let noise = rng::normal_matrix(&mut r, 1, 4).into_vec();
            (CgaeSample { bones: random_bones(&mut r), cond }, noise)
        })
        .collect();
    let model = m.clone();
    Ok(check_params(&mut m.params, coords, SUITE_STEP, seed, |t, p| {
        let totals: Vec<Var> = samples.iter().map(|(s, n)| model.loss_tape(t, p, s, n).0).collect();
        let all = t.concat_cols(&totals);
        t.sum(all)
    }))
}

/// Autoencoder reconstruction plus morphology loss on one length-8 sequence.
pub fn check_ae(coords: usize, seed: u64) -> Result<GradCheckReport> {
    let cfg = AeConfig { latent_dim: 8, channels: 8, res_blocks: 1, ..AeConfig::default() };
    let topo = canonical_topology();
    let mut m = MotionAe::new(cfg, &topo, seed)?;
    // A rigid walk, with the output bias at its mean frame so decoded bones
    // sit at realistic lengths rather than near the kink of the norm.
    let species = &generate_synthetic_species(seed, 2)?[0];
    let walk = generate_gait(species, Gait::Walk, 20, seed, &topo)?.motion;
    let first = walk.frames().select_rows(&(0..8).collect::<Vec<_>>());
    let noise = rng::normal_matrix(&mut rng::seeded(seed ^ 0xae), 8, FRAME_DIM).scale(0.01);
    let seq = MotionSequence::new(first.add(&noise))?;
    let bias = m.params.find("ae.dec_out.b").ok_or_else(|| crate::error::Error::Config("missing output bias".into()))?;
    let mean: Vec<f64> = (0..FRAME_DIM).map(|c| (0..8).map(|t| seq.frame(t)[c]).sum::<f64>() / 8.0).collect();
    m.params.get_mut(bias).as_mut_slice().copy_from_slice(&mean);
    let model = m.clone();
    Ok(check_params(&mut m.params, coords, SUITE_STEP, seed, |t, p| model.sequence_loss_tape(t, p, &seq)))
}

fn micro_mcm(seed: u64) -> Result<Mcm> {
    let mut m = Mcm::new(McmConfig { latent_dim: 8, hidden: 6 }, seed)?;
    let mut r = rng::seeded(seed ^ 0x3c3);
    m.input_mean = rng::normal_matrix(&mut r, 1, 8).scale(0.1).into_vec();
    m.input_std = (0..8).map(|_| 0.5 + r.random::<f64>()).collect();
    Ok(m)
}

/// Critic regression loss with respect to its own parameters, plus the
/// guidance loss with respect to the masked latent rows fed through it.
pub fn check_mcm(coords: usize, seed: u64) -> Result<(GradCheckReport, GradCheckReport)> {
    let mut m = micro_mcm(seed)?;
    let mut r = rng::seeded(seed ^ 0x3c4);
    let z = rng::normal_matrix(&mut r, 4, 8);
    let b = random_bones(&mut r);
    let model = m.clone();
    let own = check_params(&mut m.params, coords, SUITE_STEP, seed, |t, p| {
        let zv = t.constant(z.clone());
        model.pretrain_loss_tape(t, p, zv, &b)
    });
    let mask = vec![1, 3];
    let mut live = ParamSet::new();
    live.add("live", rng::normal_matrix(&mut r, mask.len(), 8));
    let through = check_params(&mut live, coords, SUITE_STEP, seed, |t, p| {
        let critic = model.params.bind(t, false);
        let base = t.constant(z.clone());
        let zh = assemble_masked(t, base, p.vars()[0], &mask);
        morph_guide_loss(t, &model, &critic, zh, &b)
    });
    Ok((own, through))
}

/// Flow plus weighted guidance loss of a one-block generator on `T = 3`.
pub fn check_gen_total(coords: usize, seed: u64) -> Result<GradCheckReport> {
    let cfg = GenConfig {
        latent_dim: 8,
        text_dim: 8,
        blocks: 1,
        heads: 2,
        ffn_width: 16,
        head_width: 16,
        head_blocks: 1,
        lambda_guide: 0.5,
        text_dropout: 0.0,
    };
    let mut g = Generator::new(cfg, seed)?;
    let critic = micro_mcm(seed ^ 1)?;
    let mut r = rng::seeded(seed ^ 0x6e);
    g.latent_mean = rng::normal_matrix(&mut r, 1, 8).scale(0.2).into_vec();
    g.latent_std = (0..8).map(|_| 0.5 + r.random::<f64>()).collect();
    let bones = random_bones(&mut r);
    let sample = GenSample {
        latents: rng::normal_matrix(&mut r, 3, 8),
        tpose: forward_kinematics_tpose(&bones, &canonical_topology())?,
        text: TextFeatures { sentence: rng::normal_matrix(&mut r, 1, 8).into_vec(), words: rng::normal_matrix(&mut r, 2, 8) },
        bones,
    };
    let draw = GenDraw { mask: vec![0, 2], noise: rng::normal_matrix(&mut r, 2, 8), tau: vec![0.3, 0.8], drop_text: false };
    let model = g.clone();
    let mut failure = None;
    let report = check_params(&mut g.params, coords, SUITE_STEP, seed, |t, p| {
        let cb = critic.params.bind(t, false);
        match model.loss_tape(t, p, Some((&critic, &cb)), &sample, &draw) {
            Ok((total, _, _)) => total,
            Err(e) => {
                failure.get_or_insert(e);
                t.constant(Matrix::scalar(0.0))
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    #[test]
    fn quadratic_passes() {
        let mut ps = ParamSet::new();
        ps.add("x", Matrix::from_vec(1, 3, alloc::vec![0.3, -1.2, 2.0]));
        let r = check_params(&mut ps, 10, 1e-5, 0, |t, p| {
            let x = p.vars()[0];
            let s = t.sum_squares(x);
            t.scale(s, 0.5)
        });
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_err < 1e-8);
    }
}
