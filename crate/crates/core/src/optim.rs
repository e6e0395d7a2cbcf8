//! Adaptive-moment optimizer shared by every trainable module.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::params::ParamSet;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self { step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }
}

/// One bias-corrected Adam update. Aborts on non-finite gradients without
/// touching the parameters.
pub fn optimizer_step(params: &mut ParamSet, grads: &[Matrix], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let mut sq = 0.0;
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params.values()[i].shape() {
            return Err(Error::ShapeMismatch(format!("gradient {i} shape {:?}", g.shape())));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {i}")));
        }
        sq += g.as_slice().iter().map(|x| x * x).sum::<f64>();
    }
    let norm = math::sqrt(sq);
    let clip = if cfg.clip_norm > 0.0 && norm > cfg.clip_norm { cfg.clip_norm / norm } else { 1.0 };

    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - math::powf(cfg.beta1, t);
    let bc2 = 1.0 - math::powf(cfg.beta2, t);
    for (i, p) in params.values_mut().iter_mut().enumerate() {
        let g = grads[i].as_slice();
        let m = state.m[i].as_mut_slice();
        let v = state.v[i].as_mut_slice();
        for (k, x) in p.as_mut_slice().iter_mut().enumerate() {
            let gk = g[k] * clip;
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let mhat = m[k] / bc1;
            let vhat = v[k] / bc2;
            *x -= cfg.lr * mhat / (math::sqrt(vhat) + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn single(x: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.add("x", Matrix::scalar(x));
        p
    }

    #[test]
    fn zero_gradient_from_fresh_state_leaves_params() {
        let mut p = single(0.5);
        let mut s = AdamState::new(&p);
        optimizer_step(&mut p, &[Matrix::scalar(0.0)], &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p.values()[0].as_slice()[0], 0.5);
        assert_eq!(s.m[0].as_slice()[0], 0.0);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let mut p = single(0.5);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig { clip_norm: 0.0, ..AdamConfig::default() };
        optimizer_step(&mut p, &[Matrix::scalar(2.0)], &mut s, &cfg).unwrap();
        let (m1, v1) = (s.m[0].as_slice()[0], s.v[0].as_slice()[0]);
        optimizer_step(&mut p, &[Matrix::scalar(0.0)], &mut s, &cfg).unwrap();
        assert_eq!(s.m[0].as_slice()[0], 0.9 * m1);
        assert_eq!(s.v[0].as_slice()[0], 0.999 * v1);
    }

    #[test]
    fn three_steps_match_hand_computation() {
        let cfg = AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: 0.0 };
        let mut p = single(1.0);
        let mut s = AdamState::new(&p);
        for g in [0.5, -0.25, 1.0] {
            optimizer_step(&mut p, &[Matrix::scalar(g)], &mut s, &cfg).unwrap();
        }
        // m1=0.05 v1=0.00025 -> step 0.1*0.5/0.5 = 0.1 (x=0.9)
        // m2=0.02 v2=0.000312250 ; mhat=0.02/0.19=0.105263 ; vhat=0.00031225/0.001999=0.156203
        //   -> 0.1*0.105263/0.395225 = 0.0266337 (x=0.873366)
        // m3=0.118 v3=0.001311938 ; mhat=0.118/0.271=0.435424 ; vhat=0.001311938/0.002997001=0.437750
        //   -> 0.1*0.435424/0.661627 = 0.0658112 (x=0.807555)
        let x = p.values()[0].as_slice()[0];
        assert!((x - 0.807555).abs() < 2e-6, "{x}");
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut p = single(0.3);
        let before = p.checksum();
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig { lr: 0.0, ..AdamConfig::default() };
        optimizer_step(&mut p, &[Matrix::scalar(1.7)], &mut s, &cfg).unwrap();
        assert_eq!(before, p.checksum());
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut p = single(0.3);
        let mut s = AdamState::new(&p);
        let err = optimizer_step(&mut p, &[Matrix::scalar(f64::NAN)], &mut s, &AdamConfig::default());
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(s.step, 0);
        assert_eq!(p.values()[0].as_slice(), &vec![0.3][..]);
    }
}
