//! Deterministic training loops shared by every trainable module.
//!
//! Each loop draws its minibatches from a stream derived from `(seed,
//! stage)`, so a run is a pure function of the model, the data and the seed.
//! Loss components of every step go to a caller-supplied observer. The
//! optimizer state is owned by the caller so runs can be resumed.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cgae::{Cgae, CgaeSample};
use crate::embed::TextFeatures;
use crate::error::{Error, Result};
use crate::features::MotionSequence;
use crate::generator::{GenSample, Generator};
use crate::mcm::Mcm;
use crate::metrics::ToyMatcher;
use crate::motion_ae::MotionAe;
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{self, SeededRng};
use crate::skeleton::BoneLengths;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Schedule {
    pub fn validate(&self, stage: &str) -> Result<()> {
        if self.batch == 0 || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(alloc::format!("{stage}: batch must be >= 1 and lr > 0")));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, ..AdamConfig::default() }
    }
}

/// Loss components of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub stage: &'static str,
    pub step: usize,
    pub losses: Vec<(&'static str, f64)>,
}

/// Receives one record per step.
pub type Observer<'a> = &'a mut dyn FnMut(&StepRecord);

fn batch_indices(r: &mut SeededRng, n: usize, batch: usize) -> Vec<usize> {
    (0..batch).map(|_| r.random_range(0..n)).collect()
}

fn stream(seed: u64, stage: &str) -> SeededRng {
    rng::derive(seed, rng::hash_str(0x7a1, stage))
}

pub fn train_cgae(model: &mut Cgae, data: &[CgaeSample], sched: &Schedule, seed: u64, state: &mut AdamState, observe: Observer) -> Result<Vec<StepRecord>> {
    sched.validate("cgae")?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let adam = sched.adam();
    let mut r = stream(seed, "cgae");
    let mut out = Vec::with_capacity(sched.steps);
    for step in 0..sched.steps {
        let batch: Vec<CgaeSample> = batch_indices(&mut r, data.len(), sched.batch).into_iter().map(|i| data[i].clone()).collect();
        let l = model.train_step(&batch, r.random(), state, &adam)?;
        let rec = StepRecord { stage: "cgae", step, losses: alloc::vec![("total", l.total), ("recon", l.recon), ("kl", l.kl)] };
        observe(&rec);
        out.push(rec);
    }
    Ok(out)
}

pub fn train_ae(model: &mut MotionAe, data: &[&MotionSequence], sched: &Schedule, seed: u64, state: &mut AdamState, observe: Observer) -> Result<Vec<StepRecord>> {
    sched.validate("ae")?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let adam = sched.adam();
    let mut r = stream(seed, "ae");
    let mut out = Vec::with_capacity(sched.steps);
    for step in 0..sched.steps {
        let batch: Vec<&MotionSequence> = batch_indices(&mut r, data.len(), sched.batch).into_iter().map(|i| data[i]).collect();
        let l = model.train_step(&batch, state, &adam)?;
        let rec = StepRecord { stage: "ae", step, losses: alloc::vec![("total", l.total), ("mse", l.mse), ("morph", l.morph)] };
        observe(&rec);
        out.push(rec);
    }
    Ok(out)
}

pub fn train_mcm(model: &mut Mcm, data: &[(Matrix, BoneLengths)], sched: &Schedule, seed: u64, state: &mut AdamState, observe: Observer) -> Result<Vec<StepRecord>> {
    sched.validate("mcm")?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let adam = sched.adam();
    let mut r = stream(seed, "mcm");
    let mut out = Vec::with_capacity(sched.steps);
    for step in 0..sched.steps {
        let batch: Vec<(&Matrix, &BoneLengths)> =
            batch_indices(&mut r, data.len(), sched.batch).into_iter().map(|i| (&data[i].0, &data[i].1)).collect();
        let l = model.train_step(&batch, state, &adam)?;
        let rec = StepRecord { stage: "mcm", step, losses: alloc::vec![("total", l)] };
        observe(&rec);
        out.push(rec);
    }
    Ok(out)
}

pub fn train_generator(
    model: &mut Generator,
    data: &[GenSample],
    critic: Option<&Mcm>,
    sched: &Schedule,
    seed: u64,
    state: &mut AdamState,
    observe: Observer,
) -> Result<Vec<StepRecord>> {
    sched.validate("gen")?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let adam = sched.adam();
    let mut r = stream(seed, "gen");
    let mut out = Vec::with_capacity(sched.steps);
    for step in 0..sched.steps {
        let batch: Vec<&GenSample> = batch_indices(&mut r, data.len(), sched.batch).into_iter().map(|i| &data[i]).collect();
        let l = model.train_step(&batch, critic, r.random(), state, &adam)?;
        let rec = StepRecord { stage: "gen", step, losses: alloc::vec![("total", l.total), ("flow", l.flow), ("guide", l.guide)] };
        observe(&rec);
        out.push(rec);
    }
    Ok(out)
}

/// Each record pairs a motion with one or more caption encodings; every
/// step picks one caption per drawn record.
pub fn train_matcher(
    model: &mut ToyMatcher,
    data: &[(&MotionSequence, Vec<TextFeatures>)],
    sched: &Schedule,
    seed: u64,
    state: &mut AdamState,
    observe: Observer,
) -> Result<Vec<StepRecord>> {
    sched.validate("matcher")?;
    if data.len() < 2 || data.iter().any(|(_, c)| c.is_empty()) {
        return Err(Error::EmptyDataset);
    }
    let adam = sched.adam();
    let mut r = stream(seed, "matcher");
    let mut out = Vec::with_capacity(sched.steps);
    let width = data[0].1[0].dim();
    for step in 0..sched.steps {
        let mut ids = rand::seq::index::sample(&mut r, data.len(), sched.batch.min(data.len())).into_vec();
        ids.sort_unstable();
        let seqs: Vec<&MotionSequence> = ids.iter().map(|&i| data[i].0).collect();
        let mut sentences = Matrix::zeros(ids.len(), width);
        for (row, &i) in ids.iter().enumerate() {
            let caps = &data[i].1;
            sentences.row_mut(row).copy_from_slice(&caps[r.random_range(0..caps.len())].sentence);
        }
        let l = model.train_step(&seqs, &sentences, state, &adam)?;
        let rec = StepRecord { stage: "matcher", step, losses: alloc::vec![("total", l)] };
        observe(&rec);
        out.push(rec);
    }
    Ok(out)
}

/// No-op observer.
pub fn ignore(_: &StepRecord) {}
