//! Stage composition: run configuration, data preparation, staged training,
//! text-to-motion generation, cross-species transitions and evaluation.
//!
//! Training order follows the two-stage structure: the bone-length VAE and
//! the motion autoencoder first, then the critic on autoencoder latents, then
//! the generator, with the toy matcher trained independently for metrics.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cgae::{Cgae, CgaeConfig, CgaeSample};
use crate::dataset::{
    all_gait_captions, build_toy_dataset, BodyPlan, filter_by_length, make_splits, DatasetSplit, Gait, MotionRecord, Species,
    ToyDatasetConfig,
};
use crate::embed::{SpeciesEncoder, TextEncoder, TextFeatures};
use crate::error::{invalid, Error, Result};
use crate::features::{decode_to_global, MotionSequence};
use crate::geom;
use crate::generator::{GenConfig, GenSample, Generator, InferConfig};
use crate::math;
use crate::mcm::{Mcm, McmConfig};
use crate::metrics::{diversity, fid, mm_dist, mme, r_precision_curve, MatcherConfig, ToyMatcher};
use crate::optim::AdamState;
use crate::motion_ae::{latent_len, AeConfig, MotionAe, DOWNSAMPLE};
use crate::rng;
use crate::skeleton::{TAIL_BONES, extract_bone_lengths, forward_kinematics_tpose, BoneLengths, SkeletonTopology, TPose};
use crate::tensor::Matrix;
use crate::train::{self, Observer, Schedule};

/// Evaluation protocol knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub seed: u64,
    pub samples_per_prompt: usize,
    pub gen_len: usize,
    pub pool_size: usize,
    pub diversity_pairs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { seed: 0, samples_per_prompt: 2, gen_len: 64, pool_size: 32, diversity_pairs: 30 }
    }
}

/// Every hyperparameter of a full run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub split_seed: u64,
    pub dataset: ToyDatasetConfig,
    /// Species withheld from training; empty means the last two of the roster.
    pub holdout_species: Vec<String>,
    pub cgae: CgaeConfig,
    pub ae: AeConfig,
    pub mcm: McmConfig,
    pub gen: GenConfig,
    pub matcher: MatcherConfig,
    pub infer: InferConfig,
    pub cgae_train: Schedule,
    pub ae_train: Schedule,
    pub mcm_train: Schedule,
    pub gen_train: Schedule,
    pub matcher_train: Schedule,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            split_seed: 0,
            dataset: ToyDatasetConfig::default(),
            holdout_species: Vec::new(),
            cgae: CgaeConfig::default(),
            ae: AeConfig { channels: 64, ..AeConfig::default() },
            mcm: McmConfig::default(),
            gen: GenConfig::default(),
            matcher: MatcherConfig::default(),
            infer: InferConfig::default(),
            cgae_train: Schedule { steps: 3000, batch: 32, lr: 1e-2 },
            ae_train: Schedule { steps: 2000, batch: 8, lr: 1e-3 },
            mcm_train: Schedule { steps: 1500, batch: 32, lr: 1e-3 },
            gen_train: Schedule { steps: 3000, batch: 16, lr: 5e-4 },
            matcher_train: Schedule { steps: 800, batch: 64, lr: 1e-3 },
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, s) in [
            ("cgae", &self.cgae_train),
            ("ae", &self.ae_train),
            ("mcm", &self.mcm_train),
            ("gen", &self.gen_train),
            ("matcher", &self.matcher_train),
        ] {
            s.validate(name)?;
        }
        if self.ae.latent_dim != self.mcm.latent_dim || self.ae.latent_dim != self.gen.latent_dim {
            return Err(Error::Config("ae, mcm and gen latent widths must agree".into()));
        }
        if !(self.cgae.beta > 0.0) {
            return Err(Error::Config("beta must be positive".into()));
        }
        if self.eval.gen_len < DOWNSAMPLE || self.eval.samples_per_prompt == 0 {
            return Err(Error::Config("eval.gen_len must be >= 4 and samples_per_prompt >= 1".into()));
        }
        Ok(())
    }
}

/// Toy corpus with its split.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub species: Vec<Species>,
    pub records: Vec<MotionRecord>,
    pub split: DatasetSplit,
    pub holdout: Vec<String>,
}

impl Prepared {
    pub fn species(&self, name: &str) -> Option<&Species> {
        self.species.iter().find(|s| s.name == name)
    }

    pub fn seen_species(&self) -> Vec<&Species> {
        self.species.iter().filter(|s| !self.holdout.contains(&s.name)).collect()
    }

    pub fn unseen_species(&self) -> Vec<&Species> {
        self.species.iter().filter(|s| self.holdout.contains(&s.name)).collect()
    }

    pub fn subset(&self, ids: &[usize]) -> Vec<&MotionRecord> {
        ids.iter().map(|&i| &self.records[i]).collect()
    }
}

/// Species roster recovered from records alone: per-species mean T-pose
/// lengths, with a body plan read off the tail.
pub fn species_from_records(records: &[MotionRecord]) -> Vec<Species> {
    let mut out: Vec<(Species, usize)> = Vec::new();
    for r in records {
        match out.iter_mut().find(|(s, _)| s.name == r.species_name) {
            Some((s, n)) => {
                s.bone_lengths.0.iter_mut().zip(r.tpose_bone_lengths.iter()).for_each(|(a, b)| *a += b);
                *n += 1;
            }
            None => out.push((
                Species { name: r.species_name.clone(), plan: BodyPlan::Biped, bone_lengths: r.tpose_bone_lengths },
                1,
            )),
        }
    }
    out.into_iter()
        .map(|(mut s, n)| {
            s.bone_lengths.0.iter_mut().for_each(|v| *v /= n as f64);
            s.plan = if TAIL_BONES.iter().any(|&e| s.bone_lengths.0[e] > 0.0) { BodyPlan::Quadruped } else { BodyPlan::Biped };
            s
        })
        .collect()
}

/// The last two species in first-appearance order (one if only two exist).
pub fn default_holdout(names: &[String]) -> Vec<String> {
    let k = 2.min(names.len().saturating_sub(1));
    names[names.len() - k..].to_vec()
}

pub fn prepare_data(cfg: &RunConfig, topo: &SkeletonTopology) -> Result<Prepared> {
    let (species, records) = build_toy_dataset(&cfg.dataset, topo)?;
    let records = filter_by_length(records);
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let holdout = if cfg.holdout_species.is_empty() {
        default_holdout(&species.iter().map(|s| s.name.clone()).collect::<Vec<_>>())
    } else {
        cfg.holdout_species.clone()
    };
    let split = make_splits(&records, &holdout, cfg.split_seed)?;
    Ok(Prepared { species, records, split, holdout })
}

/// All trained components.
#[derive(Clone, Debug)]
pub struct Models {
    pub cgae: Cgae,
    pub ae: MotionAe,
    pub mcm: Mcm,
    pub gen: Generator,
    pub matcher: ToyMatcher,
}

impl Models {
    /// Freshly initialized components (stage seeds derived from `cfg.seed`).
    pub fn init(cfg: &RunConfig, topo: &SkeletonTopology) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cgae: Cgae::new(cfg.cgae.clone(), topo, cfg.seed ^ 0x01)?,
            ae: MotionAe::new(cfg.ae.clone(), topo, cfg.seed ^ 0x02)?,
            mcm: Mcm::new(cfg.mcm.clone(), cfg.seed ^ 0x03)?,
            gen: Generator::new(cfg.gen.clone(), cfg.seed ^ 0x04)?,
            matcher: ToyMatcher::new(cfg.matcher.clone(), cfg.seed ^ 0x05)?,
        })
    }
}

pub fn cgae_samples(records: &[&MotionRecord], species_enc: &dyn SpeciesEncoder) -> Result<Vec<CgaeSample>> {
    records
        .iter()
        .map(|r| Ok(CgaeSample { bones: r.tpose_bone_lengths, cond: species_enc.encode_species(&r.species_name)?.0 }))
        .collect()
}

pub fn encode_all(ae: &MotionAe, records: &[&MotionRecord]) -> Result<Vec<Matrix>> {
    records.iter().map(|r| ae.encode(&r.motion)).collect()
}

/// One generator example per (record, caption).
pub fn gen_samples(
    latents: &[Matrix],
    records: &[&MotionRecord],
    text_enc: &dyn TextEncoder,
    topo: &SkeletonTopology,
) -> Result<Vec<GenSample>> {
    let mut out = Vec::new();
    for (z, r) in latents.iter().zip(records) {
        let tpose = forward_kinematics_tpose(&r.tpose_bone_lengths, topo)?;
        for c in &r.captions {
            out.push(GenSample { latents: z.clone(), tpose: tpose.clone(), text: text_enc.encode_text(c)?, bones: r.tpose_bone_lengths });
        }
    }
    Ok(out)
}

pub fn matcher_pairs<'a>(records: &[&'a MotionRecord], text_enc: &dyn TextEncoder) -> Result<Vec<(&'a MotionSequence, Vec<TextFeatures>)>> {
    records
        .iter()
        .map(|r| Ok((&r.motion, r.captions.iter().map(|c| text_enc.encode_text(c)).collect::<Result<Vec<_>>>()?)))
        .collect()
}

pub fn train_stage_cgae(m: &mut Models, cfg: &RunConfig, data: &Prepared, senc: &dyn SpeciesEncoder, state: &mut AdamState, obs: Observer) -> Result<()> {
    let samples = cgae_samples(&data.subset(&data.split.train), senc)?;
    train::train_cgae(&mut m.cgae, &samples, &cfg.cgae_train, cfg.seed, state, obs).map(|_| ())
}

pub fn train_stage_ae(m: &mut Models, cfg: &RunConfig, data: &Prepared, state: &mut AdamState, obs: Observer) -> Result<Vec<train::StepRecord>> {
    let train_recs = data.subset(&data.split.train);
    let seqs: Vec<&MotionSequence> = train_recs.iter().map(|r| &r.motion).collect();
    if cfg.ae.normalize {
        m.ae.set_stats(crate::features::compute_norm_stats(seqs.iter().copied())?);
    }
    train::train_ae(&mut m.ae, &seqs, &cfg.ae_train, cfg.seed, state, obs)
}

pub fn train_stage_mcm(m: &mut Models, cfg: &RunConfig, data: &Prepared, latents: &[Matrix], state: &mut AdamState, obs: Observer) -> Result<()> {
    let train_recs = data.subset(&data.split.train);
    m.mcm.fit_input_stats(latents.iter())?;
    let pairs: Vec<(Matrix, BoneLengths)> = latents.iter().cloned().zip(train_recs.iter().map(|r| r.tpose_bone_lengths)).collect();
    train::train_mcm(&mut m.mcm, &pairs, &cfg.mcm_train, cfg.seed, state, obs).map(|_| ())
}

#[allow(clippy::too_many_arguments)]
pub fn train_stage_gen(
    m: &mut Models,
    cfg: &RunConfig,
    data: &Prepared,
    latents: &[Matrix],
    tenc: &dyn TextEncoder,
    topo: &SkeletonTopology,
    state: &mut AdamState,
    obs: Observer,
) -> Result<()> {
    let samples = gen_samples(latents, &data.subset(&data.split.train), tenc, topo)?;
    m.gen.fit_latent_stats(latents.iter())?;
    m.gen.fit_tpose_stats(samples.iter().map(|s| &s.tpose))?;
    let critic = if m.gen.cfg.lambda_guide > 0.0 { Some(&m.mcm) } else { None };
    train::train_generator(&mut m.gen, &samples, critic, &cfg.gen_train, cfg.seed, state, obs).map(|_| ())
}

pub fn train_stage_matcher(m: &mut Models, cfg: &RunConfig, data: &Prepared, tenc: &dyn TextEncoder, state: &mut AdamState, obs: Observer) -> Result<()> {
    let recs = data.subset(&data.split.train);
    m.matcher.fit_stats(recs.iter().map(|r| &r.motion))?;
    let pairs = matcher_pairs(&recs, tenc)?;
    train::train_matcher(&mut m.matcher, &pairs, &cfg.matcher_train, cfg.seed, state, obs).map(|_| ())
}

/// Optimizer state per trainable component.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimStates {
    pub cgae: AdamState,
    pub ae: AdamState,
    pub mcm: AdamState,
    pub gen: AdamState,
    pub matcher: AdamState,
}

impl OptimStates {
    pub fn new(m: &Models) -> Self {
        Self {
            cgae: AdamState::new(&m.cgae.params),
            ae: AdamState::new(&m.ae.params),
            mcm: AdamState::new(&m.mcm.params),
            gen: AdamState::new(&m.gen.params),
            matcher: AdamState::new(&m.matcher.params),
        }
    }
}

/// Trains every stage in order.
pub fn train_all(
    cfg: &RunConfig,
    data: &Prepared,
    senc: &dyn SpeciesEncoder,
    tenc: &dyn TextEncoder,
    topo: &SkeletonTopology,
    obs: Observer,
) -> Result<(Models, OptimStates)> {
    let mut m = Models::init(cfg, topo)?;
    let mut st = OptimStates::new(&m);
    train_stage_cgae(&mut m, cfg, data, senc, &mut st.cgae, obs)?;
    train_stage_ae(&mut m, cfg, data, &mut st.ae, obs)?;
    let latents = encode_all(&m.ae, &data.subset(&data.split.train))?;
    train_stage_mcm(&mut m, cfg, data, &latents, &mut st.mcm, obs)?;
    train_stage_gen(&mut m, cfg, data, &latents, tenc, topo, &mut st.gen, obs)?;
    train_stage_matcher(&mut m, cfg, data, tenc, &mut st.matcher, obs)?;
    Ok((m, st))
}

/// A generated clip together with the morphology it was conditioned on.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub motion: MotionSequence,
    pub latents: Matrix,
    pub tpose: TPose,
    pub bones: BoneLengths,
}

/// Caption and species name to an `L × 76` motion.
#[allow(clippy::too_many_arguments)]
pub fn generate_motion(
    m: &Models,
    senc: &dyn SpeciesEncoder,
    tenc: &dyn TextEncoder,
    topo: &SkeletonTopology,
    caption: &str,
    species: &str,
    len: usize,
    infer: &InferConfig,
    seed: u64,
) -> Result<Generated> {
    let t_len = latent_len(len);
    if t_len == 0 {
        return Err(Error::TooShort { min: DOWNSAMPLE, got: len });
    }
    let cond = senc.encode_species(species)?;
    let tpose = m.cgae.sample_tpose(&cond.0, rng::hash_str(seed, "tpose"), topo)?;
    let bones = extract_bone_lengths(&tpose, topo)?;
    let text = tenc.encode_text(caption)?;
    let latents = m.gen.infer(&text, &tpose, t_len, infer, seed)?;
    let motion = m.ae.decode(&latents, len)?;
    Ok(Generated { motion, latents, tpose, bones })
}

/// Result of in-filling a gap between two encoded clips.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub motion: MotionSequence,
    pub latents: Matrix,
    pub prefix: Matrix,
    pub suffix: Matrix,
    pub gap: usize,
}

impl Transition {
    /// Generated latent rows.
    pub fn gap_rows(&self) -> core::ops::Range<usize> {
        self.prefix.rows()..self.prefix.rows() + self.gap
    }

    /// Decoded frames driven by the gap latents.
    pub fn seam_frames(&self) -> core::ops::Range<usize> {
        let r = self.gap_rows();
        DOWNSAMPLE * r.start..DOWNSAMPLE * r.end
    }

    pub fn context_is_untouched(&self) -> bool {
        let tb = self.suffix.rows();
        let start = self.latents.rows() - tb;
        (0..self.prefix.rows()).all(|i| self.latents.row(i) == self.prefix.row(i))
            && (0..tb).all(|i| self.latents.row(start + i) == self.suffix.row(i))
    }
}

/// `[encode(a); gap × [M]; encode(b)]`, with only the gap generated.
#[allow(clippy::too_many_arguments)]
pub fn cross_species_transition(
    m: &Models,
    a: &MotionSequence,
    b: &MotionSequence,
    gap: usize,
    caption: &TextFeatures,
    tpose_target: &TPose,
    infer: &InferConfig,
    seed: u64,
) -> Result<Transition> {
    if gap == 0 {
        return Err(invalid("gap must be at least one token"));
    }
    let prefix = m.ae.encode(a)?;
    let suffix = m.ae.encode(b)?;
    let d = prefix.cols();
    let total = prefix.rows() + gap + suffix.rows();
    let mut z = Matrix::zeros(total, d);
    for i in 0..prefix.rows() {
        z.row_mut(i).copy_from_slice(prefix.row(i));
    }
    for i in 0..suffix.rows() {
        z.row_mut(prefix.rows() + gap + i).copy_from_slice(suffix.row(i));
    }
    let masked: Vec<usize> = (prefix.rows()..prefix.rows() + gap).collect();
    let latents = m.gen.infill(&z, &masked, caption, tpose_target, infer, seed)?;
    let motion = m.ae.decode(&latents, DOWNSAMPLE * total)?;
    Ok(Transition { motion, latents, prefix, suffix, gap })
}

/// Largest per-joint world displacement between consecutive frames.
pub fn frame_jumps(seq: &MotionSequence) -> Vec<f64> {
    let g = decode_to_global(seq, 0.0, [0.0, 0.0]);
    g.joints
        .windows(2)
        .map(|w| w[0].iter().zip(w[1].iter()).map(|(p, q)| geom::norm(geom::sub(*p, *q))).fold(0.0, f64::max))
        .collect()
}

/// Seam jump statistic: the largest jump touching `seam` against the median
/// jump elsewhere in the clip.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeamStats {
    pub seam_max: f64,
    pub median_elsewhere: f64,
    pub ratio: f64,
}

pub fn seam_stats(seq: &MotionSequence, seam: core::ops::Range<usize>) -> Result<SeamStats> {
    let jumps = frame_jumps(seq);
    // jump k spans frames k and k + 1
    let touches = |k: usize| k + 1 >= seam.start && k < seam.end;
    let seam_max = jumps.iter().enumerate().filter(|(k, _)| touches(*k)).map(|(_, j)| *j).fold(0.0, f64::max);
    let mut rest: Vec<f64> = jumps.iter().enumerate().filter(|(k, _)| !touches(*k)).map(|(_, j)| *j).collect();
    if rest.is_empty() {
        return Err(invalid("no frames outside the seam"));
    }
    rest.sort_by(f64::total_cmp);
    let n = rest.len();
    let median = if n % 2 == 1 { rest[n / 2] } else { 0.5 * (rest[n / 2 - 1] + rest[n / 2]) };
    Ok(SeamStats { seam_max, median_elsewhere: median, ratio: seam_max / median.max(1e-12) })
}

/// Metric name → value, with the protocol that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
    pub config: EvalConfig,
    pub holdout_species: Vec<String>,
}

impl EvalReport {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }
}

/// Seen-species prompts: every gait, `samples_per_prompt` draws, rotating
/// through the caption synonyms.
pub fn eval_prompts(species: &str, samples: usize) -> Vec<(Gait, String)> {
    let all = all_gait_captions(species);
    let mut out = Vec::new();
    for g in Gait::ALL {
        let phrases: Vec<&(Gait, String)> = all.iter().filter(|(x, _)| *x == g).collect();
        for k in 0..samples {
            out.push((g, phrases[k % phrases.len()].1.clone()));
        }
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Generated-motion MME per prompt for the given species list.
#[allow(clippy::too_many_arguments)]
pub fn generation_mme(
    m: &Models,
    senc: &dyn SpeciesEncoder,
    tenc: &dyn TextEncoder,
    topo: &SkeletonTopology,
    species: &[&Species],
    against_sampled: bool,
    cfg: &RunConfig,
) -> Result<(Vec<Generated>, Vec<String>, Vec<f64>)> {
    let mut gens = Vec::new();
    let mut captions = Vec::new();
    let mut errs = Vec::new();
    for sp in species {
        for (k, (_, cap)) in eval_prompts(&sp.name, cfg.eval.samples_per_prompt).into_iter().enumerate() {
            let seed = rng::hash_str(cfg.eval.seed ^ k as u64, &sp.name);
            let g = generate_motion(m, senc, tenc, topo, &cap, &sp.name, cfg.eval.gen_len, &cfg.infer, seed)?;
            let target = if against_sampled { g.bones } else { sp.bone_lengths };
            errs.push(mme(&g.motion, &target, topo));
            gens.push(g);
            captions.push(cap);
        }
    }
    Ok((gens, captions, errs))
}

/// Full evaluation on the held-out splits.
pub fn evaluate(
    m: &Models,
    data: &Prepared,
    senc: &dyn SpeciesEncoder,
    tenc: &dyn TextEncoder,
    topo: &SkeletonTopology,
    cfg: &RunConfig,
) -> Result<EvalReport> {
    let mut out = BTreeMap::new();
    let ec = &cfg.eval;
    let test = data.subset(&data.split.test);

    let recon: Vec<f64> = test
        .iter()
        .map(|r| Ok(mme(&m.ae.reconstruct(&r.motion)?, &r.tpose_bone_lengths, topo)))
        .collect::<Result<_>>()?;
    out.insert("ae_recon_mme".to_string(), mean(&recon));

    let mut rel = Vec::new();
    for sp in data.seen_species() {
        let c = senc.encode_species(&sp.name)?;
        let (mu, _) = m.cgae.encode(&sp.bone_lengths, &c.0)?;
        let back = m.cgae.decode(&mu, &c.0)?;
        let num: f64 = back.iter().zip(sp.bone_lengths.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = sp.bone_lengths.iter().map(|b| b * b).sum();
        rel.push(math::sqrt(num / den));
    }
    out.insert("cgae_rel_err_seen".to_string(), mean(&rel));

    let real_feats = m.matcher.motion_features(&test.iter().map(|r| &r.motion).collect::<Vec<_>>());
    let mut real_text = Matrix::zeros(test.len(), m.matcher.cfg.text_dim);
    for (i, r) in test.iter().enumerate() {
        real_text.row_mut(i).copy_from_slice(&tenc.encode_text(&r.captions[0])?.sentence);
    }
    let real_text = m.matcher.text_features(&real_text);
    let mut r = rng::derive(ec.seed, 0xe7a1);
    let curve = r_precision_curve(&real_feats, &real_text, 3, ec.pool_size, &mut r)?;
    for (k, v) in curve.iter().enumerate() {
        out.insert(format!("real_r_precision_top{}", k + 1), *v);
    }

    let (gens, caps, seen_err) = generation_mme(m, senc, tenc, topo, &data.seen_species(), false, cfg)?;
    out.insert("gen_mme_seen".to_string(), mean(&seen_err));
    let gen_feats = m.matcher.motion_features(&gens.iter().map(|g| &g.motion).collect::<Vec<_>>());
    let mut gen_text = Matrix::zeros(caps.len(), m.matcher.cfg.text_dim);
    for (i, c) in caps.iter().enumerate() {
        gen_text.row_mut(i).copy_from_slice(&tenc.encode_text(c)?.sentence);
    }
    let gen_text = m.matcher.text_features(&gen_text);
    let curve = r_precision_curve(&gen_feats, &gen_text, 3, ec.pool_size, &mut r)?;
    for (k, v) in curve.iter().enumerate() {
        out.insert(format!("gen_r_precision_top{}", k + 1), *v);
    }
    out.insert("gen_mm_dist".to_string(), mm_dist(&gen_feats, &gen_text)?);
    out.insert("gen_fid".to_string(), fid(&gen_feats, &real_feats)?);
    let pairs = ec.diversity_pairs.min(gens.len() / 2);
    out.insert("gen_diversity".to_string(), diversity(&gen_feats, pairs, &mut r)?);
    out.insert("gen_count_seen".to_string(), gens.len() as f64);

    let unseen = data.unseen_species();
    if !unseen.is_empty() {
        let (_, _, err) = generation_mme(m, senc, tenc, topo, &unseen, true, cfg)?;
        let u = mean(&err);
        out.insert("gen_mme_unseen".to_string(), u);
        out.insert("gen_mme_unseen_ratio".to_string(), u / mean(&seen_err).max(1e-12));
    }
    Ok(EvalReport { metrics: out, config: ec.clone(), holdout_species: data.holdout.clone() })
}

/// Draws a `(record a, record b)` pair of different species for a transition demo.
pub fn transition_pair<'a>(data: &'a Prepared, ids: &[usize], seed: u64) -> Result<(&'a MotionRecord, &'a MotionRecord)> {
    if ids.len() < 2 {
        return Err(Error::EmptyDataset);
    }
    let mut r = rng::derive(seed, 0x75a);
    for _ in 0..1000 {
        let a = &data.records[ids[r.random_range(0..ids.len())]];
        let b = &data.records[ids[r.random_range(0..ids.len())]];
        if a.species_name != b.species_name {
            return Ok((a, b));
        }
    }
    Err(invalid("split holds a single species"))
}
