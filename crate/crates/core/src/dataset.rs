//! Procedural multi-species motion data, length filtering and splits.
//!
//! Species come in two body plans. Bipeds stand upright with zero-length
//! tails; quadrupeds carry the spine horizontally, use the arm chains as
//! forelegs and have a three-bone tail. Every motion is built from rigid
//! subtree rotations of a rest pose, so per-frame bone lengths equal the
//! record's canonical lengths up to storage rounding.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::features::{encode_features, GlobalMotion, MotionSequence};
use crate::geom::{self, Mat3, Vec3};
use crate::math;
use crate::rng::{self, SeededRng};
use crate::skeleton::{forward_kinematics_tpose, BoneLengths, Joints, SkeletonTopology, NUM_BONES, NUM_JOINTS, TAIL_BONES};

pub const MIN_LEN_EXCLUSIVE: usize = 18;
pub const MAX_LEN_EXCLUSIVE: usize = 300;
pub const MIN_BONE: f64 = 0.05;
pub const MAX_BONE: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyPlan {
    Biped,
    Quadruped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Species {
    pub name: String,
    pub plan: BodyPlan,
    pub bone_lengths: BoneLengths,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gait {
    Walk,
    Run,
    TurnLeft,
    TurnRight,
    Idle,
    RearUp,
}

impl Gait {
    pub const ALL: [Gait; 6] = [Gait::Walk, Gait::Run, Gait::TurnLeft, Gait::TurnRight, Gait::Idle, Gait::RearUp];

    pub fn name(self) -> &'static str {
        match self {
            Gait::Walk => "walk",
            Gait::Run => "run",
            Gait::TurnLeft => "turn_left",
            Gait::TurnRight => "turn_right",
            Gait::Idle => "idle",
            Gait::RearUp => "rear_up",
        }
    }

    pub fn parse(s: &str) -> Option<Gait> {
        Gait::ALL.into_iter().find(|g| g.name() == s)
    }

    fn phrases(self) -> &'static [&'static str] {
        match self {
            Gait::Walk => &["walks forward", "strolls ahead", "walks ahead at a steady pace", "paces forward"],
            Gait::Run => &["runs forward", "sprints ahead", "dashes forward quickly", "gallops ahead"],
            Gait::TurnLeft => &["turns to the left", "walks and veers left", "circles around to the left"],
            Gait::TurnRight => &["turns to the right", "walks and veers right", "circles around to the right"],
            Gait::Idle => &["stands still", "idles in place", "rests without moving", "waits calmly"],
            Gait::RearUp => &["rears up", "rises up on its hind legs", "lifts its front up high"],
        }
    }
}

/// One dataset entry.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionRecord {
    pub motion: MotionSequence,
    pub captions: Vec<String>,
    pub species_name: String,
    pub tpose_bone_lengths: BoneLengths,
}

impl MotionRecord {
    pub fn validate(&self) -> Result<()> {
        let len = self.motion.len();
        if !(MIN_LEN_EXCLUSIVE < len && len < MAX_LEN_EXCLUSIVE) {
            return Err(invalid(format!("record length {len} outside (18, 300)")));
        }
        if self.captions.is_empty() {
            return Err(invalid("record has no caption"));
        }
        self.tpose_bone_lengths.validate()
    }
}

const QUADRUPED_NAMES: [&str; 16] = [
    "wolf", "horse", "tiger", "deer", "fox", "lion", "dog", "goat", "cat", "camel", "zebra", "leopard", "boar",
    "hyena", "moose", "panther",
];
const BIPED_NAMES: [&str; 8] = ["human", "chimpanzee", "gorilla", "gibbon", "orangutan", "bonobo", "baboon", "macaque"];

/// Deterministic species roster. Plans alternate, so half are tailless bipeds.
pub fn generate_synthetic_species(seed: u64, species_count: usize) -> Result<Vec<Species>> {
    if species_count < 2 {
        return Err(invalid("need at least two species"));
    }
    if species_count > QUADRUPED_NAMES.len() + BIPED_NAMES.len() {
        return Err(invalid("species count exceeds the name pool"));
    }
    let mut rng = rng::derive(seed, 0x5eed_5eed);
    let mut quads: Vec<&str> = QUADRUPED_NAMES.to_vec();
    let mut bipeds: Vec<&str> = BIPED_NAMES.to_vec();
    quads.shuffle(&mut rng);
    bipeds.shuffle(&mut rng);
    let n_bipeds = (species_count / 2).min(bipeds.len());
    let n_quads = species_count - n_bipeds;
    if n_quads > quads.len() {
        return Err(invalid("species count exceeds the name pool"));
    }
    let mut out = Vec::with_capacity(species_count);
    for i in 0..species_count {
        let plan = if i % 2 == 1 && i / 2 < n_bipeds { BodyPlan::Biped } else { BodyPlan::Quadruped };
        let name = match plan {
            BodyPlan::Biped => bipeds[i / 2],
            BodyPlan::Quadruped => quads.pop().expect("checked pool size"),
        };
        let bone_lengths = sample_morphology(plan, &mut rng);
        out.push(Species { name: name.to_string(), plan, bone_lengths });
    }
    Ok(out)
}

fn sample_morphology(plan: BodyPlan, rng: &mut SeededRng) -> BoneLengths {
    let s = rng::uniform(rng, 0.6, 1.25);
    let torso = rng::uniform(rng, 0.75, 1.3);
    let limb = rng::uniform(rng, 0.75, 1.3);
    let fore = rng::uniform(rng, 0.8, 1.2);
    let neck = rng::uniform(rng, 0.7, 1.4);
    let tail = rng::uniform(rng, 0.6, 1.6);
    let mut b = [0.0; NUM_BONES];
    match plan {
        BodyPlan::Biped => {
            for e in 0..3 {
                b[e] = 0.13 * s * torso;
            }
            b[3] = 0.1 * s * neck;
            b[4] = 0.12 * s;
            for side in [5, 9] {
                b[side] = 0.1 * s;
                b[side + 1] = 0.42 * s * limb;
                b[side + 2] = 0.4 * s * limb;
                b[side + 3] = 0.14 * s;
            }
            for side in [13, 17] {
                b[side] = 0.12 * s;
                b[side + 1] = 0.07 * s;
                b[side + 2] = 0.28 * s * fore;
                b[side + 3] = 0.25 * s * fore;
            }
        }
        BodyPlan::Quadruped => {
            for e in 0..3 {
                b[e] = 0.2 * s * torso;
            }
            b[3] = 0.22 * s * neck;
            b[4] = 0.18 * s;
            for side in [5, 9] {
                b[side] = 0.08 * s;
                b[side + 1] = 0.27 * s * limb;
                b[side + 2] = 0.25 * s * limb;
                b[side + 3] = 0.1 * s;
            }
            for side in [13, 17] {
                b[side] = 0.07 * s;
                b[side + 1] = 0.2 * s * limb * fore;
                b[side + 2] = 0.2 * s * limb * fore;
                b[side + 3] = 0.08 * s;
            }
            for e in TAIL_BONES {
                b[e] = 0.14 * s * tail;
            }
        }
    }
    for (e, v) in b.iter_mut().enumerate() {
        if !(plan == BodyPlan::Biped && TAIL_BONES.contains(&e)) {
            *v = v.clamp(MIN_BONE, MAX_BONE);
        }
    }
    BoneLengths(b)
}

/// Rest-pose bone directions for a body plan.
fn rest_directions(plan: BodyPlan) -> [Vec3; NUM_BONES] {
    let up = [0.0, 1.0, 0.0];
    let down = [0.0, -1.0, 0.0];
    let fwd = [0.0, 0.0, 1.0];
    let left = [-1.0, 0.0, 0.0];
    let right = [1.0, 0.0, 0.0];
    let s2 = core::f64::consts::FRAC_1_SQRT_2;
    let mut d = [[0.0; 3]; NUM_BONES];
    match plan {
        BodyPlan::Biped => {
            d[..5].copy_from_slice(&[up; 5]);
            d[5] = left;
            d[9] = right;
            d[13] = left;
            d[14] = left;
            d[17] = right;
            d[18] = right;
            for e in [15, 16, 19, 20] {
                d[e] = down;
            }
        }
        BodyPlan::Quadruped => {
            d[..3].copy_from_slice(&[fwd; 3]);
            d[3] = [0.0, s2, s2];
            d[4] = fwd;
            d[5] = left;
            d[9] = right;
            d[13] = left;
            d[17] = right;
            for e in [14, 15, 16, 18, 19, 20] {
                d[e] = down;
            }
        }
    }
    for e in [6, 7, 10, 11] {
        d[e] = down;
    }
    d[8] = fwd;
    d[12] = fwd;
    let tail = [0.0, -0.287_347_886_450_932_3, -0.957_826_288_169_774_3];
    for e in TAIL_BONES {
        d[e] = tail;
    }
    d
}

/// Rest pose joints for a plan; root at the origin.
fn rest_pose(plan: BodyPlan, b: &BoneLengths, topo: &SkeletonTopology) -> Joints {
    let dirs = rest_directions(plan);
    let mut joints = [[0.0; 3]; NUM_JOINTS];
    for &j in &topo.order()[1..] {
        let e = topo.bone_into(j).expect("bone");
        let p = topo.parent(j).expect("parent");
        joints[j] = geom::add(joints[p], geom::scale(dirs[e], b[e]));
    }
    joints
}

fn descendants(topo: &SkeletonTopology, joint: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for &j in topo.order() {
        let mut k = j;
        while let Some(p) = topo.parent(k) {
            if p == joint {
                out.push(j);
                break;
            }
            k = p;
        }
    }
    out
}

/// Rotates every descendant of `pivot` rigidly about the pivot joint.
fn rotate_subtree(joints: &mut Joints, subtree: &[usize], pivot: usize, rot: &Mat3) {
    let c = joints[pivot];
    for &j in subtree {
        joints[j] = geom::add(c, geom::mat_vec(rot, geom::sub(joints[j], c)));
    }
}

struct GaitParams {
    speed: f64,
    yaw_rate: f64,
    freq: f64,
    swing: f64,
    knee: f64,
    bob: f64,
}

fn gait_params(gait: Gait, leg: f64) -> GaitParams {
    let walk_speed = 0.015 + 0.03 * leg;
    match gait {
        Gait::Walk => GaitParams { speed: walk_speed, yaw_rate: 0.0, freq: 0.05, swing: 0.35, knee: 0.35, bob: 0.01 },
        Gait::Run => GaitParams { speed: 2.5 * walk_speed, yaw_rate: 0.0, freq: 0.09, swing: 0.7, knee: 0.8, bob: 0.03 },
        Gait::TurnLeft => GaitParams { speed: 0.6 * walk_speed, yaw_rate: 0.045, freq: 0.05, swing: 0.3, knee: 0.3, bob: 0.01 },
        Gait::TurnRight => GaitParams { speed: 0.6 * walk_speed, yaw_rate: -0.045, freq: 0.05, swing: 0.3, knee: 0.3, bob: 0.01 },
        Gait::Idle | Gait::RearUp => GaitParams { speed: 0.0, yaw_rate: 0.0, freq: 0.02, swing: 0.0, knee: 0.0, bob: 0.0 },
    }
}

/// Captions for a `(species, gait)` pair; synonyms vary per record.
pub fn caption_for(species: &str, gait: Gait, rng: &mut impl Rng) -> String {
    let phrases = gait.phrases();
    let phrase = phrases[rng.random_range(0..phrases.len())];
    let article = if rng.random::<bool>() { "a" } else { "the" };
    format!("{article} {species} {phrase}")
}

/// Individual variation applied on top of a species' base morphology: an
/// overall scale, one factor per body part (spine, neck and head, limbs,
/// tail) and a small per-bone factor.
fn individual_lengths(species: &Species, rng: &mut SeededRng) -> BoneLengths {
    let overall = rng::uniform(rng, 0.85, 1.15);
    let parts = [rng::uniform(rng, 0.9, 1.1), rng::uniform(rng, 0.9, 1.1), rng::uniform(rng, 0.9, 1.1), rng::uniform(rng, 0.85, 1.15)];
    let part_of = |e: usize| match e {
        0..=2 => 0,
        3 | 4 => 1,
        21..=23 => 3,
        _ => 2,
    };
    let mut b = species.bone_lengths;
    for (e, v) in b.iter_mut().enumerate() {
        if *v > 0.0 {
            *v = (*v * overall * parts[part_of(e)] * rng::uniform(rng, 0.97, 1.03)).clamp(MIN_BONE, MAX_BONE);
        }
    }
    b
}

/// Procedural motion for one species and gait.
pub fn generate_gait(species: &Species, gait: Gait, len: usize, seed: u64, topo: &SkeletonTopology) -> Result<MotionRecord> {
    if !(MIN_LEN_EXCLUSIVE < len && len < MAX_LEN_EXCLUSIVE) {
        return Err(invalid(format!("length {len} outside (18, 300)")));
    }
    let mut rng = rng::derive(seed, 0x6a17);
    let b = individual_lengths(species, &mut rng);
    let rest = rest_pose(species.plan, &b, topo);
    let leg = b[6] + b[7];
    let height = leg;
    let p = gait_params(gait, leg);
    let phase0 = rng::uniform(&mut rng, 0.0, 2.0 * PI);
    let freq = p.freq * rng::uniform(&mut rng, 0.9, 1.1);
    let speed = p.speed * rng::uniform(&mut rng, 0.9, 1.1);
    let yaw_rate = p.yaw_rate * rng::uniform(&mut rng, 0.85, 1.15);
    let yaw0 = rng::uniform(&mut rng, -PI, PI);
    let start = [rng::uniform(&mut rng, -1.0, 1.0), rng::uniform(&mut rng, -1.0, 1.0)];

    let sub: Vec<Vec<usize>> = (0..NUM_JOINTS).map(|j| descendants(topo, j)).collect();
    let front: Vec<usize> = descendants(topo, 0).into_iter().filter(|j| !matches!(j, 6..=13 | 22..=24)).collect();

    let mut frames = Vec::with_capacity(len);
    let mut yaws = Vec::with_capacity(len);
    let (mut x, mut z, mut yaw) = (start[0], start[1], yaw0);
    for t in 0..len {
        let tf = t as f64;
        let phi = phase0 + 2.0 * PI * freq * tf;
        let mut pose = rest;
        let (left_hind, right_hind) = (phi, phi + PI);
        // Diagonal pairs for quadrupeds; arms counter-swing for bipeds.
        let (left_fore, right_fore) = (phi + PI, phi);
        let bend = |a: f64| p.knee * 0.5 * (1.0 - math::cos(a));
        rotate_subtree(&mut pose, &sub[7], 7, &geom::rot_x(-bend(left_hind)));
        rotate_subtree(&mut pose, &sub[11], 11, &geom::rot_x(-bend(right_hind)));
        rotate_subtree(&mut pose, &sub[6], 6, &geom::rot_x(p.swing * math::sin(left_hind)));
        rotate_subtree(&mut pose, &sub[10], 10, &geom::rot_x(p.swing * math::sin(right_hind)));
        let fore_scale = if species.plan == BodyPlan::Quadruped { 1.0 } else { 0.6 };
        rotate_subtree(&mut pose, &sub[16], 16, &geom::rot_x(bend(left_fore) * fore_scale));
        rotate_subtree(&mut pose, &sub[20], 20, &geom::rot_x(bend(right_fore) * fore_scale));
        rotate_subtree(&mut pose, &sub[15], 15, &geom::rot_x(fore_scale * p.swing * math::sin(left_fore)));
        rotate_subtree(&mut pose, &sub[19], 19, &geom::rot_x(fore_scale * p.swing * math::sin(right_fore)));

        let breathe = 0.03 * math::sin(0.12 * tf + phase0);
        rotate_subtree(&mut pose, &sub[4], 4, &geom::rot_x(breathe));
        if species.plan == BodyPlan::Quadruped {
            let sway = if gait == Gait::Idle { 0.3 } else { 0.2 };
            rotate_subtree(&mut pose, &sub[22], 22, &geom::rot_y(sway * math::sin(phi * 0.5 + 1.0)));
        }
        if gait == Gait::RearUp {
            let ramp = (tf / (0.5 * len as f64)).min(1.0);
            let lift = 0.5 * (1.0 - math::cos(PI * ramp));
            match species.plan {
                BodyPlan::Quadruped => {
                    rotate_subtree(&mut pose, &front, 0, &geom::rot_x(-lift));
                    rotate_subtree(&mut pose, &sub[15], 15, &geom::rot_x(-0.8 * lift));
                    rotate_subtree(&mut pose, &sub[19], 19, &geom::rot_x(-0.8 * lift));
                }
                BodyPlan::Biped => {
                    rotate_subtree(&mut pose, &sub[15], 15, &geom::rot_z(2.6 * lift));
                    rotate_subtree(&mut pose, &sub[19], 19, &geom::rot_z(-2.6 * lift));
                    rotate_subtree(&mut pose, &front, 0, &geom::rot_x(-0.2 * lift));
                }
            }
        }

        let root_y = height + p.bob * math::cos(2.0 * phi);
        let rot = geom::rot_y(yaw);
        let root: Vec3 = [x, root_y, z];
        let world: Joints = core::array::from_fn(|j| geom::add(root, geom::mat_vec(&rot, pose[j])));
        frames.push(world);
        yaws.push(yaw);
        let (dx, dz) = geom::yaw_xz(yaw, 0.0, speed);
        x += dx;
        z += dz;
        yaw += yaw_rate;
    }
    let motion = encode_features(&GlobalMotion { joints: frames, root_yaw: yaws }, topo)?.quantized();
    let captions = (0..3).map(|_| caption_for(&species.name, gait, &mut rng)).collect();
    Ok(MotionRecord { motion, captions, species_name: species.name.clone(), tpose_bone_lengths: b })
}

/// Random world-space trajectory of a rigid skeleton with random bone
/// lengths: wandering root path and heading, bobbing height, plus small
/// independent joint jitter so the local frames are not constant.
pub fn random_trajectory(seed: u64, len: usize, topo: &SkeletonTopology) -> Result<GlobalMotion> {
    let mut r = rng::seeded(seed);
    let mut b = [0.0; NUM_BONES];
    b.iter_mut().for_each(|x| *x = r.random_range(0.0..0.5));
    let rest = forward_kinematics_tpose(&BoneLengths(b), topo)?.joints;
    let (mut yaw, mut x, mut z) = (r.random_range(-3.0..3.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
    let mut joints = Vec::with_capacity(len);
    let mut root_yaw = Vec::with_capacity(len);
    for t in 0..len {
        let root = [x, 0.5 + 0.1 * math::sin(0.3 * t as f64), z];
        let rot = geom::rot_y(yaw);
        let mut f = rest;
        for p in f.iter_mut() {
            *p = geom::add(root, geom::mat_vec(&rot, *p));
        }
        for p in f.iter_mut().skip(1) {
            p.iter_mut().for_each(|c| *c += 0.01 * rng::normal(&mut r));
        }
        joints.push(f);
        root_yaw.push(yaw);
        yaw += r.random_range(-0.1..0.1);
        x += r.random_range(-0.05..0.05);
        z += r.random_range(-0.05..0.05);
    }
    Ok(GlobalMotion { joints, root_yaw })
}

/// Shape of a procedurally generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyDatasetConfig {
    pub seed: u64,
    pub species_count: usize,
    pub records_per_gait: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for ToyDatasetConfig {
    fn default() -> Self {
        Self { seed: 0, species_count: 8, records_per_gait: 25, min_len: 40, max_len: 96 }
    }
}

/// Species roster plus every `(species, gait, k)` record.
pub fn build_toy_dataset(cfg: &ToyDatasetConfig, topo: &SkeletonTopology) -> Result<(Vec<Species>, Vec<MotionRecord>)> {
    if cfg.min_len > cfg.max_len {
        return Err(invalid("min_len exceeds max_len"));
    }
    let species = generate_synthetic_species(cfg.seed, cfg.species_count)?;
    let mut records = Vec::new();
    for (si, sp) in species.iter().enumerate() {
        for (gi, &gait) in Gait::ALL.iter().enumerate() {
            for k in 0..cfg.records_per_gait {
                let stream = ((si as u64) << 32) | ((gi as u64) << 16) | k as u64;
                let mut r = rng::derive(cfg.seed, stream);
                let len = r.random_range(cfg.min_len..=cfg.max_len);
                records.push(generate_gait(sp, gait, len, r.random(), topo)?);
            }
        }
    }
    Ok((species, records))
}

/// Keeps records with `18 < L < 300`, preserving order.
pub fn filter_by_length(records: Vec<MotionRecord>) -> Vec<MotionRecord> {
    records
        .into_iter()
        .filter(|r| MIN_LEN_EXCLUSIVE < r.motion.len() && r.motion.len() < MAX_LEN_EXCLUSIVE)
        .collect()
}

/// Record indices per split.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub unseen_test: Vec<usize>,
}

/// Holds out every record of `holdout_species`, then shuffles the rest and
/// cuts 80 / 5 / 15 (floors for train and val, remainder to test). Each
/// list is in ascending order.
pub fn make_splits(records: &[MotionRecord], holdout_species: &[String], seed: u64) -> Result<DatasetSplit> {
    for h in holdout_species {
        if !records.iter().any(|r| &r.species_name == h) {
            return Err(Error::UnknownSpecies(h.clone()));
        }
    }
    let mut seen = Vec::new();
    let mut unseen = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if holdout_species.contains(&r.species_name) {
            unseen.push(i);
        } else {
            seen.push(i);
        }
    }
    seen.shuffle(&mut rng::derive(seed, 0x5911));
    let n = seen.len();
    let n_train = n * 80 / 100;
    let n_val = n * 5 / 100;
    let mut test = seen.split_off(n_train + n_val);
    let mut val = seen.split_off(n_train);
    // Ascending ids, so a split rebuilt from its manifest is identical.
    for part in [&mut seen, &mut val, &mut test] {
        part.sort_unstable();
    }
    Ok(DatasetSplit { train: seen, val, test, unseen_test: unseen })
}

/// Species names in first-appearance order.
pub fn species_names(records: &[MotionRecord]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in records {
        if !out.contains(&r.species_name) {
            out.push(r.species_name.clone());
        }
    }
    out
}

/// Gait named in a caption, recovered from its phrase.
pub fn gait_of_caption(caption: &str) -> Option<Gait> {
    Gait::ALL.into_iter().find(|g| g.phrases().iter().any(|p| caption.ends_with(p)))
}

pub fn all_gait_captions(species: &str) -> Vec<(Gait, String)> {
    Gait::ALL
        .iter()
        .flat_map(|&g| g.phrases().iter().map(move |p| (g, format!("the {species} {p}"))))
        .collect()
}

pub fn records_of<'a>(records: &'a [MotionRecord], ids: &'a [usize]) -> impl Iterator<Item = &'a MotionRecord> {
    ids.iter().map(move |&i| &records[i])
}

pub fn empty_split() -> DatasetSplit {
    DatasetSplit { train: vec![], val: vec![], test: vec![], unseen_test: vec![] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{bone_lengths_per_frame, decode_to_global, LIN_VEL_X, LIN_VEL_Z};
    use crate::skeleton::canonical_topology;

    #[test]
    fn species_are_deterministic_and_in_range() {
        let a = generate_synthetic_species(0, 8).unwrap();
        let b = generate_synthetic_species(0, 8).unwrap();
        assert_eq!(a, b);
        for (i, s) in a.iter().enumerate() {
            for t in &a[i + 1..] {
                assert_ne!(s.bone_lengths, t.bone_lengths);
                assert_ne!(s.name, t.name);
            }
            assert!(s.bone_lengths.iter().all(|&v| (0.0..=0.8).contains(&v)));
            if s.plan == BodyPlan::Biped {
                assert!(TAIL_BONES.iter().all(|&e| s.bone_lengths[e] == 0.0));
            }
        }
        assert_eq!(a.iter().filter(|s| s.plan == BodyPlan::Biped).count(), 4);
        assert!(generate_synthetic_species(0, 1).is_err());
    }

    #[test]
    fn idle_has_no_root_motion() {
        let topo = canonical_topology();
        let sp = &generate_synthetic_species(3, 4).unwrap()[0];
        let r = generate_gait(sp, Gait::Idle, 40, 1, &topo).unwrap();
        for t in 0..40 {
            assert!(r.motion.frame(t)[LIN_VEL_X].abs() < 1e-6);
            assert!(r.motion.frame(t)[LIN_VEL_Z].abs() < 1e-6);
        }
    }

    #[test]
    fn walk_is_rigid() {
        let topo = canonical_topology();
        for sp in generate_synthetic_species(1, 4).unwrap() {
            for gait in Gait::ALL {
                let r = generate_gait(&sp, gait, 60, 7, &topo).unwrap();
                let b = bone_lengths_per_frame(&r.motion, &topo);
                for t in 0..60 {
                    for e in 0..NUM_BONES {
                        assert!((b.get(t, e) - r.tpose_bone_lengths[e]).abs() <= 1e-6, "{} {:?} t={t} e={e}", sp.name, gait);
                    }
                }
                assert!(r.captions.iter().all(|c| c.contains(&sp.name)));
                assert!(r.captions.iter().all(|c| gait_of_caption(c) == Some(gait)));
            }
        }
    }

    #[test]
    fn turn_left_yaw_increases() {
        let topo = canonical_topology();
        let sp = &generate_synthetic_species(2, 2).unwrap()[0];
        let r = generate_gait(sp, Gait::TurnLeft, 50, 3, &topo).unwrap();
        let g = decode_to_global(&r.motion, 0.0, [0.0, 0.0]);
        assert!(g.root_yaw.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn invalid_length_rejected() {
        let topo = canonical_topology();
        let sp = &generate_synthetic_species(2, 2).unwrap()[0];
        assert!(generate_gait(sp, Gait::Walk, 18, 0, &topo).is_err());
        assert!(generate_gait(sp, Gait::Walk, 300, 0, &topo).is_err());
        assert!(generate_gait(sp, Gait::Walk, 19, 0, &topo).is_ok());
    }

    fn record_of_len(len: usize) -> MotionRecord {
        MotionRecord {
            motion: MotionSequence::new(crate::Matrix::zeros(len, crate::features::FRAME_DIM)).unwrap(),
            captions: vec!["x".into()],
            species_name: "s".into(),
            tpose_bone_lengths: BoneLengths::zeros(),
        }
    }

    #[test]
    fn length_filter_boundaries() {
        let kept: Vec<usize> =
            filter_by_length([18, 19, 299, 300].map(record_of_len).to_vec()).iter().map(|r| r.motion.len()).collect();
        assert_eq!(kept, vec![19, 299]);
        assert!(filter_by_length(Vec::new()).is_empty());
    }

    #[test]
    fn split_proportions_and_holdout() {
        let mut records: Vec<MotionRecord> = (0..100).map(|_| record_of_len(30)).collect();
        for k in 0..7 {
            let mut r = record_of_len(30);
            r.species_name = "held".into();
            records.push(r);
            let _ = k;
        }
        let s = make_splits(&records, &["held".into()], 4).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len(), s.unseen_test.len()), (80, 5, 15, 7));
        assert_eq!(s, make_splits(&records, &["held".into()], 4).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(make_splits(&records, &[], 4).unwrap().unseen_test.is_empty());
        assert_eq!(
            make_splits(&records, &["nobody".into()], 4),
            Err(Error::UnknownSpecies("nobody".into()))
        );
    }
}
