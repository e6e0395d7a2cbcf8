//! The 76-wide per-frame feature layout and its conversions.
//!
//! Frame layout: `[root_rot_vel, root_lin_vel_x, root_lin_vel_z, root_height,
//! joint1.xyz, …, joint24.xyz]`. Joint positions are relative to the root and
//! expressed in the yaw-aligned root frame; velocities are per frame.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::geom::{self, Vec3};
use crate::skeleton::{frame_bone_lengths, Joints, SkeletonTopology, NUM_BONES, NUM_JOINTS};
use crate::tensor::Matrix;

pub const FRAME_DIM: usize = NUM_JOINTS * 3 + 1;
pub const ROOT_DIMS: usize = 4;
pub const ROT_VEL: usize = 0;
pub const LIN_VEL_X: usize = 1;
pub const LIN_VEL_Z: usize = 2;
pub const HEIGHT: usize = 3;
pub const STD_FLOOR: f64 = 1e-6;

/// Column offset of joint `j` (1..25) in a frame.
#[inline]
pub const fn joint_col(j: usize) -> usize {
    ROOT_DIMS + (j - 1) * 3
}

/// An `L × 76` feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    frames: Matrix,
}

impl MotionSequence {
    pub fn new(frames: Matrix) -> Result<Self> {
        if frames.cols() != FRAME_DIM {
            return Err(invalid(format!("frames must be {FRAME_DIM} wide, got {}", frames.cols())));
        }
        if frames.rows() == 0 {
            return Err(Error::TooShort { min: 1, got: 0 });
        }
        if !frames.is_finite() {
            return Err(Error::NonFinite("motion frames".into()));
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn frames(&self) -> &Matrix {
        &self.frames
    }

    pub fn into_frames(self) -> Matrix {
        self.frames
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.frames.row(t)
    }

    /// All 25 joints of frame `t` in the root-local frame, root at `(0, h, 0)`.
    pub fn local_joints(&self, t: usize) -> Joints {
        local_joints_of(self.frames.row(t))
    }

    /// Rounds every value through `f32`, the storage precision of containers.
    pub fn quantized(&self) -> Self {
        Self { frames: self.frames.map(|v| v as f32 as f64) }
    }
}

pub fn local_joints_of(frame: &[f64]) -> Joints {
    let h = frame[HEIGHT];
    let mut joints = [[0.0, h, 0.0]; NUM_JOINTS];
    for (j, out) in joints.iter_mut().enumerate().skip(1) {
        let c = joint_col(j);
        *out = [frame[c], frame[c + 1] + h, frame[c + 2]];
    }
    joints
}

/// World-space joint trajectories plus root heading.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalMotion {
    pub joints: Vec<Joints>,
    pub root_yaw: Vec<f64>,
}

impl GlobalMotion {
    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn max_joint_error(&self, other: &GlobalMotion) -> f64 {
        self.joints
            .iter()
            .zip(&other.joints)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(p, q)| geom::norm(geom::sub(*p, *q))))
            .fold(0.0, f64::max)
    }
}

pub fn encode_features(global: &GlobalMotion, _topo: &SkeletonTopology) -> Result<MotionSequence> {
    let len = global.len();
    if len < 2 {
        return Err(Error::TooShort { min: 2, got: len });
    }
    if global.root_yaw.len() != len {
        return Err(invalid("root_yaw length differs from frame count"));
    }
    let mut frames = Matrix::zeros(len, FRAME_DIM);
    for t in 0..len {
        let yaw = global.root_yaw[t];
        let root = global.joints[t][0];
        // velocities of the final frame repeat the previous one
        let (a, b) = if t + 1 < len { (t, t + 1) } else { (t - 1, t) };
        let rot_vel = global.root_yaw[b] - global.root_yaw[a];
        let d = geom::sub(global.joints[b][0], global.joints[a][0]);
        let (vx, vz) = geom::yaw_xz(-global.root_yaw[a], d[0], d[2]);
        let row = frames.row_mut(t);
        row[ROT_VEL] = rot_vel;
        row[LIN_VEL_X] = vx;
        row[LIN_VEL_Z] = vz;
        row[HEIGHT] = root[1];
        for j in 1..NUM_JOINTS {
            let rel = geom::sub(global.joints[t][j], root);
            let (x, z) = geom::yaw_xz(-yaw, rel[0], rel[2]);
            let c = joint_col(j);
            row[c] = x;
            row[c + 1] = rel[1];
            row[c + 2] = z;
        }
    }
    MotionSequence::new(frames)
}

/// Integrates root velocities from the given start heading and position.
pub fn decode_to_global(seq: &MotionSequence, initial_yaw: f64, initial_xz: [f64; 2]) -> GlobalMotion {
    let len = seq.len();
    let mut joints = Vec::with_capacity(len);
    let mut root_yaw = Vec::with_capacity(len);
    let mut yaw = initial_yaw;
    let (mut x, mut z) = (initial_xz[0], initial_xz[1]);
    for t in 0..len {
        let row = seq.frame(t);
        let root: Vec3 = [x, row[HEIGHT], z];
        let mut frame = [root; NUM_JOINTS];
        for (j, out) in frame.iter_mut().enumerate().skip(1) {
            let c = joint_col(j);
            let (wx, wz) = geom::yaw_xz(yaw, row[c], row[c + 2]);
            *out = [root[0] + wx, root[1] + row[c + 1], root[2] + wz];
        }
        joints.push(frame);
        root_yaw.push(yaw);
        let (dx, dz) = geom::yaw_xz(yaw, row[LIN_VEL_X], row[LIN_VEL_Z]);
        x += dx;
        z += dz;
        yaw += row[ROT_VEL];
    }
    GlobalMotion { joints, root_yaw }
}

/// `L × 24` bone lengths, one row per frame.
pub fn bone_lengths_per_frame(seq: &MotionSequence, topo: &SkeletonTopology) -> Matrix {
    let mut out = Matrix::zeros(seq.len(), NUM_BONES);
    for t in 0..seq.len() {
        let b = frame_bone_lengths(&seq.local_joints(t), topo).expect("sequence values are finite");
        out.row_mut(t).copy_from_slice(&b.0);
    }
    out
}

/// Linear map `76 → 72` taking a frame to the stacked `child − parent`
/// offsets of every bone. Root joint coordinates are the origin in the local
/// frame, so root features never enter.
pub fn bone_offset_operator(topo: &SkeletonTopology) -> Matrix {
    let mut m = Matrix::zeros(FRAME_DIM, NUM_BONES * 3);
    for (e, &(p, c)) in topo.bone_edges().iter().enumerate() {
        for k in 0..3 {
            m.set(joint_col(c) + k, e * 3 + k, 1.0);
            if p != 0 {
                m.set(joint_col(p) + k, e * 3 + k, -1.0);
            }
        }
    }
    m
}

/// Sums consecutive coordinate triples: `72 → 24`.
pub fn triple_sum_operator() -> Matrix {
    Matrix::from_fn(NUM_BONES * 3, NUM_BONES, |r, c| if r / 3 == c { 1.0 } else { 0.0 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Stats that leave features untouched.
    pub fn identity() -> Self {
        Self { mean: alloc::vec![0.0; FRAME_DIM], std: alloc::vec![1.0; FRAME_DIM] }
    }

    pub fn normalize(&self, seq: &MotionSequence) -> MotionSequence {
        let mut f = seq.frames.clone();
        for t in 0..f.rows() {
            for (c, v) in f.row_mut(t).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        MotionSequence { frames: f }
    }

    pub fn denormalize(&self, seq: &MotionSequence) -> MotionSequence {
        MotionSequence { frames: self.denormalize_matrix(&seq.frames) }
    }

    pub fn denormalize_matrix(&self, frames: &Matrix) -> Matrix {
        let mut f = frames.clone();
        for t in 0..f.rows() {
            for (c, v) in f.row_mut(t).iter_mut().enumerate() {
                *v = *v * self.std[c] + self.mean[c];
            }
        }
        f
    }
}

/// Per-dimension mean and (population) standard deviation over every frame.
pub fn compute_norm_stats<'a>(dataset: impl IntoIterator<Item = &'a MotionSequence>) -> Result<NormStats> {
    let mut sum = [0.0; FRAME_DIM];
    let mut count = 0usize;
    let seqs: Vec<&MotionSequence> = dataset.into_iter().collect();
    for s in &seqs {
        for t in 0..s.len() {
            for (a, v) in sum.iter_mut().zip(s.frame(t)) {
                *a += v;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = [0.0; FRAME_DIM];
    for s in &seqs {
        for t in 0..s.len() {
            for ((a, v), m) in sq.iter_mut().zip(s.frame(t)).zip(&mean) {
                *a += (v - m) * (v - m);
            }
        }
    }
    let std = sq.iter().map(|s| crate::math::sqrt(s / count as f64).max(STD_FLOOR)).collect();
    Ok(NormStats { mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{canonical_topology, forward_kinematics_tpose, BoneLengths};
    use core::f64::consts::PI;

    fn tpose_joints() -> Joints {
        let mut b = BoneLengths([0.3; 24]);
        b[21] = 0.0;
        forward_kinematics_tpose(&b, &canonical_topology()).unwrap().joints
    }

    fn walk(len: usize, speed: f64) -> GlobalMotion {
        let rest = tpose_joints();
        let joints = (0..len)
            .map(|t| {
                let mut f = rest;
                for j in f.iter_mut() {
                    j[1] += 1.0;
                    j[2] += speed * t as f64;
                }
                f
            })
            .collect();
        GlobalMotion { joints, root_yaw: alloc::vec![0.0; len] }
    }

    #[test]
    fn stationary_skeleton() {
        let topo = canonical_topology();
        let seq = encode_features(&walk(10, 0.0), &topo).unwrap();
        for t in 0..10 {
            let f = seq.frame(t);
            assert_eq!(&f[..3], &[0.0, 0.0, 0.0]);
            assert_eq!(f[HEIGHT], 1.0);
            assert_eq!(&f[4..], &seq.frame(0)[4..]);
        }
    }

    #[test]
    fn forward_walk_velocity() {
        let seq = encode_features(&walk(12, 0.1), &canonical_topology()).unwrap();
        for t in 0..12 {
            assert!((seq.frame(t)[LIN_VEL_X]).abs() < 1e-15);
            assert!((seq.frame(t)[LIN_VEL_Z] - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn too_short() {
        assert_eq!(
            encode_features(&walk(1, 0.0), &canonical_topology()),
            Err(Error::TooShort { min: 2, got: 1 })
        );
    }

    #[test]
    fn zero_features_pin_everything() {
        let seq = MotionSequence::new(Matrix::zeros(5, FRAME_DIM)).unwrap();
        let g = decode_to_global(&seq, 0.0, [0.0, 0.0]);
        assert!(g.joints.iter().flatten().all(|p| *p == [0.0; 3]));
        assert!(g.root_yaw.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn constant_turn_accumulates() {
        let mut f = Matrix::zeros(100, FRAME_DIM);
        for t in 0..100 {
            f.set(t, ROT_VEL, PI / 50.0);
        }
        let g = decode_to_global(&MotionSequence::new(f).unwrap(), 0.25, [0.0, 0.0]);
        assert!((g.root_yaw[99] - (2.0 * PI * 0.99 + 0.25)).abs() < 1e-12);
    }

    #[test]
    fn round_trip_curved_path() {
        let topo = canonical_topology();
        let rest = tpose_joints();
        let len = 50;
        let mut joints = Vec::new();
        let mut yaws = Vec::new();
        for t in 0..len {
            let yaw = 0.3 + 0.05 * t as f64 + 0.2 * (t as f64 * 0.3).sin();
            let root = [0.02 * t as f64, 0.9 + 0.05 * (t as f64).cos(), (t as f64 * 0.1).sin()];
            let rot = geom::rot_y(yaw);
            let mut f = rest;
            for (j, p) in f.iter_mut().enumerate() {
                *p = geom::add(root, geom::mat_vec(&rot, rest[j]));
            }
            joints.push(f);
            yaws.push(yaw);
        }
        let g = GlobalMotion { joints, root_yaw: yaws };
        let seq = encode_features(&g, &topo).unwrap();
        let back = decode_to_global(&seq, g.root_yaw[0], [g.joints[0][0][0], g.joints[0][0][2]]);
        assert!(g.max_joint_error(&back) <= 1e-6 * len as f64);
    }

    #[test]
    fn bone_lengths_track_local_joints() {
        let topo = canonical_topology();
        let seq = encode_features(&walk(6, 0.1), &topo).unwrap();
        let b = bone_lengths_per_frame(&seq, &topo);
        for t in 0..6 {
            assert!(b.row(t).iter().enumerate().all(|(e, &l)| (l - if e == 21 { 0.0 } else { 0.3 }).abs() < 1e-12));
        }
        // Displace the left knee (joint 7) in one frame: bones 6 (hip->knee) and 7 (knee->ankle) change.
        let mut f = seq.frames().clone();
        f.set(3, joint_col(7), f.get(3, joint_col(7)) + 0.1);
        let moved = bone_lengths_per_frame(&MotionSequence::new(f).unwrap(), &topo);
        let changed: Vec<usize> = (0..24).filter(|&e| (moved.get(3, e) - b.get(3, e)).abs() > 1e-12).collect();
        assert_eq!(changed, alloc::vec![6, 7]);
    }

    #[test]
    fn offset_operator_matches_direct_bone_lengths() {
        let topo = canonical_topology();
        let seq = encode_features(&walk(4, 0.05), &topo).unwrap();
        let off = seq.frames().matmul(&bone_offset_operator(&topo));
        let sq = off.map(|v| v * v).matmul(&triple_sum_operator()).map(crate::math::sqrt);
        assert!(sq.sub(&bone_lengths_per_frame(&seq, &topo)).max_abs() < 1e-12);
    }

    #[test]
    fn norm_stats_examples() {
        let topo = canonical_topology();
        let a = encode_features(&walk(8, 0.0), &topo).unwrap();
        let s = compute_norm_stats([&a]).unwrap();
        assert!(s.mean.iter().zip(a.frame(0)).all(|(m, v)| (m - v).abs() < 1e-15));
        assert!(s.std.iter().all(|&v| v == STD_FLOOR));
        assert_eq!(compute_norm_stats(core::iter::empty()), Err(Error::EmptyDataset));

        let b = encode_features(&walk(5, 0.3), &topo).unwrap();
        let s = compute_norm_stats([&a, &b]).unwrap();
        // flatten-and-average oracle
        let rows: Vec<&[f64]> = (0..8).map(|t| a.frame(t)).chain((0..5).map(|t| b.frame(t))).collect();
        for c in 0..FRAME_DIM {
            let m = rows.iter().map(|r| r[c]).sum::<f64>() / 13.0;
            let v = rows.iter().map(|r| (r[c] - m).powi(2)).sum::<f64>() / 13.0;
            assert!((s.mean[c] - m).abs() < 1e-12);
            assert!((s.std[c] - v.sqrt().max(STD_FLOOR)).abs() < 1e-12);
        }
        let back = s.denormalize(&s.normalize(&b));
        assert!(back.frames().sub(b.frames()).max_abs() <= 1e-9);
    }
}
