//! The unified 25-joint skeleton: topology, bone lengths, forward kinematics
//! and retargeting of foreign skeletons onto it.
//!
//! Joint layout: 0 pelvis, 1–3 spine, 4 neck, 5 head, 6–9 left leg (hip,
//! knee, ankle, foot), 10–13 right leg, 14–17 left arm or foreleg (scapula,
//! shoulder, elbow, wrist), 18–21 right arm or foreleg, 22–24 tail. Bone `e`
//! always ends at joint `e + 1` in the canonical tree.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use crate::error::{invalid, Error, Result};
use crate::geom::{self, Vec3};

pub const NUM_JOINTS: usize = 25;
pub const NUM_BONES: usize = 24;
pub const PELVIS: usize = 0;
pub const TAIL_JOINTS: [usize; 3] = [22, 23, 24];
/// Bone indices (in canonical edge order) of the tail chain.
pub const TAIL_BONES: [usize; 3] = [21, 22, 23];

/// One pose of the unified skeleton.
pub type Joints = [Vec3; NUM_JOINTS];

const CANONICAL_NAMES: [&str; NUM_JOINTS] = [
    "pelvis", "spine1", "spine2", "spine3", "neck", "head",
    "left_hip", "left_knee", "left_ankle", "left_foot",
    "right_hip", "right_knee", "right_ankle", "right_foot",
    "left_scapula", "left_shoulder", "left_elbow", "left_wrist",
    "right_scapula", "right_shoulder", "right_elbow", "right_wrist",
    "tail1", "tail2", "tail3",
];

const CANONICAL_PARENTS: [i32; NUM_JOINTS] =
    [-1, 0, 1, 2, 3, 4, 0, 6, 7, 8, 0, 10, 11, 12, 3, 14, 15, 16, 3, 18, 19, 20, 0, 22, 23];

const UP: Vec3 = [0.0, 1.0, 0.0];
const DOWN: Vec3 = [0.0, -1.0, 0.0];
const FORWARD: Vec3 = [0.0, 0.0, 1.0];
const BACK: Vec3 = [0.0, 0.0, -1.0];
const LEFT: Vec3 = [-1.0, 0.0, 0.0];
const RIGHT: Vec3 = [1.0, 0.0, 0.0];

const CANONICAL_DIRECTIONS: [Vec3; NUM_BONES] = [
    UP, UP, UP, UP, UP, // spine, neck, head
    DOWN, DOWN, DOWN, FORWARD, // left leg
    DOWN, DOWN, DOWN, FORWARD, // right leg
    LEFT, LEFT, LEFT, LEFT, // left arm
    RIGHT, RIGHT, RIGHT, RIGHT, // right arm
    BACK, BACK, BACK, // tail
];

#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonTopology {
    joint_names: Vec<String>,
    parents: Vec<Option<usize>>,
    bone_edges: Vec<(usize, usize)>,
    bone_directions: Vec<Vec3>,
    /// Joints in an order where every parent precedes its children.
    order: Vec<usize>,
}

/// The single canonical topology every dataset is retargeted onto.
pub fn canonical_topology() -> SkeletonTopology {
    SkeletonTopology::new(
        CANONICAL_NAMES.iter().map(|s| s.to_string()).collect(),
        CANONICAL_PARENTS.to_vec(),
        CANONICAL_DIRECTIONS.to_vec(),
    )
    .expect("canonical topology is valid")
}

impl SkeletonTopology {
    /// Builds and validates a topology. Parents use `-1` for the root; bone
    /// `e` runs from `parent(c)` to the `e`-th non-root joint `c` in index order.
    pub fn new(joint_names: Vec<String>, parent_index: Vec<i32>, bone_directions: Vec<Vec3>) -> Result<Self> {
        if joint_names.len() != NUM_JOINTS || parent_index.len() != NUM_JOINTS {
            return Err(invalid(format!("expected {NUM_JOINTS} joints")));
        }
        if bone_directions.len() != NUM_BONES {
            return Err(invalid(format!("expected {NUM_BONES} bone directions")));
        }
        let mut parents = Vec::with_capacity(NUM_JOINTS);
        let mut root = None;
        for (j, &p) in parent_index.iter().enumerate() {
            if p == -1 {
                if root.replace(j).is_some() {
                    return Err(invalid("more than one root joint"));
                }
                parents.push(None);
            } else if p < 0 || p as usize >= NUM_JOINTS || p as usize == j {
                return Err(invalid(format!("joint {j} has invalid parent {p}")));
            } else {
                parents.push(Some(p as usize));
            }
        }
        let root = root.ok_or_else(|| invalid("no root joint"))?;
        if root != PELVIS {
            return Err(invalid("root must be joint 0"));
        }
        let bone_edges: Vec<(usize, usize)> =
            (0..NUM_JOINTS).filter_map(|c| parents[c].map(|p| (p, c))).collect();

        // Breadth-first from the root; a tree visits every joint exactly once.
        let mut order = vec![root];
        let mut seen = [false; NUM_JOINTS];
        seen[root] = true;
        let mut head = 0;
        while head < order.len() {
            let j = order[head];
            head += 1;
            for c in 0..NUM_JOINTS {
                if parents[c] == Some(j) && !seen[c] {
                    seen[c] = true;
                    order.push(c);
                }
            }
        }
        if order.len() != NUM_JOINTS {
            return Err(invalid("parent indices do not form a single tree"));
        }
        for (e, d) in bone_directions.iter().enumerate() {
            if !d.iter().all(|v| v.is_finite()) || (geom::norm(*d) - 1.0).abs() > 1e-9 {
                return Err(invalid(format!("bone direction {e} is not a unit vector")));
            }
        }
        Ok(Self { joint_names, parents, bone_edges, bone_directions, order })
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    /// Parent indices with `-1` for the root.
    pub fn parent_index(&self) -> Vec<i32> {
        self.parents.iter().map(|p| p.map_or(-1, |p| p as i32)).collect()
    }

    pub fn bone_edges(&self) -> &[(usize, usize)] {
        &self.bone_edges
    }

    pub fn bone_directions(&self) -> &[Vec3] {
        &self.bone_directions
    }

    /// Root-first traversal order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Bone index ending at `joint`, if any.
    pub fn bone_into(&self, joint: usize) -> Option<usize> {
        self.bone_edges.iter().position(|&(_, c)| c == joint)
    }
}

/// Per-bone lengths in metres, in `bone_edges` order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoneLengths(pub [f64; NUM_BONES]);

impl BoneLengths {
    pub fn zeros() -> Self {
        Self([0.0; NUM_BONES])
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != NUM_BONES {
            return Err(invalid(format!("expected {NUM_BONES} bone lengths, got {}", v.len())));
        }
        let mut out = [0.0; NUM_BONES];
        out.copy_from_slice(v);
        Ok(Self(out))
    }

    pub fn validate(&self) -> Result<()> {
        for (e, &l) in self.0.iter().enumerate() {
            if !l.is_finite() {
                return Err(Error::NonFinite(format!("bone length {e}")));
            }
            if l < 0.0 {
                return Err(invalid(format!("bone {e} has negative length {l}")));
            }
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

impl Deref for BoneLengths {
    type Target = [f64; NUM_BONES];
    fn deref(&self) -> &Self::Target {
        &self.0
    }
}

impl DerefMut for BoneLengths {
    fn deref_mut(&mut self) -> &mut Self::Target {
        &mut self.0
    }
}

/// Canonical rest pose; joint 0 sits at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct TPose {
    pub joints: Joints,
}

impl TPose {
    /// Joints 1..25 flattened to 72 values (the root is always the origin).
    pub fn flatten_without_root(&self) -> Vec<f64> {
        self.joints[1..].iter().flat_map(|j| j.iter().copied()).collect()
    }
}

fn check_finite(joints: &[Vec3]) -> Result<()> {
    if joints.iter().flatten().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("joint coordinates".into()))
    }
}

pub fn extract_bone_lengths(tpose: &TPose, topo: &SkeletonTopology) -> Result<BoneLengths> {
    frame_bone_lengths(&tpose.joints, topo)
}

/// Bone lengths of an arbitrary posed frame.
pub fn frame_bone_lengths(joints: &[Vec3], topo: &SkeletonTopology) -> Result<BoneLengths> {
    if joints.len() != NUM_JOINTS {
        return Err(invalid(format!("expected {NUM_JOINTS} joints, got {}", joints.len())));
    }
    check_finite(joints)?;
    let mut out = [0.0; NUM_BONES];
    for (e, &(p, c)) in topo.bone_edges().iter().enumerate() {
        out[e] = geom::norm(geom::sub(joints[c], joints[p]));
    }
    Ok(BoneLengths(out))
}

pub fn forward_kinematics_tpose(lengths: &BoneLengths, topo: &SkeletonTopology) -> Result<TPose> {
    lengths.validate()?;
    let mut joints = [[0.0; 3]; NUM_JOINTS];
    for &j in &topo.order()[1..] {
        let e = topo.bone_into(j).expect("non-root joint has a bone");
        let p = topo.parent(j).expect("non-root joint has a parent");
        joints[j] = geom::add(joints[p], geom::scale(topo.bone_directions()[e], lengths[e]));
    }
    Ok(TPose { joints })
}

/// Where a unified joint comes from during retargeting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JointSource {
    Source(usize),
    /// Placed on the pelvis (e.g. the tail of a tailless species).
    Virtual,
    Unmapped,
}

/// Maps source-skeleton frames onto the unified topology, scaling all
/// coordinates uniformly by `scale`.
pub fn retarget_to_unified(src_frames: &[Vec<Vec3>], joint_map: &[JointSource], scale: f64) -> Result<Vec<Joints>> {
    if joint_map.len() != NUM_JOINTS {
        return Err(invalid(format!("joint map must cover {NUM_JOINTS} joints")));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(invalid(format!("scale must be positive, got {scale}")));
    }
    for (j, s) in joint_map.iter().enumerate() {
        match s {
            JointSource::Unmapped => return Err(Error::MappingIncomplete(j)),
            JointSource::Virtual if j == PELVIS => return Err(invalid("the pelvis cannot be virtual")),
            _ => {}
        }
    }
    let mut out = Vec::with_capacity(src_frames.len());
    for (t, frame) in src_frames.iter().enumerate() {
        check_finite(frame)?;
        let mut joints = [[0.0; 3]; NUM_JOINTS];
        for (j, s) in joint_map.iter().enumerate() {
            if let JointSource::Source(i) = *s {
                let p = *frame
                    .get(i)
                    .ok_or_else(|| invalid(format!("frame {t}: source joint {i} out of range")))?;
                joints[j] = geom::scale(p, scale);
            }
        }
        let pelvis = joints[PELVIS];
        for (j, s) in joint_map.iter().enumerate() {
            if *s == JointSource::Virtual {
                joints[j] = pelvis;
            }
        }
        out.push(joints);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{mat_vec, rot_x, rot_y};

    fn lengths(seed: u64) -> BoneLengths {
        let mut s = seed;
        let mut b = [0.0; NUM_BONES];
        for v in &mut b {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            *v = (s >> 11) as f64 / (1u64 << 53) as f64 * 0.8;
        }
        BoneLengths(b)
    }

    #[test]
    fn canonical_shape() {
        let t = canonical_topology();
        assert_eq!(t.joint_names().len(), 25);
        assert_eq!(t.bone_edges().len(), 24);
        assert_eq!(t.parent_index()[0], -1);
        assert_eq!(t.parent(22), Some(0));
        assert_eq!(t.parent(23), Some(22));
        assert_eq!(t.parent(24), Some(23));
        for (e, &(_, c)) in t.bone_edges().iter().enumerate() {
            assert_eq!(c, e + 1);
        }
    }

    #[test]
    fn rejects_cycles_and_bad_directions() {
        let names: Vec<String> = CANONICAL_NAMES.iter().map(|s| s.to_string()).collect();
        let mut parents = CANONICAL_PARENTS.to_vec();
        parents[1] = 2;
        parents[2] = 1;
        assert!(SkeletonTopology::new(names.clone(), parents, CANONICAL_DIRECTIONS.to_vec()).is_err());
        let mut dirs = CANONICAL_DIRECTIONS.to_vec();
        dirs[3] = [0.0, 2.0, 0.0];
        assert!(SkeletonTopology::new(names, CANONICAL_PARENTS.to_vec(), dirs).is_err());
    }

    #[test]
    fn uniform_chain_lengths() {
        let t = canonical_topology();
        let pose = forward_kinematics_tpose(&BoneLengths([0.5; NUM_BONES]), &t).unwrap();
        let b = extract_bone_lengths(&pose, &t).unwrap();
        assert!(b.iter().all(|&l| (l - 0.5).abs() < 1e-15));
    }

    #[test]
    fn zero_lengths_collapse_to_origin() {
        let t = canonical_topology();
        let pose = forward_kinematics_tpose(&BoneLengths::zeros(), &t).unwrap();
        assert!(pose.joints.iter().all(|j| *j == [0.0; 3]));
    }

    #[test]
    fn single_spine_bone_moves_its_subtree() {
        let t = canonical_topology();
        let mut b = BoneLengths::zeros();
        b[0] = 1.0;
        let pose = forward_kinematics_tpose(&b, &t).unwrap();
        for j in 0..NUM_JOINTS {
            let mut k = j;
            let mut under_spine = false;
            while let Some(p) = t.parent(k) {
                if k == 1 {
                    under_spine = true;
                }
                k = p;
            }
            let want = if under_spine { [0.0, 1.0, 0.0] } else { [0.0; 3] };
            assert_eq!(pose.joints[j], want, "joint {j}");
        }
    }

    #[test]
    fn negative_or_non_finite_rejected() {
        let t = canonical_topology();
        let mut b = BoneLengths::zeros();
        b[4] = -0.1;
        assert!(matches!(forward_kinematics_tpose(&b, &t), Err(Error::InvalidInput(_))));
        let mut pose = forward_kinematics_tpose(&BoneLengths::zeros(), &t).unwrap();
        pose.joints[3][1] = f64::NAN;
        assert!(matches!(extract_bone_lengths(&pose, &t), Err(Error::NonFinite(_))));
    }

    #[test]
    fn extraction_matches_pairwise_oracle() {
        let t = canonical_topology();
        let mut joints = [[0.0; 3]; NUM_JOINTS];
        let mut s = 99u64;
        for j in joints.iter_mut() {
            for v in j.iter_mut() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                *v = (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            }
        }
        let b = frame_bone_lengths(&joints, &t).unwrap();
        for (e, (p, c)) in CANONICAL_PARENTS.iter().enumerate().skip(1).map(|(c, &p)| (c - 1, (p as usize, c))) {
            let d: f64 = (0..3).map(|k| (joints[c][k] - joints[p][k]).powi(2)).sum::<f64>().sqrt();
            assert!((b[e] - d).abs() < 1e-15);
        }
    }

    #[test]
    fn bent_knee_keeps_lengths() {
        let t = canonical_topology();
        let b = lengths(5);
        let rest = forward_kinematics_tpose(&b, &t).unwrap();
        let mut bent = rest.joints;
        // Rotate the left-leg subtree below the knee rigidly about the knee.
        let knee = rest.joints[7];
        let r = rot_x(0.9);
        for j in [8, 9] {
            bent[j] = geom::add(knee, mat_vec(&r, geom::sub(rest.joints[j], knee)));
        }
        let got = frame_bone_lengths(&bent, &t).unwrap();
        assert!(got.max_abs_diff(&b) < 1e-9);
        let spun: Vec<Vec3> = bent.iter().map(|&p| mat_vec(&rot_y(1.3), p)).collect();
        assert!(frame_bone_lengths(&spun, &t).unwrap().max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn retarget_identity_and_virtual_tail() {
        let t = canonical_topology();
        let pose = forward_kinematics_tpose(&lengths(8), &t).unwrap();
        let frame: Vec<Vec3> = pose.joints.iter().map(|&p| geom::add(p, [0.3, 0.9, -0.2])).collect();
        let ident: Vec<JointSource> = (0..NUM_JOINTS).map(JointSource::Source).collect();
        let out = retarget_to_unified(std::slice::from_ref(&frame), &ident, 1.0).unwrap();
        assert_eq!(out[0].to_vec(), frame);

        let human: Vec<Vec3> = frame[..22].to_vec();
        let mut map: Vec<JointSource> = (0..22).map(JointSource::Source).collect();
        map.extend([JointSource::Virtual; 3]);
        let out = retarget_to_unified(&[human], &map, 1.0).unwrap();
        for j in TAIL_JOINTS {
            assert_eq!(out[0][j], out[0][PELVIS]);
        }
        let b = frame_bone_lengths(&out[0], &t).unwrap();
        assert!(TAIL_BONES.iter().all(|&e| b[e] == 0.0));
    }

    #[test]
    fn retarget_scale_doubles_lengths() {
        let t = canonical_topology();
        let pose = forward_kinematics_tpose(&lengths(9), &t).unwrap();
        let frame = pose.joints.to_vec();
        let ident: Vec<JointSource> = (0..NUM_JOINTS).map(JointSource::Source).collect();
        let before = frame_bone_lengths(&frame, &t).unwrap();
        let out = retarget_to_unified(&[frame], &ident, 2.0).unwrap();
        let after = frame_bone_lengths(&out[0], &t).unwrap();
        for e in 0..NUM_BONES {
            assert!((after[e] - 2.0 * before[e]).abs() < 1e-12);
        }
    }

    #[test]
    fn retarget_requires_complete_map() {
        let mut map: Vec<JointSource> = (0..NUM_JOINTS).map(JointSource::Source).collect();
        map[7] = JointSource::Unmapped;
        let frame = vec![[0.0; 3]; NUM_JOINTS];
        assert_eq!(retarget_to_unified(&[frame], &map, 1.0), Err(Error::MappingIncomplete(7)));
    }
}
