//! Skeleton, feature and dataset invariants under randomized inputs.

use proptest::prelude::*;
use xspecies_core::dataset::{
    build_toy_dataset, filter_by_length, generate_gait, generate_synthetic_species, make_splits, random_trajectory, species_names, Gait,
    MotionRecord, ToyDatasetConfig,
};
use xspecies_core::features::{bone_lengths_per_frame, decode_to_global, encode_features, MotionSequence, FRAME_DIM, ROOT_DIMS};
use xspecies_core::geom::{self, Mat3};
use xspecies_core::skeleton::{
    canonical_topology, extract_bone_lengths, forward_kinematics_tpose, frame_bone_lengths, retarget_to_unified, BoneLengths, JointSource,
    Joints, NUM_BONES, NUM_JOINTS, TAIL_BONES, TAIL_JOINTS,
};
use xspecies_core::Matrix;

fn bones() -> impl Strategy<Value = BoneLengths> {
    prop::array::uniform24(0.0f64..2.0).prop_map(BoneLengths)
}

fn rotation(a: f64, b: f64, c: f64) -> Mat3 {
    geom::mat_mul(&geom::rot_z(c), &geom::mat_mul(&geom::rot_y(b), &geom::rot_x(a)))
}

fn rigid(joints: &Joints, rot: &Mat3, shift: [f64; 3]) -> Joints {
    let mut out = *joints;
    out.iter_mut().for_each(|p| *p = geom::add(geom::mat_vec(rot, *p), shift));
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn fk_then_extract_is_identity(b in bones()) {
        let topo = canonical_topology();
        let back = extract_bone_lengths(&forward_kinematics_tpose(&b, &topo).unwrap(), &topo).unwrap();
        prop_assert!(back.max_abs_diff(&b) <= 1e-9);
    }

    #[test]
    fn bone_lengths_survive_rigid_transforms(
        b in bones(),
        angles in prop::array::uniform3(-3.2f64..3.2),
        shift in prop::array::uniform3(-10.0f64..10.0),
    ) {
        let topo = canonical_topology();
        let pose = forward_kinematics_tpose(&b, &topo).unwrap().joints;
        let moved = rigid(&pose, &rotation(angles[0], angles[1], angles[2]), shift);
        let before = frame_bone_lengths(&pose, &topo).unwrap();
        let after = frame_bone_lengths(&moved, &topo).unwrap();
        prop_assert!(before.max_abs_diff(&after) <= 1e-9);
    }

    #[test]
    fn virtual_tail_has_zero_length(
        frames in prop::collection::vec(prop::collection::vec(prop::array::uniform3(-2.0f64..2.0), 22), 1..6),
        scale in 0.1f64..5.0,
    ) {
        let map: Vec<JointSource> =
            (0..NUM_JOINTS).map(|j| if TAIL_JOINTS.contains(&j) { JointSource::Virtual } else { JointSource::Source(j) }).collect();
        let topo = canonical_topology();
        for f in retarget_to_unified(&frames, &map, scale).unwrap() {
            let b = frame_bone_lengths(&f, &topo).unwrap();
            for e in TAIL_BONES {
                prop_assert_eq!(b.0[e], 0.0);
            }
        }
    }

    #[test]
    fn feature_round_trip(seed in any::<u64>(), len in 2usize..120) {
        let topo = canonical_topology();
        let g = random_trajectory(seed, len, &topo).unwrap();
        let seq = encode_features(&g, &topo).unwrap();
        prop_assert_eq!(seq.frames().cols(), FRAME_DIM);
        let back = decode_to_global(&seq, g.root_yaw[0], [g.joints[0][0][0], g.joints[0][0][2]]);
        prop_assert!(g.max_joint_error(&back) <= 1e-6 * len as f64);
    }

    #[test]
    fn root_velocities_do_not_move_bone_lengths(seed in any::<u64>(), noise in prop::collection::vec(-5.0f64..5.0, 4 * 30)) {
        let topo = canonical_topology();
        let seq = encode_features(&random_trajectory(seed, 30, &topo).unwrap(), &topo).unwrap();
        let mut frames = seq.frames().clone();
        for t in 0..30 {
            for c in 0..ROOT_DIMS - 1 {
                frames.row_mut(t)[c] = noise[4 * t + c];
            }
        }
        let edited = MotionSequence::new(frames).unwrap();
        let a = bone_lengths_per_frame(&seq, &topo);
        let b = bone_lengths_per_frame(&edited, &topo);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn length_filter_keeps_the_open_interval(lens in prop::collection::vec(17usize..=301, 1..12)) {
        let records: Vec<MotionRecord> = lens
            .iter()
            .map(|&l| MotionRecord {
                motion: MotionSequence::new(Matrix::zeros(l, FRAME_DIM)).unwrap(),
                captions: vec!["a cat walks".into()],
                species_name: "cat".into(),
                tpose_bone_lengths: BoneLengths::zeros(),
            })
            .collect();
        let kept: Vec<usize> = filter_by_length(records).iter().map(|r| r.motion.len()).collect();
        let expected: Vec<usize> = lens.into_iter().filter(|&l| 18 < l && l < 300).collect();
        prop_assert_eq!(kept, expected);
    }

    #[test]
    fn synthetic_gaits_are_rigid(seed in any::<u64>(), gait in 0usize..6, len in 19usize..80) {
        let topo = canonical_topology();
        let species = generate_synthetic_species(seed, 2).unwrap();
        let rec = generate_gait(&species[0], Gait::ALL[gait], len, seed, &topo).unwrap();
        let per_frame = bone_lengths_per_frame(&rec.motion, &topo);
        for t in 0..rec.motion.len() {
            for e in 0..NUM_BONES {
                prop_assert!((per_frame.row(t)[e] - rec.tpose_bone_lengths.0[e]).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn topology_is_a_tree() {
    let topo = canonical_topology();
    assert_eq!(topo.bone_edges().len(), NUM_JOINTS - 1);
    let mut seen = [0usize; NUM_JOINTS];
    let mut stack = vec![0usize];
    while let Some(j) = stack.pop() {
        seen[j] += 1;
        stack.extend((0..NUM_JOINTS).filter(|&c| topo.parent(c) == Some(j)));
    }
    assert!(seen.iter().all(|&n| n == 1));
}

#[test]
fn splits_partition_seen_records() {
    let topo = canonical_topology();
    let cfg = ToyDatasetConfig { species_count: 5, records_per_gait: 4, ..ToyDatasetConfig::default() };
    let (_, records) = build_toy_dataset(&cfg, &topo).unwrap();
    let names = species_names(&records);
    for seed in 0..8u64 {
        let holdout = vec![names[seed as usize % names.len()].clone()];
        let s = make_splits(&records, &holdout, seed).unwrap();
        let mut seen: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        seen.sort_unstable();
        let expected: Vec<usize> = (0..records.len()).filter(|&i| records[i].species_name != holdout[0]).collect();
        assert_eq!(seen, expected);
        assert!(s.unseen_test.iter().all(|&i| records[i].species_name == holdout[0]));
        assert_eq!(s.unseen_test.len() + expected.len(), records.len());
        let n = expected.len();
        assert_eq!(s.train.len(), n * 80 / 100);
        assert_eq!(s.val.len(), n * 5 / 100);
    }
}
