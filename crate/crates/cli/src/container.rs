//! `UMO4` motion container and its JSON split manifest.
//!
//! Layout, all little-endian: magic `UMO4`, `u32` version, topology block
//! (joint count, then per joint a name, `i32` parent and three `f64`
//! direction components), stats block (width, means, stds as `f64`), `u32`
//! record count, then per record: species, captions, 24 `f64` bone lengths,
//! `u32` frame count and the frames as `f32`. Strings are `u32`-length
//! prefixed UTF-8.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use xspecies_core::dataset::{DatasetSplit, MotionRecord};
use xspecies_core::features::{MotionSequence, NormStats, FRAME_DIM};
use xspecies_core::skeleton::{BoneLengths, SkeletonTopology, NUM_BONES};
use xspecies_core::Matrix;

use crate::binio::{Reader, Writer};
use crate::error::{CliResult, FormatError};

pub const MAGIC: [u8; 4] = *b"UMO4";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub topology: SkeletonTopology,
    pub stats: NormStats,
    pub records: Vec<MotionRecord>,
}

pub fn encode_container(c: &Container) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(&MAGIC);
    w.u32(VERSION);
    let topo = &c.topology;
    w.len(topo.joint_names().len());
    for (j, name) in topo.joint_names().iter().enumerate() {
        w.str(name);
        w.i32(topo.parent_index()[j]);
        let dir = match topo.bone_into(j) {
            Some(e) => topo.bone_directions()[e],
            None => [0.0; 3],
        };
        dir.iter().for_each(|v| w.f64(*v));
    }
    w.f64s(&c.stats.mean);
    w.f64s(&c.stats.std);
    w.len(c.records.len());
    for r in &c.records {
        w.str(&r.species_name);
        w.len(r.captions.len());
        r.captions.iter().for_each(|s| w.str(s));
        r.tpose_bone_lengths.iter().for_each(|v| w.f64(*v));
        w.len(r.motion.len());
        r.motion.frames().as_slice().iter().for_each(|v| w.f32(*v as f32));
    }
    w.buf
}

pub fn decode_container(data: &[u8]) -> Result<Container, FormatError> {
    let mut r = Reader::new(data);
    let magic = r.take(4).map_err(|_| FormatError::Magic { expected: MAGIC, found: data.to_vec() })?;
    if magic != MAGIC {
        return Err(FormatError::Magic { expected: MAGIC, found: magic.to_vec() });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::Version { expected: VERSION, found: version });
    }
    let joints = r.len(4 + 4 + 24)?;
    let (mut names, mut parents, mut dirs) = (Vec::new(), Vec::new(), Vec::new());
    for j in 0..joints {
        names.push(r.str()?);
        parents.push(r.i32()?);
        let d = [r.f64()?, r.f64()?, r.f64()?];
        if j > 0 {
            dirs.push(d);
        }
    }
    let topology = SkeletonTopology::new(names, parents, dirs).map_err(|e| FormatError::Corrupt(e.to_string()))?;
    let stats = NormStats { mean: r.f64s()?, std: r.f64s()? };
    if stats.mean.len() != FRAME_DIM || stats.std.len() != FRAME_DIM {
        return Err(FormatError::Corrupt(format!("stats block must hold {FRAME_DIM} means and stds")));
    }
    let count = r.len(4 + 4 + 8 * NUM_BONES + 4)?;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let species_name = r.str()?;
        let n_caps = r.len(4)?;
        let captions = (0..n_caps).map(|_| r.str()).collect::<Result<Vec<_>, _>>()?;
        let mut b = [0.0; NUM_BONES];
        for v in b.iter_mut() {
            *v = r.f64()?;
        }
        let len = r.len(4 * FRAME_DIM)?;
        let frames: Vec<f64> = (0..len * FRAME_DIM).map(|_| r.f32().map(f64::from)).collect::<Result<_, _>>()?;
        let motion = MotionSequence::new(Matrix::from_vec(len, FRAME_DIM, frames)).map_err(|e| FormatError::Corrupt(e.to_string()))?;
        records.push(MotionRecord { motion, captions, species_name, tpose_bone_lengths: BoneLengths(b) });
    }
    r.finish()?;
    Ok(Container { topology, stats, records })
}

pub fn write_container(path: &Path, c: &Container) -> CliResult<()> {
    std::fs::write(path, encode_container(c))?;
    Ok(())
}

pub fn read_container(path: &Path) -> CliResult<Container> {
    Ok(decode_container(&std::fs::read(path)?)?)
}

/// Record id → split name, plus the held-out species.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub split_seed: u64,
    pub holdout_species: Vec<String>,
    pub records: BTreeMap<usize, String>,
}

impl Manifest {
    pub fn from_split(split: &DatasetSplit, holdout: &[String], split_seed: u64) -> Self {
        let mut records = BTreeMap::new();
        for (name, ids) in [("train", &split.train), ("val", &split.val), ("test", &split.test), ("unseen_test", &split.unseen_test)] {
            for &i in ids {
                records.insert(i, name.to_string());
            }
        }
        Self { split_seed, holdout_species: holdout.to_vec(), records }
    }

    pub fn to_split(&self) -> CliResult<DatasetSplit> {
        let mut s = DatasetSplit::default();
        for (&i, name) in &self.records {
            match name.as_str() {
                "train" => s.train.push(i),
                "val" => s.val.push(i),
                "test" => s.test.push(i),
                "unseen_test" => s.unseen_test.push(i),
                other => return Err(crate::error::CliError::Config(format!("unknown split name {other:?}"))),
            }
        }
        Ok(s)
    }
}

/// The manifest path that sits beside a container.
pub fn manifest_path(container: &Path) -> std::path::PathBuf {
    container.with_extension("manifest.json")
}
