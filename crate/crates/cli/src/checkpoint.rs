//! Unified checkpoint: one file holding every trained component.
//!
//! Layout, all little-endian: magic `XSCK`, `u32` version, `u64` step
//! counter, the run configuration as a JSON string, then one block per
//! component in the order cgae, ae, mcm, gen, matcher. Each block starts with
//! a presence byte; a present block holds named parameter matrices, named
//! auxiliary vectors (normalization statistics) and an optional optimizer
//! state. The generator block carries the learned null text condition.

use std::path::Path;

use xspecies_core::features::NormStats;
use xspecies_core::generator::TPOSE_DIM;
use xspecies_core::optim::AdamState;
use xspecies_core::params::ParamSet;
use xspecies_core::pipeline::{Models, RunConfig};
use xspecies_core::skeleton::SkeletonTopology;
use xspecies_core::Matrix;

use crate::binio::{Reader, Writer};
use crate::error::{CliError, CliResult, FormatError};

pub const MAGIC: [u8; 4] = *b"XSCK";
pub const VERSION: u32 = 1;
pub const COMPONENTS: [&str; 5] = ["cgae", "ae", "mcm", "gen", "matcher"];

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub params: Vec<(String, Matrix)>,
    pub aux: Vec<(String, Vec<f64>)>,
    pub optim: Option<AdamState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub config: RunConfig,
    /// Indexed like [`COMPONENTS`].
    pub blocks: [Option<Block>; 5],
}

fn write_matrix(w: &mut Writer, m: &Matrix) {
    w.len(m.rows());
    w.len(m.cols());
    m.as_slice().iter().for_each(|v| w.f64(*v));
}

fn read_matrix(r: &mut Reader) -> Result<Matrix, FormatError> {
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let n = rows.checked_mul(cols).filter(|n| n.saturating_mul(8) <= r.remaining()).ok_or(FormatError::Truncated(r.position()))?;
    let data: Vec<f64> = (0..n).map(|_| r.f64()).collect::<Result<_, _>>()?;
    Ok(Matrix::from_vec(rows, cols, data))
}

pub fn encode_checkpoint(c: &Checkpoint) -> CliResult<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(&MAGIC);
    w.u32(VERSION);
    w.u64(c.step);
    w.str(&serde_json::to_string(&c.config)?);
    for block in &c.blocks {
        let Some(b) = block else {
            w.u8(0);
            continue;
        };
        w.u8(1);
        w.len(b.params.len());
        for (name, m) in &b.params {
            w.str(name);
            write_matrix(&mut w, m);
        }
        w.len(b.aux.len());
        for (name, v) in &b.aux {
            w.str(name);
            w.f64s(v);
        }
        match &b.optim {
            None => w.u8(0),
            Some(s) => {
                w.u8(1);
                w.u64(s.step);
                w.len(s.m.len());
                s.m.iter().chain(&s.v).for_each(|m| write_matrix(&mut w, m));
            }
        }
    }
    Ok(w.buf)
}

pub fn decode_checkpoint(data: &[u8]) -> CliResult<Checkpoint> {
    let mut r = Reader::new(data);
    let magic = r.take(4).map_err(|_| FormatError::Magic { expected: MAGIC, found: data.to_vec() })?;
    if magic != MAGIC {
        return Err(FormatError::Magic { expected: MAGIC, found: magic.to_vec() }.into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::Version { expected: VERSION, found: version }.into());
    }
    let step = r.u64()?;
    let config: RunConfig = serde_json::from_str(&r.str()?)?;
    let mut blocks: [Option<Block>; 5] = Default::default();
    for slot in blocks.iter_mut() {
        match r.u8()? {
            0 => continue,
            1 => {}
            other => return Err(FormatError::Corrupt(format!("presence flag {other}")).into()),
        }
        let n = r.len(12)?;
        let params = (0..n).map(|_| Ok((r.str()?, read_matrix(&mut r)?))).collect::<Result<Vec<_>, FormatError>>()?;
        let n = r.len(8)?;
        let aux = (0..n).map(|_| Ok((r.str()?, r.f64s()?))).collect::<Result<Vec<_>, FormatError>>()?;
        let optim = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let n = r.len(16)?;
                let m = (0..n).map(|_| read_matrix(&mut r)).collect::<Result<Vec<_>, _>>()?;
                let v = (0..n).map(|_| read_matrix(&mut r)).collect::<Result<Vec<_>, _>>()?;
                Some(AdamState { step, m, v })
            }
            other => return Err(FormatError::Corrupt(format!("optimizer flag {other}")).into()),
        };
        *slot = Some(Block { params, aux, optim });
    }
    r.finish()?;
    Ok(Checkpoint { step, config, blocks })
}

pub fn save(path: &Path, c: &Checkpoint) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, encode_checkpoint(c)?)?;
    Ok(())
}

pub fn load(path: &Path) -> CliResult<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}

pub fn component_index(name: &str) -> CliResult<usize> {
    COMPONENTS.iter().position(|c| *c == name).ok_or_else(|| CliError::Config(format!("unknown component {name:?}")))
}

fn params_block(ps: &ParamSet, aux: Vec<(String, Vec<f64>)>, optim: Option<&AdamState>) -> Block {
    Block { params: ps.iter().map(|(n, m)| (n.to_string(), m.clone())).collect(), aux, optim: optim.cloned() }
}

fn stats_aux(prefix: &str, s: &NormStats) -> Vec<(String, Vec<f64>)> {
    vec![(format!("{prefix}.mean"), s.mean.clone()), (format!("{prefix}.std"), s.std.clone())]
}

/// Snapshot of one component of `m`.
pub fn block_of(m: &Models, component: usize, optim: Option<&AdamState>) -> Block {
    match component {
        0 => params_block(&m.cgae.params, vec![], optim),
        1 => params_block(&m.ae.params, stats_aux("stats", &m.ae.stats), optim),
        2 => params_block(
            &m.mcm.params,
            vec![("input.mean".into(), m.mcm.input_mean.clone()), ("input.std".into(), m.mcm.input_std.clone())],
            optim,
        ),
        3 => params_block(
            &m.gen.params,
            vec![
                ("latent.mean".into(), m.gen.latent_mean.clone()),
                ("latent.std".into(), m.gen.latent_std.clone()),
                ("tpose.mean".into(), m.gen.tpose_mean.clone()),
                ("tpose.std".into(), m.gen.tpose_std.clone()),
            ],
            optim,
        ),
        _ => params_block(&m.matcher.params, stats_aux("stats", &m.matcher.stats), optim),
    }
}

fn aux<'a>(b: &'a Block, name: &str, len: usize) -> CliResult<&'a Vec<f64>> {
    let v = b.aux.iter().find(|(n, _)| n == name).map(|(_, v)| v).ok_or_else(|| FormatError::Corrupt(format!("missing {name}")))?;
    if v.len() != len {
        return Err(FormatError::Corrupt(format!("{name} has {} values, expected {len}", v.len())).into());
    }
    Ok(v)
}

fn load_params(target: &mut ParamSet, b: &Block) -> CliResult<()> {
    let mut src = ParamSet::new();
    for (n, m) in &b.params {
        src.add(n, m.clone());
    }
    target.load_from(&src)?;
    Ok(())
}

/// Writes the present blocks of `c` into freshly initialized models.
pub fn restore_models(c: &Checkpoint, topo: &SkeletonTopology) -> CliResult<Models> {
    let mut m = Models::init(&c.config, topo)?;
    let width = xspecies_core::features::FRAME_DIM;
    if let Some(b) = &c.blocks[0] {
        load_params(&mut m.cgae.params, b)?;
    }
    if let Some(b) = &c.blocks[1] {
        load_params(&mut m.ae.params, b)?;
        m.ae.set_stats(NormStats { mean: aux(b, "stats.mean", width)?.clone(), std: aux(b, "stats.std", width)?.clone() });
    }
    if let Some(b) = &c.blocks[2] {
        load_params(&mut m.mcm.params, b)?;
        let d = m.mcm.cfg.latent_dim;
        m.mcm.input_mean = aux(b, "input.mean", d)?.clone();
        m.mcm.input_std = aux(b, "input.std", d)?.clone();
    }
    if let Some(b) = &c.blocks[3] {
        load_params(&mut m.gen.params, b)?;
        let d = m.gen.cfg.latent_dim;
        m.gen.latent_mean = aux(b, "latent.mean", d)?.clone();
        m.gen.latent_std = aux(b, "latent.std", d)?.clone();
        m.gen.tpose_mean = aux(b, "tpose.mean", TPOSE_DIM)?.clone();
        m.gen.tpose_std = aux(b, "tpose.std", TPOSE_DIM)?.clone();
    }
    if let Some(b) = &c.blocks[4] {
        load_params(&mut m.matcher.params, b)?;
        m.matcher.stats = NormStats { mean: aux(b, "stats.mean", width)?.clone(), std: aux(b, "stats.std", width)?.clone() };
    }
    Ok(m)
}

/// The stored optimizer state of a component, or a fresh one.
pub fn optim_state(c: &Checkpoint, component: usize, params: &ParamSet) -> AdamState {
    c.blocks[component].as_ref().and_then(|b| b.optim.clone()).unwrap_or_else(|| AdamState::new(params))
}

/// Components that must exist before `component` can be trained.
pub fn prerequisites(component: &str) -> &'static [&'static str] {
    match component {
        "mcm" => &["ae"],
        "gen" => &["ae", "mcm"],
        _ => &[],
    }
}
