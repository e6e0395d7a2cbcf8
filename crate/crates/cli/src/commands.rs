//! Command implementations. Each takes parsed arguments and returns the
//! JSON summary the binary prints, so they can be driven from tests.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{json, Value};
use xspecies_core::dataset::{build_toy_dataset, make_splits, species_names, ToyDatasetConfig};
use xspecies_core::embed::{HashSpeciesEncoder, HashTextEncoder, SpeciesEncoder, TextEncoder};
use xspecies_core::features::compute_norm_stats;
use xspecies_core::optim::AdamState;
use xspecies_core::pipeline::{
    self, cross_species_transition, default_holdout, encode_all, evaluate, generate_motion, seam_stats, species_from_records, Models,
    Prepared, RunConfig,
};
use xspecies_core::skeleton::{canonical_topology, frame_bone_lengths, retarget_to_unified, JointSource, SkeletonTopology};

use crate::checkpoint::{self, block_of, component_index, optim_state, restore_models, Checkpoint};
use crate::container::{self, manifest_path, Container, Manifest};
use crate::error::{CliError, CliResult};
use crate::motion_file::MotionFile;
use crate::plot;
use crate::run::{checkpoint_path, JsonLog};
use crate::sidecar::Sidecar;

pub fn dataset_gen(cfg: &ToyDatasetConfig, out: &Path) -> CliResult<Value> {
    let topo = canonical_topology();
    let (_, records) = build_toy_dataset(cfg, &topo)?;
    let records = xspecies_core::dataset::filter_by_length(records);
    let stats = compute_norm_stats(records.iter().map(|r| &r.motion))?;
    let n = records.len();
    container::write_container(out, &Container { topology: topo, stats, records })?;
    Ok(json!({ "container": out, "records": n }))
}

pub fn dataset_split(data: &Path, holdout: &[String], seed: u64, out: Option<&Path>) -> CliResult<Value> {
    let c = container::read_container(data)?;
    let holdout = if holdout.is_empty() { default_holdout(&species_names(&c.records)) } else { holdout.to_vec() };
    let split = make_splits(&c.records, &holdout, seed)?;
    let manifest = Manifest::from_split(&split, &holdout, seed);
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| manifest_path(data));
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(json!({
        "manifest": path, "train": split.train.len(), "val": split.val.len(),
        "test": split.test.len(), "unseen_test": split.unseen_test.len(), "holdout_species": holdout,
    }))
}

pub fn dataset_inspect(data: &Path) -> CliResult<Value> {
    let c = container::read_container(data)?;
    let lens: Vec<usize> = c.records.iter().map(|r| r.motion.len()).collect();
    let species: Vec<Value> = species_names(&c.records)
        .into_iter()
        .map(|s| json!({ "name": s, "records": c.records.iter().filter(|r| r.species_name == s).count() }))
        .collect();
    Ok(json!({
        "records": c.records.len(),
        "min_len": lens.iter().min(), "max_len": lens.iter().max(),
        "frames": lens.iter().sum::<usize>(),
        "species": species,
    }))
}

/// Container plus split: the manifest beside it when present, else a fresh split.
pub fn load_prepared(data: &Path, manifest: Option<&Path>, cfg: &RunConfig) -> CliResult<Prepared> {
    let c = container::read_container(data)?;
    let mpath = manifest.map(Path::to_path_buf).unwrap_or_else(|| manifest_path(data));
    let (split, holdout) = if mpath.exists() {
        let m: Manifest = serde_json::from_slice(&std::fs::read(&mpath)?)?;
        if m.records.keys().any(|&i| i >= c.records.len()) {
            return Err(CliError::Config("manifest refers to records beyond the container".into()));
        }
        (m.to_split()?, m.holdout_species)
    } else {
        let holdout =
            if cfg.holdout_species.is_empty() { default_holdout(&species_names(&c.records)) } else { cfg.holdout_species.clone() };
        (make_splits(&c.records, &holdout, cfg.split_seed)?, holdout)
    };
    Ok(Prepared { species: species_from_records(&c.records), records: c.records, split, holdout })
}

/// Hash encoders, or a sidecar serving both roles.
pub struct Encoders {
    pub species: Box<dyn SpeciesEncoder>,
    pub text: Box<dyn TextEncoder>,
}

pub fn encoders(sidecar: Option<&Path>) -> CliResult<Encoders> {
    match sidecar {
        None => Ok(Encoders { species: Box::new(HashSpeciesEncoder::default()), text: Box::new(HashTextEncoder::default()) }),
        Some(p) => {
            let s = Sidecar::load(p)?;
            Ok(Encoders { species: Box::new(s.clone()), text: Box::new(s) })
        }
    }
}

fn load_or_init(run_dir: &Path, cfg: &RunConfig, topo: &SkeletonTopology) -> CliResult<(Checkpoint, Models)> {
    let path = checkpoint_path(run_dir);
    let mut ck = if path.exists() {
        checkpoint::load(&path)?
    } else {
        Checkpoint { step: 0, config: cfg.clone(), blocks: Default::default() }
    };
    ck.config = cfg.clone();
    let models = restore_models(&ck, topo)?;
    Ok((ck, models))
}

pub fn require(ck: &Checkpoint, component: &str) -> CliResult<()> {
    if ck.blocks[component_index(component)?].is_none() {
        return Err(CliError::Config(format!("checkpoint has no trained {component}; run `train {component}` first")));
    }
    Ok(())
}

/// Trains one component and stores it (with its optimizer state) in the run's checkpoint.
pub fn train(stage: &str, cfg: &RunConfig, data: &Path, manifest: Option<&Path>, run_dir: &Path, sidecar: Option<&Path>) -> CliResult<Value> {
    let topo = canonical_topology();
    let prepared = load_prepared(data, manifest, cfg)?;
    let enc = encoders(sidecar)?;
    let (mut ck, mut m) = load_or_init(run_dir, cfg, &topo)?;
    let idx = component_index(stage)?;
    for dep in checkpoint::prerequisites(stage) {
        if *dep == "mcm" && cfg.gen.lambda_guide == 0.0 {
            continue;
        }
        require(&ck, dep)?;
    }
    let mut log = JsonLog::open(run_dir, "train.jsonl")?;
    let mut log_err = None;
    let mut obs = |r: &xspecies_core::train::StepRecord| {
        if let Err(e) = log.step(r) {
            log_err.get_or_insert(e);
        }
    };
    let params_of = |m: &Models| match idx {
        0 => m.cgae.params.clone(),
        1 => m.ae.params.clone(),
        2 => m.mcm.params.clone(),
        3 => m.gen.params.clone(),
        _ => m.matcher.params.clone(),
    };
    let mut state: AdamState = optim_state(&ck, idx, &params_of(&m));
    let steps = match stage {
        "cgae" => {
            pipeline::train_stage_cgae(&mut m, cfg, &prepared, enc.species.as_ref(), &mut state, &mut obs)?;
            cfg.cgae_train.steps
        }
        "ae" => {
            pipeline::train_stage_ae(&mut m, cfg, &prepared, &mut state, &mut obs)?;
            cfg.ae_train.steps
        }
        "mcm" => {
            let latents = encode_all(&m.ae, &prepared.subset(&prepared.split.train))?;
            pipeline::train_stage_mcm(&mut m, cfg, &prepared, &latents, &mut state, &mut obs)?;
            cfg.mcm_train.steps
        }
        "gen" => {
            let latents = encode_all(&m.ae, &prepared.subset(&prepared.split.train))?;
            pipeline::train_stage_gen(&mut m, cfg, &prepared, &latents, enc.text.as_ref(), &topo, &mut state, &mut obs)?;
            cfg.gen_train.steps
        }
        "matcher" => {
            pipeline::train_stage_matcher(&mut m, cfg, &prepared, enc.text.as_ref(), &mut state, &mut obs)?;
            cfg.matcher_train.steps
        }
        other => return Err(CliError::Config(format!("unknown stage {other:?}"))),
    };
    if let Some(e) = log_err {
        return Err(e);
    }
    log.flush()?;
    ck.blocks[idx] = Some(block_of(&m, idx, Some(&state)));
    ck.step += steps as u64;
    let path = checkpoint_path(run_dir);
    checkpoint::save(&path, &ck)?;
    Ok(json!({ "stage": stage, "steps": steps, "checkpoint": path }))
}

fn trained_models(run_dir: &Path, needed: &[&str]) -> CliResult<(Checkpoint, Models)> {
    let ck = checkpoint::load(&checkpoint_path(run_dir))?;
    for c in needed {
        require(&ck, c)?;
    }
    let m = restore_models(&ck, &canonical_topology())?;
    Ok((ck, m))
}

#[allow(clippy::too_many_arguments)]
pub fn generate(run_dir: &Path, caption: &str, species: &str, len: usize, seed: u64, out: &Path, sidecar: Option<&Path>) -> CliResult<Value> {
    let (ck, m) = trained_models(run_dir, &["cgae", "ae", "gen"])?;
    let enc = encoders(sidecar)?;
    let topo = canonical_topology();
    let g = generate_motion(&m, enc.species.as_ref(), enc.text.as_ref(), &topo, caption, species, len, &ck.config.infer, seed)?;
    MotionFile::from_motion(caption, species, seed, &g.bones.0, &g.motion).save(out)?;
    let mme = xspecies_core::metrics::mme(&g.motion, &g.bones, &topo);
    Ok(json!({ "out": out, "frames": g.motion.len(), "latents": g.latents.rows(), "mme_vs_tpose": mme }))
}

#[allow(clippy::too_many_arguments)]
pub fn transition(
    run_dir: &Path,
    data: &Path,
    a: usize,
    b: usize,
    gap: usize,
    caption: Option<&str>,
    seed: u64,
    out: &Path,
    sidecar: Option<&Path>,
) -> CliResult<Value> {
    let (ck, m) = trained_models(run_dir, &["cgae", "ae", "gen"])?;
    let c = container::read_container(data)?;
    let (ra, rb) = match (c.records.get(a), c.records.get(b)) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(CliError::Config(format!("record ids must be below {}", c.records.len()))),
    };
    let enc = encoders(sidecar)?;
    let topo = canonical_topology();
    let cond = enc.species.encode_species(&rb.species_name)?;
    let tpose = m.cgae.sample_tpose(&cond.0, seed, &topo)?;
    let caption = caption.unwrap_or_else(|| rb.captions.first().map(String::as_str).unwrap_or(""));
    let text = enc.text.encode_text(caption)?;
    let tr = cross_species_transition(&m, &ra.motion, &rb.motion, gap, &text, &tpose, &ck.config.infer, seed)?;
    let seam = tr.seam_frames();
    let stats = seam_stats(&tr.motion, seam.clone())?;
    let bones = frame_bone_lengths(&tpose.joints, &topo)?;
    let mut f = MotionFile::from_motion(caption, &rb.species_name, seed, &bones.0, &tr.motion);
    f.seam = Some((seam.start, seam.end));
    f.save(out)?;
    Ok(json!({
        "out": out, "frames": tr.motion.len(), "seam": [seam.start, seam.end],
        "context_untouched": tr.context_is_untouched(), "seam_stats": stats,
    }))
}

pub fn eval(run_dir: &Path, data: &Path, manifest: Option<&Path>, out: Option<&Path>, sidecar: Option<&Path>) -> CliResult<Value> {
    let (ck, m) = trained_models(run_dir, &["cgae", "ae", "gen", "matcher"])?;
    let prepared = load_prepared(data, manifest, &ck.config)?;
    let enc = encoders(sidecar)?;
    let report = evaluate(&m, &prepared, enc.species.as_ref(), enc.text.as_ref(), &canonical_topology(), &ck.config)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join("eval.json"));
    std::fs::write(&path, serde_json::to_vec_pretty(&report)?)?;
    Ok(serde_json::to_value(&report)?)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MapEntry {
    Index(usize),
    Tag(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RetargetInput {
    /// Frames of source joint positions.
    frames: Vec<Vec<[f64; 3]>>,
}

/// Source joints JSON plus a 25-entry map (index or `"virtual"`) to unified joints JSON.
pub fn retarget(input: &Path, map: &Path, scale: f64, out: &Path) -> CliResult<Value> {
    let src: RetargetInput = serde_json::from_slice(&std::fs::read(input)?)?;
    let entries: Vec<MapEntry> = serde_json::from_slice(&std::fs::read(map)?)?;
    let joint_map = entries
        .into_iter()
        .map(|e| match e {
            MapEntry::Index(i) => Ok(JointSource::Source(i)),
            MapEntry::Tag(t) if t == "virtual" => Ok(JointSource::Virtual),
            MapEntry::Tag(t) if t == "unmapped" => Ok(JointSource::Unmapped),
            MapEntry::Tag(t) => Err(CliError::Config(format!("joint map entry {t:?} is neither an index nor \"virtual\""))),
        })
        .collect::<CliResult<Vec<_>>>()?;
    let frames = retarget_to_unified(&src.frames, &joint_map, scale)?;
    let value = json!({ "frames": frames });
    std::fs::write(out, serde_json::to_vec(&value)?)?;
    Ok(json!({ "out": out, "frames": frames.len() }))
}

pub fn export_plot(motion: &Path, out_dir: &Path) -> CliResult<Value> {
    let f = MotionFile::load(motion)?;
    let seq = f.motion()?;
    let topo = canonical_topology();
    let files = plot::joint_trajectories(&seq, topo.joint_names(), out_dir)?;
    let seam_path: PathBuf = out_dir.join("seam_continuity.svg");
    plot::seam_continuity(&seq, f.seam, &seam_path)?;
    Ok(json!({ "trajectories": files.len(), "seam_plot": seam_path }))
}
