//! Binary formats: round trips, byte identity and corruption handling.

use xspecies::checkpoint::{self, block_of, decode_checkpoint, encode_checkpoint, restore_models, Checkpoint, COMPONENTS};
use xspecies::container::{decode_container, encode_container, Container, Manifest};
use xspecies::run::parse_config;
use xspecies::sidecar::Sidecar;
use xspecies::{CliError, FormatError};
use xspecies_core::dataset::{build_toy_dataset, filter_by_length, make_splits, ToyDatasetConfig};
use xspecies_core::embed::{SpeciesEncoder, TextEncoder};
use xspecies_core::features::compute_norm_stats;
use xspecies_core::optim::AdamState;
use xspecies_core::pipeline::{Models, RunConfig};
use xspecies_core::skeleton::canonical_topology;

const TINY: &str = r#"{
    "cgae": {"d_z": 4, "hidden": 8, "cond_proj": 4},
    "ae": {"latent_dim": 8, "channels": 8, "res_blocks": 1},
    "mcm": {"latent_dim": 8, "hidden": 8},
    "gen": {"latent_dim": 8, "blocks": 1, "heads": 2, "ffn_width": 16, "head_width": 16, "head_blocks": 1},
    "matcher": {"hidden": 16, "feat_dim": 8}
}"#;

fn tiny_config() -> RunConfig {
    parse_config(TINY).unwrap()
}

fn small_container() -> Container {
    let topo = canonical_topology();
    let cfg = ToyDatasetConfig { species_count: 3, records_per_gait: 2, min_len: 20, max_len: 30, ..ToyDatasetConfig::default() };
    let records = filter_by_length(build_toy_dataset(&cfg, &topo).unwrap().1);
    let stats = compute_norm_stats(records.iter().map(|r| &r.motion)).unwrap();
    Container { topology: topo, stats, records }
}

#[test]
fn container_round_trip_is_byte_identical() {
    let c = small_container();
    let bytes = encode_container(&c);
    let back = decode_container(&bytes).unwrap();
    assert_eq!(back.records.len(), c.records.len());
    assert_eq!(back.topology, c.topology);
    // Toy frames are already f32-quantized, so nothing is lost.
    assert_eq!(back, c);
    assert_eq!(encode_container(&back), bytes);
}

#[test]
fn container_rejects_corruption() {
    let bytes = encode_container(&small_container());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_container(&bad), Err(FormatError::Magic { .. })));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(decode_container(&bad), Err(FormatError::Version { expected: 1, found: 9 })));
    assert!(matches!(decode_container(&bytes[..bytes.len() - 3]), Err(FormatError::Truncated(_))));
    let mut long = bytes.clone();
    long.push(0);
    assert!(decode_container(&long).is_err());
}

#[test]
fn manifest_round_trip() {
    let c = small_container();
    let holdout = vec![c.records[0].species_name.clone()];
    let split = make_splits(&c.records, &holdout, 4).unwrap();
    let m = Manifest::from_split(&split, &holdout, 4);
    let json = serde_json::to_string(&m).unwrap();
    let back: Manifest = serde_json::from_str(&json).unwrap();
    assert_eq!(back.to_split().unwrap(), split);
}

fn full_checkpoint(cfg: &RunConfig) -> Checkpoint {
    let m = Models::init(cfg, &canonical_topology()).unwrap();
    let states = [
        AdamState::new(&m.cgae.params),
        AdamState::new(&m.ae.params),
        AdamState::new(&m.mcm.params),
        AdamState::new(&m.gen.params),
        AdamState::new(&m.matcher.params),
    ];
    let blocks = std::array::from_fn(|i| Some(block_of(&m, i, if i % 2 == 0 { Some(&states[i]) } else { None })));
    Checkpoint { step: 17, config: cfg.clone(), blocks }
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let ck = full_checkpoint(&tiny_config());
    let bytes = encode_checkpoint(&ck).unwrap();
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    let dir = std::env::temp_dir().join(format!("xspecies-ck-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("c.xsck");
    checkpoint::save(&path, &ck).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    checkpoint::save(&path, &loaded).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn restored_models_match_the_originals() {
    let cfg = tiny_config();
    let ck = full_checkpoint(&cfg);
    let m = Models::init(&cfg, &canonical_topology()).unwrap();
    let r = restore_models(&ck, &canonical_topology()).unwrap();
    assert_eq!(r.cgae.params.checksum(), m.cgae.params.checksum());
    assert_eq!(r.ae.params.checksum(), m.ae.params.checksum());
    assert_eq!(r.mcm.params.checksum(), m.mcm.params.checksum());
    assert_eq!(r.gen.params.checksum(), m.gen.params.checksum());
    assert_eq!(r.matcher.params.checksum(), m.matcher.params.checksum());
    assert_eq!(COMPONENTS.len(), 5);
}

#[test]
fn checkpoint_rejects_corruption_and_mismatched_shapes() {
    let cfg = tiny_config();
    let bytes = encode_checkpoint(&full_checkpoint(&cfg)).unwrap();
    let mut bad = bytes.clone();
    bad[1] = 0;
    assert!(matches!(decode_checkpoint(&bad), Err(CliError::Format(FormatError::Magic { .. }))));
    assert!(decode_checkpoint(&bytes[..bytes.len() / 2]).is_err());
    let mut ck = full_checkpoint(&cfg);
    ck.config.ae.channels = 16;
    assert!(restore_models(&ck, &canonical_topology()).is_err());
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    assert!(matches!(parse_config(r#"{"nonsense": 1}"#), Err(CliError::Config(_))));
    assert!(matches!(parse_config(r#"{"ae": {"latent_dim": 8, "typo": 2}}"#), Err(CliError::Config(_))));
    assert!(matches!(parse_config(r#"{"ae": {"latent_dim": 8}}"#), Err(CliError::Config(_))));
    assert!(matches!(parse_config(r#"{"ae_train": {"steps": 1, "batch": 1, "lr": 0.0}}"#), Err(CliError::Config(_))));
    assert_eq!(parse_config("{}").unwrap(), RunConfig::default());
}

#[test]
fn sidecar_round_trip_and_lookup() {
    let mut s = Sidecar::new(3);
    s.insert("wolf", vec![vec![0.6, 0.8, 0.0]]).unwrap();
    s.insert("a wolf runs", vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
    assert!(s.insert("bad", vec![vec![1.0]]).is_err());
    let bytes = s.encode();
    let back = Sidecar::decode(&bytes).unwrap();
    assert_eq!(back.encode(), bytes);
    assert_eq!(back.encode_species("Wolf").unwrap().0, vec![0.6f32 as f64, 0.8f32 as f64, 0.0]);
    let t = back.encode_text("a wolf runs").unwrap();
    assert_eq!(t.sentence, vec![0.0, 1.0, 0.0]);
    assert_eq!(t.words.rows(), 2);
    assert!(back.encode_text("unknown caption").is_err());
    let mut bad = bytes.clone();
    bad[2] = b'?';
    assert!(matches!(Sidecar::decode(&bad), Err(FormatError::Magic { .. })));
}
