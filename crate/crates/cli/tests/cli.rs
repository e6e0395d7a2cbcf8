//! The `xspecies` binary end to end on a tiny corpus and tiny models.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use xspecies::checkpoint::{self, restore_models};
use xspecies_core::pipeline::Models;
use xspecies_core::skeleton::canonical_topology;

const TINY: &str = r#"{
    "cgae": {"d_z": 4, "hidden": 8, "cond_proj": 4},
    "ae": {"latent_dim": 8, "channels": 8, "res_blocks": 1},
    "mcm": {"latent_dim": 8, "hidden": 8},
    "gen": {"latent_dim": 8, "blocks": 1, "heads": 2, "ffn_width": 16, "head_width": 16, "head_blocks": 1},
    "matcher": {"hidden": 16, "feat_dim": 8},
    "infer": {"rounds": 2, "ode_steps": 2, "omega": 2.0},
    "eval": {"gen_len": 16, "samples_per_prompt": 1, "pool_size": 4, "diversity_pairs": 2}
}"#;

const DATASET: &str = r#"{"species_count": 4, "records_per_gait": 2, "min_len": 20, "max_len": 32}"#;

struct Sandbox {
    dir: PathBuf,
}

impl Sandbox {
    fn new(name: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("xspecies-cli-{name}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("cfg.json"), TINY).unwrap();
        std::fs::write(dir.join("ds.json"), DATASET).unwrap();
        Self { dir }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.join(p)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_xspecies"))
            .args(args)
            .current_dir(&self.dir)
            .env_remove("XSPECIES_RUN_DIR")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }
}

impl Drop for Sandbox {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.dir);
    }
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

fn train_all(sb: &Sandbox, run: &str) {
    sb.ok(&["--config", "cfg.json", "--run-dir", run, "train", "cgae", "--data", "d.umo", "--steps", "1"]);
    for stage in ["ae", "mcm", "gen", "matcher"] {
        sb.ok(&["--run-dir", run, "train", stage, "--data", "d.umo", "--steps", "1"]);
    }
}

#[test]
fn double_runs_are_byte_identical() {
    let sb = Sandbox::new("det");
    sb.ok(&["dataset", "gen", "--out", "d.umo", "--dataset-config", "ds.json"]);
    sb.ok(&["dataset", "gen", "--out", "d2.umo", "--dataset-config", "ds.json"]);
    assert_eq!(read(&sb.path("d.umo")), read(&sb.path("d2.umo")));
    sb.ok(&["dataset", "split", "--data", "d.umo"]);
    train_all(&sb, "r1");
    train_all(&sb, "r2");
    assert_eq!(read(&sb.path("r1/checkpoint.xsck")), read(&sb.path("r2/checkpoint.xsck")));
    assert_eq!(read(&sb.path("r1/train.jsonl")), read(&sb.path("r2/train.jsonl")));
    for (run, out) in [("r1", "g1.json"), ("r2", "g2.json")] {
        sb.ok(&["--run-dir", run, "generate", "--caption", "a wolf walks forward", "--species", "wolf", "--len", "16", "--out", out]);
    }
    assert_eq!(read(&sb.path("g1.json")), read(&sb.path("g2.json")));

    let info = sb.ok(&["dataset", "inspect", "--data", "d.umo"]);
    assert!(info.contains("\"records\": 48"), "{info}");
    let tr = sb.ok(&["--run-dir", "r1", "transition", "--data", "d.umo", "--from", "0", "--to", "20", "--gap", "2", "--out", "t.json"]);
    assert!(tr.contains("\"context_untouched\": true"), "{tr}");
    sb.ok(&["export-plot", "--motion", "t.json", "--out-dir", "plots"]);
    assert!(sb.path("plots/seam_continuity.svg").exists());
    assert_eq!(std::fs::read_dir(sb.path("plots")).unwrap().count(), 26);
    let ev = sb.ok(&["--run-dir", "r1", "eval", "--data", "d.umo"]);
    assert!(ev.contains("gen_mme_seen"), "{ev}");
    let log = String::from_utf8(read(&sb.path("r1/train.jsonl"))).unwrap();
    assert_eq!(log.lines().count(), 5);
    assert!(log.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
}

#[test]
fn zero_steps_keep_the_initialization() {
    let sb = Sandbox::new("zero");
    sb.ok(&["dataset", "gen", "--out", "d.umo", "--dataset-config", "ds.json"]);
    sb.ok(&["--config", "cfg.json", "--run-dir", "r", "train", "cgae", "--data", "d.umo", "--steps", "0"]);
    sb.ok(&["--run-dir", "r", "train", "ae", "--data", "d.umo", "--steps", "0"]);
    let ck = checkpoint::load(&sb.path("r/checkpoint.xsck")).unwrap();
    let init = Models::init(&ck.config, &canonical_topology()).unwrap();
    let restored = restore_models(&ck, &canonical_topology()).unwrap();
    assert_eq!(restored.cgae.params.checksum(), init.cgae.params.checksum());
    assert_eq!(restored.ae.params.checksum(), init.ae.params.checksum());
    assert_eq!(ck.step, 0);
}

#[test]
fn failures_map_to_exit_codes() {
    let sb = Sandbox::new("codes");
    std::fs::write(sb.path("bad.json"), r#"{"unknown_key": true}"#).unwrap();
    let code = |args: &[&str]| sb.run(args).status.code();
    assert_eq!(code(&["--config", "bad.json", "train", "cgae", "--data", "missing.umo"]), Some(2));
    assert_eq!(code(&["dataset", "inspect", "--data", "missing.umo"]), Some(3));
    std::fs::write(sb.path("junk.umo"), b"NOPE....").unwrap();
    assert_eq!(code(&["dataset", "inspect", "--data", "junk.umo"]), Some(3));
    sb.ok(&["dataset", "gen", "--out", "d.umo", "--dataset-config", "ds.json"]);
    assert_eq!(code(&["--config", "cfg.json", "--run-dir", "r", "train", "gen", "--data", "d.umo"]), Some(2));
    assert_eq!(code(&["--run-dir", "r", "generate", "--caption", "x", "--species", "wolf", "--out", "o.json"]), Some(3));
    std::fs::write(sb.path("src.json"), r#"{"frames": [[[0,0,0]]]}"#).unwrap();
    std::fs::write(sb.path("map.json"), "[0, 1]").unwrap();
    assert_eq!(code(&["retarget", "--input", "src.json", "--map", "map.json", "--out", "u.json"]), Some(5));
}

#[test]
fn retarget_with_virtual_tail() {
    let sb = Sandbox::new("retarget");
    let frames: Vec<Vec<[f64; 3]>> = (0..2).map(|t| (0..22).map(|j| [j as f64 * 0.1, t as f64, 0.0]).collect()).collect();
    std::fs::write(sb.path("src.json"), serde_json::to_string(&serde_json::json!({ "frames": frames })).unwrap()).unwrap();
    let map: Vec<serde_json::Value> =
        (0..25).map(|j| if j >= 22 { serde_json::json!("virtual") } else { serde_json::json!(j) }).collect();
    std::fs::write(sb.path("map.json"), serde_json::to_string(&map).unwrap()).unwrap();
    sb.ok(&["retarget", "--input", "src.json", "--map", "map.json", "--scale", "2", "--out", "u.json"]);
    let v: serde_json::Value = serde_json::from_slice(&read(&sb.path("u.json"))).unwrap();
    let f0 = &v["frames"][0];
    assert_eq!(f0.as_array().unwrap().len(), 25);
    assert_eq!(f0[3][0].as_f64().unwrap(), 0.6000000000000001);
    assert_eq!(f0[24], f0[0]);
}
