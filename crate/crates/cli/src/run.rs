//! Run directories, configuration files and JSON-lines logs.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use xspecies_core::pipeline::RunConfig;
use xspecies_core::train::StepRecord;

use crate::error::{CliError, CliResult};

/// Overrides `--run-dir` when set.
pub const RUN_DIR_ENV: &str = "XSPECIES_RUN_DIR";
pub const DEFAULT_RUN_DIR: &str = "runs/default";

pub fn resolve_run_dir(flag: Option<&Path>) -> PathBuf {
    match std::env::var_os(RUN_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(DEFAULT_RUN_DIR)),
    }
}

/// Parses a configuration document; unknown keys are rejected.
pub fn parse_config(text: &str) -> CliResult<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => parse_config(&std::fs::read_to_string(p)?),
    }
}

pub fn checkpoint_path(run_dir: &Path) -> PathBuf {
    run_dir.join("checkpoint.xsck")
}

/// Appends one JSON object per line.
pub struct JsonLog {
    out: BufWriter<File>,
}

impl JsonLog {
    pub fn open(run_dir: &Path, name: &str) -> CliResult<Self> {
        std::fs::create_dir_all(run_dir)?;
        let f = OpenOptions::new().create(true).append(true).open(run_dir.join(name))?;
        Ok(Self { out: BufWriter::new(f) })
    }

    pub fn write(&mut self, v: &Value) -> CliResult<()> {
        serde_json::to_writer(&mut self.out, v)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn step(&mut self, r: &StepRecord) -> CliResult<()> {
        self.write(&step_json(r))
    }

    pub fn flush(&mut self) -> CliResult<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn step_json(r: &StepRecord) -> Value {
    let mut m = Map::new();
    m.insert("stage".into(), json!(r.stage));
    m.insert("step".into(), json!(r.step));
    for (k, v) in &r.losses {
        m.insert((*k).into(), json!(v));
    }
    Value::Object(m)
}
