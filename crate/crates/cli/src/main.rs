//! `xspecies` command-line entry point.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use xspecies::commands;
use xspecies::checkpoint;
use xspecies::run::{checkpoint_path, load_config, resolve_run_dir, JsonLog};
use xspecies::{CliError, CliResult};
use xspecies_core::dataset::ToyDatasetConfig;

#[derive(Parser)]
#[command(name = "xspecies", version, about = "Cross-species motion toolkit")]
struct Cli {
    /// Run directory for checkpoints and logs (overridden by XSPECIES_RUN_DIR).
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Embedding sidecar used in place of the hash encoders.
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Dataset utilities.
    Dataset {
        #[command(subcommand)]
        cmd: DatasetCmd,
    },
    /// Train one stage: cgae, ae, mcm, gen or matcher.
    Train {
        stage: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Overrides the configured step count for this stage.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Generate a motion for a caption and species.
    Generate {
        #[arg(long)]
        caption: String,
        #[arg(long)]
        species: String,
        #[arg(long, default_value_t = 64)]
        len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// In-fill a gap between two records of the container.
    Transition {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        from: usize,
        #[arg(long)]
        to: usize,
        /// Gap length in latent rows.
        #[arg(long, default_value_t = 4)]
        gap: usize,
        /// Defaults to the first caption of the target record.
        #[arg(long)]
        caption: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained run on its test splits.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Map source-skeleton joints onto the unified skeleton.
    Retarget {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write SVG trajectory and seam plots for a motion file.
    ExportPlot {
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Build the procedural toy dataset.
    Gen {
        #[arg(long)]
        out: PathBuf,
        /// JSON dataset configuration; defaults apply when omitted.
        #[arg(long)]
        dataset_config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Split a container and write its manifest.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "holdout")]
        holdout: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a container.
    Inspect {
        #[arg(long)]
        data: PathBuf,
    },
}

fn dataset_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<ToyDatasetConfig> {
    let mut cfg: ToyDatasetConfig = match path {
        None => ToyDatasetConfig::default(),
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?).map_err(|e| CliError::Config(e.to_string()))?,
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<Value> {
    let run_dir = resolve_run_dir(cli.run_dir.as_deref());
    let sidecar = cli.embeddings.as_deref();
    match cli.cmd {
        Cmd::Dataset { cmd } => match cmd {
            DatasetCmd::Gen { out, dataset_config: dc, seed } => commands::dataset_gen(&dataset_config(dc.as_deref(), seed)?, &out),
            DatasetCmd::Split { data, holdout, seed, out } => commands::dataset_split(&data, &holdout, seed, out.as_deref()),
            DatasetCmd::Inspect { data } => commands::dataset_inspect(&data),
        },
        Cmd::Train { stage, data, manifest, steps } => {
            let ck_path = checkpoint_path(&run_dir);
            let mut cfg = if cli.config.is_none() && ck_path.exists() {
                checkpoint::load(&ck_path)?.config
            } else {
                load_config(cli.config.as_deref())?
            };
            if let Some(n) = steps {
                let sched = match stage.as_str() {
                    "cgae" => &mut cfg.cgae_train,
                    "ae" => &mut cfg.ae_train,
                    "mcm" => &mut cfg.mcm_train,
                    "gen" => &mut cfg.gen_train,
                    "matcher" => &mut cfg.matcher_train,
                    other => return Err(CliError::Config(format!("unknown stage {other:?}"))),
                };
                sched.steps = n;
            }
            commands::train(&stage, &cfg, &data, manifest.as_deref(), &run_dir, sidecar)
        }
        Cmd::Generate { caption, species, len, seed, out } => {
            commands::generate(&run_dir, &caption, &species, len, seed, &out, sidecar)
        }
        Cmd::Transition { data, from, to, gap, caption, seed, out } => {
            commands::transition(&run_dir, &data, from, to, gap, caption.as_deref(), seed, &out, sidecar)
        }
        Cmd::Eval { data, manifest, out } => commands::eval(&run_dir, &data, manifest.as_deref(), out.as_deref(), sidecar),
        Cmd::Retarget { input, map, scale, out } => commands::retarget(&input, &map, scale, &out),
        Cmd::ExportPlot { motion, out_dir } => commands::export_plot(&motion, &out_dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run_dir = resolve_run_dir(cli.run_dir.as_deref());
    let result = run(cli);
    let record = match &result {
        Ok(v) => json!({ "status": "ok", "result": v }),
        Err(e) => json!({ "status": "error", "category": e.category(), "message": e.to_string() }),
    };
    if run_dir.exists() {
        if let Ok(mut log) = JsonLog::open(&run_dir, "commands.jsonl") {
            let _ = log.write(&record).and_then(|_| log.flush());
        }
    }
    match result {
        Ok(v) => {
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
