use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use glance_core::metrics::MetricReport;
use glance_core::model::load_checkpoint;
use glance_core::pipeline::{
    ablate, extract_features, read_json, report, table_folds, train_phase1_with, train_phase2, write_json,
    write_phase1, AblationReport, FeatureTable, PipelineConfig, ABLATION_FILE, CHECKPOINT_FILE, EVAL_FILE,
    FEATURES_FILE, PHASE2_FILE, REPORT_DIR,
};
use glance_core::synth::{generate, read_dataset, write_dataset, GaitSequence, SynthConfig};
use glance_core::{Error, Result};

#[derive(Parser)]
#[command(name = "glance", version, about = "Health indicators from gait video via pose pre-training")]
struct Cli {
    /// Pipeline configuration (JSON); missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Split {
    Phase1,
    Benchmark,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic gait dataset.
    SynthData {
        #[arg(long, value_enum, default_value = "phase1")]
        split: Split,
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        sequences_per_subject: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        fps: Option<f64>,
    },
    /// Pose pre-training; writes checkpoint, loss log and held-out metrics.
    TrainPhase1 {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Frozen last-frame features of a dataset, average-pooled.
    ExtractFeatures {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        pool_factor: Option<usize>,
    },
    /// Cross-validated indicator regression on a feature table.
    TrainPhase2 {
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Pose metrics of a checkpoint on a dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Both phases for every encoder variant.
    Ablate {
        #[arg(long)]
        phase1_data: Option<PathBuf>,
        #[arg(long)]
        benchmark_data: Option<PathBuf>,
    },
    /// Collate a run directory into a JSON + CSV bundle.
    Report {
        #[arg(long)]
        run: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    Ok(config)
}

fn run_dir(cli: &Cli, config: &PipelineConfig) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| config.paths.run_dir.clone())
}

fn dataset_or_generate(dir: Option<&Path>, synth: &SynthConfig) -> Result<Vec<GaitSequence>> {
    match dir {
        Some(d) => read_dataset(d),
        None => generate(synth),
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let mut config = load_config(&cli)?;
    match &cli.command {
        Command::SynthData {
            split,
            subjects,
            frames,
            sequences_per_subject,
            height,
            width,
            fps,
        } => {
            let (mut synth, default_dir) = match split {
                Split::Phase1 => (config.phase1_data.clone(), config.paths.phase1_data.clone()),
                Split::Benchmark => (config.benchmark.clone(), config.paths.benchmark_data.clone()),
            };
            if let Some(seed) = cli.seed {
                synth.seed = seed;
            }
            synth.subjects = subjects.unwrap_or(synth.subjects);
            synth.frames = frames.unwrap_or(synth.frames);
            synth.sequences_per_subject = sequences_per_subject.unwrap_or(synth.sequences_per_subject);
            synth.height = height.unwrap_or(synth.height);
            synth.width = width.unwrap_or(synth.width);
            synth.fps = fps.unwrap_or(synth.fps);
            let dir = cli.out.clone().unwrap_or(default_dir);
            let seqs = generate(&synth)?;
            let manifest = write_dataset(&seqs, &dir, synth.seed)?;
            let warned = seqs.iter().filter(|s| !s.coverage_warnings.is_empty()).count();
            Ok(json!({
                "command": "synth-data",
                "manifest": path_str(&manifest),
                "sequences": seqs.len(),
                "sequences_with_coverage_warnings": warned,
                "seed": synth.seed,
            }))
        }
        Command::TrainPhase1 { data, epochs } => {
            if let Some(e) = epochs {
                config.train.epochs = *e;
            }
            let dir = run_dir(&cli, &config);
            let data_dir = data.clone().unwrap_or_else(|| config.paths.phase1_data.clone());
            let seqs = read_dataset(&data_dir)?;
            let out = train_phase1_with(&config, &seqs, |m| {
                eprintln!("{}", serde_json::to_string(m).unwrap_or_default());
            })?;
            write_phase1(&out, &dir)?;
            write_json(&dir.join("config.json"), &config)?;
            Ok(json!({
                "command": "train-phase1",
                "checkpoint": path_str(&dir.join(CHECKPOINT_FILE)),
                "steps": out.loss_log.len(),
                "heldout": out.heldout.aggregate,
            }))
        }
        Command::ExtractFeatures {
            checkpoint,
            data,
            pool_factor,
        } => {
            let dir = run_dir(&cli, &config);
            let ckpt = checkpoint.clone().unwrap_or_else(|| dir.join(CHECKPOINT_FILE));
            let model = load_checkpoint(&ckpt)?;
            let data_dir = data.clone().unwrap_or_else(|| config.paths.benchmark_data.clone());
            let seqs = read_dataset(&data_dir)?;
            let table = extract_features(&model, &seqs, pool_factor.unwrap_or(config.pool_factor))?;
            let path = dir.join(FEATURES_FILE);
            write_json(&path, &table)?;
            Ok(json!({
                "command": "extract-features",
                "features": path_str(&path),
                "rows": table.rows.len(),
                "feature_dim": table.feature_dim,
            }))
        }
        Command::TrainPhase2 { features } => {
            let dir = run_dir(&cli, &config);
            let path = features.clone().unwrap_or_else(|| dir.join(FEATURES_FILE));
            let table: FeatureTable = read_json(&path)?;
            let folds = table_folds(&config, &table)?;
            let result = train_phase2(&table, &folds, &config.svr, &config.indicators)?;
            glance_core::pipeline::audit_leakage(&result, &table, &folds)?;
            let out = dir.join(PHASE2_FILE);
            write_json(&out, &result)?;
            write_json(&dir.join("folds.json"), &folds)?;
            let summary: serde_json::Map<String, serde_json::Value> = result
                .aggregate
                .iter()
                .map(|(k, v)| (k.clone(), json!(v.to_string())))
                .collect();
            Ok(json!({"command": "train-phase2", "report": path_str(&out), "mae_mape": summary}))
        }
        Command::Evaluate { checkpoint, data } => {
            let dir = run_dir(&cli, &config);
            let ckpt = checkpoint.clone().unwrap_or_else(|| dir.join(CHECKPOINT_FILE));
            let model = load_checkpoint(&ckpt)?;
            let data_dir = data.clone().unwrap_or_else(|| config.paths.benchmark_data.clone());
            let seqs = read_dataset(&data_dir)?;
            let report: MetricReport = model.evaluate(&seqs)?;
            let out = dir.join(EVAL_FILE);
            write_json(&out, &report)?;
            let csv_path = dir.join("eval_timeseries.csv");
            let f = std::fs::File::create(&csv_path).map_err(|e| Error::Io {
                path: csv_path.clone(),
                source: e,
            })?;
            report.write_timeseries_csv(f)?;
            Ok(json!({"command": "evaluate", "report": path_str(&out), "aggregate": report.aggregate}))
        }
        Command::Ablate {
            phase1_data,
            benchmark_data,
        } => {
            let dir = run_dir(&cli, &config);
            let p1 = dataset_or_generate(phase1_data.as_deref(), &config.phase1_data)?;
            let bench = dataset_or_generate(benchmark_data.as_deref(), &config.benchmark)?;
            let table: AblationReport = ablate(&config, &p1, &bench)?;
            let out = dir.join(ABLATION_FILE);
            write_json(&out, &table)?;
            let md = dir.join("ablation.md");
            std::fs::write(&md, table.to_markdown()).map_err(|e| Error::Io { path: md.clone(), source: e })?;
            Ok(json!({"command": "ablate", "report": path_str(&out), "table": path_str(&md)}))
        }
        Command::Report { run } => {
            let dir = run.clone().unwrap_or_else(|| run_dir(&cli, &config));
            let out_dir = if run.is_some() {
                cli.out.clone().unwrap_or_else(|| dir.join(REPORT_DIR))
            } else {
                dir.join(REPORT_DIR)
            };
            let bundle = report(&dir, &out_dir)?;
            Ok(json!({
                "command": "report",
                "bundle": path_str(&out_dir.join("bundle.json")),
                "timeseries_rows": bundle.timeseries_rows,
                "folds": bundle.folds.len(),
            }))
        }
    }
}

fn fail(code: i32, kind: &str, message: String) -> ExitCode {
    eprintln!("{}", json!({"error": {"code": code, "kind": kind, "message": message}}));
    ExitCode::from(u8::try_from(code).unwrap_or(1).max(1))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return fail(64, "usage", e.to_string().trim().to_string());
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.code(), e.kind(), e.to_string()),
    }
}
