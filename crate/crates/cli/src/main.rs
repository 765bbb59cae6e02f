use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use cvbm::ablation::{ablation_csv, run_ablation, variant_means, METRIC_NAMES};
use cvbm::datasets::{generate_synthetic, DatasetManifest};
use cvbm::network::load_checkpoint;
use cvbm::plot::render_run;
use cvbm::theory::verify;
use cvbm::trainer::{
    evaluate, pretrain_teacher, split_ids, train_student_from_checkpoint, write_config_echo, write_metrics, RunConfig,
    TrainData, STUDENT_CKPT,
};
use cvbm::Error;

#[derive(Parser, Debug)]
#[command(name = "cvbm", version, about = "Semi-supervised segmentation lab on synthetic 2-D data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct Common {
    /// JSON config; unspecified keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted override, e.g. `--set trainer.lr=0.02`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset to `data.path`.
    GenerateData {
        #[command(flatten)]
        common: Common,
    },
    /// Pre-train the teacher on labeled data.
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Self-train the student from `teacher.ckpt`.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint's foreground branch.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to score; defaults to the student in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test", value_parser = ["labeled", "unlabeled", "test"])]
        split: String,
    },
    /// Run the supervised baseline and the four component variants.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Check the entropy bounds and the descent condition numerically.
    VerifyTheory {
        #[command(flatten)]
        common: Common,
    },
    /// Render the run's CSVs as SVG charts.
    Plot {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenerateData { common }
            | Command::Pretrain { common }
            | Command::Train { common }
            | Command::Evaluate { common, .. }
            | Command::Ablate { common, .. }
            | Command::VerifyTheory { common }
            | Command::Plot { common } => common,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NotFound(_) | Error::Corruption { .. } | Error::Io { .. } => 3,
        _ => 2,
    }
}

fn fail(code: u8, kind: &str, detail: &str) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "detail": detail }));
    ExitCode::from(code)
}

fn write(path: &Path, text: &str) -> cvbm::Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn resolve(cmd: &Command) -> cvbm::Result<RunConfig> {
    let c = cmd.common();
    let mut overrides = c.overrides.clone();
    if let Some(out) = &c.out {
        overrides.push(format!("output_dir={}", serde_json::Value::String(out.display().to_string())));
    }
    if let Some(seed) = c.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Command::Ablate { seeds: Some(n), .. } = cmd {
        overrides.push(format!("ablation.seeds={n}"));
    }
    RunConfig::resolve(c.config.as_deref(), &overrides)
}

fn run(cmd: &Command, cfg: &RunConfig) -> cvbm::Result<serde_json::Value> {
    let out = &cfg.output_dir;
    match cmd {
        Command::GenerateData { .. } => {
            let m = generate_synthetic(&cfg.data.generator, cfg.seed, &cfg.data.path)?;
            Ok(json!({
                "dataset": cfg.data.path,
                "labeled": m.labeled_ids.len(),
                "unlabeled": m.unlabeled_ids.len(),
                "test": m.test_ids.len(),
            }))
        }
        Command::Pretrain { .. } => {
            let t = pretrain_teacher(cfg)?;
            Ok(json!({ "checkpoint": out.join("teacher.ckpt"), "steps": t.step }))
        }
        Command::Train { .. } => {
            let (s, _) = train_student_from_checkpoint(cfg)?;
            Ok(json!({ "checkpoint": out.join(STUDENT_CKPT), "steps": s.step }))
        }
        Command::Evaluate { checkpoint, split, .. } => {
            let path = checkpoint.clone().unwrap_or_else(|| out.join(STUDENT_CKPT));
            let model = load_checkpoint(&path)?;
            let manifest = DatasetManifest::load(&cfg.data.path)?;
            let (labeled, unlabeled) = split_ids(&manifest, cfg.data.labeled_ratio);
            let ids = match split.as_str() {
                "labeled" => labeled,
                "unlabeled" => unlabeled,
                _ => manifest.test_ids.clone(),
            };
            let report = evaluate(cfg, &model, &ids)?;
            write_metrics(cfg, &report)?;
            Ok(json!({
                "dsc": report.mean.dsc,
                "jaccard": report.mean.jaccard,
                "hd95": report.mean.hd95,
                "asd": report.mean.asd,
                "excluded": report.mean.excluded,
            }))
        }
        Command::Ablate { .. } => {
            let data = TrainData::load(cfg)?;
            let rows = run_ablation(cfg, &data)?;
            write(&out.join("ablation.csv"), &ablation_csv(&rows))?;
            let mut summary = serde_json::Map::new();
            for m in METRIC_NAMES {
                let means: serde_json::Map<String, serde_json::Value> = variant_means(&rows, m)
                    .into_iter()
                    .map(|(v, x)| (v.name().to_string(), json!(x)))
                    .collect();
                summary.insert(m.to_string(), means.into());
            }
            let summary = serde_json::Value::Object(summary);
            write(&out.join("ablation_summary.json"), &serde_json::to_string_pretty(&summary)?)?;
            Ok(summary)
        }
        Command::VerifyTheory { .. } => {
            let run = verify(&cfg.theory)?;
            write(&out.join("theory_report.csv"), &run.report_csv())?;
            write(&out.join("theory_bounds.csv"), &run.grid_csv())?;
            write(&out.join("theory_summary.json"), &serde_json::to_string_pretty(&run.summary)?)?;
            Ok(serde_json::to_value(&run.summary)?)
        }
        Command::Plot { .. } => {
            let files = render_run(out, &out.join("plots"))?;
            Ok(json!({ "plots": files }))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            return fail(2, "usage", e.to_string().trim());
        }
    };
    let cfg = match resolve(&cli.command) {
        Ok(c) => c,
        Err(e) => return fail(exit_code(&e), e.kind(), &e.to_string()),
    };
    if let Err(e) = fs::create_dir_all(&cfg.output_dir) {
        return fail(3, "io", &format!("{}: {e}", cfg.output_dir.display()));
    }
    if let Err(e) = write_config_echo(&cfg) {
        return fail(exit_code(&e), e.kind(), &e.to_string());
    }
    match run(&cli.command, &cfg) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(exit_code(&e), e.kind(), &e.to_string()),
    }
}
