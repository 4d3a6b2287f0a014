use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hcmamba::config::{Precision, RunConfig};
use hcmamba::data::{generate_synthetic, Split};
use hcmamba::train::{self, report_csv, report_row, REPORT_HEADER};
use hcmamba::{report, Error, Result};

#[derive(Parser)]
#[command(
    name = "hcmamba",
    version,
    about = "HC-Mamba segmentation: data, training, evaluation, reports"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// key = value config file ('#' starts a comment)
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a config key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the synthetic dataset to data_dir
    Generate {
        #[command(flatten)]
        common: Common,
        /// Overwrite a non-empty data_dir
        #[arg(long)]
        force: bool,
    },
    /// Train a model; writes train_log.csv, best/ and last/ to out_dir
    Train {
        #[command(flatten)]
        common: Common,
        /// Resume from this checkpoint directory
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Worker threads for per-sample gradients (results do not depend on it)
        #[arg(long, default_value_t = 1, value_name = "N")]
        threads: usize,
    },
    /// Evaluate a checkpoint on a dataset split
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
        split: String,
    },
    /// Parameter counts per conv variant and receptive-field analysis
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    RunConfig::load(common.config.as_deref(), &common.set)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Generate { common, force } => {
            let cfg = load(&common)?;
            let path = generate_synthetic(&cfg.synthetic(), &cfg.data_dir, force)?;
            println!("{}", path.display());
        }
        Cmd::Train {
            common,
            checkpoint,
            threads,
        } => {
            let cfg = load(&common)?;
            if threads == 0 {
                return Err(Error::Config("--threads must be at least 1".into()));
            }
            println!("{}", train::LOG_HEADER);
            let mut print = |e: &train::EpochLog| println!("{}", e.csv_row());
            let out = match cfg.precision {
                Precision::F32 => train::train::<f32>(&cfg, threads, checkpoint.as_deref(), &mut print)?,
                Precision::F64 => train::train::<f64>(&cfg, threads, checkpoint.as_deref(), &mut print)?,
            };
            println!(
                "best val mIoU {:.4}; checkpoints in {}",
                out.best_val_miou,
                out.out_dir.display()
            );
        }
        Cmd::Eval {
            common,
            checkpoint,
            split,
        } => {
            let cfg = load(&common)?;
            let split: Split = split.parse()?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.out_dir.join("best"));
            let r = match cfg.precision {
                Precision::F32 => train::eval::<f32>(&cfg, &ckpt, split)?,
                Precision::F64 => train::eval::<f64>(&cfg, &ckpt, split)?,
            };
            println!("{REPORT_HEADER}");
            println!("{}", report_row(&r));
            std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
            let csv = cfg.out_dir.join(format!("eval_{split}.csv"));
            std::fs::write(&csv, report_csv(split, &r)).map_err(|e| Error::io(&csv, e))?;
        }
        Cmd::Report { common } => {
            let cfg = load(&common)?;
            print!("{}", report::render(&cfg.model)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.class());
            ExitCode::FAILURE
        }
    }
}
