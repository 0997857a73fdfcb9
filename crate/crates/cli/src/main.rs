use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use unetseg::data::{synthetic_circles, write_dataset, CirclesConfig};
use unetseg::loss::DiceMode;
use unetseg::train::{self, EvalReport, TrainConfig};
use unetseg::{Error, Result};

/// Binary segmentation with a from-scratch UNet.
#[derive(Parser)]
#[command(name = "unetseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint written by a run with the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write the predicted mask of one image as a {0,255} PNG.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Dice of a checkpoint's predictions over an image<TAB>mask manifest.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "standard")]
        dice_mode: DiceMode,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Per-image CSV report.
        #[arg(long, default_value = "evaluation.csv")]
        report: PathBuf,
    },
    /// Dice between mask files listed as predicted<TAB>truth lines.
    Score {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "standard")]
        dice_mode: DiceMode,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Render train/val loss curves from a metrics CSV.
    PlotLoss {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write a synthetic circles dataset (images/, masks/, manifest.tsv).
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn print_report(report: &EvalReport) {
    for r in &report.rows {
        println!("{}\t{:.6}", r.image.display(), r.dice);
    }
    println!("mean_dice={:.6} count={} mode={:?}", report.mean, report.count(), report.mode);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, resume } => {
            let cfg = TrainConfig::load(&config)?;
            let art = train::train(&cfg, resume.as_deref())?;
            if let Some(last) = art.records.last() {
                println!(
                    "epoch {}: train_loss={:.6} val_loss={:.6} val_dice_mean={:.6}",
                    last.epoch, last.train_loss, last.val_loss, last.val_dice_mean
                );
            }
            println!("checkpoint: {}", art.last_checkpoint.display());
            println!("metrics: {}", art.metrics_csv.display());
        }
        Command::Predict {
            checkpoint,
            input,
            output,
            threshold,
        } => {
            check_threshold(threshold)?;
            train::predict(&checkpoint, &input, &output, threshold)?;
        }
        Command::Evaluate {
            checkpoint,
            manifest,
            dice_mode,
            threshold,
            report,
        } => {
            check_threshold(threshold)?;
            let r = train::evaluate(&checkpoint, &manifest, dice_mode, threshold)?;
            r.write_csv(&report)?;
            print_report(&r);
        }
        Command::Score {
            manifest,
            dice_mode,
            report,
        } => {
            let r = train::score_masks(&manifest, dice_mode)?;
            if let Some(path) = report {
                r.write_csv(&path)?;
            }
            print_report(&r);
        }
        Command::PlotLoss { metrics, output } => train::emit_loss_curve(&metrics, &output)?,
        Command::Synth {
            output,
            count,
            size,
            seed,
        } => {
            let cfg = CirclesConfig {
                count,
                size,
                seed,
                ..Default::default()
            };
            write_dataset(&synthetic_circles(&cfg)?, &output)?;
        }
    }
    Ok(())
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("threshold must be in (0, 1), got {t}")))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
