use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use instrec::train::render_table;
use instrec_cli::config::PitchInput;
use instrec_cli::{commands, CliError, CliResult, PipelineConfig, CACHE_ENV};

#[derive(Parser)]
#[command(name = "instrec", version, about = "Frame-level instrument recognition pipeline")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override the configuration file.
#[derive(Args)]
struct Overrides {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset root with train_data/, train_labels/, test_data/, test_labels/.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Cache directory (also settable with INSTREC_CACHE_DIR).
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Output directory for checkpoints, logs and reports.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// baseline2d, resblock1d, cqt_hsf, cqt_pitch_f or cqt_pitch_c.
    #[arg(long, global = true)]
    variant: Option<String>,
    #[arg(long, global = true)]
    hsf_order: Option<usize>,
    /// ground_truth or external.
    #[arg(long, global = true, value_parser = parse_pitch)]
    pitch: Option<PitchInput>,
    /// Salience file used when --pitch external.
    #[arg(long, global = true)]
    salience: Option<PathBuf>,
    #[arg(long, global = true)]
    width: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
}

fn parse_pitch(s: &str) -> Result<PitchInput, String> {
    match s {
        "ground_truth" => Ok(PitchInput::GroundTruth),
        "external" => Ok(PitchInput::External),
        other => Err(format!("unknown pitch source {other:?} (expected ground_truth or external)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Cut the dataset into labeled 3-second segments.
    Ingest,
    /// Compute CQT features and training statistics.
    Features,
    /// Train the configured model.
    Train {
        /// Continue from last.ckpt in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Tune per-instrument thresholds on training-set predictions.
    TuneThresholds {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Score the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[arg(long)]
        train_predictions: Option<PathBuf>,
    },
    /// Predict instrument activity for an audio file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        /// Pitch salience for pitch-aware variants, one record per segment.
        #[arg(long)]
        salience_file: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw label and prediction rolls as PNG images.
    Plot {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn effective_config(o: &Overrides) -> CliResult<PipelineConfig> {
    let mut cfg = match &o.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(dir) = std::env::var_os(CACHE_ENV) {
        cfg.paths.cache = dir.into();
    }
    macro_rules! set {
        ($flag:expr => $($field:tt)+) => {
            if let Some(v) = $flag.clone() {
                cfg.$($field)+ = v.into();
            }
        };
    }
    set!(o.dataset => paths.dataset);
    set!(o.cache => paths.cache);
    set!(o.output => paths.output);
    set!(o.variant => model.variant);
    set!(o.hsf_order => model.hsf_order);
    set!(o.pitch => model.pitch);
    set!(o.salience => model.salience_file);
    set!(o.width => model.width);
    set!(o.seed => train.seed);
    set!(o.epochs => train.max_epochs);
    set!(o.batch_size => train.batch_size);
    set!(o.lr => train.initial_lr);
    cfg.validate()?;
    Ok(cfg)
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = effective_config(&cli.overrides)?;
    eprintln!("# effective configuration\n{}", cfg.to_toml());
    match cli.command {
        Command::Ingest => {
            let s = commands::cmd_ingest(&cfg)?;
            if s.cached {
                eprintln!("segment store up to date; nothing to do");
            }
            for (split, c) in &s.splits {
                println!("{split}: {} clips, {} segments", c.clips, c.segments);
            }
        }
        Command::Features => print_json(&commands::cmd_features(&cfg)?),
        Command::Train { resume } => print_json(&commands::cmd_train(&cfg, resume)?),
        Command::TuneThresholds { checkpoint } => {
            print_json(&commands::cmd_tune_thresholds(&cfg, &checkpoint)?.thresholds)
        }
        Command::Eval {
            checkpoint,
            thresholds,
            train_predictions,
        } => {
            let report = commands::cmd_eval(&cfg, &checkpoint, thresholds.as_deref(), train_predictions.as_deref())?;
            print!("{}", render_table(&[(cfg.variant()?.to_string().as_str(), &report)]));
        }
        Command::Predict {
            checkpoint,
            audio,
            salience_file,
            out,
        } => {
            let roll = commands::cmd_predict(&cfg, &checkpoint, &audio, salience_file.as_deref(), &out)?;
            println!("{} frames written to {}", roll.predictions.nrows(), out.display());
        }
        Command::Plot {
            predictions,
            thresholds,
            out,
        } => {
            let index = commands::cmd_plot(&predictions, thresholds.as_deref(), &out)?;
            println!("{} image(s) written to {}", index.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::FAILURE
        }
    }
}

fn report(e: &CliError) {
    eprintln!("{}", e.record());
}
