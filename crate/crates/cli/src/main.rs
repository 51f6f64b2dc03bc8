mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "ca-denoise", version, about = "Noise-classification-aided attention LSTM speech enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand. Precedence: defaults, then the
/// config file, then named flags, then `--set` pairs.
#[derive(Args, Debug, Default)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (relative paths honour $CA_DENOISE_OUT_ROOT).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a mixture corpus and its manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Generate clean speech and noise procedurally.
        #[arg(long)]
        procedural: bool,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
        /// Utterance duration in seconds (procedural).
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        snr_min: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        snr_max: Option<f64>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        valid: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        /// Directory of clean WAV files.
        #[arg(long)]
        clean_dir: Option<PathBuf>,
        /// Directory with one subdirectory of WAV files per noise class.
        #[arg(long)]
        noise_dir: Option<PathBuf>,
        /// Also write every mixture as a WAV file under `<out>/mixtures`.
        #[arg(long)]
        write_mixtures: bool,
    },
    /// Train a model on the train and valid splits of a manifest.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// pure-lstm | att-lstm | ca-att-lstm1 | ca-att-lstm2
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        lr_start: Option<f64>,
        #[arg(long)]
        lr_end: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Continue from `<out>/state.ckpt`.
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs of this session (resumable).
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Evaluate a checkpoint on one or more manifests.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Manifests, optionally named as `NAME=PATH`; one report row each.
        manifests: Vec<String>,
        /// train | valid | test
        #[arg(long)]
        split: Option<String>,
        /// Expected variant; a mismatching checkpoint is rejected.
        #[arg(long)]
        variant: Option<String>,
        /// Write `w` and `y` matrices per utterance under `<out>/spectrograms`.
        #[arg(long)]
        dump_spectrograms: bool,
        /// File of `set=NAME metric=value ...` lines merged into the report.
        #[arg(long)]
        extra_metrics: Option<PathBuf>,
    },
    /// Enhance a single WAV file.
    Denoise {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Expected variant; a mismatching checkpoint is rejected.
        #[arg(long)]
        variant: Option<String>,
        input: PathBuf,
        output: PathBuf,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use ca_denoise::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_) | E::Contract(_) => 1,
                E::NonFinite(_) => 3,
                E::Dimension(_) | E::Input(_) | E::Degenerate(_) | E::Format(_) | E::Io { .. } => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn resolve(common: &Common, pairs: Vec<(&str, Option<String>)>) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &common.config {
        cfg.apply_file(p)?;
    }
    if let Some(out) = &common.out {
        cfg.set("out", &out.display().to_string())?;
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    for (k, v) in pairs {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| ca_denoise::Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v)?;
    }
    Ok(cfg)
}

fn s<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn flag(on: bool) -> Option<String> {
    on.then(|| "true".to_string())
}

fn path(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth {
            common,
            procedural,
            classes,
            per_class,
            duration,
            snr_min,
            snr_max,
            train,
            valid,
            test,
            clean_dir,
            noise_dir,
            write_mixtures,
        } => {
            let cfg = resolve(
                &common,
                vec![
                    ("synth.procedural", flag(procedural)),
                    ("synth.classes", s(&classes)),
                    ("synth.per_class", s(&per_class)),
                    ("synth.duration", s(&duration)),
                    ("synth.snr_min", s(&snr_min)),
                    ("synth.snr_max", s(&snr_max)),
                    ("synth.train", s(&train)),
                    ("synth.valid", s(&valid)),
                    ("synth.test", s(&test)),
                    ("synth.clean_dir", path(&clean_dir)),
                    ("synth.noise_dir", path(&noise_dir)),
                    ("synth.write_mixtures", flag(write_mixtures)),
                ],
            )?;
            commands::synth(&cfg)
        }
        Command::Train {
            common,
            manifest,
            variant,
            window,
            alpha,
            epochs,
            patience,
            lr_start,
            lr_end,
            batch_size,
            resume,
            stop_after,
        } => {
            let cfg = resolve(
                &common,
                vec![
                    ("manifest", path(&manifest)),
                    ("model.variant", variant),
                    ("model.window", s(&window)),
                    ("train.alpha", s(&alpha)),
                    ("train.max_epochs", s(&epochs)),
                    ("train.patience", s(&patience)),
                    ("train.lr_start", s(&lr_start)),
                    ("train.lr_end", s(&lr_end)),
                    ("train.batch_size", s(&batch_size)),
                ],
            )?;
            commands::train(cfg, resume, stop_after)
        }
        Command::Eval { common, checkpoint, manifests, split, variant, dump_spectrograms, extra_metrics } => {
            let cfg = resolve(&common, vec![("checkpoint", path(&checkpoint)), ("split", split)])?;
            commands::eval(&cfg, &manifests, variant.as_deref(), dump_spectrograms, extra_metrics.as_deref())
        }
        Command::Denoise { common, checkpoint, variant, input, output } => {
            let cfg = resolve(&common, vec![("checkpoint", path(&checkpoint))])?;
            commands::denoise(&cfg, variant.as_deref(), &input, &output)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
