//! `tagformer` command-line interface.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or
//! integrity error, 3 training divergence.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tagformer::commands::{
    cmd_augment_preview, cmd_evaluate, cmd_split, cmd_synth_data, cmd_train_student, cmd_train_teacher, EvaluateArgs,
};
use tagformer::config::RunConfig;
use tagformer::data::{Partition, SplitRatios};
use tagformer::train::StudentMode;
use tagformer::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "tagformer",
    version,
    about = "Music tagging transformer with noisy-student training"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// TOML configuration file (sections: data, synth, dsp, augment, model, train, student, eval).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Global seed; overrides the config file and environment.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data preparation and evaluation.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic tagged corpus (WAVs plus manifest.tsv).
    SynthData {
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        artists: Option<usize>,
        #[arg(long)]
        tracks_per_artist: Option<usize>,
        #[arg(long)]
        tags: Option<usize>,
        #[arg(long)]
        clip_seconds: Option<f64>,
        /// Fraction of the artists' tracks written without tags.
        #[arg(long)]
        unlabeled_fraction: Option<f64>,
        /// Untagged tracks from additional artists.
        #[arg(long)]
        extra_unlabeled: Option<usize>,
    },
    /// Artist-level stratified train/valid/test split of a manifest.
    Split {
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        /// Output split file.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Train,valid,test fractions, e.g. 0.7,0.1,0.2.
        #[arg(long)]
        ratios: Option<String>,
    },
    /// Train a teacher model with supervised learning.
    TrainTeacher {
        #[arg(long, value_name = "FILE")]
        split: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a noisy student from a teacher checkpoint.
    TrainStudent {
        #[arg(long, value_name = "FILE")]
        split: Option<PathBuf>,
        #[arg(long, value_name = "CKPT")]
        teacher: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// ke (student as large as the teacher) or kd (smaller student).
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Evaluate a checkpoint on one split partition.
    Evaluate {
        #[arg(long, value_name = "CKPT")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "FILE")]
        split: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// train, valid or test.
        #[arg(long, default_value = "test")]
        partition: String,
        #[arg(long)]
        chunk_seconds: Option<f64>,
        /// Comma-separated chunk lengths in seconds for the length sweep.
        #[arg(long, value_name = "SECONDS")]
        length_sweep: Option<String>,
    },
    /// Write before/after WAVs for the augmentation chain.
    AugmentPreview {
        #[arg(long, value_name = "WAV")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    flag.or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| Error::Usage("an output location is required (--out or out_dir in the config)".into()))
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Usage(format!("bad number {v:?} in {s:?}")))
        })
        .collect()
}

fn run(cli: Cli, log: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::from_env(cli.global.config.as_deref())?;
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.global.workers {
        cfg.workers = w;
    }
    match cli.command {
        Command::SynthData {
            out,
            artists,
            tracks_per_artist,
            tags,
            clip_seconds,
            unlabeled_fraction,
            extra_unlabeled,
        } => {
            let out = out_dir(out, &cfg)?;
            let s = &mut cfg.synth;
            s.n_artists = artists.unwrap_or(s.n_artists);
            s.tracks_per_artist = tracks_per_artist.unwrap_or(s.tracks_per_artist);
            s.n_tags = tags.unwrap_or(s.n_tags);
            s.clip_seconds = clip_seconds.unwrap_or(s.clip_seconds);
            s.unlabeled_fraction = unlabeled_fraction.unwrap_or(s.unlabeled_fraction);
            s.extra_unlabeled_tracks = extra_unlabeled.unwrap_or(s.extra_unlabeled_tracks);
            cmd_synth_data(&cfg, &out, log)?;
        }
        Command::Split { manifest, out, ratios } => {
            let out = out_dir(out, &cfg)?;
            let ratios = match ratios {
                Some(r) => r.parse::<SplitRatios>()?,
                None => SplitRatios(cfg.data.ratios),
            };
            cmd_split(&manifest, ratios, cfg.seed, &out, log)?;
        }
        Command::TrainTeacher { split, out } => {
            let out = out_dir(out, &cfg)?;
            cmd_train_teacher(&cfg, split.as_deref(), &out, log)?;
        }
        Command::TrainStudent {
            split,
            teacher,
            out,
            mode,
            iterations,
        } => {
            let out = out_dir(out, &cfg)?;
            if let Some(t) = teacher {
                cfg.student.teacher_checkpoint = Some(t);
            }
            if let Some(m) = mode {
                cfg.student.mode = m.parse::<StudentMode>()?;
            }
            if let Some(n) = iterations {
                cfg.student.iterations = n;
            }
            cmd_train_student(&cfg, split.as_deref(), &out, log)?;
        }
        Command::Evaluate {
            checkpoint,
            split,
            out,
            partition,
            chunk_seconds,
            length_sweep,
        } => {
            let out = out_dir(out, &cfg)?;
            let partition = match partition.parse::<Partition>() {
                Ok(p @ (Partition::Train | Partition::Valid | Partition::Test)) => p,
                _ => {
                    return Err(Error::Usage(format!(
                        "--partition must be train, valid or test, got {partition:?}"
                    )))
                }
            };
            if let Some(c) = chunk_seconds {
                cfg.eval.chunk_seconds = c;
            }
            let sweep = length_sweep.as_deref().map(parse_list).transpose()?.unwrap_or_default();
            let args = EvaluateArgs {
                checkpoint: &checkpoint,
                split: split.as_deref(),
                partition,
                sweep: &sweep,
                out_dir: &out,
            };
            cmd_evaluate(&cfg, &args, log)?;
        }
        Command::AugmentPreview { input, out } => {
            let out = out_dir(out, &cfg)?;
            cmd_augment_preview(&input, &cfg.augment, cfg.seed, &out, log)?;
            cfg.write_snapshot(&out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
