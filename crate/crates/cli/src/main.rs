use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use noro::app::{
    convert_wav, eval_robustness, eval_sv, read_trials, synth_dataset, train, Checkpoint, Dataset,
    Manifest, NoroModel, SynthSpec, TrainConfig,
};
use noro::dsp::read_wav;

#[derive(Parser)]
#[command(name = "noro", version, about = "Noise-robust one-shot voice conversion toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic multi-speaker corpus, noise set and trial list.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        speakers: usize,
        #[arg(long, default_value_t = 20)]
        utts: usize,
    },
    /// Train a baseline model, or fine-tune one in noro mode.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        warm_start: Option<PathBuf>,
        /// Checkpoint path; metrics go to `<out>.metrics.jsonl` unless `--metrics` is given.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Convert a source utterance to the reference speaker's voice (log-mel JSON).
    Convert {
        #[arg(long)]
        src: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Speaker verification EER of the reference encoder.
    EvalSv {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare clean/noisy embedding geometry of two checkpoints.
    EvalRobustness {
        #[arg(long)]
        ckpt_a: PathBuf,
        #[arg(long)]
        ckpt_b: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_model(path: &Path) -> Result<NoroModel> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(NoroModel::from_checkpoint(&ckpt)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData {
            out,
            seed,
            speakers,
            utts,
        } => {
            let spec = SynthSpec {
                n_speakers: speakers,
                utts_per_speaker: utts,
                seed,
                ..SynthSpec::default()
            };
            let o = synth_dataset(&out, &spec)?;
            println!("{}", o.train_manifest.display());
        }
        Command::Train {
            config,
            manifest,
            warm_start,
            out,
            metrics,
        } => {
            let config = TrainConfig::load(&config)?.with_env_overrides()?;
            let manifest = Manifest::load(&manifest)?;
            let warm = warm_start.map(Checkpoint::load).transpose()?;
            let data = Dataset::load(&manifest, config.semantic_mean_norm)?;
            let metrics = metrics.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".metrics.jsonl");
                p.into()
            });
            let mut log = BufWriter::new(File::create(&metrics)?);
            let (model, step) = train(&config, &data, warm.as_ref(), |m| {
                serde_json::to_writer(&mut log, m)?;
                log.write_all(b"\n")?;
                Ok(())
            })?;
            log.flush()?;
            model.to_checkpoint(step).save(&out)?;
        }
        Command::Convert {
            src,
            reference,
            ckpt,
            steps,
            seed,
            out,
        } => {
            let model = load_model(&ckpt)?;
            let mel = convert_wav(&model, &read_wav(&src)?, &read_wav(&reference)?, steps, seed)?;
            mel.save(&out)?;
        }
        Command::EvalSv { ckpt, trials, out } => {
            let model = load_model(&ckpt)?;
            let report = eval_sv(&model, &read_trials(&trials)?)?;
            write_json(&out, &report)?;
        }
        Command::EvalRobustness {
            ckpt_a,
            ckpt_b,
            manifest,
            seed,
            out,
        } => {
            let a = load_model(&ckpt_a)?;
            let b = load_model(&ckpt_b)?;
            let report = eval_robustness(&a, &b, &Manifest::load(&manifest)?, seed)?;
            write_json(&out, &report)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
