//! The `speaker-bases` command line.
//!
//! Usage errors exit with status 2, data and config errors with status 1.
//! Every file written carries the resolved config and seed as comments.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::data::{generate, Dataset, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, impostor_histogram, make_trials, speaker_centroids, TrialList};
use crate::model::Checkpoint;
use crate::training::{gradcheck_suite, train, RunConfig, PRESET_NAMES};

pub const DATASET_FILE: &str = "dataset.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const TRIALS_FILE: &str = "trials.txt";
pub const SCORES_FILE: &str = "scores.txt";
pub const METRICS_FILE: &str = "metrics.toml";
pub const HISTOGRAM_FILE: &str = "histogram.txt";

#[derive(Debug, Parser)]
#[command(name = "speaker-bases", version, about = "Speaker-basis losses: train, evaluate and check gradients on synthetic speakers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData {
        /// Run config whose `[dataset]` section is used; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train a model and write its checkpoint and metric log.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset file; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score trials with a checkpoint and write scores and metrics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Trial list; drawn from the heldout split when omitted.
        #[arg(long)]
        trials: Option<PathBuf>,
        /// Config for the `[eval]` section; defaults to the one stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compare analytic and finite-difference gradients of every loss.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Histogram of pairwise cosines between speaker centroids or bases.
    Histogram {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = HistogramSource::Centroids)]
        source: HistogramSource,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run a named configuration end to end: data, training, evaluation.
    Preset {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(PRESET_NAMES))]
        name: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Print the resolved config and exit.
        #[arg(long)]
        print_config: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum HistogramSource {
    Centroids,
    Bases,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::GenData { config, seed, out } => {
            let mut cfg = load_or_default(config.as_deref())?;
            if let Some(seed) = seed {
                cfg.dataset.seed = seed;
            }
            let ds = generate(&cfg.dataset)?;
            ds.write(&out, Some(&cfg.to_toml()))?;
            println!("wrote {} utterances of {} speakers to {}", ds.len(), ds.n_speakers(), out.display());
        }
        Command::Train { config, data, out_dir } => {
            let cfg = RunConfig::read(&config)?;
            let ds = dataset_for(&cfg, data.as_deref())?;
            train_into(&cfg, &ds, &out_dir)?;
        }
        Command::Eval {
            checkpoint,
            data,
            trials,
            config,
            out_dir,
        } => {
            let ck = Checkpoint::read(&checkpoint)?;
            let cfg = match config {
                Some(path) => RunConfig::read(&path)?,
                None => config_of(&ck)?,
            };
            let ds = Dataset::read(&data)?;
            let trials = match trials {
                Some(path) => TrialList::read(&path)?,
                None => heldout_trials(&cfg, &ds)?,
            };
            eval_into(&cfg, &ck, &ds, &trials, &out_dir)?;
        }
        Command::Gradcheck { seed, out } => {
            let report = gradcheck_suite(seed);
            let text = format!("{report}\n");
            print!("{text}");
            if let Some(path) = out {
                std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
            }
            return Ok(if report.passed() { 0 } else { 1 });
        }
        Command::Histogram {
            checkpoint,
            data,
            source,
            bins,
            out,
        } => {
            let ck = Checkpoint::read(&checkpoint)?;
            let ds = Dataset::read(&data)?;
            let vectors = match source {
                HistogramSource::Bases => ck.head.bases(),
                HistogramSource::Centroids => {
                    let emb = ck.encoder.embed(&ds.features)?;
                    speaker_centroids(&emb, &ds.labels, &ds.indices(Split::Train), ck.head.n_speakers())?
                }
            };
            let hist = impostor_histogram(&vectors, bins)?;
            let provenance = format!("source = {source:?}\nseed = {}\n{}", ck.seed, ck.config.as_deref().unwrap_or(""));
            hist.write(&out, Some(&provenance))?;
            println!("mean pairwise cosine {:.6} over {} pairs", hist.mean, hist.total());
        }
        Command::Preset {
            name,
            seed,
            out_dir,
            print_config,
        } => {
            let cfg = RunConfig::preset(&name, seed)?;
            if print_config {
                print!("{}", cfg.to_toml());
                return Ok(0);
            }
            let Some(out_dir) = out_dir else {
                return Err(Error::config("out_dir", "--out-dir is required unless --print-config is given"));
            };
            run_preset(&cfg, &out_dir)?;
        }
    }
    Ok(0)
}

fn load_or_default(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::read)
}

fn config_of(ck: &Checkpoint) -> Result<RunConfig> {
    match &ck.config {
        Some(text) => RunConfig::from_toml(text),
        None => Err(Error::config("config", "checkpoint carries no config; pass --config")),
    }
}

fn dataset_for(cfg: &RunConfig, path: Option<&Path>) -> Result<Dataset> {
    match path {
        Some(p) => Dataset::read(p),
        None => generate(&cfg.dataset),
    }
}

fn heldout_trials(cfg: &RunConfig, ds: &Dataset) -> Result<TrialList> {
    make_trials(ds, Split::Heldout, cfg.eval.per_speaker_targets, cfg.eval.impostor_ratio, cfg.eval.seed)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes config, checkpoint and metric log into `dir`.
pub fn train_into(cfg: &RunConfig, ds: &Dataset, dir: &Path) -> Result<Checkpoint> {
    create_dir(dir)?;
    cfg.write(&dir.join(CONFIG_FILE))?;
    let outcome = train(cfg, ds)?;
    outcome.checkpoint.write(&dir.join(CHECKPOINT_FILE))?;
    outcome.log.write(&dir.join(LOG_FILE), cfg)?;
    if let Some(last) = outcome.log.steps.last() {
        println!("trained {} steps, final loss {:.6}", outcome.checkpoint.step, last.total);
    }
    Ok(outcome.checkpoint)
}

/// Writes trials, scores, metrics and the centroid histogram into `dir`.
pub fn eval_into(cfg: &RunConfig, ck: &Checkpoint, ds: &Dataset, trials: &TrialList, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let provenance = format!("seed = {}\n{}", cfg.run.seed, cfg.to_toml());
    let result = evaluate(ck, ds, trials, &cfg.eval)?;
    trials.write(&dir.join(TRIALS_FILE), Some(&provenance))?;
    result.scores.write(&dir.join(SCORES_FILE), trials, Some(&provenance))?;
    result.summary.write(&dir.join(METRICS_FILE), Some(&provenance))?;
    result.histogram.write(&dir.join(HISTOGRAM_FILE), Some(&provenance))?;
    let s = &result.summary;
    println!(
        "eer {:.4} at threshold {:.4} ({} targets, {} impostors); alignment mean {:.4}; mean centroid cosine {:.4}",
        s.eer, s.threshold, s.n_targets, s.n_impostors, s.alignment_mean, s.mean_centroid_cosine
    );
    Ok(())
}

pub fn run_preset(cfg: &RunConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let ds = generate(&cfg.dataset)?;
    ds.write(&dir.join(DATASET_FILE), Some(&cfg.to_toml()))?;
    let ck = train_into(cfg, &ds, dir)?;
    let trials = heldout_trials(cfg, &ds)?;
    eval_into(cfg, &ck, &ds, &trials, dir)
}
