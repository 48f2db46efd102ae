//! `modelrec` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error or missing input, 2 data or schema
//! error, 3 numeric failure during training.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Deserialize;

use modelrec::corpus::{ingest_files, split, Corpus, ModelMeta, SplitMode, SplitSpec};
use modelrec::eval::DEFAULT_KS;
use modelrec::recommend::{
    probe_prior, replace_pool, standardized_advantage, Candidates, Grouping, PoolEntry, Recommender,
    DEFAULT_BUCKET_TOLERANCE, DEFAULT_MIN_MODELS,
};
use modelrec::synth::{generate_tables, SynthConfig};
use modelrec::train::{train, Checkpoint, TrainConfig, TrainError};

#[derive(Parser)]
#[command(name = "modelrec", version, about = "Rank models for datasets from leaderboard records")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every random choice; overrides seeds in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only log warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Read JSONL records and metadata into a corpus file.
    Ingest {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        datasets: PathBuf,
        /// TOML file listing extra lower-is-better metric patterns.
        #[arg(long)]
        metrics_config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a corpus into train, validation and test corpora.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, conflicts_with = "holdout_keys", required_unless_present = "holdout_keys")]
        fraction: Option<f64>,
        /// File with one dataset or model key per line.
        #[arg(long)]
        holdout_keys: Option<PathBuf>,
        #[arg(long, default_value_t = modelrec::corpus::DEFAULT_VAL_FRACTION)]
        val_fraction: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a scorer and write its best checkpoint.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        /// TOML training config; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// JSONL file receiving one line per epoch.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a test corpus.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
        k: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank candidate models for a dataset known only by its description.
    Recommend {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Text file holding the dataset description.
        #[arg(long)]
        dataset_desc: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long)]
        metric: String,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        /// JSON array of model keys and/or model metadata objects.
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replace each pool member with a comparable-scale recommended model.
    ReplacePool {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON array of {"model", "scale"} entries.
        #[arg(long)]
        pool: PathBuf,
        /// JSON array of {"model", "scale", "availability"?} entries.
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        dataset_desc: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long)]
        metric: String,
        #[arg(long, default_value_t = DEFAULT_BUCKET_TOLERANCE)]
        tolerance: usize,
        /// Only consider catalog entries with this availability tag.
        #[arg(long)]
        require_tag: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report the learned size and family prior of a checkpoint.
    ProbePrior {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean standardized score per size bucket or family.
    Advantage {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum)]
        by: By,
        #[arg(long, default_value_t = DEFAULT_MIN_MODELS)]
        min_models: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus with planted structure.
    Synth {
        /// TOML synth config; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Mask,
    HoldoutDatasets,
    HoldoutModels,
}

#[derive(Clone, Copy, ValueEnum)]
enum By {
    Size,
    Family,
}

/// Bad invocation detected after parsing, e.g. a missing input file.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn input(path: &Path) -> Result<&Path> {
    if !path.is_file() {
        return Err(UsageError(format!("input file not found: {}", path.display())).into());
    }
    Ok(path)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(input(path)?).with_context(|| format!("reading {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    Corpus::load(input(path)?).with_context(|| format!("loading corpus {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(input(path)?).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn description(path: &Path) -> Result<String> {
    Ok(read_text(path)?.trim().to_string())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CandidateEntry {
    Key(String),
    Meta(ModelMeta),
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.common.seed;
    match cli.command {
        Command::Ingest { records, models, datasets, metrics_config, out } => {
            let mc = metrics_config.as_deref().map(input).transpose()?;
            let (corpus, report) = ingest_files(input(&records)?, input(&models)?, input(&datasets)?, mc)?;
            for e in &report.errors {
                warn!("skipped line: {e:?}");
            }
            info!(
                "kept {} of {} records; {} groups; {} models, {} datasets",
                report.records_kept,
                report.records_read,
                corpus.groups().len(),
                corpus.catalog().models().len(),
                corpus.catalog().datasets().len()
            );
            corpus.save(&out).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Split { corpus, mode, fraction, holdout_keys, val_fraction, out_dir } => {
            let corpus = load_corpus(&corpus)?;
            let mode = match mode {
                Mode::Mask => SplitMode::MaskEntries,
                Mode::HoldoutDatasets => SplitMode::HoldoutDatasets,
                Mode::HoldoutModels => SplitMode::HoldoutModels,
            };
            let seed = seed.unwrap_or(0);
            let mut spec = match (fraction, holdout_keys) {
                (Some(f), _) => SplitSpec::fraction(mode, f, seed),
                (None, Some(p)) => {
                    let keys = read_text(&p)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
                    SplitSpec::keys(mode, keys, seed)
                }
                (None, None) => unreachable!("clap requires one of them"),
            };
            spec.val_fraction = val_fraction;
            let s = split(&corpus, &spec)?;
            fs::create_dir_all(&out_dir)?;
            for (name, part) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
                info!("{name}: {} records, {} groups", part.records().len(), part.groups().len());
                part.save(&out_dir.join(format!("{name}.json")))?;
            }
        }
        Command::Train { train: train_path, val, config, out, log } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::from_toml_str(&read_text(&p)?)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let (tr, va) = (load_corpus(&train_path)?, load_corpus(&val)?);
            let mut log_file = log.map(|p| fs::File::create(&p).with_context(|| format!("creating {}", p.display()))).transpose()?;
            let ckpt = train(&tr, &va, &cfg, log_file.as_mut().map(|f| f as &mut dyn std::io::Write))?;
            info!("best epoch {} (validation tau_w {:?})", ckpt.epoch, ckpt.best_val_tau_w);
            ckpt.save(&out)?;
        }
        Command::Evaluate { checkpoint, test, k, out } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let test = load_corpus(&test)?;
            if k.contains(&0) {
                return Err(UsageError("--k values must be at least 1".into()).into());
            }
            let report = Recommender::new(&ckpt)?.evaluate_corpus(&test, &k)?;
            info!("\n{}", report.to_table());
            fs::write(&out, report.to_json() + "\n").with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Recommend { checkpoint, dataset_desc, task, metric, top_k, candidates, out } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let desc = description(&dataset_desc)?;
            let mut cands = Candidates::default();
            if let Some(p) = candidates {
                let mut keys = Vec::new();
                for c in read_json::<Vec<CandidateEntry>>(&p)? {
                    match c {
                        CandidateEntry::Key(k) => keys.push(k),
                        CandidateEntry::Meta(m) => cands.extra.push(m),
                    }
                }
                cands.keys = Some(keys);
            }
            let ranked = Recommender::new(&ckpt)?.recommend_top_k(&desc, &task, &metric, &cands, top_k)?;
            write_json(&out, &ranked)?;
        }
        Command::ReplacePool { checkpoint, pool, catalog, dataset_desc, task, metric, tolerance, require_tag, out } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let pool: Vec<PoolEntry> = read_json(&pool)?;
            let catalog: Vec<PoolEntry> = read_json(&catalog)?;
            let desc = description(&dataset_desc)?;
            let mut rec = Recommender::new(&ckpt)?;
            let out_pool = replace_pool(&mut rec, &pool, &desc, &task, &metric, &catalog, tolerance, require_tag.as_deref())?;
            write_json(&out, &out_pool)?;
        }
        Command::ProbePrior { checkpoint, out } => {
            let report = probe_prior(&load_checkpoint(&checkpoint)?)?;
            info!("size spearman {:.3}, family eta^2 {:.3}", report.size_spearman, report.family_eta_squared);
            write_json(&out, &report)?;
        }
        Command::Advantage { corpus, by, min_models, out } => {
            let grouping = match by {
                By::Size => Grouping::SizeBucket,
                By::Family => Grouping::Family,
            };
            write_json(&out, &standardized_advantage(&load_corpus(&corpus)?, grouping, min_models))?;
        }
        Command::Synth { config, out_dir } => {
            let mut cfg = match config {
                Some(p) => SynthConfig::from_toml_str(&read_text(&p)?)?,
                None => SynthConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let tables = generate_tables(&cfg)?;
            fs::create_dir_all(&out_dir)?;
            tables.write_dir(&out_dir)?;
            info!("{} records for {} models on {} datasets", tables.records.len(), tables.models.len(), tables.datasets.len());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.downcast_ref::<TrainError>().is_some_and(TrainError::is_numeric) {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("{first} (see `modelrec --help`)");
            return ExitCode::from(1);
        }
    };
    let level = if cli.common.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
