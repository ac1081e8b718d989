use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use tablemetric::dataset::{self, corpus_stats, generate_synthetic, DatasetError, SynthSpec};
use tablemetric::training::{self, Ablation, TrainConfig, TrainError};
use tablemetric::TableInstance;

#[derive(Parser)]
#[command(name = "tablemetric", version, about = "Metric-type identification for multi-level header tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print corpus statistics as JSON.
    Stats { corpus: PathBuf },
    /// Check every record; invalid ones go to a quarantine file next to the corpus.
    Validate { corpus: PathBuf },
    /// Write a synthetic corpus.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON generator spec.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Train a model and write a checkpoint directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint; writes the report JSON and a confusion-matrix CSV.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Defaults to the report path with a `.confusion.csv` extension.
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Write per-table predictions as JSON.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train with one ablation flag and score on the test split.
    Ablate {
        #[arg(long, value_parser = parse_flag)]
        flag: Ablation,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

fn parse_flag(s: &str) -> Result<Ablation, String> {
    Ablation::parse(s).ok_or_else(|| format!("unknown flag {s}; expected no_copy, no_generation or no_segment_embeddings"))
}

/// Exit status for an error chain: 2 usage, 3 data, 4 training.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return e.exit_code() as u8;
        }
        if cause.downcast_ref::<DatasetError>().is_some() || cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    4
}

fn load_tables(path: &Path) -> Result<Vec<TableInstance>> {
    let loaded = dataset::load_corpus(path).with_context(|| format!("loading {}", path.display()))?;
    if !loaded.quarantined.is_empty() {
        let q = dataset::write_quarantine(path, &loaded.quarantined)?;
        eprintln!(
            "{}: {} invalid record(s) skipped, see {}",
            path.display(),
            loaded.quarantined.len(),
            q.display()
        );
    }
    Ok(loaded.tables)
}

fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut config = TrainConfig::from_json(&text)?;
    config.apply_env()?;
    Ok(config)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats { corpus } => {
            let tables = load_tables(&corpus)?;
            println!("{}", serde_json::to_string_pretty(&corpus_stats(&tables))?);
        }
        Command::Validate { corpus } => {
            let loaded = dataset::load_corpus(&corpus)?;
            println!("valid: {}  quarantined: {}", loaded.tables.len(), loaded.quarantined.len());
            if !loaded.quarantined.is_empty() {
                let q = dataset::write_quarantine(&corpus, &loaded.quarantined)?;
                println!("quarantine file: {}", q.display());
                for r in &loaded.quarantined {
                    println!("  #{} {}: {}", r.index, r.id, r.violations.join("; "));
                }
                return Err(DatasetError::Schema {
                    index: loaded.quarantined[0].index,
                    message: format!("{} invalid record(s)", loaded.quarantined.len()),
                }
                .into());
            }
        }
        Command::Synth { seed, size, out, spec } => {
            let spec: SynthSpec = match spec {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?)
                    .map_err(|e| TrainError::Config(format!("{}: {e}", p.display())))?,
                None => SynthSpec::default(),
            };
            dataset::save_corpus(&out, &generate_synthetic(seed, size, &spec))?;
        }
        Command::Train { config, train, val, out } => {
            let config = load_config(&config)?;
            let train_set = load_tables(&train)?;
            let val_set = load_tables(&val)?;
            let outcome = training::train_with_log(&config, &train_set, &val_set, |e| {
                eprintln!(
                    "epoch {:>3}  loss {:.5}  lr {:.3e}  val {:.4}{}",
                    e.epoch,
                    e.mean_loss,
                    e.lr,
                    e.val_metric,
                    if e.improved { "  *" } else { "" }
                );
            })?;
            training::save_checkpoint(&out, &config, &outcome)?;
            eprintln!("kept epoch {}  {}", outcome.best_epoch, outcome.val_report.summary_line());
        }
        Command::Evaluate { checkpoint, test, report, confusion } => {
            let (model, manifest) = training::load_checkpoint(&checkpoint)?;
            let tables = load_tables(&test)?;
            let config_path = checkpoint.join(training::CONFIG_FILE);
            let convention = std::fs::read_to_string(&config_path)
                .ok()
                .and_then(|s| TrainConfig::from_json(&s).ok())
                .map(|c| c.level_convention)
                .unwrap_or_default();
            let mut r = training::evaluate(&model, &tables, convention)?;
            r.notes.push(format!("checkpoint_config={}", manifest.config_hash));
            write_file(&report, &r.to_json())?;
            let csv_path = confusion.unwrap_or_else(|| report.with_extension("confusion.csv"));
            write_file(&csv_path, &r.confusion.to_csv())?;
            println!("{}", r.summary_line());
        }
        Command::Predict { checkpoint, input, out } => {
            let (model, _) = training::load_checkpoint(&checkpoint)?;
            let tables = load_tables(&input)?;
            let preds = model.predict_all(&tables)?;
            write_file(&out, &serde_json::to_string_pretty(&preds)?)?;
        }
        Command::Ablate { flag, config, train, val, test, report } => {
            let config = load_config(&config)?;
            let r = training::ablate(&config, flag, &load_tables(&train)?, &load_tables(&val)?, &load_tables(&test)?)?;
            write_file(&report, &r.to_json())?;
            println!("{}", r.summary_line());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
