//! Subcommands behind the `genli` binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::CliConfig;
use crate::data::{load_dataset, write_synthetic, Vocabulary};
use crate::error::{GenliError, Result};
use crate::evalbench::bench::{bench_scoring, detail_csv, length_fit, pooled_width_ratio, results_csv};
use crate::evalbench::eval::eval_model;
use crate::evalbench::latency::{bench_latency, latency_csv};
use crate::evalbench::plot::{plot_file, ChartSpec};
use crate::model::Model;
use crate::nn::ParameterStore;
use crate::trainer::{train, TrainOptions};

#[derive(Debug, Parser)]
#[command(
    name = "genli",
    version,
    about = "Generative long-term interest CTR model: data, training, evaluation and benchmarks"
)]
#[command(after_long_help = CliConfig::key_listing())]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML config file; missing keys take their defaults.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.lr=0.01`. Wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the planted-interest synthetic dataset.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train a model on a generated (or compatible) dataset directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory with train.tsv, valid.tsv and the vocabularies.
        #[arg(long, short)]
        data: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Continue from a per-epoch checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// AUC and stage timings of a trained model.
    Eval {
        /// Output directory of `train`; its config.toml is the base config.
        #[arg(long, short)]
        model: PathBuf,
        /// Record file to score.
        #[arg(long, short)]
        data: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Overrides on top of the model's config (architecture keys must not change).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Scoring-cost and end-to-end latency benchmarks.
    Bench {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
    },
    /// Line chart (SVG) from a long-format CSV table.
    Plot {
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        /// Columns naming a series; repeatable.
        #[arg(long)]
        series: Vec<String>,
        /// Keep rows with COLUMN=VALUE; repeatable.
        #[arg(long, value_name = "COLUMN=VALUE")]
        filter: Vec<String>,
        #[arg(long)]
        log_x: bool,
        #[arg(long)]
        log_y: bool,
        #[arg(long, default_value = "")]
        title: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Scoring,
    Latency,
    All,
}

const MODEL_FILE: &str = "model.ckpt";

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)
        .map_err(|e| GenliError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| GenliError::config(format!("cannot create output directory {}: {e}", dir.display())))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(GenliError::config(format!("{} does not exist", path.display())))
    }
}

fn load_vocabs(dir: &Path) -> Result<(Vocabulary, Vocabulary)> {
    Ok((Vocabulary::load(&dir.join("item.vocab"), "item")?, Vocabulary::load(&dir.join("category.vocab"), "category")?))
}

/// A trained model directory loaded back into memory.
pub struct Trained {
    pub cfg: CliConfig,
    pub model: Model,
    pub store: ParameterStore,
    pub items: Vocabulary,
    pub categories: Vocabulary,
}

impl Trained {
    /// Reads config.toml, the vocabularies and model.ckpt written by `train`.
    pub fn load(dir: &Path, overrides: &[String]) -> Result<Self> {
        let config_path = dir.join("config.toml");
        require_file(&config_path)?;
        require_file(&dir.join(MODEL_FILE))?;
        let cfg = CliConfig::load(Some(&config_path), overrides)?;
        let (items, categories) = load_vocabs(dir)?;
        let mut store = ParameterStore::new();
        let model = Model::new(cfg.model.clone(), items.len(), categories.len(), cfg.train.seed, &mut store)?;
        store.load(&dir.join(MODEL_FILE))?;
        Ok(Trained { cfg, model, store, items, categories })
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { cfg, out } => {
            let cfg = CliConfig::load(cfg.config.as_deref(), &cfg.overrides)?;
            prepare_dir(&out)?;
            cfg.echo(&out)?;
            let files = write_synthetic(&cfg.data, cfg.valid_ratio, &out)?;
            println!("train {} ({} samples)", files.train.display(), files.train_samples);
            println!("valid {} ({} samples)", files.valid.display(), files.valid_samples);
            println!("samples {}", files.train_samples + files.valid_samples);
            Ok(())
        }
        Command::Train { cfg, data, out, resume } => {
            let cfg = CliConfig::load(cfg.config.as_deref(), &cfg.overrides)?;
            for f in ["train.tsv", "valid.tsv", "item.vocab", "category.vocab"] {
                require_file(&data.join(f))?;
            }
            if let Some(r) = &resume {
                require_file(r)?;
            }
            prepare_dir(&out)?;
            cfg.echo(&out)?;
            let (items, cats) = load_vocabs(&data)?;
            items.save(&out.join("item.vocab"))?;
            cats.save(&out.join("category.vocab"))?;
            let seq_len = cfg.data.seq_len;
            let train_set =
                load_dataset(&data.join("train.tsv"), seq_len, Some((items.clone(), cats.clone())))?.dataset;
            let valid_set =
                load_dataset(&data.join("valid.tsv"), seq_len, Some((items.clone(), cats.clone())))?.dataset;
            let mut store = ParameterStore::new();
            let model = Model::new(cfg.model.clone(), items.len(), cats.len(), cfg.train.seed, &mut store)?;
            let opts = TrainOptions { checkpoint_dir: Some(out.join("checkpoints")), resume };
            let report = train(&model, &mut store, &train_set, Some(&valid_set), &cfg.train, &opts)?;
            store.save(&out.join(MODEL_FILE))?;
            write(&out.join("report.csv"), &report.to_csv())?;
            write(&out.join("timings.csv"), &report.timings_csv())?;
            if let Some(last) = report.epochs.last() {
                println!(
                    "trained {} epochs, final loss {:.5}, valid auc {:?}",
                    report.epochs.len(),
                    last.total,
                    last.valid_auc
                );
            }
            println!("model {}", out.join(MODEL_FILE).display());
            Ok(())
        }
        Command::Eval { model: dir, data, out, overrides } => {
            require_file(&data)?;
            let t = Trained::load(&dir, &overrides)?;
            prepare_dir(&out)?;
            t.cfg.echo(&out)?;
            let set = load_dataset(&data, t.cfg.data.seq_len, Some((t.items.clone(), t.categories.clone())))?.dataset;
            let report = eval_model(&t.model, &t.store, &set, t.cfg.train.eval_batch)?;
            write(&out.join("eval.csv"), &report.to_csv())?;
            write(&out.join("eval_timings.csv"), &report.timings_csv())?;
            println!("auc {:.6} over {} samples", report.auc, report.samples);
            Ok(())
        }
        Command::Bench { cfg, out, suite } => {
            let cfg = CliConfig::load(cfg.config.as_deref(), &cfg.overrides)?;
            prepare_dir(&out)?;
            cfg.echo(&out)?;
            if suite != Suite::Latency {
                let results = bench_scoring(&cfg.bench)?;
                write(&out.join("scoring.csv"), &results_csv(&results))?;
                write(&out.join("scoring_detail.csv"), &detail_csv(&results))?;
                let mut summary = String::from("method,width_ratio,length_r2\n");
                let w0 = cfg.bench.widths[0];
                for &m in &cfg.bench.methods {
                    let ratio = pooled_width_ratio(&results, m).map(|r| format!("{r:.3}")).unwrap_or_default();
                    let r2 = length_fit(&results, m, w0).map(|r| format!("{r:.4}")).unwrap_or_default();
                    summary.push_str(&format!("{},{ratio},{r2}\n", m.name()));
                }
                write(&out.join("scoring_summary.csv"), &summary)?;
                print!("{summary}");
            }
            if suite != Suite::Scoring {
                let results = bench_latency(&cfg.model, &cfg.latency)?;
                let text = latency_csv(&results);
                write(&out.join("latency.csv"), &text)?;
                print!("{text}");
            }
            Ok(())
        }
        Command::Plot { input, out, x, y, series, filter, log_x, log_y, title } => {
            require_file(&input)?;
            let filter = filter
                .iter()
                .map(|f| {
                    f.split_once('=')
                        .map(|(c, v)| (c.to_owned(), v.to_owned()))
                        .ok_or_else(|| GenliError::config(format!("filter '{f}' is not COLUMN=VALUE")))
                })
                .collect::<Result<Vec<_>>>()?;
            let spec = ChartSpec { x, y, series, filter, log_x, log_y, title };
            plot_file(&input, &out, &spec)?;
            println!("chart {}", out.display());
            Ok(())
        }
    }
}
