//! `dcrec`: preprocess data, train, evaluate, infer, run ablations and sweeps.

mod plot;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dcrec::data::{ingest_interactions, make_synthetic, preprocess};
use dcrec::eval::evaluate;
use dcrec::experiment::{ablate, load_dataset, run_experiment_with, sweep_steps, sweep_tsv, train_model, Suite};
use dcrec::sampler::infer_next_item;
use dcrec::{DcrecModel, ExperimentConfig, InferenceConfig, ItemId, SplitDataset, SyntheticKind};
use log::info;

#[derive(Parser, Debug)]
#[command(name = "dcrec", version, about = "Dual conditional diffusion for sequential recommendation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (TOML or JSON). `DCREC_<KEY>` variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a planted-rule interaction log.
    Synth {
        #[arg(long, default_value = "cycle")]
        kind: SyntheticKind,
        #[arg(long, default_value_t = 2000)]
        users: usize,
        #[arg(long, default_value_t = 50)]
        items: usize,
        #[arg(long, default_value_t = 10)]
        len: usize,
    },
    /// Split an interaction TSV into a dataset directory.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        min_len: Option<usize>,
    },
    /// Train, evaluate on the test split and write a run directory.
    Train {
        /// Dataset directory or raw interaction file.
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        /// Checkpoint directory, or a run directory containing `checkpoint/`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Reverse steps T′; defaults to the config's `inference_steps`.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, value_delimiter = ',', default_value = "5,10")]
        ks: Vec<usize>,
    },
    /// Rank next items for one history.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated history, oldest first. Raw item names when `--data` is given, else internal IDs.
        #[arg(long)]
        history: String,
        /// Dataset directory used to map raw item names.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 10)]
        topk: usize,
    },
    /// Run an ablation suite over several seeds.
    Ablate {
        #[arg(long)]
        suite: Suite,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
    },
    /// Evaluate one checkpoint at several T′ values and time each.
    SweepSteps {
        #[arg(long)]
        data: PathBuf,
        /// Reuses this checkpoint instead of training one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,25,50")]
        steps: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Draw an SVG line chart from a TSV table.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long, value_delimiter = ',')]
        y: Vec<String>,
        #[arg(long, default_value = "")]
        title: String,
    },
}

impl Common {
    fn config(&self, fallback: Option<&Path>) -> Result<ExperimentConfig> {
        let base = match self.config.as_deref().or(fallback.filter(|p| p.exists())) {
            Some(path) => ExperimentConfig::from_path(path).with_context(|| format!("reading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        let mut cfg = base.with_env()?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

/// Accepts a checkpoint directory or a run directory; returns the checkpoint
/// directory and the run's saved config, if any.
fn locate_checkpoint(path: &Path) -> (PathBuf, Option<PathBuf>) {
    if path.join("checkpoint").is_dir() {
        (path.join("checkpoint"), Some(path.join("config.json")))
    } else {
        (path.to_path_buf(), path.parent().map(|p| p.join("config.json")))
    }
}

fn load_model(path: &Path) -> Result<DcrecModel> {
    DcrecModel::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_data(path: &Path, cfg: &ExperimentConfig) -> Result<SplitDataset> {
    load_dataset(path, cfg).with_context(|| format!("loading dataset {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_history(text: &str, data: Option<&SplitDataset>) -> Result<Vec<ItemId>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|tok| match data {
            Some(d) => d.item_id(tok).with_context(|| format!("unknown item {tok:?}")),
            None => tok.parse::<ItemId>().with_context(|| format!("bad item id {tok:?}")),
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::Synth { kind, users, items, len } => {
            let cfg = common.config(None)?;
            let out = common.out_or("synthetic.tsv");
            let log = make_synthetic(kind, users, items, len, cfg.seed)?;
            log.write_tsv(&out)?;
            println!("wrote {} interactions to {}", log.len(), out.display());
        }
        Command::Preprocess { input, max_len, min_len } => {
            let cfg = common.config(None)?;
            let out = common.out_or("dataset");
            let log = ingest_interactions(&input).with_context(|| format!("reading {}", input.display()))?;
            let data = preprocess(&log, max_len.unwrap_or(cfg.max_len), min_len.unwrap_or(cfg.min_len))?;
            data.save(&out)?;
            println!(
                "{} users, {} items, {} training pairs -> {}",
                data.users.len(),
                data.num_items(),
                data.train.len(),
                out.display()
            );
        }
        Command::Train { data } => {
            let cfg = common.config(None)?;
            let out = common.out_or("run");
            let data = load_data(&data, &cfg)?;
            info!("{} training pairs, {} items", data.train.len(), data.num_items());
            let summary = run_experiment_with(&cfg, &data, &out, |e| {
                let l = &e.loss;
                match e.val_hr10 {
                    Some(v) => info!("epoch {} loss {:.4} val HR@10 {v:.4}", l.epoch, l.total),
                    None => info!("epoch {} loss {:.4}", l.epoch, l.total),
                }
            })?;
            println!("best epoch {}", summary.outcome.best_epoch);
            print!("{}", summary.report.to_table());
            println!("artifacts in {}", out.display());
        }
        Command::Eval { checkpoint, data, split, steps, ks } => {
            let (ckpt, saved) = locate_checkpoint(&checkpoint);
            let cfg = common.config(saved.as_deref())?;
            let model = load_model(&ckpt)?;
            let data = load_data(&data, &cfg)?;
            let examples = match split.as_str() {
                "test" => &data.test,
                "validation" => &data.validation,
                "train" => &data.train,
                other => bail!("unknown split {other:?}; expected test, validation or train"),
            };
            let settings = dcrec::EvalSettings { ks, ..cfg.eval_settings(steps.unwrap_or(cfg.inference_steps)) };
            let report = evaluate(&model, examples, &cfg.schedule()?, &settings)?;
            print!("{}", report.to_table());
            if let Some(out) = &common.out {
                std::fs::create_dir_all(out)?;
                write(&out.join("report.json"), &report.to_json()?)?;
                report.write_per_user_tsv(&out.join("per_user.tsv"))?;
            }
        }
        Command::Infer { checkpoint, history, data, steps, delta, topk } => {
            let (ckpt, saved) = locate_checkpoint(&checkpoint);
            let cfg = common.config(saved.as_deref())?;
            let model = load_model(&ckpt)?;
            let data = data.map(|p| load_data(&p, &cfg)).transpose()?;
            let ids = parse_history(&history, data.as_ref())?;
            let infer = InferenceConfig {
                steps: steps.unwrap_or(cfg.inference_steps),
                delta: delta.unwrap_or(cfg.delta),
                k: topk,
                seed: cfg.seed,
            };
            let ranked = infer_next_item(&model, &ids, &cfg.schedule()?, &infer)?;
            for (rank, (id, score)) in ranked.iter().enumerate() {
                let name = data.as_ref().and_then(|d| d.raw_item(*id)).map_or_else(|| id.to_string(), str::to_string);
                println!("{}\t{name}\t{score:.6}", rank + 1);
            }
        }
        Command::Ablate { suite, data, seeds } => {
            let cfg = common.config(None)?;
            let out = common.out_or("ablation");
            let data = load_data(&data, &cfg)?;
            let table = ablate(suite, &cfg, &data, &seeds)?;
            std::fs::create_dir_all(&out)?;
            write(&out.join("ablation.tsv"), &table.to_tsv())?;
            write(&out.join("ablation.txt"), &table.to_table())?;
            print!("{}", table.to_table());
        }
        Command::SweepSteps { data, checkpoint, steps, repeats } => {
            let saved = checkpoint.as_deref().map(locate_checkpoint);
            let cfg = common.config(saved.as_ref().and_then(|(_, c)| c.as_deref()))?;
            let out = common.out_or("sweep");
            let data = load_data(&data, &cfg)?;
            let model = match &saved {
                Some((ckpt, _)) => load_model(ckpt)?,
                None => {
                    info!("no checkpoint given; training one");
                    train_model(&cfg, &data)?
                }
            };
            let points = sweep_steps(&model, &cfg, &data.test, &steps, repeats)?;
            let tsv = sweep_tsv(&points);
            std::fs::create_dir_all(&out)?;
            write(&out.join("sweep.tsv"), &tsv)?;
            let table = plot::Table::parse(&tsv)?;
            let metrics = ["HR@5".to_string(), "NDCG@5".to_string()];
            write(
                &out.join("sweep.svg"),
                &plot::line_chart(&table, "T_prime", &metrics, "Accuracy vs inference steps")?,
            )?;
            write(
                &out.join("sweep_time.svg"),
                &plot::line_chart(&table, "T_prime", &["seconds".to_string()], "Evaluation time vs inference steps")?,
            )?;
            print!("{tsv}");
        }
        Command::Plot { input, x, y, title } => {
            let out = common.out.clone().unwrap_or_else(|| input.with_extension("svg"));
            let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let table = plot::Table::parse(&text)?;
            write(&out, &plot::line_chart(&table, &x, &y, &title)?)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run(Cli::parse())
}
