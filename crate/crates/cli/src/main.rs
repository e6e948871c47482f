//! Command-line frontend: triad census, training, link sign prediction,
//! and embedding export over signed directed edge lists.
//!
//! Option precedence is built-in defaults, then `key = value` pairs from
//! `--config`, then explicit flags. Results go to standard output or the
//! `--out` directory; progress and warnings go to standard error. The exit
//! code is zero exactly when the command completed.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sdgnn::eval::{
    evaluate_split, mean_metrics, render_metrics_table, write_metrics_csv, EmbeddingSource,
    EvalConfig, MetricsReport,
};
use sdgnn::graph::{load_edge_list, EdgeListFormat, SignedDigraph};
use sdgnn::model::{encode_all, Activation, Aggregator};
use sdgnn::trainer::{
    load_checkpoint, save_checkpoint, save_loss_trace, train_observed, ResumeState, TrainConfig,
};
use sdgnn::triads::{census, TrianglePolicy};

#[derive(Parser)]
#[command(
    name = "sdgnn",
    version,
    about = "Signed directed graph embeddings: census, training, evaluation, export"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count closed triads and report the balance/status census
    Stats {
        /// Edge list file
        graph: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Train embeddings and write a checkpoint plus a loss trace
    Train {
        /// Edge list file
        graph: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Link sign prediction over repeated train/test splits
    Eval {
        /// Edge list file
        graph: PathBuf,
        /// Score trained embeddings or a random baseline
        #[arg(long)]
        embedding: Option<EmbeddingSource>,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Write embeddings from a checkpoint as `node_id v1 .. vd` text
    Export {
        /// Checkpoint written by `train`
        checkpoint: PathBuf,
        /// Edge list the checkpoint was trained on
        #[arg(long)]
        graph: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
}

#[derive(Args)]
struct CommonOpts {
    /// `key = value` file supplying any of the long options below
    #[arg(long)]
    config: Option<PathBuf>,
    /// Edge list dialect: tsv_sign or csv_rating
    #[arg(long)]
    format: Option<EdgeListFormat>,
    /// Embedding width
    #[arg(long)]
    dim: Option<usize>,
    /// Encoder depth
    #[arg(long)]
    layers: Option<usize>,
    /// mean or attention
    #[arg(long)]
    aggregator: Option<Aggregator>,
    /// tanh or relu
    #[arg(long)]
    activation: Option<Activation>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long = "weight-decay")]
    weight_decay: Option<f64>,
    /// Direction loss weight
    #[arg(long)]
    lambda1: Option<f64>,
    /// Triangle loss weight
    #[arg(long)]
    lambda2: Option<f64>,
    /// Status margin
    #[arg(long)]
    gamma: Option<f64>,
    /// both, either or all
    #[arg(long = "triangle-policy")]
    triangle_policy: Option<TrianglePolicy>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of evaluation splits
    #[arg(long)]
    runs: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Fully resolved options after the defaults/file/flags merge.
struct Settings {
    format: EdgeListFormat,
    out: PathBuf,
    runs: usize,
    seed: u64,
    train: TrainConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            format: EdgeListFormat::TsvSign,
            out: PathBuf::from("."),
            runs: 5,
            seed: 0,
            train: TrainConfig::default(),
        }
    }
}

impl Settings {
    /// Applies one `key = value` pair from a config file. Keys spell the
    /// long flags.
    fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| anyhow::anyhow!("config key {key}: {e}"))
        }
        match key {
            "format" => self.format = parse(key, value)?,
            "dim" => self.train.model.dim = parse(key, value)?,
            "layers" => self.train.model.layers = parse(key, value)?,
            "aggregator" => self.train.model.aggregator = parse(key, value)?,
            "activation" => self.train.model.activation = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "batch-size" => self.train.batch_size = parse(key, value)?,
            "lr" => self.train.lr = parse(key, value)?,
            "weight-decay" => self.train.weight_decay = parse(key, value)?,
            "lambda1" => self.train.weights.lambda1 = parse(key, value)?,
            "lambda2" => self.train.weights.lambda2 = parse(key, value)?,
            "gamma" => self.train.weights.gamma = parse(key, value)?,
            "triangle-policy" => self.train.triangle_policy = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "runs" => self.runs = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("{}:{}: expected key = value", path.display(), idx + 1))?;
            self.apply_kv(key.trim(), value.trim())
                .with_context(|| format!("{}:{}", path.display(), idx + 1))?;
        }
        Ok(())
    }

    fn apply_flags(&mut self, opts: &CommonOpts) {
        if let Some(v) = opts.format {
            self.format = v;
        }
        if let Some(v) = opts.dim {
            self.train.model.dim = v;
        }
        if let Some(v) = opts.layers {
            self.train.model.layers = v;
        }
        if let Some(v) = opts.aggregator {
            self.train.model.aggregator = v;
        }
        if let Some(v) = opts.activation {
            self.train.model.activation = v;
        }
        if let Some(v) = opts.epochs {
            self.train.epochs = v;
        }
        if let Some(v) = opts.batch_size {
            self.train.batch_size = v;
        }
        if let Some(v) = opts.lr {
            self.train.lr = v;
        }
        if let Some(v) = opts.weight_decay {
            self.train.weight_decay = v;
        }
        if let Some(v) = opts.lambda1 {
            self.train.weights.lambda1 = v;
        }
        if let Some(v) = opts.lambda2 {
            self.train.weights.lambda2 = v;
        }
        if let Some(v) = opts.gamma {
            self.train.weights.gamma = v;
        }
        if let Some(v) = opts.triangle_policy {
            self.train.triangle_policy = v;
        }
        if let Some(v) = opts.seed {
            self.seed = v;
        }
        if let Some(v) = opts.runs {
            self.runs = v;
        }
        if let Some(v) = &opts.out {
            self.out = v.clone();
        }
    }

    fn resolve(opts: &CommonOpts) -> Result<Settings> {
        let mut settings = Settings::default();
        if let Some(path) = &opts.config {
            settings.apply_file(path)?;
        }
        settings.apply_flags(opts);
        // One seed drives initialization and batching alike.
        settings.train.seed = settings.seed;
        settings.train.model.seed = settings.seed;
        settings
            .train
            .validate()
            .map_err(|e| anyhow::anyhow!("invalid configuration: {e}"))?;
        Ok(settings)
    }
}

fn load_graph(path: &Path, format: EdgeListFormat) -> Result<SignedDigraph> {
    let g = load_edge_list(path, format)
        .with_context(|| format!("loading {} as {format}", path.display()))?;
    eprintln!(
        "{}: {} nodes, {} edges ({} positive, {} negative)",
        path.display(),
        g.node_count(),
        g.edge_count(),
        g.pos_edge_count(),
        g.neg_edge_count()
    );
    if g.dropped_self_loops() > 0 || g.dropped_neutral() > 0 {
        eprintln!(
            "dropped {} self-loops and {} neutral rows",
            g.dropped_self_loops(),
            g.dropped_neutral()
        );
    }
    Ok(g)
}

fn cmd_stats(graph: &Path, settings: &Settings) -> Result<()> {
    let g = load_graph(graph, settings.format)?;
    let report = census(&g);
    if report.total_triads == 0 {
        eprintln!("warning: the graph has no closed triads");
    }
    println!("triads {}", report.total_triads);
    println!("both {:.6}", report.both);
    println!("only_balance {:.6}", report.only_balance);
    println!("only_status {:.6}", report.only_status);
    println!("neither {:.6}", report.neither);
    Ok(())
}

fn cmd_train(graph: &Path, settings: &Settings) -> Result<()> {
    let g = load_graph(graph, settings.format)?;
    let cfg = settings.train;
    fs::create_dir_all(&settings.out)
        .with_context(|| format!("creating {}", settings.out.display()))?;

    // Stream per-epoch means to stderr as they finish.
    let mut last_epoch = usize::MAX;
    let mut epoch_sum = 0.0;
    let mut epoch_batches = 0usize;
    let outcome = train_observed(&g, &cfg, |record| {
        if record.epoch != last_epoch && last_epoch != usize::MAX {
            eprintln!(
                "epoch {}/{}: mean total loss {:.4}",
                last_epoch + 1,
                cfg.epochs,
                epoch_sum / epoch_batches as f64
            );
        }
        if record.epoch != last_epoch {
            last_epoch = record.epoch;
            epoch_sum = 0.0;
            epoch_batches = 0;
        }
        epoch_sum += record.total;
        epoch_batches += 1;
    })?;
    if epoch_batches > 0 {
        eprintln!(
            "epoch {}/{}: mean total loss {:.4}",
            last_epoch + 1,
            cfg.epochs,
            epoch_sum / epoch_batches as f64
        );
    }

    let checkpoint_path = settings.out.join("checkpoint.bin");
    let resume = ResumeState {
        optimizer: outcome.optimizer,
        next_epoch: cfg.epochs,
    };
    save_checkpoint(&checkpoint_path, &cfg.model, &outcome.params, Some(&resume))?;
    let trace_path = settings.out.join("loss_trace.csv");
    save_loss_trace(&trace_path, &outcome.trace)?;
    eprintln!(
        "wrote {} and {}",
        checkpoint_path.display(),
        trace_path.display()
    );
    Ok(())
}

fn cmd_eval(graph: &Path, embedding: Option<EmbeddingSource>, settings: &Settings) -> Result<()> {
    let g = load_graph(graph, settings.format)?;
    let cfg = EvalConfig {
        train: settings.train,
        runs: settings.runs,
        base_seed: settings.seed,
        source: embedding.unwrap_or(EmbeddingSource::Trained),
        ..EvalConfig::default()
    };
    let mut runs = Vec::with_capacity(cfg.runs);
    for r in 0..cfg.runs {
        let seed = cfg.base_seed + r as u64;
        eprintln!("run {}/{} (seed {seed})", r + 1, cfg.runs);
        runs.push(evaluate_split(&g, &cfg, seed)?);
    }
    let report = MetricsReport {
        mean: mean_metrics(&runs),
        runs,
    };

    fs::create_dir_all(&settings.out)
        .with_context(|| format!("creating {}", settings.out.display()))?;
    let csv_path = settings.out.join("metrics.csv");
    let file = File::create(&csv_path)?;
    write_metrics_csv(BufWriter::new(file), &report)?;
    print!("{}", render_metrics_table(&report));
    eprintln!("wrote {}", csv_path.display());
    Ok(())
}

fn cmd_export(checkpoint: &Path, graph: &Path, settings: &Settings) -> Result<()> {
    let loaded = load_checkpoint(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let g = load_graph(graph, settings.format)?;
    if loaded.params.node_count() != g.node_count() {
        bail!(
            "checkpoint holds {} node embeddings but the graph has {} nodes",
            loaded.params.node_count(),
            g.node_count()
        );
    }
    let z = encode_all(&g, &loaded.params, &loaded.model);

    fs::create_dir_all(&settings.out)
        .with_context(|| format!("creating {}", settings.out.display()))?;
    let out_path = settings.out.join("embeddings.txt");
    let mut out = BufWriter::new(File::create(&out_path)?);
    for u in 0..g.node_count() {
        write!(out, "{}", g.label(u))?;
        for v in z.row(u) {
            // Nine significant digits round-trip through text.
            write!(out, " {v:.8e}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    eprintln!("wrote {}", out_path.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Stats { graph, opts } => cmd_stats(graph, &Settings::resolve(opts)?),
        Command::Train { graph, opts } => cmd_train(graph, &Settings::resolve(opts)?),
        Command::Eval {
            graph,
            embedding,
            opts,
        } => cmd_eval(graph, *embedding, &Settings::resolve(opts)?),
        Command::Export {
            checkpoint,
            graph,
            opts,
        } => cmd_export(checkpoint, graph, &Settings::resolve(opts)?),
    }
}
