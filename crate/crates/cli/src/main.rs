//! `fusid` command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fusid::pipeline::{self, PipelineConfig, Stage};
use fusid::{FusidError, Result};

#[derive(Parser)]
#[command(name = "fusid", version, about = "Modality-fused semantic IDs for music recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command that touches artifacts.
#[derive(Args, Clone)]
struct Common {
    /// JSON pipeline config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dotted config override, e.g. `--set fusion.alpha=0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run pipeline stages in dependency order.
    Run {
        /// `all` or a comma-separated subset of synth,split,playvec,pairs,fusion,pq,sidqual,genrec.
        #[arg(long, default_value = "all")]
        stages: String,
        #[command(flatten)]
        common: Common,
    },
    /// Run the pipeline with and without the regularizers and compare.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Print a pipeline config as JSON.
    Config {
        /// Print the desk-scale reference config instead of the defaults.
        #[arg(long)]
        reference: bool,
    },
    Corpus {
        #[command(subcommand)]
        op: CorpusOp,
    },
    Playvec {
        #[command(subcommand)]
        op: PlayvecOp,
    },
    Pairs {
        #[command(subcommand)]
        op: PairsOp,
    },
    Fusion {
        #[command(subcommand)]
        op: FusionOp,
    },
    Pq {
        #[command(subcommand)]
        op: PqOp,
    },
    /// Compute SID quality (CUR, cardinality, conflict rate).
    Sidqual {
        #[command(flatten)]
        common: Common,
    },
    Genrec {
        #[command(subcommand)]
        op: GenrecOp,
    },
}

#[derive(Subcommand)]
enum CorpusOp {
    /// Generate the synthetic corpus.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Keep playlists with at least `min-len` valid tracks.
    Filter {
        #[arg(long)]
        min_len: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Split filtered playlists into train/val/test.
    Split {
        /// Comma-separated train,val,test ratios.
        #[arg(long)]
        ratios: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum PlayvecOp {
    /// Train playlist co-occurrence embeddings.
    Train {
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        neg: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum PairsOp {
    /// Mine labeled contrastive pairs from training playlists.
    Mine {
        #[arg(long)]
        min_count: Option<u32>,
        #[arg(long = "pos-k", alias = "pos-per-anchor")]
        pos_per_anchor: Option<usize>,
        #[arg(long)]
        neg_quantile: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum FusionOp {
    /// Train the fusion network and embed the catalog.
    Train {
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long = "batch", alias = "batch-size")]
        batch_size: Option<usize>,
        /// `dim-normalized` or `plain`.
        #[arg(long)]
        distance: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum PqOp {
    /// Fit per-position codebooks on training tracks and tokenize the catalog.
    Fit {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Re-tokenize the catalog with the stored codebook.
    Tokenize {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum GenrecOp {
    /// Train the recommender on training playlists.
    Train {
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        heads: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate the stored recommender and the baselines on test playlists.
    Eval {
        /// Comma-separated recall cutoffs.
        #[arg(long)]
        ks: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

/// Collects `key=value` overrides for the flags that were given.
struct Overrides(Vec<String>);

impl Overrides {
    fn new() -> Self {
        Overrides(Vec::new())
    }

    fn opt<T: ToString>(mut self, key: &str, value: Option<T>) -> Self {
        if let Some(v) = value {
            self.0.push(format!("{key}={}", v.to_string()));
        }
        self
    }

    fn json_list(self, key: &str, csv: Option<String>) -> Self {
        let list = csv.map(|s| format!("[{s}]"));
        self.opt(key, list)
    }
}

fn load_config(common: &Common, extra: Overrides) -> Result<PipelineConfig> {
    let base = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let mut all = common.overrides.clone();
    all.extend(extra.0);
    let mut cfg = base.with_overrides(&all)?;
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| FusidError::io(&cfg.out_dir, e))?;
    Ok(cfg)
}

fn run_stage(common: &Common, extra: Overrides, stage: Stage) -> Result<()> {
    let cfg = load_config(common, extra)?;
    pipeline::run_pipeline(&cfg, &[stage])?;
    Ok(())
}

fn print_json(value: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&value).expect("serializable"));
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { stages, common } => {
            let cfg = load_config(&common, Overrides::new())?;
            let manifest = pipeline::run_pipeline(&cfg, &Stage::parse_list(&stages)?)?;
            print_json(serde_json::json!(manifest));
        }
        Command::Ablate { common } => {
            let cfg = load_config(&common, Overrides::new())?;
            let report = pipeline::run_ablation(&cfg)?;
            print!("{report}");
        }
        Command::Config { reference } => {
            let cfg = if reference { PipelineConfig::reference() } else { PipelineConfig::default() };
            println!("{}", cfg.to_json());
        }
        Command::Corpus { op } => match op {
            CorpusOp::Synth { common } => run_stage(&common, Overrides::new(), Stage::Synth)?,
            CorpusOp::Filter { min_len, common } => {
                pipeline::filter_step(&load_config(&common, Overrides::new().opt("filter.min_len", min_len))?)?
            }
            CorpusOp::Split { ratios, common } => {
                let cfg = load_config(&common, Overrides::new().json_list("split.ratios", ratios))?;
                pipeline::split_step(&cfg, pipeline::stage_seed(cfg.seed, Stage::Split))?
            }
        },
        Command::Playvec { op: PlayvecOp::Train { dim, window, neg, epochs, lr, common } } => {
            let o = Overrides::new()
                .opt("playvec.dim", dim)
                .opt("playvec.window", window)
                .opt("playvec.neg_k", neg)
                .opt("playvec.epochs", epochs)
                .opt("playvec.lr", lr);
            run_stage(&common, o, Stage::Playvec)?
        }
        Command::Pairs { op: PairsOp::Mine { min_count, pos_per_anchor, neg_quantile, common } } => {
            let o = Overrides::new()
                .opt("pairs.min_count", min_count)
                .opt("pairs.pos_per_anchor", pos_per_anchor)
                .opt("pairs.neg_quantile", neg_quantile);
            run_stage(&common, o, Stage::Pairs)?
        }
        Command::Fusion { op: FusionOp::Train { alpha, gamma, eps, epochs, lr, batch_size, distance, common } } => {
            let o = Overrides::new()
                .opt("fusion.alpha", alpha)
                .opt("fusion.gamma", gamma)
                .opt("fusion.eps", eps)
                .opt("fusion.distance_mode", distance.map(|d| d.replace('-', "_")))
                .opt("fusion.epochs", epochs)
                .opt("fusion.lr", lr)
                .opt("fusion.batch_size", batch_size);
            run_stage(&common, o, Stage::Fusion)?
        }
        Command::Pq { op } => match op {
            PqOp::Fit { k, max_iters, tol, common } => {
                let o = Overrides::new().opt("pq.k", k).opt("pq.max_iters", max_iters).opt("pq.tol", tol);
                run_stage(&common, o, Stage::Pq)?
            }
            PqOp::Tokenize { common } => pipeline::tokenize_step(&load_config(&common, Overrides::new())?)?,
        },
        Command::Sidqual { common } => {
            let cfg = load_config(&common, Overrides::new())?;
            pipeline::run_pipeline(&cfg, &[Stage::Sidqual])?;
            let report: fusid::sidqual::SidQualityReport = fusid::io::read_json(&cfg.artifact(&cfg.paths.sidqual))?;
            print_json(serde_json::json!(report));
        }
        Command::Genrec { op } => match op {
            GenrecOp::Train { layers, heads, dim, max_len, epochs, lr, common } => {
                let o = Overrides::new()
                    .opt("genrec.layers", layers)
                    .opt("genrec.heads", heads)
                    .opt("genrec.dim", dim)
                    .opt("genrec.max_len", max_len)
                    .opt("genrec.epochs", epochs)
                    .opt("genrec.lr", lr);
                let cfg = load_config(&common, o)?;
                pipeline::genrec_train_step(&cfg, pipeline::stage_seed(cfg.seed, Stage::Genrec))?
            }
            GenrecOp::Eval { ks, common } => {
                let cfg = load_config(&common, Overrides::new().json_list("eval.ks", ks))?;
                let (metrics, baselines) = pipeline::genrec_eval_step(&cfg, pipeline::stage_seed(cfg.seed, Stage::Genrec))?;
                print_json(serde_json::json!({ "model": metrics, "baselines": baselines }));
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            let mut source = std::error::Error::source(&e);
            while let Some(cause) = source {
                log::error!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
