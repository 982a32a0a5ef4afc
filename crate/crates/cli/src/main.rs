mod cmd_distill;
mod cmd_fetch;
mod cmd_gradcheck;
mod cmd_oracle;
mod cmd_taylor;
mod cmd_train;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cgtn_core::CoreError;
use config::{DatasetId, RunConfig};

#[derive(Parser)]
#[command(
    name = "cgtn",
    version,
    about = "Polynomial networks from coarse-graining layers and hierarchical data distillation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download a dataset into a directory, verifying checksums
    Fetch {
        /// mnist or cifar10
        #[arg(long)]
        dataset: String,
        /// Target directory for the raw files
        #[arg(long)]
        dir: PathBuf,
        /// Config file supplying mirror URLs and checksum pins
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train direct Taylor-expansion heads order by order
    TaylorDirect {
        /// Highest monomial order to train
        #[arg(long)]
        order: usize,
        /// Side length images are downsampled to (0 keeps the original)
        #[arg(long, default_value_t = 7)]
        resize: usize,
        /// Fraction of weights kept when pruning the final head
        #[arg(long, default_value_t = 1.0)]
        prune_keep: f64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (overrides the config)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a network described by an architecture file
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Architecture file (overrides the config)
        #[arg(long)]
        arch: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train an architecture and its cluster-to-convolution twin
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        arch: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the configured test split
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the hierarchical distillation schedule
    Distill {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify the test split against distilled reference images
    ClassifyRef {
        /// Directory holding level*.cgds reference caches
        #[arg(long)]
        refs: PathBuf,
        /// Embedding network checkpoint
        #[arg(long)]
        ckpt: PathBuf,
        /// Reference level to use (default: deepest available)
        #[arg(long)]
        level: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Expand a cluster stack symbolically and emit its support matrix
    Oracle {
        /// Number of input variables
        #[arg(long, default_value_t = 4)]
        vars: usize,
        /// Architecture file for the stack (default: two quadratic layers)
        #[arg(long)]
        stack: Option<PathBuf>,
        /// Maximum monomial order along each factor axis
        #[arg(long, default_value_t = 4)]
        order: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks over every layer kind
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: &Option<PathBuf>) -> cgtn_core::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn parse_dataset(name: &str) -> cgtn_core::Result<DatasetId> {
    match name {
        "mnist" => Ok(DatasetId::Mnist),
        "cifar10" => Ok(DatasetId::Cifar10),
        _ => Err(CoreError::Config(format!(
            "dataset must be mnist or cifar10, got {name:?}"
        ))),
    }
}

fn dispatch(cli: Cli) -> cgtn_core::Result<()> {
    match cli.command {
        Command::Fetch {
            dataset,
            dir,
            config,
        } => {
            let mut cfg = load_config(&config)?;
            cfg.dataset = parse_dataset(&dataset)?;
            cfg.data_dir = dir.display().to_string();
            cmd_fetch::run(&cfg)
        }
        Command::TaylorDirect {
            order,
            resize,
            prune_keep,
            config,
            out,
        } => {
            let mut cfg = load_config(&config)?;
            cfg.resize = resize;
            if config.is_none() {
                cfg.epochs = 10;
            }
            if let Some(out) = out {
                cfg.out_dir = out.display().to_string();
            } else if config.is_none() {
                cfg.out_dir = format!("runs/taylor-order{order}");
            }
            if !(0.0..=1.0).contains(&prune_keep) || prune_keep == 0.0 {
                return Err(CoreError::Config(format!(
                    "--prune-keep must be in (0, 1], got {prune_keep}"
                )));
            }
            cmd_taylor::run(&cfg, order, prune_keep)
        }
        Command::Train { config, arch, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(arch) = arch {
                cfg.arch_file = arch.display().to_string();
            }
            if let Some(out) = out {
                cfg.out_dir = out.display().to_string();
            }
            cmd_train::run_train(&cfg)
        }
        Command::Ablate { config, arch, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(arch) = arch {
                cfg.arch_file = arch.display().to_string();
            }
            if let Some(out) = out {
                cfg.out_dir = out.display().to_string();
            }
            cmd_train::run_ablate(&cfg)
        }
        Command::Eval { ckpt, config } => {
            let cfg = load_config(&config)?;
            cmd_train::run_eval(&cfg, &ckpt)
        }
        Command::Distill { config, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(out) = out {
                cfg.out_dir = out.display().to_string();
            }
            cmd_distill::run_distill(&cfg)
        }
        Command::ClassifyRef {
            refs,
            ckpt,
            level,
            config,
        } => {
            let cfg = load_config(&config)?;
            cmd_distill::run_classify(&cfg, &refs, &ckpt, level)
        }
        Command::Oracle {
            vars,
            stack,
            order,
            config,
            out,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(out) = out {
                cfg.out_dir = out.display().to_string();
            } else if config.is_none() {
                cfg.out_dir = "runs/oracle".into();
            }
            cmd_oracle::run(&cfg, vars, stack.as_deref(), order)
        }
        Command::Gradcheck { seed } => cmd_gradcheck::run(seed),
    }
}

/// Exit codes: 1 for usage and configuration mistakes, 2 for data and IO
/// failures, 3 for numerical failures.
fn classify(err: &CoreError) -> (&'static str, u8) {
    match err {
        CoreError::Parse { .. } | CoreError::Config(_) | CoreError::Shape { .. } => ("usage", 1),
        CoreError::Io(_)
        | CoreError::Data(_)
        | CoreError::Checksum { .. }
        | CoreError::Network { .. } => ("data", 2),
        CoreError::Numeric(_) | CoreError::Tensor(_) | CoreError::Overflow(_) => ("numeric", 3),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (kind, code) = classify(&err);
            let message = err.to_string().replace('\n', "; ").replace('\t', " ");
            eprintln!("error\tkind={kind}\texit={code}\tmessage={message}");
            ExitCode::from(code)
        }
    }
}
