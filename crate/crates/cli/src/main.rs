use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use depthclip::pipeline::KShot;
use depthclip::{DepthRule, HeadKind, LossSchedule, ViewKind};

mod bench;
mod config;
mod error;
mod model;
mod render;
mod report;
mod train;

use config::Config;
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "depthclip", version, about = "Render point clouds to depth maps, pre-train and evaluate depth encoders")]
struct Cli {
    /// TOML configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads [default: C2P_THREADS, else logical cores].
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for data, initialization, batch order and heads.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render one cloud into a PGM per view plus a manifest.
    Render(RenderArgs),
    /// Contrastive pre-training; writes a checkpoint and the loss history.
    Pretrain(PretrainArgs),
    /// Zero-shot evaluation on the toy test split.
    Zeroshot(ZeroshotArgs),
    /// Train a head on k samples per class and evaluate it.
    Fewshot(FewshotArgs),
    /// Render throughput across thread counts.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    input: PathBuf,
    /// xyz or off [default: from the file extension].
    #[arg(long)]
    format: Option<depthclip::io::CloudFormat>,
    #[arg(long, default_value = "orth6")]
    views: ViewKind,
    #[arg(long)]
    rule: Option<DepthRule>,
    #[arg(long)]
    dilation: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    schedule: Option<LossSchedule>,
}

#[derive(Args, Debug)]
struct ZeroshotArgs {
    /// Checkpoint path, or `none` for the untrained encoder.
    #[arg(long, default_value = "none")]
    checkpoint: String,
    /// Metrics JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FewshotArgs {
    #[arg(long, default_value = "none")]
    checkpoint: String,
    /// Samples per class, or `full`.
    #[arg(long)]
    k: Option<KShot>,
    #[arg(long)]
    head: Option<HeadKind>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Comma-separated thread counts [default: 1 and powers of two up to the
    /// logical core count].
    #[arg(long, value_delimiter = ',')]
    thread_counts: Vec<usize>,
    /// Clouds rendered per measurement.
    #[arg(long, default_value_t = 16)]
    clouds: usize,
    #[arg(long, default_value = "sph10")]
    views: ViewKind,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
}

fn thread_count(flag: Option<usize>) -> Result<usize, CliError> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("C2P_THREADS") {
            Ok(v) => v
                .parse()
                .map_err(|_| CliError::config(format!("C2P_THREADS must be a positive integer, got '{v}'")))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if n == 0 {
        return Err(CliError::config("thread count must be at least 1"));
    }
    Ok(n)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.reseed(seed);
    }
    let threads = thread_count(cli.threads)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))?;

    match cli.command {
        Command::Render(a) => {
            if let Some(rule) = a.rule {
                config.sparse.rule = Some(rule);
            }
            if let Some(r) = a.dilation {
                config.sparse.dilation = Some(r);
            }
            config.validate()?;
            render::run(&config, &a.input, a.format, a.views, &a.out)
        }
        Command::Pretrain(a) => {
            if let Some(e) = a.epochs {
                config.train.epochs = e;
            }
            if let Some(n) = a.batch_size {
                config.train.batch_size = n;
            }
            if let Some(lr) = a.lr {
                config.train.learning_rate = lr;
            }
            if let Some(s) = a.schedule {
                config.train.loss_schedule = s;
            }
            config.validate()?;
            train::pretrain(&config, &a.out)
        }
        Command::Zeroshot(a) => {
            config.validate()?;
            train::zeroshot(&config, &a.checkpoint, &a.out)
        }
        Command::Fewshot(a) => {
            if let Some(k) = a.k {
                config.head.k_shot = k;
            }
            if let Some(h) = a.head {
                config.head.head = h;
            }
            if let Some(s) = a.steps {
                config.head.steps = s;
            }
            config.validate()?;
            train::fewshot(&config, &a.checkpoint, &a.out)
        }
        Command::Bench(a) => {
            config.validate()?;
            bench::run(&config, &a.thread_counts, a.clouds, a.views, a.repeats)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
