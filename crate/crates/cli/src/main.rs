use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedsim::federation::Strategy;
use fedsim::partition::Scheme;
use fedsim_cli::commands;
use fedsim_cli::config::{self, AnalyzeConfig, ExperimentConfig, GenerateConfig, PartitionConfig, WarmupConfig};
use fedsim_cli::error::{config_error, exit_code};

#[derive(Parser)]
#[command(name = "fedsim", version, about = "Federated CTC training simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Cap on worker threads (client trainings and per-utterance analysis).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(clap::Args)]
struct Common {
    /// JSON configuration document.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Replaces the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic feature or audio corpus.
    Generate(Common),
    /// Split a feature corpus into clients.
    Partition {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scheme: Option<Scheme>,
    },
    /// Pretrain on the largest speakers and save the weights.
    Warmup(Common),
    /// Run federated training, or replay a manifest.
    Federate {
        #[arg(long, required_unless_present = "replay", conflicts_with = "replay")]
        config: Option<PathBuf>,
        /// Rerun a recorded manifest and check the results match.
        #[arg(long)]
        replay: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, conflicts_with = "replay")]
        seed: Option<u64>,
        /// Comma-separated strategies: fedavg, loss, wer.
        #[arg(long, value_delimiter = ',', conflicts_with = "replay")]
        strategy: Vec<Strategy>,
        #[arg(long, conflicts_with = "replay")]
        scheme: Option<Scheme>,
        /// Comma-separated values of K.
        #[arg(long, value_delimiter = ',', conflicts_with = "replay")]
        clients_per_round: Vec<usize>,
    },
    /// Compare the heterogeneity of two audio corpora.
    Analyze(Common),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Generate(c) => {
            let mut cfg: GenerateConfig = config::load(&c.config)?;
            if let Some(seed) = c.seed {
                cfg.set_seed(seed);
            }
            let hist = commands::cmd_generate(&cfg, &c.out)?;
            stdout.write_all(&hist)?;
        }
        Command::Partition { common: c, scheme } => {
            let mut cfg: PartitionConfig = config::load(&c.config)?;
            cfg.seed = c.seed.unwrap_or(cfg.seed);
            cfg.partition.scheme = scheme.unwrap_or(cfg.partition.scheme);
            let plan = commands::cmd_partition(&cfg, &c.out)?;
            writeln!(stdout, "{} clients written to {}", plan.clients.len(), c.out.display())?;
        }
        Command::Warmup(c) => {
            let mut cfg: WarmupConfig = config::load(&c.config)?;
            cfg.seed = c.seed.unwrap_or(cfg.seed);
            let r = commands::cmd_warmup(&cfg, &c.out)?;
            let show = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            writeln!(
                stdout,
                "warm-up on {} speakers: held-out WER {} -> {}",
                r.warmup_speakers.len(),
                show(r.untrained_wer),
                show(r.warmup_wer)
            )?;
        }
        Command::Federate {
            config: cfg_path,
            replay,
            out,
            seed,
            strategy,
            scheme,
            clients_per_round,
        } => {
            let manifest = if let Some(path) = replay {
                commands::cmd_replay(&path, &out)?
            } else {
                let path = cfg_path.ok_or_else(|| config_error("--config is required"))?;
                let mut cfg: ExperimentConfig = config::load(&path)?;
                cfg.seed = seed.unwrap_or(cfg.seed);
                if !strategy.is_empty() {
                    cfg.federation.strategies = strategy;
                }
                if !clients_per_round.is_empty() {
                    cfg.federation.clients_per_round = clients_per_round;
                }
                cfg.partition.scheme = scheme.unwrap_or(cfg.partition.scheme);
                commands::cmd_federate(&cfg, &out)?
            };
            writeln!(stdout, "strategy,clients_per_round,initial_wer,final_wer")?;
            for r in &manifest.runs {
                writeln!(stdout, "{},{},{},{}", r.strategy, r.clients_per_round, r.initial_wer, r.final_wer)?;
            }
        }
        Command::Analyze(c) => {
            let mut cfg: AnalyzeConfig = config::load(&c.config)?;
            cfg.profile.seed = c.seed.unwrap_or(cfg.profile.seed);
            let out = commands::cmd_analyze(&cfg, &c.out)?;
            stdout.write_all(&out.comparison_csv)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDSIM_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::from(fedsim_cli::error::EXIT_RUNTIME);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
