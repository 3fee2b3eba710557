use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use trajsurv::config::{Ablation, RunConfig};
use trajsurv::pipeline;

#[derive(Parser, Debug)]
#[command(name = "trajsurv", version, about = "Trajectory-aware survival modelling with neural CDEs")]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Ablation: a1 (no time mask), a2 (no TACL), a3 (partial likelihood only).
    #[arg(long, global = true, default_value = "none")]
    ablation: String,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort and export it as CSV.
    Simulate,
    /// Train a model and write the best-validation checkpoint.
    Train,
    /// Evaluate a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Score the generator's ground-truth risk instead of a model.
        #[arg(long)]
        oracle: bool,
    },
    /// Average vector field importance and relevance.
    Interpret {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// DTW clustering of test-split latent trajectories.
    Cluster {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides `interpret.clusters`.
        #[arg(long)]
        clusters: Option<usize>,
    },
}

fn run(cli: Cli) -> trajsurv::Result<()> {
    let mut cfg = match cli.command {
        Command::Simulate | Command::Train => match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        },
        _ => pipeline::resolve_config(cli.config.as_deref(), &cli.out)?,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.apply_ablation(cli.ablation.parse::<Ablation>()?);
    cfg.validate()?;
    if cli.deterministic {
        log::info!("deterministic mode: single-threaded execution");
    }
    let out = cli.out.as_path();
    match cli.command {
        Command::Simulate => {
            let c = pipeline::cmd_simulate(&cfg, out)?;
            println!("simulated {} patients into {}", c.len(), out.join("data").display());
        }
        Command::Train => {
            let o = pipeline::cmd_train(&cfg, out)?;
            println!(
                "trained {} epochs, best epoch {}; checkpoint at {}",
                o.log.len(),
                o.best_epoch,
                out.join(pipeline::CHECKPOINT).display()
            );
        }
        Command::Evaluate { checkpoint, oracle } => {
            let e = pipeline::cmd_evaluate(&cfg, out, checkpoint.as_deref(), oracle)?;
            print!("{}", pipeline::report_text(&e));
        }
        Command::Interpret { checkpoint } => {
            let r = pipeline::cmd_interpret(&cfg, out, checkpoint.as_deref())?;
            for (k, f) in r.importance.ranking.iter().enumerate() {
                println!("{:>2}. feature {} score {:.4}", k + 1, f.feature, f.score);
            }
        }
        Command::Cluster { checkpoint, clusters } => {
            if let Some(c) = clusters {
                cfg.interpret.clusters = c;
                cfg.validate()?;
            }
            let r = pipeline::cmd_cluster(&cfg, out, checkpoint.as_deref())?;
            for c in 0..r.n_clusters() {
                println!("cluster {c} ({}): {} patients", r.names[c], r.members(c).len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
