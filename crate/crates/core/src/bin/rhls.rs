use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use rhls::harness::{self, ExperimentConfig, DEFAULT_BETAS};

#[derive(Parser)]
#[command(name = "rhls", version, about = "Robin Hood label smoothing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply to omitted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (for `gen`, the data seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset as CSV.
    Gen(Common),
    /// Train and evaluate the configured method on the outer folds.
    Train(Common),
    /// Nested-validation F1 of RHLS over a beta grid.
    SweepBeta {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        betas: Option<Vec<f64>>,
    },
    /// Baseline, label smoothing, frequency-weighted BCE and RHLS side by side.
    Ablate(Common),
    /// Per-task prediction histograms from a saved run record.
    Hist {
        #[command(flatten)]
        common: Common,
        /// Path to runs/<id>.json.
        #[arg(long)]
        run: PathBuf,
    },
}

fn load(common: &Common, is_gen: bool) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        if is_gen {
            config.data.synthetic.seed = seed;
        } else {
            config.seed = seed;
        }
    }
    if let Some(r) = common.repeats {
        config.repeats = r;
    }
    if let Some(out) = &common.out {
        config.output = out.clone();
    }
    config.validate().context("invalid config")?;
    let out = config.output.clone();
    Ok((config, out))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(common) => {
            let (config, out) = load(&common, true)?;
            let summary = harness::cmd_gen(&config, &out).context("gen")?;
            println!("wrote {} rows to {}", summary.rows, summary.path.display());
            print!("{}", summary.table());
        }
        Command::Train(common) => {
            let (config, out) = load(&common, false)?;
            let record = harness::cmd_train(&config, &out).context("train")?;
            println!("{}: mean F1 {} over {} models", record.method, record.summary, record.trained_models());
        }
        Command::SweepBeta { common, betas } => {
            let (config, out) = load(&common, false)?;
            let betas = betas.unwrap_or_else(|| DEFAULT_BETAS.to_vec());
            for row in harness::cmd_sweep_beta(&config, &betas, &out).context("sweep-beta")? {
                println!("beta {:<5} {:.1} ± {:.1} ({} runs)", row.beta, 100.0 * row.mean, 100.0 * row.std, row.runs);
            }
        }
        Command::Ablate(common) => {
            let (config, out) = load(&common, false)?;
            for record in harness::cmd_ablate(&config, &out).context("ablate")? {
                println!("{:<28} {}", record.method, record.summary);
            }
        }
        Command::Hist { common, run } => {
            let (_, out) = load(&common, false)?;
            let paths = harness::cmd_hist(&run, &out).context("hist")?;
            println!("wrote {} histogram tables under {}", paths.len(), out.join("tables").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
