use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dha_cli::commands::{cmd_decompose, cmd_eval, cmd_fit, cmd_spectra, cmd_synth, resolve};
use dha_cli::config::{self, Config};
use dha_cli::error::{config as config_error, Result};
use dha_cli::sweep::cmd_sweep;
use dha_core::koopman::Variant;

#[derive(Parser)]
#[command(name = "dha", version, about = "Dynamics harmonic analysis experiments")]
struct Cli {
    /// Root directory for relative output paths.
    #[arg(long, global = true, env = "DHA_OUTPUT_ROOT")]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file; defaults are used when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config value by path, e.g. `--set training.lr=1e-3`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Config> {
        config::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a symmetric system and a trajectory dataset.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run seed (default: the first configured seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: the config's output path).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit one model variant on a dataset.
    Fit {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prediction error of a saved model on a dataset's test split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        horizon: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every (axis value, seed, variant) of the config's sweep.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Worker threads (default: available parallelism).
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Isotypic basis and per-block energy of a dataset.
    Decompose {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Block-wise spectrum of a saved model.
    Spectra {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn out_dir(root: Option<&Path>, given: Option<&PathBuf>, cfg: &Config) -> PathBuf {
    resolve(root, given.unwrap_or(&cfg.output))
}

fn run(cli: Cli) -> Result<String> {
    let root = cli.output_root.as_deref();
    match cli.command {
        Command::Synth { cfg, seed, out } => {
            let cfg = cfg.load()?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            cmd_synth(&cfg, seed, &out_dir(root, out.as_ref(), &cfg))
        }
        Command::Fit {
            cfg,
            data,
            variant,
            seed,
            out,
        } => {
            let mut cfg = cfg.load()?;
            cfg.variants = vec![variant];
            cfg.validate()?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            cmd_fit(&cfg, &data, variant, seed, &out_dir(root, out.as_ref(), &cfg))
        }
        Command::Eval {
            model,
            data,
            horizon,
            out,
        } => cmd_eval(&model, &data, horizon, &resolve(root, &out)),
        Command::Sweep { cfg, workers, out } => {
            let mut cfg = cfg.load()?;
            if workers.is_some() {
                cfg.workers = workers;
                cfg.validate()?;
            }
            let dir = out_dir(root, out.as_ref(), &cfg);
            let result = cmd_sweep(&cfg, &dir)?;
            let sweep = cfg.sweep.as_ref().ok_or_else(|| config_error("no sweep section"))?;
            Ok(format!(
                "sweep: {} over {} values x {} seeds x {} variants = {} runs -> {}",
                result.axis.name(),
                sweep.values.len(),
                cfg.seeds.len(),
                cfg.variants.len(),
                result.runs.len(),
                dir.display()
            ))
        }
        Command::Decompose { data, out } => cmd_decompose(&data, &resolve(root, &out)),
        Command::Spectra { model, out } => cmd_spectra(&model, &resolve(root, &out)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
