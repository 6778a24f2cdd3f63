use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shaped_ucbvi::{config, jobs, FileConfig, HarnessError, Overrides};

#[derive(Parser)]
#[command(
    name = "shaped-ucbvi",
    version,
    about = "Tabular UCBVI / UCBVI-Shaped experiment harness",
    after_help = "Exit codes: 0 ok, 2 config error, 3 runtime error.\n\
                  SHAPED_UCBVI_THREADS caps the worker pool."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Regret runs per (variant, seed): traces, heatmaps, aggregates
    Run(CommonArgs),
    /// Cartesian sweep over --sweep-betas and --sweep-sigmas
    Sweep(CommonArgs),
    /// Pruning-set reports over a delta grid
    Prune(CommonArgs),
    /// Online beta selection with fixed-arm baselines
    Modelsel(CommonArgs),
    /// Decaying (shaped) vs additive shaping under corruption
    Decay(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file; all flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment preset: grid8 | corridor10 | dcorridor10x20 | chain11
    #[arg(long)]
    env: Option<String>,
    /// Comma-separated variants: ucbvi,shaped,shaped-bs,shaped-p,additive
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
    /// Shaping quality parameter (>= 1)
    #[arg(long)]
    beta: Option<f64>,
    /// Gaussian corruption sigma applied to the shaping table
    #[arg(long)]
    corrupt_sigma: Option<f64>,
    /// Episodes per run
    #[arg(long)]
    episodes: Option<usize>,
    /// Comma-separated 64-bit seeds
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Bonus family: practical | theoretical
    #[arg(long)]
    bonus_family: Option<String>,
    /// Bonus scale C (default 0.1, with the practical vanilla scale 0.1*H)
    #[arg(long)]
    bonus_c: Option<f64>,
    /// Confidence parameter inside bonus log factors
    #[arg(long)]
    bonus_delta: Option<f64>,
    /// Prune command: comma-separated delta grid
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    /// Modelsel command: comma-separated beta grid, e.g. 1,2,4,8
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    /// Sweep command: comma-separated shaping qualities
    #[arg(long, value_delimiter = ',')]
    sweep_betas: Option<Vec<f64>>,
    /// Sweep command: comma-separated corruption sigmas
    #[arg(long, value_delimiter = ',')]
    sweep_sigmas: Option<Vec<f64>>,
    /// Include member arrays in prune reports
    #[arg(long)]
    members: bool,
    /// Emit gnuplot scripts alongside the data
    #[arg(long)]
    plots: bool,
}

impl CommonArgs {
    fn into_parts(self) -> (Option<PathBuf>, Overrides) {
        let overrides = Overrides {
            env: self.env,
            variants: self.variants,
            beta: self.beta,
            corrupt_sigma: self.corrupt_sigma,
            episodes: self.episodes,
            seeds: self.seeds,
            out_dir: self.out_dir,
            bonus_family: self.bonus_family,
            bonus_c: self.bonus_c,
            bonus_delta: self.bonus_delta,
            deltas: self.deltas,
            beta_grid: self.betas,
            sweep_betas: self.sweep_betas,
            sweep_sigmas: self.sweep_sigmas,
            include_members: if self.members { Some(true) } else { None },
            emit_plots: if self.plots { Some(true) } else { None },
        };
        (self.config, overrides)
    }
}

type Runner = fn(&config::ResolvedConfig) -> Result<serde_json::Value, HarnessError>;

fn execute(command: Command) -> Result<(), HarnessError> {
    let (args, runner): (CommonArgs, Runner) = match command {
        Command::Run(a) => (a, jobs::cmd_run),
        Command::Sweep(a) => (a, jobs::cmd_sweep),
        Command::Prune(a) => (a, jobs::cmd_prune),
        Command::Modelsel(a) => (a, jobs::cmd_modelsel),
        Command::Decay(a) => (a, jobs::cmd_decay),
    };
    let (config_path, overrides) = args.into_parts();
    let file = match config_path {
        Some(path) => FileConfig::load(&path)?,
        None => FileConfig::default(),
    };
    let resolved = config::resolve(file, overrides)?;
    let summary = runner(&resolved)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).unwrap_or_default()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
