mod commands;
mod error;
mod output;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;

use capnet::deeplimit::Boundary;
use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{GridArgs, Outputs, ShatterMode, VerifyArgs};
use error::CliResult;

/// Capacity analysis of layered networks.
#[derive(Parser)]
#[command(name = "capnet", version, about)]
struct Cli {
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write plot-ready CSV data here.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo sample count.
    #[arg(long, global = true)]
    mc: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundaryArg {
    Periodic,
    Reflecting,
}

#[derive(Args)]
struct GridOpts {
    /// Grid size (neurons per layer).
    #[arg(long, default_value_t = 201)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// Drift v in cells per unit depth.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    drift: f64,
    /// Diffusion coefficient in cells² per unit depth.
    #[arg(long, default_value_t = 1.0)]
    diffusion: f64,
    /// Probe index (default: grid centre).
    #[arg(long)]
    probe: Option<usize>,
    #[arg(long, value_enum, default_value = "periodic")]
    boundary: BoundaryArg,
}

impl GridOpts {
    fn grid(&self, layers: usize) -> GridArgs {
        GridArgs {
            n: self.n,
            eps: self.eps,
            layers,
            drift: self.drift,
            diffusion: self.diffusion,
            probe: self.probe,
            boundary: match self.boundary {
                BoundaryArg::Periodic => Boundary::Periodic,
                BoundaryArg::Reflecting => Boundary::Reflecting,
            },
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Decoupling scale of an activation (`--mc N` adds a Monte Carlo estimate).
    Nu { activation: String },
    /// Validate a spec and print it in normalised form.
    Check { spec: PathBuf },
    /// One layer of a spec: its operator and the capacities on both sides.
    Layer {
        spec: PathBuf,
        /// 1-based layer index after repeats.
        #[arg(long, default_value_t = 1)]
        index: usize,
    },
    /// Propagate the top capacity of a spec down to the input.
    #[command(alias = "propagate")]
    Chain { spec: PathBuf },
    /// Markov chain against the Gaussian deep-limit solution.
    Pde {
        #[command(flatten)]
        grid: GridOpts,
        #[arg(long, default_value_t = 100)]
        layers: usize,
        #[arg(long, default_value_t = 2)]
        refinements: usize,
    },
    /// Effective receptive field widths of residual stacks, or of a spec chain.
    Erf {
        #[command(flatten)]
        grid: GridOpts,
        /// Comma-separated depths; the first and last are compared.
        #[arg(long, value_delimiter = ',', default_value = "25,100")]
        depths: Vec<usize>,
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Path weights: `--uniform r=3 L=5`, `--residual eps=0.1 L=10`, or `--spec file`.
    Shatter {
        #[arg(long, conflicts_with_all = ["residual", "spec"])]
        uniform: bool,
        #[arg(long, conflicts_with = "spec")]
        residual: bool,
        #[arg(long)]
        spec: Option<PathBuf>,
        /// key=value parameters.
        params: Vec<String>,
    },
    /// Monte Carlo check of the closed-form input-space capacity.
    Verify {
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        m: usize,
        /// Number of trainable readout coordinates.
        #[arg(long, default_value_t = 3)]
        selector: usize,
        #[arg(long, default_value = "pseudo_random")]
        activation: String,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let io = Outputs {
        out: cli.out,
        csv: cli.csv,
    };
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Nu { activation } => commands::nu(&activation, cli.mc, seed, &io),
        Command::Check { spec } => commands::check(&spec, &io),
        Command::Layer { spec, index } => commands::layer(&spec, index, &io),
        Command::Chain { spec } => commands::chain(&spec, &io),
        Command::Pde {
            grid,
            layers,
            refinements,
        } => commands::pde(&grid.grid(layers), refinements, &io),
        Command::Erf { grid, depths, spec } => match spec {
            Some(path) => commands::erf_spec(&path, grid.probe, &io),
            None => commands::erf_generator(&grid.grid(0), &depths, &io),
        },
        Command::Shatter {
            uniform,
            residual,
            spec,
            params,
        } => {
            let mode = match (uniform, residual, spec) {
                (true, _, _) => ShatterMode::Uniform,
                (_, true, _) => ShatterMode::Residual,
                (_, _, Some(p)) => ShatterMode::Spec(p),
                _ => {
                    return Err(error::CliError::Usage(
                        "shatter needs --uniform, --residual or --spec".into(),
                    ))
                }
            };
            commands::shatter(mode, &params, &io)
        }
        Command::Verify {
            n,
            m,
            selector,
            activation,
        } => commands::verify(
            &VerifyArgs {
                n,
                m,
                selector,
                samples: cli.mc.unwrap_or(160_000),
                activation,
            },
            seed,
            &io,
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("CAPNET_LOG", "warn"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("capnet: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
