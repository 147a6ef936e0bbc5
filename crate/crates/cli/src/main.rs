//! `fluidtime`: finite-horizon distributions of Markov-modulated fluid
//! models, as CSV curves and verification reports.
//!
//! Exit codes: 0 success, 1 validation failure (config or model), 2
//! computation failure, 3 verification failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fluidtime_cli::commands::{self, Prepared, Process, Which};
use fluidtime_cli::config::{self, MethodKind, RunConfig};

#[derive(Parser)]
#[command(
    name = "fluidtime",
    about = "Level, extremum and joint distributions of Markov-modulated fluid models at an Erlang horizon",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output directory for CSV files.
    #[arg(long, global = true, default_value = ".")]
    output: PathBuf,

    /// Exponential-block method: auto, direct, eps-circulant, embedding.
    #[arg(long, global = true)]
    method: Option<String>,

    /// Completion weight for the eps-circulant method.
    #[arg(long, global = true)]
    epsilon: Option<f64>,

    /// Block count for the embedding method (0 = 4L).
    #[arg(long, global = true)]
    embed_k: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a config; print the partition and drift.
    Validate { config: PathBuf },
    /// Dump the stage-split matrix families as CSV.
    Stages { config: PathBuf },
    /// Level CDF curve of the walk or the queue.
    Cdf {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Process::Walk)]
        process: Process,
        /// Stages remaining (default: the clock's L).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, allow_negative_numbers = true)]
        level: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        x_min: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        x_max: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Running minimum / maximum CDF curve.
    Extrema {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Process::Walk)]
        process: Process,
        #[arg(long, value_enum)]
        which: Which,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, allow_negative_numbers = true)]
        level: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        x_min: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        x_max: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Joint law of an extremum and the terminal level.
    Joint {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Process::Walk)]
        process: Process,
        #[arg(long, value_enum)]
        which: Which,
        /// Terminal-level thresholds, comma separated.
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        y_values: Vec<f64>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, allow_negative_numbers = true)]
        level: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        x_min: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        x_max: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Density of the bilateral phase-type law (both algebraic forms).
    Bph {
        config: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        x_min: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        x_max: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Simulate paths and dump their summaries.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate and compare every analytic law against the sample.
    Verify {
        config: PathBuf,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Largest tolerated z-score.
        #[arg(long, default_value_t = 3.0)]
        threshold: f64,
    },
    /// Emit the bundled two-regime example study (CDF curves across
    /// maturities and stage counts, plus the density-jump table).
    PaperExample {
        /// Probability that the excited regime is entered in its up-phase.
        #[arg(long, default_value_t = 0.5)]
        p: f64,
    },
}

fn init_threads() {
    if let Ok(v) = std::env::var("FLUIDTIME_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

/// Apply global CLI overrides onto a parsed config.
#[allow(clippy::too_many_arguments)]
fn apply_overrides(
    cfg: &mut RunConfig,
    cli: &Cli,
    level: Option<f64>,
    x_min: Option<f64>,
    x_max: Option<f64>,
    points: Option<usize>,
    paths: Option<usize>,
    seed: Option<u64>,
) -> anyhow::Result<()> {
    if let Some(m) = &cli.method {
        cfg.method.kind = match m.as_str() {
            "auto" => MethodKind::Auto,
            "direct" => MethodKind::Direct,
            "eps-circulant" => MethodKind::EpsCirculant,
            "embedding" => MethodKind::Embedding,
            other => anyhow::bail!("unknown method `{other}`"),
        };
    }
    if let Some(e) = cli.epsilon {
        cfg.method.epsilon = e;
    }
    if let Some(k) = cli.embed_k {
        cfg.method.embed_k = k;
    }
    if let Some(a) = level {
        cfg.initial.level = a;
    }
    if let Some(n) = paths {
        cfg.mc.paths = n;
    }
    if let Some(s) = seed {
        cfg.mc.seed = s;
    }
    match (x_min, x_max) {
        (Some(lo), Some(hi)) => {
            cfg.grid = Some(config::GridSpec {
                x_min: lo,
                x_max: hi,
                points: points.unwrap_or(201),
            });
        }
        (None, None) => {
            if let (Some(n), Some(g)) = (points, cfg.grid.as_mut()) {
                g.points = n;
            }
        }
        _ => anyhow::bail!("--x-min and --x-max must be given together"),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), (u8, anyhow::Error)> {
    let validation = |e: anyhow::Error| (1u8, e);
    let computation = |e: anyhow::Error| (2u8, e);
    let out = cli.output.clone();
    match &cli.command {
        Command::Validate { config } => {
            let cfg = RunConfig::load(config).map_err(validation)?;
            let prepared = Prepared::from_config(cfg).map_err(validation)?;
            commands::cmd_validate(&prepared).map_err(computation)
        }
        Command::Stages { config } => {
            let cfg = RunConfig::load(config).map_err(validation)?;
            let prepared = Prepared::from_config(cfg).map_err(validation)?;
            commands::cmd_stages(&prepared, &out).map_err(computation)
        }
        Command::Cdf {
            config,
            process,
            k,
            level,
            x_min,
            x_max,
            points,
        } => {
            let mut cfg = RunConfig::load(config).map_err(validation)?;
            apply_overrides(&mut cfg, cli, *level, *x_min, *x_max, *points, None, None)
                .map_err(validation)?;
            let prepared = Prepared::from_config(cfg).map_err(validation)?;
            commands::cmd_cdf(&prepared, *process, *k, &out).map_err(computation)
        }
        Command::Extrema {
            config,
            process,
            which,
            k,
            level,
            x_min,
            x_max,
            points,
        } => {
            let mut cfg = RunConfig::load(config).map_err(validation)?;
            apply_overrides(&mut cfg, cli, *level, *x_min, *x_max, *points, None, None)
                .map_err(validation)?;
            let prepared = Prepared::from_config(cfg).map_err(validation)?;
            commands::cmd_extrema(&prepared, *process, *which, *k, &out).map_err(computation)
        }
        Command::Joint {
            config,
            process,
            which,
            y_values,
            k,
            level,
            x_min,
            x_max,
            points,
        } => {
            let mut cfg = RunConfig::load(config).map_err(validation)?;
            apply_overrides(&mut cfg, cli, *level, *x_min, *x_max, *points, None, None)
                .map_err(validation)?;
            let prepared = Prepared::from_config(cfg).map_err(validation)?;
            commands::cmd_joint(&prepared, *process, *which, y_values, *k, &out)
                .map_err(computation)
        }
        Command::Bph {
            config,
            x_min,
            x_max,
            points,
        } => {
            let mut cfg = RunConfig::load(config).map_err(validation)?;
            apply_overrides(&mut cfg, cli, None, *x_min, *x_max, *points, None, None)
                .map_err(validation)?;
            let prepared = Prepared::from_config(cfg).map_err(validation)?;
            commands::cmd_bph(&prepared, &out).map_err(computation)
        }
        Command::Simulate {
            config,
            paths,
            seed,
        } => {
            let mut cfg = RunConfig::load(config).map_err(validation)?;
            apply_overrides(&mut cfg, cli, None, None, None, None, *paths, *seed)
                .map_err(validation)?;
            let prepared = Prepared::from_config(cfg).map_err(validation)?;
            commands::cmd_simulate(&prepared, &out).map_err(computation)
        }
        Command::Verify {
            config,
            paths,
            seed,
            threshold,
        } => {
            let mut cfg = RunConfig::load(config).map_err(validation)?;
            apply_overrides(&mut cfg, cli, None, None, None, None, *paths, *seed)
                .map_err(validation)?;
            let prepared = Prepared::from_config(cfg).map_err(validation)?;
            let pass =
                commands::cmd_verify(&prepared, *threshold, &out).map_err(computation)?;
            if pass {
                Ok(())
            } else {
                Err((3u8, anyhow::anyhow!("verification failed")))
            }
        }
        Command::PaperExample { p } => {
            commands::cmd_paper_example(*p, &out).map_err(computation)
        }
    }
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}
