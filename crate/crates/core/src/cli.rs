//! Command-line entry point.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::arch::CellConfig;
use crate::batch::{gen_synthetic_batch, load_batch, save_batch};
use crate::config::{load_config, FracBits, RunConfig};
use crate::error::{Error, Result};
use crate::report::{emit_report, Report};
use crate::search::{cost_candidate, hw_aware_search, score_candidate, SearchOptions};

#[derive(Debug, Parser)]
#[command(
    name = "snn-hwnas",
    version,
    about = "Training-free, hardware-constrained search over spiking cell architectures"
)]
pub struct Cli {
    /// Run configuration (TOML, or JSON such as a previous report). Built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Minibatch file; overrides `batch_path`.
    #[arg(long, global = true, value_name = "PATH")]
    pub batch: Option<PathBuf>,
    /// Output file; overrides `output_path` (for gen-batch, the batch file).
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Overrides `run_seed` (for gen-batch, the sample seed).
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Overrides `quant.bit_w`.
    #[arg(long, global = true, value_name = "N")]
    pub bits: Option<u32>,
    /// Record every candidate in the report.
    #[arg(long, global = true)]
    pub trace: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Two-phase search over Cell-A and Cell-B.
    Search,
    /// Fitness and costs of one candidate.
    Score(CandidateArgs),
    /// Costs of one candidate, without fitness.
    Cost(CandidateArgs),
    /// Write a synthetic uniform [0, 1) minibatch.
    GenBatch(GenBatchArgs),
}

#[derive(Debug, clap::Args)]
pub struct CandidateArgs {
    /// Six comma-separated edge codes (0 skip, 1 conv3x3, 2 avgpool3x3).
    #[arg(long, value_name = "CODES")]
    pub cell_a: CellConfig,
    #[arg(long, value_name = "CODES")]
    pub cell_b: CellConfig,
}

#[derive(Debug, clap::Args)]
pub struct GenBatchArgs {
    #[arg(long, default_value_t = 16)]
    pub samples: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 32)]
    pub height: usize,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
}

/// Config after applying command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &cli.batch {
        cfg.batch_path = p.clone();
    }
    if let Some(p) = &cli.out {
        cfg.output_path = p.clone();
    }
    if let Some(s) = cli.seed {
        cfg.run_seed = s;
    }
    if let Some(b) = cli.bits {
        cfg.quant.bit_w = b;
        if let FracBits::Fixed(f) = cfg.quant.frac_bits {
            if f >= b {
                return Err(Error::config("quant.frac_bits", format!("{f} does not fit --bits {b}")));
            }
        }
    }
    cfg.trace |= cli.trace;
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<String> {
    if let Command::GenBatch(g) = &cli.command {
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("batch.nnas"));
        let batch = gen_synthetic_batch(g.samples, g.channels, g.height, g.width, cli.seed.unwrap_or(0))?;
        save_batch(&batch, &out)?;
        return Ok(format!(
            "wrote {} ({} samples, {}x{}x{})",
            out.display(),
            g.samples,
            g.channels,
            g.height,
            g.width
        ));
    }

    let cfg = resolve_config(cli)?;
    let batch = load_batch(&cfg.batch_path)?;
    let problem = cfg.problem(batch.clone())?;
    problem.validate()?;
    let start = Instant::now();
    let report = match &cli.command {
        Command::Search => {
            let opts = SearchOptions {
                workers: cfg.workers,
                trace: cfg.trace,
            };
            let result = hw_aware_search(&problem, &opts)?;
            Report::for_search(&result, &cfg, &batch, start.elapsed())?
        }
        Command::Score(c) => {
            let (score, costs) = score_candidate(&problem, c.cell_a, c.cell_b)?;
            Report::for_candidate(c.cell_a, c.cell_b, Some(score), costs, &cfg, &batch, start.elapsed())?
        }
        Command::Cost(c) => {
            let costs = cost_candidate(&problem, c.cell_a, c.cell_b)?;
            Report::for_candidate(c.cell_a, c.cell_b, None, costs, &cfg, &batch, start.elapsed())?
        }
        Command::GenBatch(_) => unreachable!(),
    };
    emit_report(&report, &cfg.output_path)?;

    let c = &report.canonical;
    let score = match c.score {
        Some(s) => s.value().map_or("singular".to_string(), |v| format!("{v:.6}")),
        None => "-".to_string(),
    };
    Ok(format!(
        "cell_a={} cell_b={} score={score} params={} area={:.3}mm2 latency={:.3}ms energy={:.3}uJ -> {}",
        c.cell_a,
        c.cell_b,
        c.costs.mem_params,
        c.costs.area_mm2,
        c.costs.latency_ms,
        c.costs.energy_uj,
        cfg.output_path.display()
    ))
}

/// Runs the tool and returns the process exit code: 0 on success, 2 when no
/// architecture is feasible, 1 on any other error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(line) => {
            println!("{line}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
