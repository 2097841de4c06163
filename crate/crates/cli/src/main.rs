use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cxlssd::experiment::{
    compare_reports, gen_trace_file, load_report, parse_distribution, parse_int, run_experiment, ExperimentConfig,
    ExperimentError,
};
use cxlssd::host::{TraceError, TraceSpec};
use cxlssd::nand::NandError;

/// Exit statuses.
mod exit {
    pub const CONFIG: u8 = 2;
    pub const IO: u8 = 3;
    pub const INPUT: u8 = 4;
    pub const RUNTIME: u8 = 5;
    pub const COMPARE: u8 = 6;
}

#[derive(Parser)]
#[command(name = "cxlssd", version, about = "Trace-driven CXL-SSD simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its report files.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory; defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the raw event stream to events.csv.
        #[arg(long)]
        emit_events: bool,
    },
    /// Generate a synthetic trace file.
    GenTrace(GenArgs),
    /// Compare two reports (files or run directories), A against B.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Also write the comparison as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config without running it.
    ValidateConfig {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Replaces the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// `key=value`, applied after the file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    cores: u16,
    #[arg(long, default_value_t = 1)]
    threads: u16,
    #[arg(long, default_value_t = 1000)]
    count: u64,
    #[arg(long, default_value_t = 0.5)]
    read_ratio: f64,
    /// `uniform` or `zipf:<theta>`.
    #[arg(long, default_value = "uniform", value_parser = parse_distribution)]
    distribution: cxlssd::host::AddressDistribution,
    #[arg(long, default_value_t = 0)]
    gap_min: u64,
    #[arg(long, default_value_t = 10)]
    gap_max: u64,
    #[arg(long, default_value = "0x40000000", value_parser = parse_int)]
    base: u64,
    #[arg(long, default_value = "64M", value_parser = parse_int)]
    span: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn code(e: &ExperimentError) -> u8 {
    if e.is_io() {
        return exit::IO;
    }
    match e {
        ExperimentError::Syntax { .. }
        | ExperimentError::UnknownKey(_)
        | ExperimentError::Value { .. }
        | ExperimentError::Invalid(_)
        | ExperimentError::Host(_)
        | ExperimentError::Firmware(_)
        | ExperimentError::Trace(TraceError::Spec(_))
        | ExperimentError::Nand(NandError::InvalidGeometry(_) | NandError::InvalidProvider(_)) => exit::CONFIG,
        ExperimentError::Trace(_) | ExperimentError::Nand(_) => exit::INPUT,
        ExperimentError::Compare(_) => exit::COMPARE,
        _ => exit::RUNTIME,
    }
}

fn load(args: &ConfigArgs) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    cfg.apply_overrides(&overrides)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Run { config, out, emit_events } => {
            let cfg = load(&config)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let r = run_experiment(&cfg, Some(&dir), emit_events)?.report;
            println!("experiment {} (seed {})", r.experiment, r.seed);
            println!(
                "  accesses {}  cxl {}  llc hits {}",
                r.counts.memory_accesses, r.counts.cxl_accesses, r.counts.llc_hits
            );
            println!("  cycles {}  instructions {}", r.total_cycles, r.total_instructions);
            if let Some(cpi) = r.cycles_per_instruction {
                println!("  cycles/instruction {cpi:.3}");
            }
            for kind in ["log_insert", "log_hit", "cache_hit", "cache_miss"] {
                if let Some(s) = r.latency.get(kind).filter(|s| s.count > 0) {
                    println!("  {kind:<11} n={:<8} mean {:.1} ns  sd {:.1}  p99 {}", s.count, s.mean, s.stddev, s.p99);
                }
            }
            println!(
                "  compactions {}  evictions {}  context switches {}",
                r.counts.compactions, r.counts.evictions, r.counts.context_switches
            );
            println!("report written to {}", dir.display());
        }
        Command::GenTrace(g) => {
            let spec = TraceSpec {
                cores: g.cores,
                threads: g.threads,
                count: g.count,
                read_ratio: g.read_ratio,
                distribution: g.distribution,
                gap_min: g.gap_min,
                gap_max: g.gap_max,
                base: g.base,
                span_bytes: g.span,
                seed: g.seed,
            };
            let s = gen_trace_file(&spec, &g.out)?;
            println!("{} records, {} reads (read ratio {:.4}) -> {}", s.count, s.reads, s.read_ratio, g.out.display());
        }
        Command::Compare { a, b, out } => {
            let c = compare_reports(&load_report(&a)?, &load_report(&b)?)?;
            print!("{}", c.render());
            if let Some(path) = out {
                let body = serde_json::to_string_pretty(&c).expect("comparison serializes") + "\n";
                std::fs::write(&path, body)
                    .map_err(|source| ExperimentError::Io { path: path.display().to_string(), source })?;
            }
        }
        Command::ValidateConfig { config } => {
            let cfg = load(&config)?;
            // building the engine also loads any empirical table
            cfg.engine(false)?;
            for (k, v) in cfg.to_map() {
                println!("{k} = {v}");
            }
            eprintln!("{}: ok", config.config.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(code(&e))
        }
    }
}
