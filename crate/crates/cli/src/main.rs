use std::error::Error;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use multilora::phy::{time_on_air, RadioConfig};
use multilora_cli::{emit, execute, parse_plan};

#[derive(Parser)]
#[command(
    name = "multilora",
    version,
    about = "Multi-LoRa mesh simulator and experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every sweep point of a plan and write results.csv and results.json.
    Run {
        plan: PathBuf,
        /// Output directory.
        #[arg(long, env = "MULTILORA_OUT")]
        out: PathBuf,
        /// Overrides the plan's base seed.
        #[arg(long, env = "MULTILORA_SEED")]
        seed: Option<u64>,
        /// Worker threads; defaults to the number of cores.
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        parallel: Option<u32>,
    },
    /// Parse and check a plan without running it.
    Validate { plan: PathBuf },
    /// Print the time-on-air of a frame.
    Toa {
        /// Frame length in bytes, header included.
        bytes: usize,
        /// Spreading factor, 6..=12.
        sf: u8,
        /// Bandwidth in Hz; a `k` suffix means kHz (125k).
        #[arg(value_parser = parse_bandwidth)]
        bw: u32,
        /// Coding rate denominator offset: 1..=4 for 4/5..4/8.
        #[arg(long, default_value_t = 4)]
        cr: u8,
        #[arg(long, default_value_t = 8)]
        preamble: u16,
    },
}

fn parse_bandwidth(s: &str) -> Result<u32, String> {
    let lower = s.to_ascii_lowercase();
    let (digits, scale) = match lower
        .strip_suffix("khz")
        .or_else(|| lower.strip_suffix('k'))
    {
        Some(d) => (d, 1000),
        None => (lower.strip_suffix("hz").unwrap_or(&lower), 1),
    };
    digits
        .trim()
        .parse::<u32>()
        .ok()
        .and_then(|v| v.checked_mul(scale))
        .ok_or_else(|| format!("not a bandwidth: {s}"))
}

fn report(e: &dyn Error) {
    eprintln!("error: {e}");
    let mut source = e.source();
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { plan } => match parse_plan(&plan) {
            Ok(p) => {
                let points = p.points().len();
                println!(
                    "{}: ok ({} sweep points x {} repetitions, base seed {})",
                    p.plan.name, points, p.plan.repetitions, p.plan.base_seed
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                report(&e);
                ExitCode::FAILURE
            }
        },
        Command::Toa {
            bytes,
            sf,
            bw,
            cr,
            preamble,
        } => {
            let cfg = RadioConfig {
                spreading_factor: sf,
                bandwidth_hz: bw,
                coding_rate: cr,
                preamble_symbols: preamble,
                ..RadioConfig::default()
            };
            match time_on_air(bytes, &cfg) {
                Ok(t) => {
                    println!("{:.3} ms", t * 1e3);
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    report(&e);
                    ExitCode::FAILURE
                }
            }
        }
        Command::Run {
            plan,
            out,
            seed,
            parallel,
        } => {
            let mut p = match parse_plan(&plan) {
                Ok(p) => p,
                Err(e) => {
                    report(&e);
                    return ExitCode::FAILURE;
                }
            };
            if let Some(seed) = seed {
                p.plan.base_seed = seed;
            }
            let results = match execute(&p, parallel.map(|k| k as usize)) {
                Ok(r) => r,
                Err(e) => {
                    report(&e);
                    return ExitCode::FAILURE;
                }
            };
            let mut failed = false;
            for f in results.failures() {
                eprintln!(
                    "error: sweep point {}: {}",
                    f.key,
                    f.error.as_deref().unwrap_or_default()
                );
                failed = true;
            }
            match emit(&results, &out) {
                Ok(files) => {
                    println!("wrote {} and {}", files.csv.display(), files.json.display());
                }
                Err(e) => {
                    report(&e);
                    return ExitCode::FAILURE;
                }
            }
            if failed {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}
