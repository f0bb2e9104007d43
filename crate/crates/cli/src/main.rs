mod config;
mod demo;
mod experiment;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qkdsim::channel::QuantumChannelConfig;
use qkdsim::protocols::auth::{AuthInitConfig, AuthSessionConfig};
use qkdsim::protocols::epr::{bell_test, EprConfig};
use qkdsim::protocols::ProtocolError;

use config::ExperimentConfig;
use experiment::ExperimentError;

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_TOLERANCE: u8 = 3;

#[derive(Parser)]
#[command(name = "qkdsim", about = "Seeded quantum key distribution experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Compare a man-in-the-middle against plain EPR and the authenticated session.
    AttackDemo {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the CHSH statistic from singlet pairs on an ideal channel.
    BellTest {
        #[arg(long)]
        pairs: usize,
        #[arg(long)]
        seed: u64,
    },
}

fn protocol_exit(e: &ProtocolError) -> u8 {
    match e {
        ProtocolError::InvalidConfig(_) | ProtocolError::InsufficientBellRounds | ProtocolError::KeyTooShort { .. } => {
            EXIT_CONFIG
        }
        _ => EXIT_RUNTIME,
    }
}

fn run(config: PathBuf, seed: Option<u64>, out: PathBuf) -> u8 {
    let mut cfg = match ExperimentConfig::load(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    match experiment::run(&cfg, &out) {
        Ok(outcome) => {
            println!("runs: {}, aborted: {}", outcome.summary.runs, outcome.summary.aborted);
            for (name, stat) in &outcome.summary.metrics {
                println!("{name}: mean {:.6}, std {:.6}, n {}", stat.mean, stat.std, stat.count);
            }
            match outcome.acceptance {
                Some(a) if !a.pass => {
                    eprintln!("tolerance missed: {} = {:?}, expected [{:?}, {:?}]", a.metric, a.value, a.min, a.max);
                    EXIT_TOLERANCE
                }
                Some(a) => {
                    println!("tolerance met: {} = {:.6}", a.metric, a.value.unwrap_or(f64::NAN));
                    0
                }
                None => 0,
            }
        }
        Err(ExperimentError::Protocol(e)) => {
            eprintln!("error: {e}");
            protocol_exit(&e)
        }
        Err(ExperimentError::Io(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn attack_demo(out: Option<PathBuf>) -> u8 {
    let init = AuthInitConfig { rounds: 1024, ..AuthInitConfig::default() };
    let rows = match demo::run_demo(
        100,
        0,
        &EprConfig::new(3000),
        &init,
        &AuthSessionConfig::default(),
        &QuantumChannelConfig::ideal(),
    ) {
        Ok(rows) => rows,
        Err(e) => {
            eprintln!("error: {e}");
            return protocol_exit(&e);
        }
    };
    print!("{}", demo::table(&rows));
    if let Some(out) = out {
        if let Err(e) = demo::write_files(&out, &rows) {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    }
    0
}

fn bell(pairs: usize, seed: u64) -> u8 {
    match bell_test(pairs, &QuantumChannelConfig::ideal(), seed) {
        Ok(b) => {
            for p in b.estimate.pairs() {
                println!("E({:.4}, {:.4}) = {:+.6}  (n = {})", p.alice_dir.angle(), p.bob_dir.angle(), p.e, p.count);
            }
            println!("S = {:+.6}", b.s);
            println!("verdict: {:?} (threshold {})", b.verdict, b.threshold);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            protocol_exit(&e)
        }
    }
}

fn main() -> ExitCode {
    let code = match Cli::parse().command {
        Command::Run { config, seed, out } => run(config, seed, out),
        Command::AttackDemo { out } => attack_demo(out),
        Command::BellTest { pairs, seed } => bell(pairs, seed),
    };
    ExitCode::from(code)
}
