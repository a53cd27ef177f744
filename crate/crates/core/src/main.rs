use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use jced::harness::{
    outage_rate_sweep, prelog_slope, run_and_write, selftest_in_moments, selftest_out_moments, summary_table, Receiver, SystemConfig,
};
use jced::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "jced", version, about = "Sparse-channel OFDM receiver simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated SNR list in dB.
    #[arg(long = "snr-db", global = true, value_delimiter = ',', allow_hyphen_values = true)]
    snr_db: Option<Vec<f64>>,
    /// Receiver(s): jced, ccs, lmmse, sg, bsg.
    #[arg(long, global = true, value_delimiter = ',')]
    receiver: Option<Vec<String>>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo BER/NMSE experiment; writes CSV.
    Run,
    /// Largest ladder rate meeting a target BER per SNR, with the fitted slope.
    Sweep {
        #[arg(long, default_value_t = 1e-3)]
        target_ber: f64,
    },
    /// Checks the moment functions against quadrature references.
    Selftest {
        #[arg(long, default_value_t = 1000)]
        cases: usize,
    },
}

fn config(cli: &Cli) -> Result<SystemConfig> {
    let mut cfg = match &cli.config {
        Some(p) => SystemConfig::load(p)?,
        None => SystemConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(s) = &cli.snr_db {
        cfg.snr_db = s.clone();
    }
    if let Some(r) = &cli.receiver {
        cfg.receivers = r.iter().map(|s| s.parse::<Receiver>()).collect::<Result<_>>()?;
    }
    if let Some(o) = &cli.out {
        cfg.output = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run => {
            let cfg = config(cli)?;
            let start = std::time::Instant::now();
            let rows = run_and_write(&cfg)?;
            eprintln!("wrote {} rows to {} in {:.1?}", rows.len(), cfg.output.display(), start.elapsed());
            for s in summary_table(&cfg, &rows).values() {
                eprintln!(
                    "{:>6} {:>7.2} dB  median BER {:.3e}  FER {:.3}  median NMSE {:.2} dB",
                    s.receiver.name(),
                    s.snr_db,
                    s.median_ber,
                    s.fer,
                    s.median_nmse_db
                );
            }
            Ok(())
        }
        Command::Sweep { target_ber } => {
            let cfg = config(cli)?;
            let pts = outage_rate_sweep(&cfg, *target_ber)?;
            let mut csv = String::from("# jced-sweep v1\nsnr_db,eta\n");
            for (s, e) in &pts {
                csv.push_str(&format!("{s},{e}\n"));
            }
            std::fs::write(&cfg.output, csv)?;
            match prelog_slope(&pts) {
                Some(v) => eprintln!("fitted slope {v:.4} bpcu per doubling of SNR"),
                None => eprintln!("too few finite SNR points for a slope"),
            }
            Ok(())
        }
        Command::Selftest { cases } => {
            let seed = cli.seed.unwrap_or(1);
            let reports = [selftest_out_moments(*cases, seed)?, selftest_in_moments(*cases, seed)?];
            let mut ok = true;
            for r in &reports {
                println!(
                    "{} {}: {} cases, max rel err {:.2e} (tol {:.0e})",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.name,
                    r.cases,
                    r.max_rel_err,
                    r.tolerance
                );
                ok &= r.passed();
            }
            if ok {
                Ok(())
            } else {
                Err(Error::Numerical("selftest failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                _ => 1,
            })
        }
    }
}
