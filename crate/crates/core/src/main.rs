//! Command-line entry point: reads one TOML config, runs a subcommand, and
//! writes CSV/JSON reports to a run directory.
//!
//! Exit codes: 0 success, 2 config/usage error, 3 numerical failure
//! (convergence or truncation), 4 capacity exceeded.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mflab::config::RunConfig;
use mflab::experiments;
use mflab::hartree;
use mflab::lattice::sample_potential;
use mflab::{MfError, Result};

#[derive(Parser)]
#[command(name = "mflab", version, about = "Lattice laboratory for mean-field boson dynamics")]
struct Cli {
    /// TOML configuration file; built-in defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for reports
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Worker threads for scans (overrides run.threads)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for randomized checks (overrides run.seed)
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evolve the one-body equation and export trajectory diagnostics
    Hartree,
    /// Single-N many-body propagation with the comparison distance over time
    Nbody,
    /// Comparison-distance scan over N from number states
    Rate,
    /// Comparison-distance scan over N from displaced vacua
    CoherentRate,
    /// Fluctuation-flow diagnostics suite
    Fluctuation,
    /// Quick invariant battery across every module
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(threads) = cli.threads {
        cfg.run.threads = threads;
    }
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    cfg.validate()?;
    let out = &cli.out;
    match cli.cmd {
        Cmd::Hartree => {
            let spec = cfg.potential_spec();
            let grid = cfg.grid()?;
            sample_potential(&spec, &grid)?;
            let traj = hartree::evolve(
                &cfg.initial_field()?,
                &spec,
                cfg.hartree.dt,
                cfg.hartree.t_final,
                1,
            )?;
            let rows = hartree::diagnostics(&traj, &spec)?;
            let mut csv = format!("# {}\n", cfg.echo());
            csv.push_str("time,mass,energy,h1_norm,linf_norm\n");
            for r in rows {
                csv.push_str(&format!("{},{},{},{},{}\n", r[0], r[1], r[2], r[3], r[4]));
            }
            std::fs::create_dir_all(out)?;
            std::fs::write(out.join("hartree.csv"), csv)?;
            println!(
                "hartree: {} steps to t = {}, wrote {}",
                (cfg.hartree.t_final / cfg.hartree.dt).round() as usize,
                cfg.hartree.t_final,
                out.join("hartree.csv").display()
            );
        }
        Cmd::Nbody => {
            let report = experiments::nbody_trace(&cfg, 20)?;
            report.write(out, "nbody")?;
            let last = report.points.last().expect("nonempty trace");
            println!(
                "nbody: n = {}, distance {:.3e} at t = {}, wrote {}",
                last.n,
                last.distance,
                last.t,
                out.join("nbody.csv").display()
            );
        }
        Cmd::Rate => {
            let report = experiments::rate_scan(&cfg)?;
            report.write(out, "rate")?;
            println!("rate: {}", fit_line(&report));
        }
        Cmd::CoherentRate => {
            let report = experiments::coherent_rate_scan(&cfg)?;
            report.write(out, "coherent_rate")?;
            println!("coherent-rate: {}", fit_line(&report));
        }
        Cmd::Fluctuation => {
            let report = experiments::fluctuation_suite(&cfg)?;
            report.write(out, "fluctuation")?;
            let worst = report.identity.iter().map(|r| r.defect).fold(0.0, f64::max);
            println!(
                "fluctuation: cubic slope {:.6}, gap slope {:.3}, identity defect {:.3e}",
                report.cubic_fit.slope, report.gap_fit.slope, worst
            );
        }
        Cmd::Selftest => {
            let results = experiments::selftest(cfg.run.seed)?;
            let mut failed = 0usize;
            for r in &results {
                let tag = if r.passed { "PASS" } else { "FAIL" };
                println!("{tag} {} ({})", r.name, r.detail);
                if !r.passed {
                    failed += 1;
                }
            }
            if failed > 0 {
                return Err(MfError::Convergence(format!("{failed} self-test group(s) failed")));
            }
            println!("selftest: {} groups passed", results.len());
        }
    }
    Ok(())
}

fn fit_line(report: &experiments::RateReport) -> String {
    let fits: Vec<String> = report
        .fits
        .iter()
        .map(|f| {
            if f.degenerate {
                format!("t = {}: degenerate", f.t)
            } else {
                format!("t = {}: slope {:.3} (R2 {:.4})", f.t, f.slope, f.r2)
            }
        })
        .collect();
    format!("{} points; {}", report.points.len(), fits.join("; "))
}
