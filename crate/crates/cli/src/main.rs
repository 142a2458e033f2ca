use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use delaytrack::harness::output::{ensure_dir, write_json};
use delaytrack::harness::run::Analysis;
use delaytrack::harness::{
    compare_models, emit_comparison, emit_results, simulate, Overrides, Prepared, Scenario,
};
use delaytrack::par::Execution;
use delaytrack::{Error, Result};

/// Delay-tolerant consensus tracking experiments.
#[derive(Debug, Parser)]
#[command(name = "delaytrack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte Carlo run of the distributed filter.
    Simulate(Common),
    /// Observability, spectral radii, and delay bound only.
    Analyze(Common),
    /// Delay bound sweep over uniform delays up to the bound cap.
    Bound(Common),
    /// Centralized filter with linear vs range-difference measurements.
    CompareModels(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (TOML).
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long = "tau-bar", allow_negative_numbers = true)]
    tau_bar: Option<i64>,
    /// Run trials on one thread.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn scenario(&self) -> Result<Scenario> {
        Scenario::load(&self.config)?.with_overrides(&Overrides {
            seed: self.seed,
            trials: self.trials,
            tau_bar: self.tau_bar,
        })
    }

    fn mode(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Parse(_) => 2,
        Error::DesignFailure { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => run_simulate(c),
        Command::Analyze(c) => run_analyze(c),
        Command::Bound(c) => run_bound(c),
        Command::CompareModels(c) => run_compare(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.6e}"))
}

fn print_analysis(a: &Analysis) {
    eprintln!(
        "rho_free {:.6}  rho_aug {:.6}  tau_star {}  observable {}  detectable {}",
        a.rho_free,
        a.rho_aug,
        a.tau_star.map_or_else(|| "none".into(), |t| t.to_string()),
        a.observable,
        a.detectable
    );
}

fn run_simulate(c: &Common) -> Result<()> {
    let s = c.scenario()?;
    let out = c.out_or("out");
    let (report, mc) = simulate(&s, c.mode())?;
    emit_results(&report, &mc, &out)?;
    print_analysis(&report.analysis);
    let sm = &report.summary;
    eprintln!(
        "{} trials x {} steps: steady-state MSE {}  final MSE {}  diverged {:?}",
        sm.trials,
        sm.steps,
        fmt_opt(sm.steady_state_mse),
        fmt_opt(sm.final_mse),
        sm.diverged_trials
    );
    eprintln!("wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct AnalysisReport<'a> {
    config: &'a Scenario,
    analysis: &'a Analysis,
}

fn prepare(c: &Common) -> Result<(Scenario, Prepared, Analysis, delaytrack::filter::GainSet)> {
    let s = c.scenario()?;
    let p = Prepared::new(&s)?;
    let resolved = p.resolve_gains()?;
    let a = p.analyze(&resolved)?;
    Ok((s, p, a, resolved.gains))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Parse(e.to_string()))
}

fn run_analyze(c: &Common) -> Result<()> {
    let (s, _, a, _) = prepare(c)?;
    let report = AnalysisReport {
        config: &s,
        analysis: &a,
    };
    println!("{}", to_json(&report)?);
    if let Some(out) = &c.out {
        ensure_dir(out)?;
        write_json(&out.join("analysis.json"), &report)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct BoundRow {
    tau: usize,
    bound_radius: f64,
    uniform_radius: f64,
}

fn run_bound(c: &Common) -> Result<()> {
    let (s, p, a, gains) = prepare(c)?;
    let cap = s.analysis.bound_cap as usize;
    let uniform = p.plant.uniform_delay_radii(&gains, &p.net, cap)?;
    let rows: Vec<BoundRow> = (0..=cap)
        .map(|tau| {
            Ok(BoundRow {
                tau,
                bound_radius: p.plant.bound_radius(&gains, tau)?,
                uniform_radius: uniform[tau],
            })
        })
        .collect::<Result<_>>()?;
    println!("tau  bound_radius  uniform_radius");
    for r in &rows {
        println!(
            "{:>3}  {:>12.6}  {:>14.6}",
            r.tau, r.bound_radius, r.uniform_radius
        );
    }
    println!(
        "tau_star = {}",
        a.tau_star.map_or_else(|| "none".into(), |t| t.to_string())
    );
    if let Some(out) = &c.out {
        ensure_dir(out)?;
        write_rows(&out.join("bound.csv"), &rows)?;
        write_json(
            &out.join("analysis.json"),
            &AnalysisReport {
                config: &s,
                analysis: &a,
            },
        )?;
    }
    Ok(())
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let io = |e: std::io::Error| Error::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

fn run_compare(c: &Common) -> Result<()> {
    let s = c.scenario()?;
    let out = c.out_or("out");
    let (report, trials) = compare_models(&s, c.mode())?;
    emit_comparison(&report, &trials, &out)?;
    for m in &report.models {
        eprintln!(
            "{:<20} mean steady-state MSE {}",
            m.model.name(),
            fmt_opt(m.mean_steady_state_mse)
        );
    }
    eprintln!(
        "linear no worse than estimated-position model in {} of {} trials",
        report.linear_not_worse, report.trials
    );
    eprintln!("wrote {}", out.display());
    Ok(())
}
