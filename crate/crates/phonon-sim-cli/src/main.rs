//! `phonon-sim`: config-driven runner for the two-resonator phonon
//! interference simulator.
//!
//! Exit codes: 0 success, 2 config error, 3 engine/IO error, 4 leakage or
//! feasibility warnings escalated by --strict-leakage.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use phonon_sim_cli::{config, emit};

use config::ConfigFile;
use emit::Format;
use phonon_sim::{
    analytic_readout, counting_constraint, detuning_sweep, fit_decay, run_protocol,
    snapshot_sequence, sweep_visibility, timing_estimate, validate_pulse_area, AnalyticModel,
    PulseSample, ReadoutTrace, SnapshotConfig,
};

#[derive(Parser)]
#[command(name = "phonon-sim", version, about = "Two-resonator phonon interference simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true, default_value = "config.toml")]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,
    /// Worker threads for sweep cells (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Treat truncation-leakage warnings and infeasible cells as failures
    /// (exit code 4).
    #[arg(long, global = true, default_value_t = false)]
    strict_leakage: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

impl From<OutputFormat> for Format {
    fn from(f: OutputFormat) -> Format {
        match f {
            OutputFormat::Csv => Format::Csv,
            OutputFormat::Json => Format::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the four-pulse protocol and emit the readout trace R(τ).
    Simulate,
    /// Evaluate the closed-form readout model over the τ grid.
    Analytic,
    /// Visibility over a 1D/2D imperfection grid.
    Sweep,
    /// Visibility and exchange rates versus splitter-beam detuning.
    Detuning,
    /// Density-matrix snapshots during the free-evolution step.
    Snapshot,
    /// Experiment-time estimate and photon-counting feasibility.
    Timing,
    /// Check the readout-pulse area against π/2.
    ValidatePulse,
}

enum Failure {
    Config(String),
    Engine(String),
    StrictLeakage(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Engine(_) => 3,
            Failure::StrictLeakage(_) => 4,
        }
    }
    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Engine(m) | Failure::StrictLeakage(m) => m,
        }
    }
}

impl From<config::ConfigError> for Failure {
    fn from(e: config::ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Engine(format!("io error: {e}"))
    }
}

fn engine<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Engine(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if cli.threads > 0 {
        // ignore a later re-init; thread count only affects scheduling
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let text = fs::read_to_string(&cli.config)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", cli.config.display())))?;
    let cfg = config::parse(&text)?;
    fs::create_dir_all(&cli.out)?;
    let format: Format = cli.format.into();
    let subcommand = match &cli.command {
        Command::Simulate => "simulate",
        Command::Analytic => "analytic",
        Command::Sweep => "sweep",
        Command::Detuning => "detuning",
        Command::Snapshot => "snapshot",
        Command::Timing => "timing",
        Command::ValidatePulse => "validate-pulse",
    };
    emit::write_metadata(&cli.out, subcommand, &config::emit(&cfg))?;

    match &cli.command {
        Command::Simulate => simulate(cli, &cfg, format),
        Command::Analytic => analytic(cli, &cfg, format),
        Command::Sweep => sweep(cli, &cfg, format),
        Command::Detuning => detuning(cli, &cfg, format),
        Command::Snapshot => snapshot(cli, &cfg, format),
        Command::Timing => timing(cli, &cfg, format),
        Command::ValidatePulse => validate_pulse(cli, &cfg, format),
    }
}

fn guard_warnings(cli: &Cli, warnings: &[String]) -> Result<(), Failure> {
    for w in warnings {
        eprintln!("warning: {w}");
    }
    if cli.strict_leakage {
        if let Some(w) = warnings.iter().find(|w| {
            w.contains("top-level population") || w.contains("trace drifted") || w.contains("thermal tail")
        }) {
            return Err(Failure::StrictLeakage(format!(
                "leakage warning escalated by --strict-leakage: {w}"
            )));
        }
    }
    Ok(())
}

fn simulate(cli: &Cli, cfg: &ConfigFile, format: Format) -> Result<(), Failure> {
    let protocol = cfg.protocol_config()?;
    let trace = run_protocol(&protocol).map_err(engine)?;
    emit::write_trace(&cli.out, "trace", &trace, format)?;
    guard_warnings(cli, &trace.warnings)?;
    match fit_decay(&trace) {
        Ok(fit) => println!(
            "trace: {} points; fitted tau_d = {:.6e} s{}, tau_th = {:.6e} s{}, rms = {:.3e}",
            trace.tau_s.len(),
            fit.tau_d_s,
            if fit.tau_d_is_lower_bound { " (lower bound)" } else { "" },
            fit.tau_th_s,
            if fit.tau_th_is_lower_bound { " (lower bound)" } else { "" },
            fit.rms,
        ),
        Err(e) => println!("trace: {} points; decay fit unavailable: {e}", trace.tau_s.len()),
    }
    Ok(())
}

fn analytic(cli: &Cli, cfg: &ConfigFile, format: Format) -> Result<(), Failure> {
    let section = cfg
        .analytic
        .as_ref()
        .ok_or_else(|| Failure::Config("missing required [analytic] section".into()))?;
    let system = cfg.system_params()?;
    let detection = cfg.detection_params()?;
    let tau = cfg.tau_grid()?;
    let model = AnalyticModel {
        tau_d_s: section.tau_d_s,
        tau_th_s: section.tau_th_s,
        n_env: system.n_env(),
        delta_omega_hz: system.omega2_hz - system.omega1_hz,
        eta: detection.eta,
    };
    model.validate().map_err(engine)?;
    let r: Vec<f64> = tau.iter().map(|&t| analytic_readout(&model, t)).collect();
    let n = tau.len();
    let trace = ReadoutTrace {
        n1: r.iter().map(|v| v / model.eta).collect(),
        n2: vec![0.0; n],
        leak1: vec![0.0; n],
        leak2: vec![0.0; n],
        warnings: vec![],
        delta_omega_hz: model.delta_omega_hz,
        eta: model.eta,
        n_env: model.n_env,
        tau_s: tau,
        r,
    };
    emit::write_trace(&cli.out, "analytic", &trace, format)?;
    println!("analytic trace: {n} points");
    Ok(())
}

fn sweep(cli: &Cli, cfg: &ConfigFile, format: Format) -> Result<(), Failure> {
    let base = cfg.protocol_config()?;
    let axes = cfg.sweep_axes()?;
    let grid = sweep_visibility(&base, &axes).map_err(engine)?;
    emit::write_grid(&cli.out, "sweep", &grid, format)?;
    let infeasible = grid.cells.iter().filter(|c| !c.feasible).count();
    println!(
        "sweep: {} cells, {} below the visibility threshold",
        grid.cells.len(),
        infeasible
    );
    if cli.strict_leakage && infeasible > 0 {
        return Err(Failure::StrictLeakage(format!(
            "{infeasible} infeasible cells under --strict-leakage"
        )));
    }
    Ok(())
}

fn detuning(cli: &Cli, cfg: &ConfigFile, format: Format) -> Result<(), Failure> {
    let base = cfg.protocol_config()?;
    let det = cfg.detuning_config()?;
    let grid = detuning_sweep(&base, &det).map_err(engine)?;
    emit::write_grid(&cli.out, "detuning", &grid, format)?;
    let masked = grid.cells.iter().filter(|c| !c.feasible).count();
    println!("detuning: {} cells, {} masked/infeasible", grid.cells.len(), masked);
    if cli.strict_leakage && masked == grid.cells.len() {
        return Err(Failure::StrictLeakage(
            "every detuning cell is infeasible under --strict-leakage".into(),
        ));
    }
    Ok(())
}

fn snapshot(cli: &Cli, cfg: &ConfigFile, format: Format) -> Result<(), Failure> {
    let section = cfg
        .snapshot
        .as_ref()
        .ok_or_else(|| Failure::Config("missing required [snapshot] section".into()))?;
    let protocol = cfg.protocol_config()?;
    let snap_cfg = SnapshotConfig {
        protocol,
        times_s: section.times_s.clone(),
        restrict_n1: section.restrict_n1,
    };
    let snaps = snapshot_sequence(&snap_cfg).map_err(engine)?;
    for (i, snap) in snaps.iter().enumerate() {
        emit::write_snapshot(&cli.out, &format!("snapshot_{i:03}"), snap, format)?;
    }
    println!("snapshots: {} matrices written", snaps.len());
    if cli.strict_leakage {
        if let Some(s) = snaps.iter().find(|s| s.dropped_weight > 1e-3) {
            return Err(Failure::StrictLeakage(format!(
                "mode-1 restriction dropped weight {:.3e}",
                s.dropped_weight
            )));
        }
    }
    Ok(())
}

fn timing(cli: &Cli, cfg: &ConfigFile, format: Format) -> Result<(), Failure> {
    let (params, mode) = cfg.timing_params()?;
    let estimate = timing_estimate(&params, mode).map_err(engine)?;
    let counting = cfg
        .system_params()
        .ok()
        .map(|sys| counting_constraint(params.eta, sys.n_env()));
    emit::write_timing(&cli.out, &estimate, counting.as_ref(), format)?;
    println!(
        "experiment time: {:.4e} s ({:.2} hours, {:.2} days); leading-term approx {:.4e} s",
        estimate.exact_s,
        estimate.exact_s / 3600.0,
        estimate.exact_s / 86400.0,
        estimate.approx_s,
    );
    if let Some(c) = counting {
        println!("photon counting: eta*n_env = {:.3e} ({:?})", c.product, c.band);
    }
    Ok(())
}

fn validate_pulse(cli: &Cli, cfg: &ConfigFile, format: Format) -> Result<(), Failure> {
    let section = cfg
        .pulse
        .as_ref()
        .ok_or_else(|| Failure::Config("missing required [pulse] section".into()))?;
    if section.t_s.len() != section.n_cav.len() {
        return Err(Failure::Config(
            "pulse.t_s and pulse.n_cav must have equal length".into(),
        ));
    }
    let samples: Vec<PulseSample> = section
        .t_s
        .iter()
        .zip(&section.n_cav)
        .map(|(&t_s, &n_cav)| PulseSample { t_s, n_cav })
        .collect();
    let report = validate_pulse_area(&samples, section.g1_hz).map_err(engine)?;
    emit::write_pulse_report(&cli.out, &report, format)?;
    println!(
        "pulse area {:.6} rad vs target {:.6} rad: {}{}",
        report.area_rad,
        std::f64::consts::FRAC_PI_2,
        if report.pass { "pass" } else { "FAIL" },
        if report.recommend_exponential() {
            " (an exponentially shaped envelope is recommended)"
        } else {
            ""
        },
    );
    Ok(())
}
