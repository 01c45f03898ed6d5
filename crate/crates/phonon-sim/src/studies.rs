//! Parameter studies: imperfection sweeps, detuning tradeoff, density-matrix
//! snapshot sequences and experiment-time estimates.

use rayon::prelude::*;
use thiserror::Error;

use crate::channels::ChannelError;
use crate::dynamics::{build_tables, DynamicsError, IntegratorConfig, Propagator};
use crate::fock::{DensityMatrix, FockError, Mode, SystemParams};
use crate::protocol::{
    extract_visibility, prepare_initial_state, run_protocol, ProtocolConfig, ProtocolError,
};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("a sweep needs one or two axes, got {0}")]
    BadAxisCount(usize),
    #[error("sweep axis has no values")]
    EmptyAxis,
    #[error("'{0}' is not an imperfection parameter; use the detuning study for detuning scans")]
    BadAxisParameter(&'static str),
    #[error("timing parameters must be positive (got {name} = {value})")]
    BadTimingParameter { name: &'static str, value: f64 },
    #[error("snapshot times must be non-negative and increasing")]
    BadSnapshotTimes,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Imperfection parameters a sweep may scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    /// Initial thermal occupancy of both modes.
    NTh,
    /// Herald excitation probability.
    P,
    /// Herald dark-count probability ξ·t_r.
    Dark,
    JcOverJ,
    JhOverJ,
    /// Average beam detuning in units of ω₁; produced by [`detuning_sweep`],
    /// not accepted by [`sweep_visibility`].
    DeltaOverOmega1,
}

impl SweepParameter {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::NTh => "n_th",
            SweepParameter::P => "p",
            SweepParameter::Dark => "dark",
            SweepParameter::JcOverJ => "jc_over_j",
            SweepParameter::JhOverJ => "jh_over_j",
            SweepParameter::DeltaOverOmega1 => "delta_over_omega1",
        }
    }
}

impl std::str::FromStr for SweepParameter {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "n_th" => Ok(Self::NTh),
            "p" => Ok(Self::P),
            "dark" => Ok(Self::Dark),
            "jc_over_j" => Ok(Self::JcOverJ),
            "jh_over_j" => Ok(Self::JhOverJ),
            other => Err(format!(
                "unknown sweep parameter '{other}' (expected n_th, p, dark, jc_over_j, jh_over_j)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepAxis {
    pub param: SweepParameter,
    pub values: Vec<f64>,
}

/// The resolved imperfection inputs of one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellParams {
    pub n_th: f64,
    pub p: f64,
    pub dark: f64,
    pub jc_over_j: f64,
    pub jh_over_j: f64,
    /// Detuning in units of ω₁; set by detuning sweeps.
    pub delta_over_omega1: Option<f64>,
    /// Exchange rate normalized to the grid maximum; set by detuning sweeps.
    pub j_normalized: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub params: CellParams,
    pub visibility: Option<f64>,
    /// False inside the greyed-out (infeasible) region.
    pub feasible: bool,
    pub error: Option<String>,
}

/// Visibility (or other scalar) over a 1D/2D imperfection grid, cells in
/// row-major axis order.
#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub axes: Vec<SweepAxis>,
    pub cells: Vec<SweepCell>,
}

/// Feasibility threshold on the initial visibility.
pub const VISIBILITY_THRESHOLD: f64 = 0.10;

fn apply_to_config(
    config: &mut ProtocolConfig,
    param: SweepParameter,
    value: f64,
) -> Result<(), StudyError> {
    match param {
        SweepParameter::NTh => config.n_th = [value, value],
        SweepParameter::P => config.detection.p = value,
        SweepParameter::Dark => config.detection.dark = value,
        SweepParameter::JcOverJ => config.coupling.jc_over_j = value,
        SweepParameter::JhOverJ => config.coupling.jh_over_j = value,
        SweepParameter::DeltaOverOmega1 => {
            return Err(StudyError::BadAxisParameter(param.name()))
        }
    }
    Ok(())
}

fn cell_params(config: &ProtocolConfig, delta: Option<f64>, j_norm: Option<f64>) -> CellParams {
    CellParams {
        n_th: config.n_th[0],
        p: config.detection.p,
        dark: config.detection.dark,
        jc_over_j: config.coupling.jc_over_j,
        jh_over_j: config.coupling.jh_over_j,
        delta_over_omega1: delta,
        j_normalized: j_norm,
    }
}

fn run_cell(config: &ProtocolConfig) -> SweepCell {
    let params = cell_params(config, None, None);
    match run_protocol(config).and_then(|trace| extract_visibility(&trace)) {
        Ok(v) => SweepCell {
            params,
            visibility: Some(v),
            feasible: v >= VISIBILITY_THRESHOLD,
            error: None,
        },
        Err(e) => SweepCell {
            params,
            visibility: None,
            feasible: false,
            error: Some(e.to_string()),
        },
    }
}

/// Visibility over a 1- or 2-axis imperfection grid. Cell failures are
/// recorded in the cell rather than aborting the grid; cells are independent
/// and evaluated in parallel with deterministic ordering.
pub fn sweep_visibility(
    base: &ProtocolConfig,
    axes: &[SweepAxis],
) -> Result<SweepGrid, StudyError> {
    if axes.is_empty() || axes.len() > 2 {
        return Err(StudyError::BadAxisCount(axes.len()));
    }
    if axes.iter().any(|a| a.values.is_empty()) {
        return Err(StudyError::EmptyAxis);
    }
    let mut configs = Vec::new();
    match axes {
        [a] => {
            for &v in &a.values {
                let mut c = base.clone();
                apply_to_config(&mut c, a.param, v)?;
                configs.push(c);
            }
        }
        [a, b] => {
            for &va in &a.values {
                for &vb in &b.values {
                    let mut c = base.clone();
                    apply_to_config(&mut c, a.param, va)?;
                    apply_to_config(&mut c, b.param, vb)?;
                    configs.push(c);
                }
            }
        }
        _ => unreachable!(),
    }
    let cells: Vec<SweepCell> = configs.par_iter().map(run_cell).collect();
    Ok(SweepGrid { axes: axes.to_vec(), cells })
}

/// Experiment timing inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingParams {
    /// Number of averages per point.
    pub n_a: f64,
    /// Number of delay points.
    pub n_p: f64,
    /// Duration of the cool + herald steps (s).
    pub t12_s: f64,
    /// Duration of a full run through readout (s).
    pub t_tot_s: f64,
    pub eta: f64,
    pub p: f64,
    /// Herald-path efficiency for the two-detector variant.
    pub eta1: Option<f64>,
    /// Readout-path efficiency for the two-detector variant.
    pub eta2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorMode {
    Single,
    TwoDetector,
}

#[derive(Debug, Clone, Copy)]
pub struct TimingEstimate {
    /// Postselected experiment time, exact expression (s).
    pub exact_s: f64,
    /// Leading-term approximation n_a·n_p·t₁₂/(η²p) (s).
    pub approx_s: f64,
}

/// Total experiment time with herald postselection:
/// T = n_a·n_p·(t₁₂(1 − ηp)/(η²p) + t_tot·ηp/η). The two-detector variant
/// substitutes η₁ for the herald path and η₂ for the readout path.
pub fn timing_estimate(
    t: &TimingParams,
    mode: DetectorMode,
) -> Result<TimingEstimate, StudyError> {
    for (name, value) in [
        ("n_a", t.n_a),
        ("n_p", t.n_p),
        ("t12_s", t.t12_s),
        ("t_tot_s", t.t_tot_s),
    ] {
        if value <= 0.0 {
            return Err(StudyError::BadTimingParameter { name, value });
        }
    }
    let (eta_herald, eta_read) = match mode {
        DetectorMode::Single => (t.eta, t.eta),
        DetectorMode::TwoDetector => (t.eta1.unwrap_or(t.eta), t.eta2.unwrap_or(t.eta)),
    };
    for (name, value) in [("eta_herald", eta_herald), ("eta_read", eta_read), ("p", t.p)] {
        if value <= 0.0 || value > 1.0 {
            return Err(StudyError::BadTimingParameter { name, value });
        }
    }
    let herald_prob = eta_herald * t.p;
    let runs = t.n_a * t.n_p;
    let exact_s =
        runs * (t.t12_s * (1.0 - herald_prob) / (eta_herald * eta_read * t.p)
            + t.t_tot_s * herald_prob / eta_read);
    let approx_s = runs * t.t12_s / (eta_herald * eta_read * t.p);
    Ok(TimingEstimate { exact_s, approx_s })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountingBand {
    Pass,
    Warn,
    Fail,
}

#[derive(Debug, Clone, Copy)]
pub struct CountingReport {
    /// η·n_env, the expected photon count per readout at full thermalization.
    pub product: f64,
    pub band: CountingBand,
}

/// Single-photon-counting constraint η ≪ 1/n_env: pass below 0.1, warn below
/// 1, fail at or above 1.
pub fn counting_constraint(eta: f64, n_env: f64) -> CountingReport {
    let product = eta * n_env;
    let band = if product < 0.1 {
        CountingBand::Pass
    } else if product < 1.0 {
        CountingBand::Warn
    } else {
        CountingBand::Fail
    };
    CountingReport { product, band }
}

/// Detuning-sweep inputs: the grid of average beam detunings and the
/// sideband-resolution figures of the device.
#[derive(Debug, Clone)]
pub struct DetuningConfig {
    /// Average detuning Δ of the two beams in units of ω₁.
    pub delta_over_omega1: Vec<f64>,
    pub omega1_over_kappa: f64,
    pub omega2_over_omega1: f64,
}

/// Phenomenological detuning model: the rates entering one grid cell.
fn detuning_rates(delta: f64, cfg: &DetuningConfig) -> (f64, f64, f64) {
    // working units: omega1 = 1
    let kappa = 1.0 / cfg.omega1_over_kappa;
    let half = kappa / 2.0;
    let omega = [1.0, cfg.omega2_over_omega1];
    let split = (cfg.omega2_over_omega1 - 1.0) / 2.0;
    let beams = [delta - split, delta + split];
    // coherent exchange via the off-resonant cavity response
    let j = delta.abs() / (delta * delta + half * half);
    let lorentz = |x: f64| kappa / (half * half + x * x);
    let mut cooling = 0.0;
    let mut heating = 0.0;
    for b in beams {
        for w in omega {
            cooling += lorentz(b - w);
            heating += lorentz(b + w);
        }
    }
    (j, cooling, heating)
}

/// Visibility as a function of the splitter-beam detuning. The exchange rate
/// J(Δ) and the parasitic rates J_c(Δ), J_h(Δ) follow Lorentzian sideband
/// overlap; cells where J_c + J_h ≥ J (or J vanishes) are masked as
/// infeasible rather than run.
pub fn detuning_sweep(
    base: &ProtocolConfig,
    detuning: &DetuningConfig,
) -> Result<SweepGrid, StudyError> {
    if detuning.delta_over_omega1.is_empty() {
        return Err(StudyError::EmptyAxis);
    }
    let rates: Vec<(f64, f64, f64)> = detuning
        .delta_over_omega1
        .iter()
        .map(|&d| detuning_rates(d, detuning))
        .collect();
    let j_max = rates.iter().map(|r| r.0).fold(0.0f64, f64::max);
    let work: Vec<(f64, f64, f64, f64, bool)> = detuning
        .delta_over_omega1
        .iter()
        .zip(&rates)
        .map(|(&d, &(j, jc, jh))| {
            let feasible_drive = j > f64::MIN_POSITIVE && jc + jh < j;
            (d, j, jc / j.max(f64::MIN_POSITIVE), jh / j.max(f64::MIN_POSITIVE), feasible_drive)
        })
        .collect();
    let cells: Vec<SweepCell> = work
        .par_iter()
        .map(|&(delta, j, jc_over_j, jh_over_j, drive_ok)| {
            let j_norm = if j_max > 0.0 { j / j_max } else { 0.0 };
            let mut config = base.clone();
            config.coupling.jc_over_j = jc_over_j;
            config.coupling.jh_over_j = jh_over_j;
            let params = cell_params(&config, Some(delta), Some(j_norm));
            if !drive_ok {
                return SweepCell {
                    params,
                    visibility: None,
                    feasible: false,
                    error: None,
                };
            }
            match run_protocol(&config).and_then(|t| extract_visibility(&t)) {
                Ok(v) => SweepCell {
                    params,
                    visibility: Some(v),
                    feasible: v >= VISIBILITY_THRESHOLD,
                    error: None,
                },
                Err(e) => SweepCell {
                    params,
                    visibility: None,
                    feasible: false,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(SweepGrid {
        axes: vec![SweepAxis {
            param: SweepParameter::DeltaOverOmega1,
            values: detuning.delta_over_omega1.clone(),
        }],
        cells,
    })
}

/// Snapshot-study configuration: a protocol setup plus the delay times at
/// which the evolving matrix is exported.
#[derive(Debug, Clone)]
pub struct SnapshotConfig {
    pub protocol: ProtocolConfig,
    /// Delay times (s), non-negative and increasing.
    pub times_s: Vec<f64>,
    /// Restrict the evolving state to this mode-1 truncation after the first
    /// splitter (the thin single-excitation view uses n₁ ≤ 1). `None` keeps
    /// the square basis.
    pub restrict_n1: Option<usize>,
}

/// One exported matrix.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub tau_s: f64,
    /// Rotating-frame state during the free-evolution step.
    pub state: DensityMatrix,
    /// Weight dropped by the mode-1 restriction.
    pub dropped_weight: f64,
}

/// Runs the protocol up to the free-evolution step and exports the
/// rotating-frame density matrix at each requested delay.
pub fn snapshot_sequence(config: &SnapshotConfig) -> Result<Vec<Snapshot>, StudyError> {
    if config.times_s.is_empty()
        || config.times_s[0] < 0.0
        || config.times_s.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(StudyError::BadSnapshotTimes);
    }
    let (prepared, _warnings) = prepare_initial_state(&config.protocol)?;
    let (rho0, dropped) = match config.restrict_n1 {
        Some(n1) if n1 < config.protocol.basis.n1_max() => prepared.restrict_mode1(n1)?,
        _ => (prepared, 0.0),
    };
    let basis = rho0.basis();
    let tables = build_tables(basis);
    let integrator = IntegratorConfig {
        step_s: IntegratorConfig::auto(&config.protocol.system, basis).step_s,
        ..config.protocol.integrator
    };
    let prop = Propagator::new(&config.protocol.system, basis, &tables, integrator);
    let mut out = Vec::with_capacity(config.times_s.len());
    let mut state = rho0.matrix().clone();
    let mut prev = 0.0;
    for &t in &config.times_s {
        let (next, _err) = prop.advance(&state, prev, t - prev)?;
        state = next;
        prev = t;
        let mut snap = DensityMatrix::from_matrix(basis, state.clone())?;
        snap.enforce_hermitian();
        out.push(Snapshot {
            tau_s: t,
            state: snap.renormalized(),
            dropped_weight: dropped,
        });
    }
    Ok(out)
}

/// Total magnitude of the off-diagonal quadrants (mode-1 coherences p ≠ q).
pub fn offdiagonal_quadrant_magnitude(rho: &DensityMatrix) -> f64 {
    let basis = rho.basis();
    let mut total = 0.0;
    for (row, (p, _)) in basis.states().enumerate() {
        for (col, (q, _)) in basis.states().enumerate() {
            if p != q {
                total += rho.element(row, col).norm();
            }
        }
    }
    total
}

/// Total-variation distance between a mode marginal and the truncated
/// thermal distribution at mean occupancy `n_env`.
pub fn thermal_distance(rho: &DensityMatrix, mode: Mode, n_env: f64) -> f64 {
    let marginal = rho.marginal(mode);
    let q = if n_env > 0.0 { n_env / (1.0 + n_env) } else { 0.0 };
    let weights: Vec<f64> = (0..marginal.len()).map(|n| q.powi(n as i32)).collect();
    let norm: f64 = weights.iter().sum();
    0.5 * marginal
        .iter()
        .zip(&weights)
        .map(|(p, w)| (p - w / norm).abs())
        .sum::<f64>()
}

/// Convenience: SystemParams rescaled by `factor` on every rate-like quantity
/// (frequencies and temperature together), preserving every dimensionless
/// ratio (Δω/γ, ω₂/ω₁, n_env) while shrinking wall-clock integration spans.
pub fn rescale_system(params: &SystemParams, factor: f64) -> SystemParams {
    SystemParams {
        omega1_hz: params.omega1_hz * factor,
        omega2_hz: params.omega2_hz * factor,
        gamma_hz: params.gamma_hz * factor,
        t_env_k: params.t_env_k * factor,
        kappa_hz: params.kappa_hz * factor,
        mass2_kg: params.mass2_kg,
    }
}
