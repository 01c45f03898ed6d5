//! The end-to-end experiment: cool, herald, split, evolve, split, read out.
//!
//! [`run_protocol`] produces the readout trace R(τ) = η·⟨n₁⟩ after the second
//! splitter pulse; [`analytic_readout`] is the closed-form reference model the
//! trace is fitted against ([`fit_decay`]); [`extract_visibility`] reduces a
//! trace to the interference visibility of its first beat period.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use thiserror::Error;

use crate::channels::{
    apply_beam_splitter_for, cooling_channel, heating_channel, heralded_excitation,
    BeamSplitterModel, ChannelError, HeraldModel,
};
use crate::dynamics::{build_tables, DynamicsError, Frame, IntegratorConfig, Propagator};
use crate::fock::{
    thermal_state, CouplingParams, DensityMatrix, DetectionParams, FockBasis, FockError, Mode,
    SystemParams, TruncationPolicy, TAU,
};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("tau grid must be non-empty, non-negative and strictly increasing")]
    BadTauGrid,
    #[error("trace does not cover a full beat period ({needed:.3e} s) with enough points")]
    InsufficientGrid { needed: f64 },
    #[error("trace is identically zero; visibility is undefined")]
    DegenerateTrace,
    #[error("analytic model requires positive time constants, got tau_d={tau_d}, tau_th={tau_th}")]
    BadAnalyticModel { tau_d: f64, tau_th: f64 },
    #[error("pulse samples must be non-negative with increasing times")]
    BadPulseSamples,
    #[error(
        "truncation leakage {population:.3e} of mode {mode:?} after a channel exceeds {limit:.1e}"
    )]
    ChannelLeakage { mode: Mode, population: f64, limit: f64 },
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Full configuration of one protocol run.
#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub system: SystemParams,
    pub detection: DetectionParams,
    pub coupling: CouplingParams,
    /// Initial thermal occupancy per mode after the cooling pulse.
    pub n_th: [f64; 2],
    /// Delay times to sample (s), strictly increasing.
    pub tau_grid: Vec<f64>,
    pub basis: FockBasis,
    pub integrator: IntegratorConfig,
    pub bs_model: BeamSplitterModel,
    /// Highest herald multi-phonon order (branch weights 1, p, p², ...).
    pub herald_max_order: usize,
    pub policy: TruncationPolicy,
}

impl ProtocolConfig {
    /// A configuration with sensible defaults for the given physics.
    pub fn new(
        system: SystemParams,
        detection: DetectionParams,
        coupling: CouplingParams,
        n_th: [f64; 2],
        tau_grid: Vec<f64>,
        basis: FockBasis,
    ) -> Self {
        Self {
            integrator: IntegratorConfig::auto(&system, basis),
            bs_model: BeamSplitterModel::FullExchange,
            herald_max_order: HeraldModel::default().max_order,
            system,
            detection,
            coupling,
            n_th,
            tau_grid,
            basis,
            policy: TruncationPolicy::default(),
        }
    }

    pub fn herald_model(&self) -> HeraldModel {
        HeraldModel {
            p: self.detection.p,
            dark: self.detection.dark,
            max_order: self.herald_max_order,
        }
    }

    fn validate(&self) -> Result<Vec<String>, ProtocolError> {
        self.system.validate()?;
        self.coupling.validate()?;
        let mut warnings = self.detection.validate()?;
        if self.tau_grid.is_empty()
            || self.tau_grid[0] < 0.0
            || self.tau_grid.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(ProtocolError::BadTauGrid);
        }
        let period = self.system.beat_period_s();
        let span = *self.tau_grid.last().expect("non-empty grid");
        if span >= period {
            let in_first_period =
                self.tau_grid.iter().filter(|&&t| t <= period).count();
            if in_first_period < 8 {
                warnings.push(format!(
                    "only {in_first_period} grid points cover the first beat period \
                     ({period:.3e} s); at least 8 are needed to resolve the oscillation"
                ));
            }
        }
        Ok(warnings)
    }
}

/// R(τ) samples and per-point diagnostics from a protocol run.
#[derive(Debug, Clone)]
pub struct ReadoutTrace {
    /// Delay times (s).
    pub tau_s: Vec<f64>,
    /// Mean detected signal per trial, η·⟨n₁⟩ at readout.
    pub r: Vec<f64>,
    /// Pre-detection occupancies of both modes after the second splitter.
    pub n1: Vec<f64>,
    pub n2: Vec<f64>,
    /// Top-level population per mode at each point (truncation diagnostics).
    pub leak1: Vec<f64>,
    pub leak2: Vec<f64>,
    pub warnings: Vec<String>,
    /// Beat frequency ω₂ − ω₁ (Hz), for visibility extraction.
    pub delta_omega_hz: f64,
    pub eta: f64,
    pub n_env: f64,
}

fn check_channel_leak(
    rho: &DensityMatrix,
    policy: &TruncationPolicy,
    stage: &str,
    warnings: &mut Vec<String>,
) -> Result<(), ProtocolError> {
    for mode in [Mode::One, Mode::Two] {
        let leak = rho.top_level_population(mode);
        if leak > policy.leak_fail {
            return Err(ProtocolError::ChannelLeakage {
                mode,
                population: leak,
                limit: policy.leak_fail,
            });
        }
        if leak > policy.leak_warn {
            warnings.push(format!(
                "top-level population {leak:.3e} of mode {mode:?} after {stage}"
            ));
        }
    }
    Ok(())
}

/// Prepares the pre-delay state: thermal occupancies, heralded excitation,
/// first splitter pulse with its cooling/heating contamination.
pub(crate) fn prepare_initial_state(
    config: &ProtocolConfig,
) -> Result<(DensityMatrix, Vec<String>), ProtocolError> {
    let mut warnings = config.validate()?;
    let (rho, thermal_warnings) = thermal_state(config.basis, config.n_th, &config.policy)?;
    warnings.extend(thermal_warnings);
    let rho = heralded_excitation(&rho, &config.herald_model())?;
    check_channel_leak(&rho, &config.policy, "herald", &mut warnings)?;
    let rho = splitter_pulse(&rho, config)?;
    check_channel_leak(&rho, &config.policy, "first splitter", &mut warnings)?;
    Ok((rho, warnings))
}

fn splitter_pulse(
    rho: &DensityMatrix,
    config: &ProtocolConfig,
) -> Result<DensityMatrix, ProtocolError> {
    let rho = apply_beam_splitter_for(rho, FRAC_PI_4, config.bs_model)?;
    let rho = cooling_channel(&rho, config.coupling.jc_over_j)?;
    Ok(heating_channel(&rho, config.coupling.jh_over_j)?)
}

/// Runs the four-pulse protocol over the configured τ grid.
///
/// The delay evolution advances once through the grid in the rotating frame
/// (checkpointed at every grid point), so the cost is one integration of the
/// longest delay regardless of grid size, and results are deterministic and
/// independent of thread count.
pub fn run_protocol(config: &ProtocolConfig) -> Result<ReadoutTrace, ProtocolError> {
    let (rho0, mut warnings) = prepare_initial_state(config)?;
    let tables = build_tables(config.basis);
    let prop = Propagator::new(&config.system, config.basis, &tables, config.integrator);
    let eta = config.detection.eta;

    let n = config.tau_grid.len();
    let mut trace = ReadoutTrace {
        tau_s: config.tau_grid.clone(),
        r: Vec::with_capacity(n),
        n1: Vec::with_capacity(n),
        n2: Vec::with_capacity(n),
        leak1: Vec::with_capacity(n),
        leak2: Vec::with_capacity(n),
        warnings: Vec::new(),
        delta_omega_hz: config.system.omega2_hz - config.system.omega1_hz,
        eta,
        n_env: config.system.n_env(),
    };

    let mut state = rho0.matrix().clone();
    let mut prev_tau = 0.0;
    let mut max_drift = 0.0f64;
    for &tau in &config.tau_grid {
        let (next, _step_error) = prop.advance(&state, prev_tau, tau - prev_tau)?;
        state = next;
        prev_tau = tau;
        max_drift = max_drift.max((state.trace().re - 1.0).abs());

        let lab = match config.integrator.frame {
            Frame::Rotating => prop.to_lab_frame(&state, tau),
            Frame::Lab => state.clone(),
        };
        let mut rho_tau = DensityMatrix::from_matrix(config.basis, lab)?;
        rho_tau.enforce_hermitian();
        let rho_tau = rho_tau.renormalized();
        for mode in [Mode::One, Mode::Two] {
            let leak = rho_tau.top_level_population(mode);
            if leak > config.policy.leak_fail {
                return Err(ProtocolError::Dynamics(DynamicsError::LeakageExceeded {
                    mode,
                    population: leak,
                    limit: config.policy.leak_fail,
                }));
            }
        }

        let rho_out = splitter_pulse(&rho_tau, config)?;
        trace.r.push(eta * rho_out.occupancy(Mode::One));
        trace.n1.push(rho_out.occupancy(Mode::One));
        trace.n2.push(rho_out.occupancy(Mode::Two));
        trace.leak1.push(rho_out.top_level_population(Mode::One));
        trace.leak2.push(rho_out.top_level_population(Mode::Two));
    }
    if max_drift > 1e-8 {
        warnings.push(format!(
            "trace drifted by up to {max_drift:.3e} before renormalization (truncation loss)"
        ));
    }
    trace.warnings = warnings;
    Ok(trace)
}

/// The closed-form readout reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticModel {
    /// Decoherence (off-diagonal decay) time constant (s).
    pub tau_d_s: f64,
    /// Thermalization time constant (s).
    pub tau_th_s: f64,
    pub n_env: f64,
    /// Beat frequency ω₂ − ω₁ (Hz).
    pub delta_omega_hz: f64,
    pub eta: f64,
}

impl AnalyticModel {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.tau_d_s <= 0.0 || self.tau_th_s <= 0.0 {
            return Err(ProtocolError::BadAnalyticModel {
                tau_d: self.tau_d_s,
                tau_th: self.tau_th_s,
            });
        }
        Ok(())
    }
}

/// R(τ) = η·[1/2 − cos(Δω_ang·τ)e^{−τ/τ_d}/2 + (n_env − 1/2)(1 − e^{−τ/τ_th})].
pub fn analytic_readout(model: &AnalyticModel, tau: f64) -> f64 {
    let beat = TAU * model.delta_omega_hz * tau;
    model.eta
        * (0.5 - beat.cos() * (-tau / model.tau_d_s).exp() / 2.0
            + (model.n_env - 0.5) * (1.0 - (-tau / model.tau_th_s).exp()))
}

/// Parabolic refinement of a sampled extremum through three points; falls
/// back to the center sample when the curvature or geometry is degenerate.
fn refine_extremum(t: [f64; 3], y: [f64; 3]) -> f64 {
    let d21 = (y[1] - y[0]) / (t[1] - t[0]);
    let d32 = (y[2] - y[1]) / (t[2] - t[1]);
    let curv = (d32 - d21) / (t[2] - t[0]);
    if curv == 0.0 {
        return y[1];
    }
    // vertex of the interpolating parabola, Newton form
    let tv = 0.5 * (t[0] + t[1]) - d21 / (2.0 * curv);
    if tv < t[0] || tv > t[2] {
        return y[1];
    }
    y[0] + d21 * (tv - t[0]) + curv * (tv - t[0]) * (tv - t[1])
}

/// Fringe visibility (R_max − R_min)/(R_max + R_min) over the first beat
/// period of the trace. The detection efficiency cancels exactly.
pub fn extract_visibility(trace: &ReadoutTrace) -> Result<f64, ProtocolError> {
    let period = 1.0 / trace.delta_omega_hz.abs();
    let last = trace.tau_s.last().copied().unwrap_or(0.0);
    let idx: Vec<usize> = trace
        .tau_s
        .iter()
        .enumerate()
        .filter(|(_, &t)| t <= period * (1.0 + 1e-9))
        .map(|(i, _)| i)
        .collect();
    if last < period * (1.0 - 1e-9) || idx.len() < 5 {
        return Err(ProtocolError::InsufficientGrid { needed: period });
    }
    let value = |i: usize| trace.r[i];
    let mut hi = idx[0];
    let mut lo = idx[0];
    for &i in &idx {
        if value(i) > value(hi) {
            hi = i;
        }
        if value(i) < value(lo) {
            lo = i;
        }
    }
    let refined = |i: usize| -> f64 {
        if i == 0 || i + 1 >= trace.tau_s.len() {
            return value(i);
        }
        refine_extremum(
            [trace.tau_s[i - 1], trace.tau_s[i], trace.tau_s[i + 1]],
            [value(i - 1), value(i), value(i + 1)],
        )
    };
    let max = refined(hi).max(value(hi));
    let min = refined(lo).min(value(lo)).max(0.0);
    let denom = max + min;
    if denom <= f64::MIN_POSITIVE {
        return Err(ProtocolError::DegenerateTrace);
    }
    Ok((max - min) / denom)
}

/// Least-squares estimates of the analytic model's time constants.
#[derive(Debug, Clone, Copy)]
pub struct DecayFit {
    pub tau_d_s: f64,
    pub tau_th_s: f64,
    /// Root-mean-square residual of the fitted model against the trace.
    pub rms: f64,
    /// Set when the fitted constant ran into the search boundary: the trace
    /// only supports a one-sided bound.
    pub tau_d_is_lower_bound: bool,
    pub tau_th_is_lower_bound: bool,
}

/// Fits τ_d and τ_th of [`analytic_readout`] to a trace by deterministic
/// log-grid descent (η, n_env and Δω are taken from the trace metadata).
pub fn fit_decay(trace: &ReadoutTrace) -> Result<DecayFit, ProtocolError> {
    if trace.tau_s.len() < 8 {
        return Err(ProtocolError::InsufficientGrid {
            needed: trace.tau_s.last().copied().unwrap_or(0.0),
        });
    }
    let span = trace.tau_s.last().copied().expect("non-empty");
    let cost = |tau_d: f64, tau_th: f64| -> f64 {
        let model = AnalyticModel {
            tau_d_s: tau_d,
            tau_th_s: tau_th,
            n_env: trace.n_env,
            delta_omega_hz: trace.delta_omega_hz,
            eta: trace.eta,
        };
        trace
            .tau_s
            .iter()
            .zip(&trace.r)
            .map(|(&t, &r)| {
                let e = analytic_readout(&model, t) - r;
                e * e
            })
            .sum::<f64>()
    };
    let bound_lo = span * 1e-3;
    let bound_hi = span * 1e3;
    let mut center = (span.ln(), span.ln());
    let mut half_width = (bound_hi / bound_lo).ln() / 2.0;
    let mut best = (center.0.exp(), center.1.exp(), f64::INFINITY);
    const POINTS: usize = 21;
    for _ in 0..8 {
        let mut round_best = (0.0, 0.0, f64::INFINITY);
        for i in 0..POINTS {
            let ld = center.0 - half_width + 2.0 * half_width * i as f64 / (POINTS - 1) as f64;
            let td = ld.exp().clamp(bound_lo, bound_hi);
            for j in 0..POINTS {
                let lt =
                    center.1 - half_width + 2.0 * half_width * j as f64 / (POINTS - 1) as f64;
                let tt = lt.exp().clamp(bound_lo, bound_hi);
                let c = cost(td, tt);
                if c < round_best.2 {
                    round_best = (td, tt, c);
                }
            }
        }
        best = round_best;
        center = (best.0.ln(), best.1.ln());
        half_width /= 4.0;
    }
    let rms = (best.2 / trace.tau_s.len() as f64).sqrt();
    Ok(DecayFit {
        tau_d_s: best.0,
        tau_th_s: best.1,
        rms,
        tau_d_is_lower_bound: best.0 >= bound_hi * 0.99 || best.0 > span,
        tau_th_is_lower_bound: best.1 >= bound_hi * 0.99 || best.1 > span,
    })
}

/// One sampled point of the readout-pulse envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSample {
    pub t_s: f64,
    /// Intracavity photon number n_cav(t).
    pub n_cav: f64,
}

/// Result of the readout-pulse area check.
#[derive(Debug, Clone)]
pub struct PulseAreaReport {
    /// ∫ n_cav(t)·g₁_ang dt (rad).
    pub area_rad: f64,
    /// True when the area is within 1% of π/2.
    pub pass: bool,
    /// True when the envelope is exponential to within 5%; exponentially
    /// shaped pulses give the most even interaction.
    pub exponential_shape: bool,
}

impl PulseAreaReport {
    pub fn recommend_exponential(&self) -> bool {
        !self.exponential_shape
    }
}

/// Checks that the readout pulse area ∫n_cav(t)·g₁ dt reaches the π/2 needed
/// to swap the full phonon occupation out of resonator 1.
pub fn validate_pulse_area(
    samples: &[PulseSample],
    g1_hz: f64,
) -> Result<PulseAreaReport, ProtocolError> {
    if samples.len() < 2
        || samples.iter().any(|s| s.n_cav < 0.0)
        || samples.windows(2).any(|w| w[1].t_s <= w[0].t_s)
    {
        return Err(ProtocolError::BadPulseSamples);
    }
    let g1_ang = TAU * g1_hz;
    let mut area = 0.0;
    for w in samples.windows(2) {
        area += 0.5 * (w[0].n_cav + w[1].n_cav) * (w[1].t_s - w[0].t_s) * g1_ang;
    }
    let pass = (area - FRAC_PI_2).abs() <= 0.01 * FRAC_PI_2;

    // log-linear regression detects an exponential envelope
    let peak = samples.iter().map(|s| s.n_cav).fold(0.0f64, f64::max);
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.n_cav > 1e-6 * peak)
        .map(|s| (s.t_s, s.n_cav.ln()))
        .collect();
    let exponential_shape = if pts.len() >= 3 {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let denom = n * sxx - sx * sx;
        if denom.abs() < f64::MIN_POSITIVE {
            false
        } else {
            let slope = (n * sxy - sx * sy) / denom;
            let intercept = (sy - slope * sx) / n;
            let rel_err: f64 = pts
                .iter()
                .map(|&(t, ly)| {
                    let fit = slope * t + intercept;
                    (ly - fit).abs()
                })
                .fold(0.0, f64::max);
            slope < 0.0 && rel_err < 0.05
        }
    } else {
        false
    };
    Ok(PulseAreaReport { area_rad: area, pass, exponential_shape })
}

/// Uniform τ grid covering `periods` beat periods with `per_period` points,
/// starting at τ = 0.
pub fn beat_grid(system: &SystemParams, periods: f64, per_period: usize) -> Vec<f64> {
    let period = system.beat_period_s();
    let n = ((periods * per_period as f64).round() as usize).max(2);
    (0..=n)
        .map(|i| periods * period * i as f64 / n as f64)
        .collect()
}
