//! Simulator for a two-resonator phonon interference experiment.
//!
//! Two mechanical modes share an optical cavity. Mode 1 is heralded into a
//! single-phonon state, an optically driven beam-splitter pulse delocalizes
//! the phonon across both modes, the pair evolves freely for a delay τ while
//! mode 2 talks to a thermal bath, and a second splitter pulse closes the
//! interferometer so that the phonon occupation of mode 1 carries an
//! interference fringe at the mode frequency difference.
//!
//! The crate is organized in layers:
//!
//! - [`fock`]: truncated two-mode number basis, density matrices, ladder and
//!   quadrature operators, thermal states.
//! - [`channels`]: the discrete protocol steps — heralded excitation with
//!   its contamination branches, the beam-splitter transform, and the
//!   optical cooling/heating contamination channels.
//! - [`dynamics`]: free evolution under position-coupled damping and
//!   diffusion of mode 2 (rotating-frame RK4 plus a per-band closed-form
//!   fast path).
//! - [`protocol`]: the end-to-end run producing a readout trace R(τ), the
//!   closed-form reference model, visibility extraction, decay fitting and
//!   the readout-pulse area check.
//! - [`studies`]: imperfection sweeps, the detuning tradeoff, density-matrix
//!   snapshot sequences and experiment-time estimates.
//!
//! Everything is deterministic: there is no random number generator anywhere
//! in the engine, and identical inputs produce identical outputs regardless
//! of thread count.
//!
//! ```
//! use phonon_sim::*;
//! use phonon_sim::protocol::beat_grid;
//!
//! // an ideal desk-scale run: no damping, perfect herald
//! let system = SystemParams {
//!     omega1_hz: 2_000.0,
//!     omega2_hz: 2_030.0,
//!     gamma_hz: 0.0,
//!     t_env_k: 0.0,
//!     kappa_hz: 2.0e5,
//!     mass2_kg: None,
//! };
//! let detection = DetectionParams { eta: 0.01, p: 0.0, dark: 0.0, eta1: None, eta2: None };
//! let coupling = CouplingParams { j_hz: 1.0e3, jc_over_j: 0.0, jh_over_j: 0.0 };
//! let basis = FockBasis::new(3, 3).unwrap();
//! let grid = beat_grid(&system, 1.0, 32);
//! let config = ProtocolConfig::new(system, detection, coupling, [0.0, 0.0], grid, basis);
//!
//! let trace = run_protocol(&config).unwrap();
//! assert!(trace.r[0].abs() < 1e-12);         // τ = 0: the phonon swaps back
//! let visibility = extract_visibility(&trace).unwrap();
//! assert!((visibility - 1.0).abs() < 1e-9);  // perfect fringe
//! ```

pub mod channels;
pub mod dynamics;
pub mod fock;
pub mod protocol;
pub mod studies;

mod linalg;

pub use channels::{
    apply_beam_splitter, apply_beam_splitter_for, beam_splitter_matrix,
    beam_splitter_matrix_for, cooling_channel, cooling_matrix, heating_channel,
    heralded_excitation, BeamSplitterModel, ChannelError, HeraldModel,
};
pub use dynamics::{
    build_tables, evolve, secular_rates, DecoherenceTables, DynamicsError, Evolved, Frame,
    IntegratorConfig, SecularModel,
};
pub use fock::{
    lowering, quadrature_momentum, quadrature_position, raising, thermal_state, CouplingParams,
    DensityMatrix, DetectionParams, FockBasis, FockError, Mode, SystemParams, TruncationPolicy,
};
pub use protocol::{
    analytic_readout, extract_visibility, fit_decay, run_protocol, validate_pulse_area,
    AnalyticModel, DecayFit, ProtocolConfig, ProtocolError, PulseAreaReport, PulseSample,
    ReadoutTrace,
};
pub use studies::{
    counting_constraint, detuning_sweep, snapshot_sequence, sweep_visibility, timing_estimate,
    CountingBand, CountingReport, DetectorMode, DetuningConfig, Snapshot, SnapshotConfig,
    StudyError, SweepAxis, SweepCell, SweepGrid, SweepParameter, TimingEstimate, TimingParams,
};

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K.
pub const K_B: f64 = 1.380_649e-23;
