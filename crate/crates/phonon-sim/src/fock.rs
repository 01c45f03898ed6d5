//! Truncated two-mode Fock space: basis indexing, operators, states.
//!
//! States are |n₁ n₂⟩ with n₁ ≤ `n1_max`, n₂ ≤ `n2_max`, flattened row-major
//! so that index(n₁, n₂) = n₁·(n2_max+1) + n₂. For (1, 10) this reproduces
//! the ordering {00, 01, ..., 09, 010, 10, 11, ..., 110}.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::{HBAR, K_B};

pub(crate) const TAU: f64 = std::f64::consts::TAU;

#[derive(Debug, Error)]
pub enum FockError {
    #[error("truncation must allow at least two levels per mode, got n1_max={0}, n2_max={1}")]
    TruncationTooSmall(usize, usize),
    #[error("mean occupancy must be non-negative, got {0}")]
    NegativeOccupancy(f64),
    #[error("thermal tail beyond truncation is {weight:.3e} (> {limit:.1e}) for mode {mode:?}; enlarge the basis or relax the policy")]
    ThermalTailTooLarge { mode: Mode, weight: f64, limit: f64 },
    #[error("matrix dimension {got} does not match basis dimension {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("resonator frequencies must differ (beat note required), both are {0} Hz")]
    DegenerateFrequencies(f64),
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} must lie in [0, 1], got {value}")]
    NotAProbability { name: &'static str, value: f64 },
}

/// One of the two mechanical resonators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// The interaction resonator (heralded and read out).
    One,
    /// The quantum test mass (coupled to the thermal bath).
    Two,
}

/// Index map for the truncated two-mode number basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FockBasis {
    n1_max: usize,
    n2_max: usize,
}

impl FockBasis {
    /// Builds a basis with the given per-mode truncations (highest retained
    /// number state per mode). Both must be at least 1.
    pub fn new(n1_max: usize, n2_max: usize) -> Result<Self, FockError> {
        if n1_max < 1 || n2_max < 1 {
            return Err(FockError::TruncationTooSmall(n1_max, n2_max));
        }
        Ok(Self { n1_max, n2_max })
    }

    pub fn n1_max(&self) -> usize {
        self.n1_max
    }

    pub fn n2_max(&self) -> usize {
        self.n2_max
    }

    pub fn max(&self, mode: Mode) -> usize {
        match mode {
            Mode::One => self.n1_max,
            Mode::Two => self.n2_max,
        }
    }

    /// Total Hilbert-space dimension, (n1_max+1)·(n2_max+1).
    pub fn dimension(&self) -> usize {
        (self.n1_max + 1) * (self.n2_max + 1)
    }

    /// Flat index of |n₁ n₂⟩.
    pub fn index(&self, n1: usize, n2: usize) -> usize {
        debug_assert!(n1 <= self.n1_max && n2 <= self.n2_max);
        n1 * (self.n2_max + 1) + n2
    }

    /// Occupation pair (n₁, n₂) of a flat index.
    pub fn unindex(&self, k: usize) -> (usize, usize) {
        debug_assert!(k < self.dimension());
        (k / (self.n2_max + 1), k % (self.n2_max + 1))
    }

    /// Iterates states in index order.
    pub fn states(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.dimension()).map(|k| self.unindex(k))
    }

    /// Concatenated-digit label, e.g. "00", "010", "110".
    pub fn label(&self, k: usize) -> String {
        let (n1, n2) = self.unindex(k);
        format!("{n1}{n2}")
    }

    /// Total phonon number of a flat index.
    pub fn total(&self, k: usize) -> usize {
        let (n1, n2) = self.unindex(k);
        n1 + n2
    }
}

/// Truncation-error policy shared by preparation and evolution code.
#[derive(Debug, Clone, Copy)]
pub struct TruncationPolicy {
    /// Thermal-state tail weight beyond the basis that triggers a warning.
    pub thermal_tail_warn: f64,
    /// Top-level population that triggers a warning on evolution/channel output.
    pub leak_warn: f64,
    /// Top-level population that fails the run.
    pub leak_fail: f64,
    /// Escalate warnings to hard errors.
    pub strict: bool,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self {
            thermal_tail_warn: 1e-2,
            leak_warn: 1e-3,
            leak_fail: 1e-2,
            strict: false,
        }
    }
}

impl TruncationPolicy {
    /// Policy for deliberately truncated study bases (the three-level
    /// imperfection grids): leakage is reported, never fatal.
    pub fn permissive() -> Self {
        Self {
            thermal_tail_warn: 1.0,
            leak_warn: 1e-3,
            leak_fail: 1.0,
            strict: false,
        }
    }
}

/// Complex Hermitian trace-one matrix over a [`FockBasis`].
///
/// Row index encodes the ket pair (p, r), column the bra pair (q, s), so the
/// stored entry at (index(p,r), index(q,s)) is the coefficient a_pqrs of
/// |p r⟩⟨q s|.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    basis: FockBasis,
    elements: DMatrix<Complex64>,
}

impl DensityMatrix {
    /// Wraps a raw matrix, checking dimension, Hermiticity and trace.
    pub fn from_matrix(basis: FockBasis, elements: DMatrix<Complex64>) -> Result<Self, FockError> {
        if elements.nrows() != basis.dimension() || elements.ncols() != basis.dimension() {
            return Err(FockError::DimensionMismatch {
                got: elements.nrows(),
                expected: basis.dimension(),
            });
        }
        let rho = Self { basis, elements };
        debug_assert!(rho.hermiticity_defect() < 1e-12);
        Ok(rho)
    }

    /// Pure number state |n₁ n₂⟩⟨n₁ n₂|.
    pub fn pure(basis: FockBasis, n1: usize, n2: usize) -> Self {
        let mut m = DMatrix::zeros(basis.dimension(), basis.dimension());
        let k = basis.index(n1, n2);
        m[(k, k)] = Complex64::new(1.0, 0.0);
        Self { basis, elements: m }
    }

    /// Pure state from a ket amplitude vector.
    pub fn from_ket(basis: FockBasis, ket: &[Complex64]) -> Result<Self, FockError> {
        if ket.len() != basis.dimension() {
            return Err(FockError::DimensionMismatch {
                got: ket.len(),
                expected: basis.dimension(),
            });
        }
        let norm2: f64 = ket.iter().map(|a| a.norm_sqr()).sum();
        let d = basis.dimension();
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] = ket[i] * ket[j].conj() / norm2;
            }
        }
        Ok(Self { basis, elements: m })
    }

    pub fn basis(&self) -> FockBasis {
        self.basis
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.elements
    }

    pub fn element(&self, row: usize, col: usize) -> Complex64 {
        self.elements[(row, col)]
    }

    /// Entry a_pqrs of |p r⟩⟨q s|.
    pub fn coefficient(&self, p: usize, q: usize, r: usize, s: usize) -> Complex64 {
        self.elements[(self.basis.index(p, r), self.basis.index(q, s))]
    }

    pub fn trace(&self) -> Complex64 {
        self.elements.trace()
    }

    /// Largest |ρ_ij − ρ_ji*| over all pairs.
    pub fn hermiticity_defect(&self) -> f64 {
        let d = self.basis.dimension();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i..d {
                let defect = (self.elements[(i, j)] - self.elements[(j, i)].conj()).norm();
                worst = worst.max(defect);
            }
        }
        worst
    }

    /// Smallest eigenvalue (Hermitian part). Used in debug/test paths to
    /// check positive semidefiniteness.
    pub fn min_eigenvalue(&self) -> f64 {
        crate::linalg::hermitian_eigenvalues(&self.elements)
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    /// Returns a copy rescaled to unit trace.
    pub fn renormalized(&self) -> Self {
        let t = self.trace().re;
        Self {
            basis: self.basis,
            elements: &self.elements / Complex64::new(t, 0.0),
        }
    }

    /// Symmetrizes away floating-point Hermiticity drift in place.
    pub(crate) fn enforce_hermitian(&mut self) {
        let d = self.basis.dimension();
        for i in 0..d {
            for j in (i + 1)..d {
                let avg = (self.elements[(i, j)] + self.elements[(j, i)].conj()) * 0.5;
                self.elements[(i, j)] = avg;
                self.elements[(j, i)] = avg.conj();
            }
            let di = self.elements[(i, i)];
            self.elements[(i, i)] = Complex64::new(di.re, 0.0);
        }
    }

    /// Marginal number distribution of one mode.
    pub fn marginal(&self, mode: Mode) -> Vec<f64> {
        let len = self.basis.max(mode) + 1;
        let mut out = vec![0.0; len];
        for k in 0..self.basis.dimension() {
            let (n1, n2) = self.basis.unindex(k);
            let n = match mode {
                Mode::One => n1,
                Mode::Two => n2,
            };
            out[n] += self.elements[(k, k)].re;
        }
        out
    }

    /// ⟨n⟩ for the selected mode, Σ n·P(n) over the marginal.
    pub fn occupancy(&self, mode: Mode) -> f64 {
        self.marginal(mode)
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }

    /// Population stored in the top retained level of a mode. This is the
    /// truncation-leakage observable every channel and evolution reports.
    pub fn top_level_population(&self, mode: Mode) -> f64 {
        *self.marginal(mode).last().expect("non-empty marginal")
    }

    /// Restricts to a smaller mode-1 truncation, dropping all population with
    /// n₁ beyond it and renormalizing. Returns the new state and the dropped
    /// weight.
    pub fn restrict_mode1(&self, new_n1_max: usize) -> Result<(Self, f64), FockError> {
        let new_basis = FockBasis::new(new_n1_max, self.basis.n2_max)?;
        let d = new_basis.dimension();
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            let (p, r) = new_basis.unindex(i);
            for j in 0..d {
                let (q, s) = new_basis.unindex(j);
                m[(i, j)] = self.coefficient(p, q, r, s);
            }
        }
        let kept = m.trace().re;
        let dropped = self.trace().re - kept;
        let out = Self {
            basis: new_basis,
            elements: m / Complex64::new(kept, 0.0),
        };
        Ok((out, dropped))
    }
}

/// Lowering (annihilation) operator of one mode over the truncated basis:
/// √n on the (n−1, n) transition of the selected mode, identity on the other.
/// Matrix elements that would leave the truncation are dropped.
pub fn lowering(basis: FockBasis, mode: Mode) -> DMatrix<f64> {
    let d = basis.dimension();
    let mut m = DMatrix::zeros(d, d);
    for k in 0..d {
        let (n1, n2) = basis.unindex(k);
        match mode {
            Mode::One if n1 > 0 => {
                m[(basis.index(n1 - 1, n2), k)] = (n1 as f64).sqrt();
            }
            Mode::Two if n2 > 0 => {
                m[(basis.index(n1, n2 - 1), k)] = (n2 as f64).sqrt();
            }
            _ => {}
        }
    }
    m
}

/// Raising operator, the transpose of [`lowering`].
pub fn raising(basis: FockBasis, mode: Mode) -> DMatrix<f64> {
    lowering(basis, mode).transpose()
}

/// Dimensionless position quadrature x̃ = (b + b†)/√2, so that [x̃, p̃] = i
/// away from the truncation edge. The physical operator is recovered by
/// x = √(ħ/(m·ω_ang))·x̃.
pub fn quadrature_position(basis: FockBasis, mode: Mode) -> DMatrix<f64> {
    let b = lowering(basis, mode);
    (&b + b.transpose()) / 2.0f64.sqrt()
}

/// Dimensionless momentum quadrature p̃ = i(b† − b)/√2.
pub fn quadrature_momentum(basis: FockBasis, mode: Mode) -> DMatrix<Complex64> {
    let b = lowering(basis, mode);
    let bt = b.transpose();
    let i = Complex64::new(0.0, 1.0);
    DMatrix::from_fn(b.nrows(), b.ncols(), |r, c| {
        i * (bt[(r, c)] - b[(r, c)]) / 2.0f64.sqrt()
    })
}

fn geometric_weights(n_th: f64, levels: usize) -> (Vec<f64>, f64) {
    if n_th <= 0.0 {
        let mut w = vec![0.0; levels];
        w[0] = 1.0;
        return (w, 0.0);
    }
    let q = n_th / (1.0 + n_th);
    let w: Vec<f64> = (0..levels).map(|n| (1.0 - q) * q.powi(n as i32)).collect();
    let kept: f64 = w.iter().sum();
    (w, 1.0 - kept)
}

/// Diagonal product state with Bose-Einstein (geometric) weights per mode,
/// renormalized over the truncated basis.
///
/// `occupancies` are per-mode mean phonon numbers. Tail weight beyond the
/// truncation larger than the policy threshold produces a warning (or, under
/// a strict policy, an error).
pub fn thermal_state(
    basis: FockBasis,
    occupancies: [f64; 2],
    policy: &TruncationPolicy,
) -> Result<(DensityMatrix, Vec<String>), FockError> {
    let mut warnings = Vec::new();
    for (mode, &n_th) in [Mode::One, Mode::Two].iter().zip(&occupancies) {
        if n_th < 0.0 {
            return Err(FockError::NegativeOccupancy(n_th));
        }
        let (_, tail) = geometric_weights(n_th, basis.max(*mode) + 1);
        if tail > policy.thermal_tail_warn {
            if policy.strict {
                return Err(FockError::ThermalTailTooLarge {
                    mode: *mode,
                    weight: tail,
                    limit: policy.thermal_tail_warn,
                });
            }
            warnings.push(format!(
                "thermal tail beyond truncation is {tail:.3e} for mode {mode:?} (n_th = {n_th})"
            ));
        }
    }
    let (w1, _) = geometric_weights(occupancies[0], basis.n1_max() + 1);
    let (w2, _) = geometric_weights(occupancies[1], basis.n2_max() + 1);
    let s1: f64 = w1.iter().sum();
    let s2: f64 = w2.iter().sum();
    let d = basis.dimension();
    let mut m = DMatrix::zeros(d, d);
    for k in 0..d {
        let (n1, n2) = basis.unindex(k);
        m[(k, k)] = Complex64::new(w1[n1] / s1 * w2[n2] / s2, 0.0);
    }
    Ok((DensityMatrix { basis, elements: m }, warnings))
}

/// Physical parameters of the two resonators and the environment.
///
/// All frequencies are ordinary frequencies in Hz; the ×2π conversion to
/// angular quantities happens exactly once, in the derived methods below.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    /// Resonator-1 frequency (Hz).
    pub omega1_hz: f64,
    /// Resonator-2 frequency (Hz).
    pub omega2_hz: f64,
    /// Resonator-2 energy damping rate (Hz).
    pub gamma_hz: f64,
    /// Environment temperature (K).
    pub t_env_k: f64,
    /// Cavity linewidth (Hz); used by the detuning model only.
    pub kappa_hz: f64,
    /// Resonator-2 effective mass (kg). Only documents the dimensional
    /// diffusion constant D = 2mγk_B·T_env; the dynamics are dimensionless.
    pub mass2_kg: Option<f64>,
}

impl SystemParams {
    pub fn validate(&self) -> Result<(), FockError> {
        if self.omega1_hz == self.omega2_hz {
            return Err(FockError::DegenerateFrequencies(self.omega1_hz));
        }
        for (name, value) in [
            ("omega1_hz", self.omega1_hz),
            ("omega2_hz", self.omega2_hz),
        ] {
            if value <= 0.0 {
                return Err(FockError::NonPositive { name, value });
            }
        }
        if self.gamma_hz < 0.0 {
            return Err(FockError::NonPositive { name: "gamma_hz", value: self.gamma_hz });
        }
        if self.t_env_k < 0.0 {
            return Err(FockError::NonPositive { name: "t_env_k", value: self.t_env_k });
        }
        Ok(())
    }

    /// Bose-Einstein occupation of the environment at the mode-2 frequency,
    /// n_env = 1/(exp(ħω₂_ang/k_B·T) − 1).
    pub fn n_env(&self) -> f64 {
        if self.t_env_k <= 0.0 {
            return 0.0;
        }
        let x = HBAR * TAU * self.omega2_hz / (K_B * self.t_env_k);
        1.0 / x.exp_m1()
    }

    pub fn gamma_angular(&self) -> f64 {
        TAU * self.gamma_hz
    }

    /// Coefficient of the −Λ[x̃,[x̃,ρ]] diffusion term in dimensionless
    /// quadratures: Λ = γ_ang·(n_env + 1/2).
    ///
    /// This is the thermal-occupation form of D·x_zpf²/ħ² with
    /// D = 2mγk_B·T_env; in the high-temperature limit it reduces to
    /// γ_ang·k_B·T/(ħω₂_ang). The form used here makes the diagonal dynamics
    /// an exact thermal birth-death chain with downward rate γ_ang(n_env+1)
    /// and upward rate γ_ang·n_env, so the mode-2 marginal relaxes to the
    /// Bose-Einstein distribution at n_env.
    pub fn lambda_coefficient(&self) -> f64 {
        self.gamma_angular() * (self.n_env() + 0.5)
    }

    /// Coefficient of the −iγ̃[x̃,{p̃,ρ}] damping term: γ̃ = γ_ang/2, so that
    /// occupancies relax as d⟨n₂⟩/dt = −γ_ang(⟨n₂⟩ − n_env).
    pub fn gamma_tilde(&self) -> f64 {
        self.gamma_angular() / 2.0
    }

    /// Beat frequency ω₂ − ω₁ as an angular rate (rad/s).
    pub fn delta_omega_angular(&self) -> f64 {
        TAU * (self.omega2_hz - self.omega1_hz)
    }

    /// One beat period 2π/|ω₂ − ω₁| in seconds.
    pub fn beat_period_s(&self) -> f64 {
        TAU / self.delta_omega_angular().abs()
    }
}

/// Detection-chain parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionParams {
    /// Overall herald/readout collection efficiency.
    pub eta: f64,
    /// Excitation probability per herald pulse.
    pub p: f64,
    /// Combined dark-count / leaked-pulse probability ξ·t_r per herald window.
    pub dark: f64,
    /// Optional split efficiencies for the two-detector variant.
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
}

impl DetectionParams {
    pub fn validate(&self) -> Result<Vec<String>, FockError> {
        let mut fields = vec![("eta", self.eta), ("p", self.p), ("dark", self.dark)];
        if let Some(e1) = self.eta1 {
            fields.push(("eta1", e1));
        }
        if let Some(e2) = self.eta2 {
            fields.push(("eta2", e2));
        }
        for (name, value) in fields {
            if !(0.0..=1.0).contains(&value) {
                return Err(FockError::NotAProbability { name, value });
            }
        }
        let mut warnings = Vec::new();
        if self.p > 0.5 {
            warnings.push(format!(
                "excitation probability p = {} is large; the herald model assumes p << 1",
                self.p
            ));
        }
        Ok(warnings)
    }
}

/// Mechanical-mechanical coupling and its optical contamination rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingParams {
    /// Swap rate J (Hz).
    pub j_hz: f64,
    /// Optical cooling rate relative to J during the splitter pulses.
    pub jc_over_j: f64,
    /// Optical heating rate relative to J.
    pub jh_over_j: f64,
}

impl CouplingParams {
    pub fn validate(&self) -> Result<(), FockError> {
        for (name, value) in [
            ("jc_over_j", self.jc_over_j),
            ("jh_over_j", self.jh_over_j),
        ] {
            if value < 0.0 {
                return Err(FockError::NonPositive { name, value });
            }
        }
        Ok(())
    }
}
