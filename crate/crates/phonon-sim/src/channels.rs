//! Discrete protocol channels: heralded excitation, beam splitter, and the
//! optical cooling/heating contamination of the splitter pulses.

use std::collections::HashMap;
use std::sync::{Arc, LazyLock, RwLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::fock::{lowering, DensityMatrix, FockBasis, Mode};

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("mode-1 truncation {n1_max} is smaller than the herald order {max_order}")]
    HeraldTruncation { n1_max: usize, max_order: usize },
    #[error("herald output has vanishing trace (weights p={p}, dark={dark} on a state with no support)")]
    HeraldZeroTrace { p: f64, dark: f64 },
    #[error("herald weights must be non-negative, got p={p}, dark={dark}")]
    HeraldNegativeWeight { p: f64, dark: f64 },
    #[error(
        "beam splitter requires n1_max = n2_max so that total-phonon sectors close under the \
         exchange (energy-conservation block structure); got ({n1_max}, {n2_max})"
    )]
    NonSquareBasis { n1_max: usize, n2_max: usize },
    #[error("cooling/heating weight must lie in [0, 1] for the probabilistic mixture, got {0}")]
    WeightOutOfRange(f64),
    #[error("basis must retain at least three levels per mode for the cooling block structure, got ({0}, {1})")]
    BasisTooSmallForCooling(usize, usize),
    #[error("channel output has vanishing trace")]
    ZeroTrace,
}

/// Heralded-excitation imperfection model.
///
/// A successful herald adds one phonon to mode 1; with probability `p` the
/// occupation is instead incremented twice, with `p²` three times, and with
/// probability `dark` (ξ·t_r) a dark count or leaked pulse photon heralds
/// without any excitation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeraldModel {
    pub p: f64,
    pub dark: f64,
    /// Highest multi-phonon order included.
    pub max_order: usize,
}

impl Default for HeraldModel {
    fn default() -> Self {
        Self { p: 0.0, dark: 0.0, max_order: 3 }
    }
}

impl HeraldModel {
    pub fn new(p: f64, dark: f64) -> Self {
        Self { p, dark, ..Self::default() }
    }
}

/// Applies the heralded-excitation channel:
/// normalize(A₁ρA₁† + p·A₂ρA₂† + p²·A₃ρA₃† + dark·ρ) with A_k the mode-1
/// raising operator applied k times (carrying its √(n+1) factors).
/// The branches mix incoherently.
pub fn heralded_excitation(
    rho: &DensityMatrix,
    model: &HeraldModel,
) -> Result<DensityMatrix, ChannelError> {
    if model.p < 0.0 || model.dark < 0.0 {
        return Err(ChannelError::HeraldNegativeWeight { p: model.p, dark: model.dark });
    }
    let basis = rho.basis();
    if basis.n1_max() < model.max_order {
        return Err(ChannelError::HeraldTruncation {
            n1_max: basis.n1_max(),
            max_order: model.max_order,
        });
    }
    let raise = lowering(basis, Mode::One)
        .transpose()
        .map(|v| Complex64::new(v, 0.0));
    let d = basis.dimension();
    let mut out: DMatrix<Complex64> = DMatrix::zeros(d, d);
    let mut branch_op = DMatrix::identity(d, d);
    for order in 1..=model.max_order {
        branch_op = &raise * branch_op;
        let weight = model.p.powi(order as i32 - 1);
        if weight > 0.0 {
            out += (&branch_op * rho.matrix() * branch_op.adjoint())
                .map(|v| v * Complex64::new(weight, 0.0));
        }
    }
    out += rho.matrix().map(|v| v * Complex64::new(model.dark, 0.0));
    let trace = out.trace().re;
    if trace <= f64::MIN_POSITIVE {
        return Err(ChannelError::HeraldZeroTrace { p: model.p, dark: model.dark });
    }
    let mut rho = DensityMatrix::from_matrix(basis, out / Complex64::new(trace, 0.0))
        .expect("herald preserves dimensions");
    rho.enforce_hermitian();
    Ok(rho)
}

/// Which beam-splitter operator the protocol applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BeamSplitterModel {
    /// exp(θ(b₁†b₂ − b₁b₂†)) over the truncated basis: every total-phonon
    /// sector rotates.
    #[default]
    FullExchange,
    /// Rotation blocks for the sectors with at most two phonons, identity
    /// above — the three-level transform the imperfection studies are
    /// calibrated against.
    ThreeLevel,
}

type BsKey = (usize, usize, u64, BeamSplitterModel);
static BS_CACHE: LazyLock<RwLock<HashMap<BsKey, Arc<DMatrix<f64>>>>> =
    LazyLock::new(|| RwLock::new(HashMap::new()));

/// Real orthogonal beam-splitter matrix for mixing angle `theta`.
///
/// Block-diagonal over total-phonon-number sectors; the single-excitation
/// block is the 2×2 rotation by `theta`, and θ = π/4 gives the canonical
/// 50:50 three-level transform. Requires a square basis so the sectors close
/// under the exchange.
pub fn beam_splitter_matrix(
    theta: f64,
    basis: FockBasis,
) -> Result<DMatrix<f64>, ChannelError> {
    beam_splitter_matrix_for(theta, basis, BeamSplitterModel::FullExchange)
}

/// [`beam_splitter_matrix`] with an explicit operator model.
pub fn beam_splitter_matrix_for(
    theta: f64,
    basis: FockBasis,
    model: BeamSplitterModel,
) -> Result<DMatrix<f64>, ChannelError> {
    if basis.n1_max() != basis.n2_max() {
        return Err(ChannelError::NonSquareBasis {
            n1_max: basis.n1_max(),
            n2_max: basis.n2_max(),
        });
    }
    let key = (basis.n1_max(), basis.n2_max(), theta.to_bits(), model);
    if let Some(hit) = BS_CACHE.read().expect("cache poisoned").get(&key) {
        return Ok(hit.as_ref().clone());
    }
    let built = Arc::new(build_beam_splitter(theta, basis, model));
    BS_CACHE
        .write()
        .expect("cache poisoned")
        .insert(key, Arc::clone(&built));
    Ok(built.as_ref().clone())
}

fn sector_indices(basis: FockBasis) -> Vec<Vec<usize>> {
    let mut sectors = vec![Vec::new(); basis.n1_max() + basis.n2_max() + 1];
    for k in 0..basis.dimension() {
        sectors[basis.total(k)].push(k);
    }
    sectors
}

fn build_beam_splitter(theta: f64, basis: FockBasis, model: BeamSplitterModel) -> DMatrix<f64> {
    let d = basis.dimension();
    // generator G = b1^T b2 - b1 b2^T, real antisymmetric, conserves n1+n2
    let b1 = lowering(basis, Mode::One);
    let b2 = lowering(basis, Mode::Two);
    let gen = b1.transpose() * &b2 - &b1 * b2.transpose();
    let mut out = DMatrix::identity(d, d);
    let cap = match model {
        BeamSplitterModel::FullExchange => usize::MAX,
        BeamSplitterModel::ThreeLevel => 2,
    };
    for ids in sector_indices(basis) {
        let m = ids.len();
        if m < 2 || basis.total(ids[0]) > cap {
            continue;
        }
        // Hermitian i·G restricted to the sector; exp(θG) = V e^{-iθλ} V†
        let h = DMatrix::from_fn(m, m, |a, b| Complex64::new(0.0, gen[(ids[a], ids[b])]));
        let (vals, vecs) = crate::linalg::hermitian_eigen(&h);
        let phases = nalgebra::DVector::from_iterator(
            m,
            vals.iter().map(|&l| Complex64::from_polar(1.0, -theta * l)),
        );
        let block = &vecs * DMatrix::from_diagonal(&phases) * vecs.adjoint();
        for a in 0..m {
            for b in 0..m {
                out[(ids[a], ids[b])] = block[(a, b)].re;
            }
        }
    }
    out
}

fn sandwich(
    rho: &DensityMatrix,
    left: &DMatrix<Complex64>,
    right: &DMatrix<Complex64>,
) -> Result<DensityMatrix, ChannelError> {
    let m = left * rho.matrix() * right;
    let trace = m.trace().re;
    if trace <= f64::MIN_POSITIVE {
        return Err(ChannelError::ZeroTrace);
    }
    let mut out = DensityMatrix::from_matrix(rho.basis(), m / Complex64::new(trace, 0.0))
        .expect("sandwich preserves dimensions");
    out.enforce_hermitian();
    Ok(out)
}

/// Applies the beam splitter as ρ' = Sᵀ ρ S.
pub fn apply_beam_splitter(rho: &DensityMatrix, theta: f64) -> Result<DensityMatrix, ChannelError> {
    apply_beam_splitter_for(rho, theta, BeamSplitterModel::FullExchange)
}

/// [`apply_beam_splitter`] with an explicit operator model.
pub fn apply_beam_splitter_for(
    rho: &DensityMatrix,
    theta: f64,
    model: BeamSplitterModel,
) -> Result<DensityMatrix, ChannelError> {
    let s = beam_splitter_matrix_for(theta, rho.basis(), model)?.map(|v| Complex64::new(v, 0.0));
    sandwich(rho, &s.transpose(), &s)
}

/// The cooling transform S_c = (1 − w)·I + w·(b₁ + b₂): identity mixed with
/// single-phonon removal at relative rate w = J_c/J.
pub fn cooling_matrix(basis: FockBasis, jc_over_j: f64) -> Result<DMatrix<f64>, ChannelError> {
    if !(0.0..=1.0).contains(&jc_over_j) {
        return Err(ChannelError::WeightOutOfRange(jc_over_j));
    }
    if basis.n1_max() < 2 || basis.n2_max() < 2 {
        return Err(ChannelError::BasisTooSmallForCooling(
            basis.n1_max(),
            basis.n2_max(),
        ));
    }
    let d = basis.dimension();
    let removal = lowering(basis, Mode::One) + lowering(basis, Mode::Two);
    Ok(DMatrix::identity(d, d) * (1.0 - jc_over_j) + removal * jc_over_j)
}

/// Optical cooling contamination: ρ' = normalize(S_c ρ S_cᵀ). With
/// J_c/J = 0 the map is the identity; phonon removal only ever lowers
/// ⟨n₁⟩ + ⟨n₂⟩ on the protocol's sector-block-diagonal states.
pub fn cooling_channel(rho: &DensityMatrix, jc_over_j: f64) -> Result<DensityMatrix, ChannelError> {
    if jc_over_j == 0.0 {
        return Ok(rho.clone());
    }
    let sc = cooling_matrix(rho.basis(), jc_over_j)?.map(|v| Complex64::new(v, 0.0));
    sandwich(rho, &sc, &sc.transpose())
}

/// Optical heating contamination: the same mixture built on S_cᵀ (phonon
/// addition), ρ' = normalize(S_cᵀ ρ S_c).
pub fn heating_channel(rho: &DensityMatrix, jh_over_j: f64) -> Result<DensityMatrix, ChannelError> {
    if jh_over_j == 0.0 {
        return Ok(rho.clone());
    }
    let sc = cooling_matrix(rho.basis(), jh_over_j)?.map(|v| Complex64::new(v, 0.0));
    sandwich(rho, &sc.transpose(), &sc)
}
