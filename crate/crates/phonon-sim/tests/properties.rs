//! Property tests for the physical invariants.

use proptest::prelude::*;

use phonon_sim::{
    apply_beam_splitter, beam_splitter_matrix, cooling_channel, extract_visibility,
    heating_channel, heralded_excitation, run_protocol, thermal_state, BeamSplitterModel,
    CouplingParams, DetectionParams, FockBasis, HeraldModel, Mode, ProtocolConfig, SystemParams,
    TruncationPolicy,
};
use phonon_sim::protocol::beat_grid;

fn policy() -> TruncationPolicy {
    TruncationPolicy { thermal_tail_warn: 1.0, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn basis_index_bijection(n1 in 1usize..=10, n2 in 1usize..=30) {
        let basis = FockBasis::new(n1, n2).unwrap();
        for k in 0..basis.dimension() {
            let (a, b) = basis.unindex(k);
            prop_assert_eq!(basis.index(a, b), k);
            prop_assert!(a <= n1 && b <= n2);
        }
    }

    #[test]
    fn thermal_states_are_valid_and_geometric(
        nth1 in 0.0f64..2.0,
        nth2 in 0.0f64..2.0,
    ) {
        let basis = FockBasis::new(3, 5).unwrap();
        let (rho, _) = thermal_state(basis, [nth1, nth2], &policy()).unwrap();
        prop_assert!((rho.trace().re - 1.0).abs() < 1e-12);
        prop_assert!(rho.hermiticity_defect() < 1e-14);
        prop_assert!(rho.min_eigenvalue() >= -1e-12);
        if nth1 > 1e-9 {
            let m = rho.marginal(Mode::One);
            let expect = nth1 / (1.0 + nth1);
            prop_assert!((m[1] / m[0] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn channel_pipeline_preserves_density_matrix_structure(
        nth in 0.0f64..0.6,
        p in 0.0f64..0.3,
        dark in 0.0f64..0.3,
        jc in 0.0f64..1.0,
        jh in 0.0f64..1.0,
        theta in 0.05f64..1.5,
    ) {
        let basis = FockBasis::new(3, 3).unwrap();
        let (rho, _) = thermal_state(basis, [nth, nth], &policy()).unwrap();
        let rho = heralded_excitation(&rho, &HeraldModel::new(p, dark)).unwrap();
        let rho = apply_beam_splitter(&rho, theta).unwrap();
        let rho = cooling_channel(&rho, jc).unwrap();
        let rho = heating_channel(&rho, jh).unwrap();
        prop_assert!((rho.trace().re - 1.0).abs() < 1e-10);
        prop_assert!(rho.hermiticity_defect() < 1e-12);
        prop_assert!(rho.min_eigenvalue() >= -1e-9);
    }

    #[test]
    fn splitter_is_orthogonal_and_number_conserving(
        theta in -3.2f64..3.2,
        n in 2usize..=4,
    ) {
        let basis = FockBasis::new(n, n).unwrap();
        for model in [BeamSplitterModel::FullExchange, BeamSplitterModel::ThreeLevel] {
            let s = phonon_sim::beam_splitter_matrix_for(theta, basis, model).unwrap();
            prop_assert!((s.transpose() * &s).is_identity(1e-12));
            for r in 0..basis.dimension() {
                for c in 0..basis.dimension() {
                    if basis.total(r) != basis.total(c) {
                        prop_assert_eq!(s[(r, c)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn cooling_never_raises_total_occupancy_on_protocol_states(
        nth in 0.0f64..0.5,
        p in 0.0f64..0.2,
        jc in 0.0f64..1.0,
    ) {
        // protocol states are block-diagonal over total phonon number
        let basis = FockBasis::new(3, 3).unwrap();
        let (rho, _) = thermal_state(basis, [nth, nth], &policy()).unwrap();
        let rho = heralded_excitation(&rho, &HeraldModel::new(p, 1e-6)).unwrap();
        let rho = apply_beam_splitter(&rho, std::f64::consts::FRAC_PI_4).unwrap();
        let before = rho.occupancy(Mode::One) + rho.occupancy(Mode::Two);
        let cooled = cooling_channel(&rho, jc).unwrap();
        let after = cooled.occupancy(Mode::One) + cooled.occupancy(Mode::Two);
        prop_assert!(after <= before + 1e-10);
        let heated = heating_channel(&rho, jc).unwrap();
        let after_heat = heated.occupancy(Mode::One) + heated.occupancy(Mode::Two);
        prop_assert!(after_heat >= before - 1e-10);
    }

    #[test]
    fn visibility_is_eta_invariant(eta1 in 0.001f64..1.0, eta2 in 0.001f64..1.0) {
        let system = SystemParams {
            omega1_hz: 2_000.0,
            omega2_hz: 2_030.0,
            gamma_hz: 0.0,
            t_env_k: 0.0,
            kappa_hz: 2e5,
            mass2_kg: None,
        };
        let coupling = CouplingParams { j_hz: 1e3, jc_over_j: 0.0, jh_over_j: 0.0 };
        let basis = FockBasis::new(3, 3).unwrap();
        let grid = beat_grid(&system, 1.0, 32);
        let make = |eta: f64| {
            let detection = DetectionParams { eta, p: 0.05, dark: 1e-4, eta1: None, eta2: None };
            let mut c = ProtocolConfig::new(
                system, detection, coupling, [0.1, 0.1], grid.clone(), basis,
            );
            c.bs_model = BeamSplitterModel::ThreeLevel;
            c.policy = TruncationPolicy::permissive();
            c
        };
        let v1 = extract_visibility(&run_protocol(&make(eta1)).unwrap()).unwrap();
        let v2 = extract_visibility(&run_protocol(&make(eta2)).unwrap()).unwrap();
        prop_assert!((v1 - v2).abs() < 1e-12);
    }

    #[test]
    fn splitter_preserves_trace_for_any_state(
        w in 0.0f64..1.0,
        theta in -1.6f64..1.6,
    ) {
        let basis = FockBasis::new(2, 2).unwrap();
        let (a, _) = thermal_state(basis, [w, 1.0 - w], &policy()).unwrap();
        let out = apply_beam_splitter(&a, theta).unwrap();
        prop_assert!((out.trace().re - 1.0).abs() < 1e-12);
        let _ = beam_splitter_matrix(theta, basis).unwrap();
    }
}
