//! Randomized invariants across modules.

use approx::assert_relative_eq;
use proptest::prelude::*;

use bidomain::cell_problem::{effective_tensor, voigt_bound, Conductivity};
use bidomain::discretize::{identity_tensor, scale_tensor};
use bidomain::geometry::{
    build_unit_cell, phase_connectivity, tile_domain, CellGeometrySpec, Phase,
};
use bidomain::membrane::{jacobian_defect, MembraneModel, StructureOptions};
use bidomain::unfolding::Unfolder;

fn inclusion_spec() -> impl Strategy<Value = CellGeometrySpec> {
    (2usize..=3, 1usize..=3).prop_map(|(d, k)| CellGeometrySpec::inclusion(k as f64 / 8.0, 8, d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn phase_volumes_sum_to_one(spec in inclusion_spec()) {
        let cell = build_unit_cell(&spec).unwrap();
        assert_relative_eq!(cell.volume(Phase::Intra) + cell.volume(Phase::Extra), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn laminate_volume_and_area(k in 1usize..7, axis in 0usize..2) {
        let cell = build_unit_cell(&CellGeometrySpec::laminate(k as f64 / 8.0, axis, 8, 2)).unwrap();
        assert_relative_eq!(cell.volume(Phase::Intra), k as f64 / 8.0, epsilon = 1e-14);
        // two membrane lines per cell
        assert_relative_eq!(cell.area, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn tiled_membrane_scales_like_inverse_eps(k in 1usize..=3, cells in 1usize..=4) {
        let cell = build_unit_cell(&CellGeometrySpec::inclusion(k as f64 / 8.0, 8, 2)).unwrap();
        let domain = tile_domain(&cell, cells).unwrap();
        // |Γ^ε| = N^d ε^{d-1} |Γ| = N |Γ|
        assert_relative_eq!(domain.membrane_area(), cells as f64 * cell.area, max_relative = 1e-13);
        prop_assert_eq!(domain.membrane.len(), cells.pow(2) * cell.faces.len());
    }

    #[test]
    fn isolated_inclusions_never_span(spec in inclusion_spec()) {
        let cell = build_unit_cell(&spec).unwrap();
        let intra = phase_connectivity(&cell, Phase::Intra);
        prop_assert!(intra.spanned_axes().is_empty());
        prop_assert!(phase_connectivity(&cell, Phase::Extra).spans_all_axes);
    }

    #[test]
    fn laminate_tensor_scales_with_sigma(s in 0.1f64..10.0, k in 1usize..7) {
        let a = k as f64 / 8.0;
        let cell = build_unit_cell(&CellGeometrySpec::laminate(a, 0, 8, 2)).unwrap();
        let m = effective_tensor(&cell, Phase::Intra, &Conductivity::Isotropic { value: s }).unwrap().matrix;
        prop_assert!(m[0][0].abs() <= 1e-9 * s);
        prop_assert!((m[1][1] - a * s).abs() <= 1e-9 * s);
    }

    #[test]
    fn effective_tensor_is_symmetric_and_below_voigt(amplitude in 0.0f64..0.9, k in 2usize..=3) {
        let cell = build_unit_cell(&CellGeometrySpec::bridged(k as f64 / 8.0, 0.125, 8, 2)).unwrap();
        let sigma = Conductivity::CellOscillating { value: 1.0, amplitude };
        let m = effective_tensor(&cell, Phase::Intra, &sigma).unwrap().matrix;
        let voigt = voigt_bound(&cell, Phase::Intra, &|y| sigma.eval(2, &[0.0; 3], y));
        prop_assert!((m[0][1] - m[1][0]).abs() <= 1e-12);
        for a in 0..2 {
            prop_assert!(m[a][a] > 0.0);
            prop_assert!(m[a][a] <= voigt[a][a] + 1e-12);
        }
    }

    #[test]
    fn unfolding_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
        let cell = build_unit_cell(&CellGeometrySpec::inclusion(0.25, 4, 2)).unwrap();
        let domain = tile_domain(&cell, 2).unwrap();
        let unfolder = Unfolder::new(&domain).unwrap();
        let n = domain.membrane.len();
        let f: Vec<f64> = (0..n).map(|k| ((k as u64 * 31 + seed) % 17) as f64).collect();
        let g: Vec<f64> = (0..n).map(|k| ((k as u64 * 7 + seed) % 5) as f64).collect();
        let combo: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
        let tf = unfolder.unfold_boundary(&domain, &f).unwrap();
        let tg = unfolder.unfold_boundary(&domain, &g).unwrap();
        let expected = tf.zip_with(&tg, |x, y| a * x + b * y).unwrap();
        let got = unfolder.unfold_boundary(&domain, &combo).unwrap();
        for (x, y) in got.values.iter().zip(&expected.values) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn fhn_jacobian_matches_finite_differences(a in 0.05f64..0.5, k in 0.1f64..2.0, e in 0.001f64..0.1) {
        let model = MembraneModel::fitzhugh_nagumo(a, k, e);
        prop_assert!(jacobian_defect(&model, &StructureOptions::with_mu(&[]), 1e-6) <= 1e-6);
    }

    #[test]
    fn scaled_identity_is_its_own_effective_tensor(s in 0.1f64..5.0) {
        let cell = build_unit_cell(&CellGeometrySpec::full(4, 2)).unwrap();
        let m = effective_tensor(&cell, Phase::Intra, &Conductivity::Isotropic { value: s }).unwrap().matrix;
        let expected = scale_tensor(&identity_tensor(), s);
        for a in 0..2 {
            for b in 0..2 {
                prop_assert!((m[a][b] - expected[a][b]).abs() <= 1e-12 * s);
            }
        }
    }
}
