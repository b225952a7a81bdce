mod common;

use bidomain::convergence::{run_study, StudyConfig};
use bidomain::fields::ScalarField;
use bidomain::geometry::{build_unit_cell, tile_domain, CellGeometrySpec, Phase};
use bidomain::membrane::MembraneModel;
use bidomain::micro_sim::{run_micro, MicroConfig};
use bidomain::unfolding::{identity_suite, Unfolder};

#[test]
fn uniform_data_follows_scalar_recursion() {
    assert!(common::uniform_recursion_defect(200) <= 1e-12);
}

#[test]
fn passive_membrane_energy_does_not_grow() {
    let e = common::passive_energies(2, 60);
    assert!(e.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-14)));
    assert!(e.last().unwrap() < &e[0]);
}

#[test]
fn macro_manufactured_solution_is_second_order() {
    let coarse = common::macro_mms(8);
    let fine = common::macro_mms(16);
    let order = (coarse.err_v / fine.err_v).log2();
    assert!(order > 1.8, "order {order}");
    assert!(fine.max_residual <= 10.0 * fine.tolerance);
}

#[test]
fn sensitivity_is_linear_in_the_perturbation() {
    let mut cfg = common::load_config("inclusion_2d.toml");
    cfg.time.final_time = 2.0;
    let k = common::sensitivity(&cfg, 2, &[1e-3, 1e-4]);
    assert!(k[0].max(k[1]) / k[0].min(k[1]) < 1.1, "{k:?}");
}

#[test]
fn identities_hold_on_bridged_3d_cell() {
    let cell = build_unit_cell(&CellGeometrySpec::bridged(0.25, 0.125, 8, 3)).unwrap();
    for c in identity_suite(&cell, &[2], 3, 1e-12).unwrap() {
        assert!(c.pass, "{c:?}");
    }
}

#[test]
fn unfolded_periodic_field_keeps_its_norm() {
    // T_ε(ψ(x/ε)) = ψ(y), so its norm does not depend on ε
    let cell = build_unit_cell(&CellGeometrySpec::inclusion(0.25, 4, 2)).unwrap();
    let psi = |y: &[f64; 3]| (2.0 * std::f64::consts::PI * y[0]).sin() + y[1];
    let mut norms = Vec::new();
    for n in [1, 2, 4] {
        let domain = tile_domain(&cell, n).unwrap();
        let unfolder = Unfolder::new(&domain).unwrap();
        let values: Vec<f64> = domain
            .membrane_positions()
            .iter()
            .map(|x| psi(&domain.fast_variable(x)))
            .collect();
        let unfolded = unfolder.unfold_boundary(&domain, &values).unwrap();
        norms.push(unfolder.l2_norm(&unfolded));
    }
    for w in norms.windows(2) {
        assert!((w[0] - w[1]).abs() <= 1e-12 * w[0], "{norms:?}");
    }
}

#[test]
fn constant_surface_field_has_zero_gagliardo_seminorm() {
    let cell = build_unit_cell(&CellGeometrySpec::inclusion(0.25, 4, 2)).unwrap();
    let domain = tile_domain(&cell, 2).unwrap();
    let unfolder = Unfolder::new(&domain).unwrap();
    let ones = vec![1.0; domain.membrane.len()];
    let f = unfolder.unfold_boundary(&domain, &ones).unwrap();
    assert!(unfolder.gagliardo(&f).unwrap().abs() <= 1e-14);
}

#[test]
fn micro_run_is_bitwise_repeatable() {
    let cell = build_unit_cell(&CellGeometrySpec::inclusion(0.25, 4, 2)).unwrap();
    let run = || {
        let mut cfg = MicroConfig::new(
            tile_domain(&cell, 2).unwrap(),
            MembraneModel::fitzhugh_nagumo(0.1, 0.5, 0.01),
            0.1,
            1.0,
        );
        cfg.v0 = ScalarField::CosineProduct {
            mean: 0.4,
            amplitude: 0.2,
            wavenumber: 1.0,
        };
        cfg.sources[Phase::Extra.index()] = ScalarField::CosineProduct {
            mean: 0.0,
            amplitude: 0.5,
            wavenumber: 1.0,
        };
        run_micro(cfg).unwrap()
    };
    let (a, b) = (run(), run());
    let bits = |t: &bidomain::micro_sim::MicroTrajectory| -> Vec<u64> {
        t.snapshots
            .iter()
            .flat_map(|s| s.v.iter().chain(&s.u_e))
            .map(|x| x.to_bits())
            .collect()
    };
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn parallel_and_serial_studies_agree() {
    let mut cfg = StudyConfig::new(
        CellGeometrySpec::inclusion(0.25, 4, 2),
        MembraneModel::fitzhugh_nagumo(0.1, 0.5, 0.01),
        vec![1, 2],
        0.1,
        1.0,
    );
    cfg.v0 = ScalarField::CosineProduct {
        mean: 0.4,
        amplitude: 0.2,
        wavenumber: 1.0,
    };
    let parallel = run_study(&cfg).unwrap();
    cfg.parallel = false;
    let serial = run_study(&cfg).unwrap();
    assert_eq!(parallel, serial);
    assert!(serial.rows.iter().all(|r| r.consistency_defect < 1e-12));
}
