//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::PathBuf;
use std::sync::Arc;

use bidomain::config::RunConfig;
use bidomain::discretize::{assemble_volume_mass, Point, Tensor};
use bidomain::fields::ScalarField;
use bidomain::geometry::{build_unit_cell, tile_domain, CellGeometrySpec};
use bidomain::macro_sim::{macro_residuals, run_macro, MacroConfig, TensorField};
use bidomain::membrane::MembraneModel;
use bidomain::micro_sim::{run_micro, run_micro_with, MicroConfig};

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

pub fn load_config(name: &str) -> RunConfig {
    RunConfig::load(&config_path(name)).expect("shipped configuration is valid")
}

fn diag(values: &[f64]) -> Tensor {
    let mut t = [[0.0; 3]; 3];
    for (a, v) in values.iter().enumerate() {
        t[a][a] = *v;
    }
    t
}

pub struct MmsResult {
    pub err_v: f64,
    pub err_ui: f64,
    pub max_residual: f64,
    pub tolerance: f64,
}

/// Manufactured macro solution on the unit square with `M_i = diag(1, 1/2)`,
/// `M_e = I`, `I = v`, `H = 0`:
/// `u_i = φ g`, `u_e = −φ g / 2`, `v = 3φ g / 2`, `φ = cos πx cos πy`,
/// `g = 1 + sin 2t`. The time step scales with `h²`.
pub fn macro_mms(resolution: usize) -> MmsResult {
    let area = 2.0;
    let g = |t: f64| 1.0 + (2.0 * t).sin();
    let dg = |t: f64| 2.0 * (2.0 * t).cos();
    let phi = |x: &Point| (PI * x[0]).cos() * (PI * x[1]).cos();
    let forcing = move |t: f64, x: &Point| {
        let p = phi(x);
        let membrane = area * 1.5 * p * (dg(t) + g(t));
        [
            membrane + 1.5 * PI * PI * p * g(t),
            -(membrane + PI * PI * p * g(t)),
        ]
    };
    let h = 1.0 / resolution as f64;
    let dt = 0.25 * h * h;
    let final_time = 0.1;
    let tolerance = 1e-12;
    let cfg = MacroConfig {
        dim: 2,
        resolution,
        tensors: [
            TensorField::Uniform(diag(&[1.0, 0.5])),
            TensorField::Uniform(diag(&[1.0, 1.0])),
        ],
        membrane_area: area,
        volumes: [0.5, 0.5],
        sources: [ScalarField::default(), ScalarField::default()],
        cell_quadrature: [Vec::new(), Vec::new()],
        v0: ScalarField::CosineProduct {
            mean: 0.0,
            amplitude: 1.5 * g(0.0),
            wavenumber: 1.0,
        },
        w0: ScalarField::default(),
        membrane: MembraneModel::linear(1.0),
        dt,
        final_time,
        snapshot_stride: 1,
        tolerance,
        forcing: Some(Arc::new(forcing)),
    };
    let (solver, traj) = run_macro(cfg).expect("manufactured run");
    let last = traj.snapshots.last().unwrap();
    let t = last.t;
    let mass = assemble_volume_mass(&solver.space);
    let pos = solver.positions();
    let err = |values: &[f64], scale: f64| {
        let d: Vec<f64> = values
            .iter()
            .zip(&pos)
            .map(|(u, x)| u - scale * phi(x) * g(t))
            .collect();
        mass.quad_form(&d).sqrt()
    };
    let residuals = macro_residuals(&solver, &traj);
    MmsResult {
        err_v: err(&last.v, 1.5),
        err_ui: err(&last.u_i, 1.0),
        max_residual: residuals.max_relative,
        tolerance,
    }
}

/// Largest deviation of a spatially uniform micro run from the scalar IMEX
/// recursion `w⁺ = w + dt H(v, w)`, `v⁺ = v − dt I(v, w⁺)`.
pub fn uniform_recursion_defect(steps: usize) -> f64 {
    let cell = build_unit_cell(&CellGeometrySpec::inclusion(0.25, 4, 2)).unwrap();
    let domain = tile_domain(&cell, 2).unwrap();
    let model = MembraneModel::fitzhugh_nagumo(0.1, 0.5, 0.01);
    let dt = 0.01;
    let (v0, w0) = (0.3, 0.05);
    let mut cfg = MicroConfig::new(domain, model.clone(), dt, steps as f64 * dt);
    cfg.v0 = ScalarField::constant(v0);
    cfg.w0 = ScalarField::constant(w0);
    cfg.tolerance = 1e-14;
    let (mut v, mut w) = (v0, w0);
    let mut scalar = vec![(v, w)];
    for _ in 0..steps {
        w += dt * model.gating(v, w);
        v -= dt * model.current(v, w);
        scalar.push((v, w));
    }
    let mut worst: f64 = 0.0;
    run_micro_with(cfg, |_, s| {
        let (v, w) = scalar[s.step];
        for (a, b) in s.v.iter().zip(&s.w) {
            worst = worst.max((a - v).abs()).max((b - w).abs());
        }
        Ok(())
    })
    .unwrap();
    worst
}

/// `ε‖v‖²_{L²(Γ^ε)}` at every step of a run with `I = H = 0`, `s = 0`.
pub fn passive_energies(cells: usize, steps: usize) -> Vec<f64> {
    let cell = build_unit_cell(&CellGeometrySpec::inclusion(0.25, 4, 2)).unwrap();
    let domain = tile_domain(&cell, cells).unwrap();
    let eps = domain.eps;
    let mut cfg = MicroConfig::new(domain, MembraneModel::zero(), 0.01, steps as f64 * 0.01);
    cfg.v0 = ScalarField::Gaussian {
        base: 0.1,
        amplitude: 1.0,
        center: vec![0.3, 0.6],
        width: 0.25,
    };
    cfg.tolerance = 1e-14;
    let mut out = Vec::new();
    run_micro_with(cfg, |solver, s| {
        out.push(eps * solver.membrane_mass().quad_form(&s.v));
        Ok(())
    })
    .unwrap();
    out
}

/// Final-time separation `ε^{1/2}‖v_δ(T) − v(T)‖` divided by `δ`, for a
/// micro run of the configuration with `v₀` raised by `δ`.
pub fn sensitivity(cfg: &RunConfig, cells: usize, deltas: &[f64]) -> Vec<f64> {
    let cell = cfg.cell().unwrap();
    let domain = tile_domain(&cell, cells).unwrap();
    let eps = domain.eps;
    let mass = domain.membrane.mass_matrix(false).unwrap();
    let run = |shift: f64| {
        let mut mc = MicroConfig::new(
            domain.clone(),
            cfg.membrane.model.model(),
            cfg.time.dt,
            cfg.time.final_time,
        );
        mc.sigma = cfg.sigma.to_array();
        mc.sources = cfg.sources.to_array();
        mc.v0 = match &cfg.membrane.v0 {
            ScalarField::CosineProduct {
                mean,
                amplitude,
                wavenumber,
            } => ScalarField::CosineProduct {
                mean: mean + shift,
                amplitude: *amplitude,
                wavenumber: *wavenumber,
            },
            other => panic!("sensitivity needs a cosine-product v0, got {other:?}"),
        };
        mc.w0 = cfg.membrane.w0.clone();
        mc.tolerance = 1e-12;
        mc.snapshot_stride = mc.steps();
        run_micro(mc).unwrap().snapshots.pop().unwrap().v
    };
    let base = run(0.0);
    deltas
        .iter()
        .map(|&d| {
            let v = run(d);
            let diff: Vec<f64> = v.iter().zip(&base).map(|(a, b)| a - b).collect();
            (eps * mass.quad_form(&diff)).sqrt() / d
        })
        .collect()
}
