//! Time integration of the homogenized bidomain model on the unit cube.
//!
//! The scheme mirrors the micro solver with `ε M_Γ` replaced by `|Γ| M_Ω`,
//! the cell conductivities replaced by the effective tensors, and the sources
//! weighted by the phase fractions `|Y_j|`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cell_problem::sym_eigenvalues;
use crate::coupled::CoupledSystem;
use crate::discretize::{
    assemble_diffusion, assemble_load, assemble_volume_mass, DofSpace, Grid, Point, SolveReport,
    Tensor,
};
use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::geometry::{Phase, UnitCell};
use crate::membrane::MembraneModel;

/// Effective conductivity on the macro grid.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorField {
    Uniform(Tensor),
    /// One tensor per macro element.
    PerElement(Vec<Tensor>),
}

impl TensorField {
    fn at(&self, cell: usize) -> &Tensor {
        match self {
            TensorField::Uniform(t) => t,
            TensorField::PerElement(v) => &v[cell],
        }
    }

    fn tensors(&self) -> Vec<&Tensor> {
        match self {
            TensorField::Uniform(t) => vec![t],
            TensorField::PerElement(v) => v.iter().collect(),
        }
    }
}

/// Additional volume forcing `(f_i, f_e)(t, x)` for manufactured solutions:
/// `f_i` enters the intracellular equation like `|Y_i| s_i` and `f_e` the
/// extracellular one like `|Y_e| s_e`.
pub type Forcing = Arc<dyn Fn(f64, &Point) -> [f64; 2] + Send + Sync>;

#[derive(Clone)]
pub struct MacroConfig {
    pub dim: usize,
    /// Elements per axis.
    pub resolution: usize,
    pub tensors: [TensorField; 2],
    /// `|Γ|`.
    pub membrane_area: f64,
    /// `|Y_i|`, `|Y_e|`.
    pub volumes: [f64; 2],
    /// Microscopic sources `s_j(x, y)`; the solver uses their averages over
    /// `Y_j`, weighted by `|Y_j|`.
    pub sources: [ScalarField; 2],
    /// Quadrature points of `Y_j` for averaging `y`-dependent sources.
    pub cell_quadrature: [Vec<(Point, f64)>; 2],
    pub v0: ScalarField,
    pub w0: ScalarField,
    pub membrane: MembraneModel,
    pub dt: f64,
    pub final_time: f64,
    pub snapshot_stride: usize,
    pub tolerance: f64,
    pub forcing: Option<Forcing>,
}

impl std::fmt::Debug for MacroConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MacroConfig")
            .field("dim", &self.dim)
            .field("resolution", &self.resolution)
            .field("membrane_area", &self.membrane_area)
            .field("volumes", &self.volumes)
            .field("dt", &self.dt)
            .field("final_time", &self.final_time)
            .field("forcing", &self.forcing.is_some())
            .finish()
    }
}

/// Voxel-midpoint quadrature of a phase of the unit cell.
pub fn cell_quadrature(cell: &UnitCell, phase: Phase) -> Vec<(Point, f64)> {
    let n = cell.resolution;
    let w = 1.0 / cell.num_voxels() as f64;
    cell.labels()
        .iter()
        .enumerate()
        .filter(|(_, p)| **p == phase)
        .map(|(v, _)| {
            let c = cell.voxel_coords(v);
            let mut y = [0.0; 3];
            for a in 0..cell.dim {
                y[a] = (c[a] as f64 + 0.5) / n as f64;
            }
            (y, w)
        })
        .collect()
}

impl MacroConfig {
    /// Configuration with membrane factors taken from a unit cell.
    pub fn from_cell(
        cell: &UnitCell,
        tensors: [TensorField; 2],
        resolution: usize,
        membrane: MembraneModel,
        dt: f64,
        final_time: f64,
    ) -> Self {
        MacroConfig {
            dim: cell.dim,
            resolution,
            tensors,
            membrane_area: cell.area,
            volumes: [cell.volume(Phase::Intra), cell.volume(Phase::Extra)],
            sources: [ScalarField::default(), ScalarField::default()],
            cell_quadrature: [
                cell_quadrature(cell, Phase::Intra),
                cell_quadrature(cell, Phase::Extra),
            ],
            v0: ScalarField::default(),
            w0: ScalarField::default(),
            membrane,
            dt,
            final_time,
            snapshot_stride: 1,
            tolerance: crate::micro_sim::DEFAULT_TOLERANCE,
            forcing: None,
        }
    }

    pub fn steps(&self) -> usize {
        (self.final_time / self.dt + 1e-9).floor() as usize
    }

    pub fn grid(&self) -> Grid {
        Grid::new(
            self.dim,
            self.resolution,
            false,
            1.0 / self.resolution as f64,
        )
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.final_time >= self.dt) {
            return Err(Error::Invalid(format!(
                "need dt > 0 and final time >= dt (dt = {}, T = {})",
                self.dt, self.final_time
            )));
        }
        if self.resolution == 0 || self.snapshot_stride == 0 {
            return Err(Error::Invalid(
                "resolution and snapshot stride must be >= 1".into(),
            ));
        }
        if !(self.membrane_area > 0.0) {
            return Err(Error::Degenerate("membrane area must be positive".into()));
        }
        if let TensorField::PerElement(v) = &self.tensors[0] {
            if v.len() != self.grid().num_cells() {
                return Err(Error::DimensionMismatch {
                    context: "intracellular tensor table",
                    expected: self.grid().num_cells(),
                    got: v.len(),
                });
            }
        }
        if let TensorField::PerElement(v) = &self.tensors[1] {
            if v.len() != self.grid().num_cells() {
                return Err(Error::DimensionMismatch {
                    context: "extracellular tensor table",
                    expected: self.grid().num_cells(),
                    got: v.len(),
                });
            }
        }
        for t in self.tensors[1].tensors() {
            let ev = sym_eigenvalues(t, self.dim);
            if !(ev[0] > 0.0) {
                return Err(Error::Ellipticity {
                    x: [f64::NAN; 3],
                    y: [f64::NAN; 3],
                    detail: format!(
                        "extracellular effective tensor must be positive definite (min eigenvalue {:.3e})",
                        ev[0]
                    ),
                });
            }
        }
        let mut semidefinite = false;
        for t in self.tensors[0].tensors() {
            let ev = sym_eigenvalues(t, self.dim);
            if ev[0] < -1e-12 * ev.last().unwrap().abs().max(1.0) {
                return Err(Error::Ellipticity {
                    x: [f64::NAN; 3],
                    y: [f64::NAN; 3],
                    detail: format!(
                        "intracellular effective tensor is indefinite (eigenvalue {:.3e})",
                        ev[0]
                    ),
                });
            }
            semidefinite |= ev[0] <= 1e-12 * ev.last().unwrap().abs().max(1.0);
        }
        if semidefinite {
            log::warn!("intracellular effective tensor is only positive semidefinite");
        }
        Ok(())
    }

    /// `|Y_j| · s̄_j(x)` where `s̄_j` is the average of `s_j(x, ·)` over `Y_j`.
    fn weighted_source(&self, p: Phase, x: &Point) -> f64 {
        let j = p.index();
        let f = &self.sources[j];
        if f.depends_on_cell() {
            self.cell_quadrature[j]
                .iter()
                .map(|(y, w)| w * f.eval(self.dim, x, y))
                .sum()
        } else {
            self.volumes[j] * f.eval(self.dim, x, &[0.0; 3])
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroState {
    pub step: usize,
    pub t: f64,
    pub u_i: Vec<f64>,
    pub u_e: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    /// Norm of the right side of the last solve (zero for the initial state).
    pub rhs_norm: f64,
}

#[derive(Clone, Debug)]
pub struct MacroTrajectory {
    pub dt: f64,
    pub snapshots: Vec<MacroState>,
    pub reports: Vec<SolveReport>,
}

pub struct MacroSolver {
    pub config: MacroConfig,
    pub space: DofSpace,
    pub(crate) system: CoupledSystem,
}

impl MacroSolver {
    pub fn new(config: MacroConfig) -> Result<Self> {
        config.validate()?;
        let space = DofSpace::full(config.grid());
        let a_i = assemble_diffusion(&space, |c, _| Ok(*config.tensors[0].at(c)))?;
        let a_e = assemble_diffusion(&space, |c, _| Ok(*config.tensors[1].at(c)))?;
        let load_i = assemble_load(&space, |_, x| config.weighted_source(Phase::Intra, x));
        let load_e = assemble_load(&space, |_, x| config.weighted_source(Phase::Extra, x));
        let mass = assemble_volume_mass(&space);
        let ident: Vec<u32> = (0..space.len() as u32).collect();
        let weights = space.basis_integrals();
        let system = CoupledSystem::new(
            a_i,
            a_e,
            mass,
            ident.clone(),
            ident,
            load_i,
            load_e,
            &weights,
            &weights,
            config.membrane_area,
            config.dt,
            config.tolerance,
        );
        Ok(MacroSolver {
            config,
            space,
            system,
        })
    }

    pub fn positions(&self) -> Vec<Point> {
        (0..self.space.len())
            .map(|k| {
                self.space
                    .grid
                    .node_position(self.space.dof_node[k] as usize)
            })
            .collect()
    }

    pub fn mass(&self) -> &crate::discretize::CsrMatrix {
        &self.system.mass
    }

    pub fn stiffness(&self, p: Phase) -> &crate::discretize::CsrMatrix {
        match p {
            Phase::Intra => &self.system.a_i,
            Phase::Extra => &self.system.a_e,
        }
    }

    fn sample(&self, f: &ScalarField) -> Vec<f64> {
        self.positions()
            .iter()
            .map(|x| f.eval(self.config.dim, x, &[0.0; 3]))
            .collect()
    }

    pub fn init_state(&self) -> Result<(MacroState, SolveReport)> {
        let v0 = self.sample(&self.config.v0);
        let w0 = self.sample(&self.config.w0);
        let (u, report) = self.system.initial(&v0)?;
        let n = self.space.len();
        Ok((
            MacroState {
                step: 0,
                t: 0.0,
                u_i: u[..n].to_vec(),
                u_e: u[n..].to_vec(),
                v: self.system.trace(&u),
                w: w0,
                rhs_norm: 0.0,
            },
            report,
        ))
    }

    fn forcing_load(&self, t: f64) -> Option<Vec<f64>> {
        let f = self.config.forcing.as_ref()?;
        let fi = assemble_load(&self.space, |_, x| f(t, x)[0]);
        let fe = assemble_load(&self.space, |_, x| f(t, x)[1]);
        let mut out = fi;
        out.extend(fe);
        Some(out)
    }

    pub fn step(&self, state: &MacroState) -> Result<(MacroState, SolveReport)> {
        let dt = self.config.dt;
        let m = &self.config.membrane;
        let w: Vec<f64> = state
            .v
            .iter()
            .zip(&state.w)
            .map(|(&v, &w)| w + dt * m.gating(v, w))
            .collect();
        let t = (state.step + 1) as f64 * dt;
        let ionic = self.system.ionic(m, &state.v, &w, t)?;
        let extra = self.forcing_load(t);
        let mut guess = state.u_i.clone();
        guess.extend_from_slice(&state.u_e);
        let out = self
            .system
            .solve_step(&state.v, &ionic, extra.as_deref(), &guess)?;
        let n = self.space.len();
        Ok((
            MacroState {
                step: state.step + 1,
                t,
                u_i: out.u[..n].to_vec(),
                u_e: out.u[n..].to_vec(),
                v: self.system.trace(&out.u),
                w,
                rhs_norm: out.rhs_norm,
            },
            out.report,
        ))
    }
}

pub fn run_macro_with<F>(
    config: MacroConfig,
    mut observer: F,
) -> Result<(MacroSolver, MacroTrajectory)>
where
    F: FnMut(&MacroSolver, &MacroState) -> Result<()>,
{
    let solver = MacroSolver::new(config)?;
    let steps = solver.config.steps();
    let stride = solver.config.snapshot_stride;
    let (mut state, report) = solver.init_state()?;
    observer(&solver, &state)?;
    let mut snapshots = vec![state.clone()];
    let mut reports = vec![report];
    for n in 1..=steps {
        let (next, report) = solver.step(&state)?;
        observer(&solver, &next)?;
        reports.push(report);
        if n % stride == 0 {
            snapshots.push(next.clone());
        }
        state = next;
    }
    let traj = MacroTrajectory {
        dt: solver.config.dt,
        snapshots,
        reports,
    };
    Ok((solver, traj))
}

pub fn run_macro(config: MacroConfig) -> Result<(MacroSolver, MacroTrajectory)> {
    run_macro_with(config, |_, _| Ok(()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub step: usize,
    pub t: f64,
    /// `‖A_i u_i + A_e u_e − F‖ / ‖rhs‖` with the solver's (compatible) load.
    pub relative: f64,
    pub absolute: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub rows: Vec<ResidualRow>,
    /// `∫ (|Y_i| s̄_i + |Y_e| s̄_e)` before projection; nonzero means the raw
    /// sources violate compatibility.
    pub constant_mode: f64,
    pub max_relative: f64,
}

/// Weak residual of the elliptic constraint
/// `−div(M_i ∇u_i) − div(M_e ∇u_e) = |Y_i| s_i + |Y_e| s_e` at each snapshot.
/// Manufactured forcing, if present, is included at the snapshot time.
pub fn macro_residuals(solver: &MacroSolver, traj: &MacroTrajectory) -> ResidualReport {
    let n = solver.space.len();
    let mut rows = Vec::with_capacity(traj.snapshots.len());
    for s in &traj.snapshots {
        let mut u = s.u_i.clone();
        u.extend_from_slice(&s.u_e);
        let mut r = solver.system.constraint_residual(&u);
        if s.step > 0 {
            if let Some(extra) = solver.forcing_load(s.t) {
                r.iter_mut()
                    .enumerate()
                    .for_each(|(k, rk)| *rk -= extra[k] + extra[n + k]);
            }
        }
        let absolute = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        let relative = if s.rhs_norm > 0.0 {
            absolute / s.rhs_norm
        } else {
            absolute
        };
        rows.push(ResidualRow {
            step: s.step,
            t: s.t,
            relative,
            absolute,
        });
    }
    let max_relative = rows
        .iter()
        .filter(|r| r.step > 0)
        .map(|r| r.relative)
        .fold(0.0, f64::max);
    ResidualReport {
        rows,
        constant_mode: solver.system.raw_total_source,
        max_relative,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::identity_tensor;
    use crate::geometry::{build_unit_cell, CellGeometrySpec};

    fn config(mi: Tensor) -> MacroConfig {
        let cell = build_unit_cell(&CellGeometrySpec::inclusion(0.25, 8, 2)).unwrap();
        MacroConfig::from_cell(
            &cell,
            [
                TensorField::Uniform(mi),
                TensorField::Uniform(identity_tensor()),
            ],
            4,
            MembraneModel::zero(),
            0.1,
            0.3,
        )
    }

    #[test]
    fn zero_state_stays_zero() {
        let (_, traj) = run_macro(config(identity_tensor())).unwrap();
        assert_eq!(traj.snapshots.len(), 4);
        for s in &traj.snapshots {
            assert!(s.u_i.iter().chain(&s.u_e).all(|x| *x == 0.0));
        }
    }

    #[test]
    fn degenerate_intracellular_tensor_is_solvable() {
        let mut cfg = config([[0.0; 3]; 3]);
        cfg.v0 = ScalarField::CosineProduct {
            mean: 0.0,
            amplitude: 1.0,
            wavenumber: 1.0,
        };
        let (solver, traj) = run_macro(cfg).unwrap();
        let last = traj.snapshots.last().unwrap();
        for k in 0..solver.space.len() {
            assert!((last.u_i[k] - last.u_e[k] - last.v[k]).abs() < 1e-15);
        }
        assert!(macro_residuals(&solver, &traj).max_relative < 1e-9);
    }

    #[test]
    fn indefinite_extracellular_tensor_is_refused() {
        let mut cfg = config(identity_tensor());
        cfg.tensors[1] = TensorField::Uniform([[0.0; 3]; 3]);
        assert!(matches!(
            MacroSolver::new(cfg),
            Err(Error::Ellipticity { .. })
        ));
    }

    #[test]
    fn incompatible_sources_show_in_constant_mode() {
        let mut cfg = config(identity_tensor());
        cfg.sources = [ScalarField::constant(1.0), ScalarField::constant(0.0)];
        let (solver, traj) = run_macro(cfg).unwrap();
        let r = macro_residuals(&solver, &traj);
        assert!((r.constant_mode - 0.25).abs() < 1e-12);
        assert!(r.max_relative < 1e-9);
    }
}
