//! Periodic cell problems and homogenized conductivity tensors.
//!
//! For each phase `j` and direction `k` the corrector `χ_j^k` solves
//! `∫ σ ∇χ·∇φ = ∫ σ e_k·∇φ` for all periodic Q1 test functions on `Y_j`.
//! The effective tensor is `M_j = ∫_{Y_j} σ (I − ∇χ_j)`: with this sign a
//! laminate has zero conductivity across its layers and an isolated inclusion
//! has none at all.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::assembly::integrate_cells;
use crate::discretize::mesh::{ShapeTable, GAUSS2};
use crate::discretize::{
    assemble_diffusion, assemble_flux_load, identity_tensor, solve_spd, spd_violation, DofSpace,
    Nullspace, Point, SolveOptions, SolveReport, Tensor,
};
use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::geometry::{phase_connectivity, Phase, UnitCell};

/// Relative residual target of corrector solves.
pub const CORRECTOR_TOLERANCE: f64 = 1e-12;

/// Cell conductivity `σ_j(x, y) = s(x) · A(y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Conductivity {
    Isotropic {
        value: f64,
    },
    Diagonal {
        values: Vec<f64>,
    },
    /// Full symmetric matrix given by rows.
    Matrix {
        rows: Vec<Vec<f64>>,
    },
    /// `value · (1 + amplitude · Π_a cos(2π y_a)) · I`.
    CellOscillating {
        value: f64,
        amplitude: f64,
    },
    /// `scale(x) · base(y)`.
    Modulated {
        base: Box<Conductivity>,
        scale: ScalarField,
    },
}

impl Default for Conductivity {
    fn default() -> Self {
        Conductivity::Isotropic { value: 1.0 }
    }
}

impl Conductivity {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn eval(&self, dim: usize, x: &Point, y: &Point) -> Tensor {
        match self {
            Conductivity::Isotropic { value } => {
                crate::discretize::scale_tensor(&identity_tensor(), *value)
            }
            Conductivity::Diagonal { values } => {
                let mut t = [[0.0; 3]; 3];
                for a in 0..dim {
                    t[a][a] = values[a];
                }
                t
            }
            Conductivity::Matrix { rows } => {
                let mut t = [[0.0; 3]; 3];
                for a in 0..dim {
                    for b in 0..dim {
                        t[a][b] = rows[a][b];
                    }
                }
                t
            }
            Conductivity::CellOscillating { value, amplitude } => {
                let p: f64 = (0..dim)
                    .map(|a| (2.0 * std::f64::consts::PI * y[a]).cos())
                    .product();
                crate::discretize::scale_tensor(&identity_tensor(), value * (1.0 + amplitude * p))
            }
            Conductivity::Modulated { base, scale } => {
                let s = scale.eval(dim, x, y);
                crate::discretize::scale_tensor(&base.eval(dim, x, y), s)
            }
        }
    }

    /// Whether `σ` depends on the slow variable.
    pub fn depends_on_x(&self) -> bool {
        match self {
            Conductivity::Modulated { scale, .. } => !scale.is_constant(),
            _ => false,
        }
    }

    pub fn validate(&self, dim: usize) -> std::result::Result<(), String> {
        match self {
            Conductivity::Isotropic { value } if !(*value > 0.0 && value.is_finite()) => {
                Err(format!("isotropic value {value} must be positive"))
            }
            Conductivity::Diagonal { values } if values.len() != dim => {
                Err(format!("diagonal needs {dim} values, got {}", values.len()))
            }
            Conductivity::Diagonal { values } if values.iter().any(|v| !(*v > 0.0)) => {
                Err("diagonal entries must be positive".into())
            }
            Conductivity::Matrix { rows }
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) =>
            {
                Err(format!("matrix must be {dim}×{dim}"))
            }
            Conductivity::Matrix { .. } => {
                let t = self.eval(dim, &[0.0; 3], &[0.0; 3]);
                match spd_violation(&t, dim) {
                    Some(v) => Err(format!("matrix is not symmetric positive definite: {v}")),
                    None => Ok(()),
                }
            }
            Conductivity::CellOscillating { value, amplitude }
                if !(*value > 0.0 && amplitude.abs() < 1.0) =>
            {
                Err("cell-oscillating conductivity needs value > 0 and |amplitude| < 1".into())
            }
            Conductivity::Modulated { base, scale } => {
                base.validate(dim)?;
                scale.validate(dim)
            }
            _ => Ok(()),
        }
    }

    pub fn describe(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|_| format!("{self:?}"))
    }
}

#[derive(Clone, Debug)]
pub struct CorrectorField {
    pub phase: Phase,
    pub direction: usize,
    /// Values on the periodic DOFs of the phase.
    pub values: Vec<f64>,
    pub report: SolveReport,
}

/// Periodic Q1 space of a phase together with its component structure.
#[derive(Clone, Debug)]
pub struct CellSpace {
    pub phase: Phase,
    pub space: DofSpace,
    pub component_of: Vec<usize>,
    pub components: usize,
}

impl CellSpace {
    pub fn new(cell: &UnitCell, phase: Phase) -> Result<Self> {
        let space = cell.periodic_space(phase);
        if space.is_empty() {
            return Err(Error::Degenerate(format!(
                "phase {} is empty",
                phase.name()
            )));
        }
        let (component_of, components) = space.components();
        Ok(CellSpace {
            phase,
            space,
            component_of,
            components,
        })
    }

    /// Subtracts the integral mean over each component.
    pub fn remove_component_means(&self, values: &mut [f64]) {
        let w = self.space.basis_integrals();
        let mut sum = vec![0.0; self.components];
        let mut mass = vec![0.0; self.components];
        for (i, &c) in self.component_of.iter().enumerate() {
            sum[c] += w[i] * values[i];
            mass[c] += w[i];
        }
        for (i, &c) in self.component_of.iter().enumerate() {
            values[i] -= sum[c] / mass[c];
        }
    }

    /// Largest absolute integral mean over the components.
    pub fn max_component_mean(&self, values: &[f64]) -> f64 {
        let w = self.space.basis_integrals();
        let mut sum = vec![0.0; self.components];
        let mut mass = vec![0.0; self.components];
        for (i, &c) in self.component_of.iter().enumerate() {
            sum[c] += w[i] * values[i];
            mass[c] += w[i];
        }
        sum.iter()
            .zip(&mass)
            .map(|(s, m)| (s / m).abs())
            .fold(0.0, f64::max)
    }
}

fn check_sigma<S>(cell: &UnitCell, space: &DofSpace, sigma: &S) -> Result<()>
where
    S: Fn(&Point) -> Tensor,
{
    let table = ShapeTable::new(cell.dim, &GAUSS2);
    let h = space.grid.h;
    for c in space.active_cells() {
        let o = space.cell_origin(c);
        for q in &table.rule.points {
            let mut y = [0.0; 3];
            for a in 0..cell.dim {
                y[a] = o[a] + h * q[a];
            }
            if let Some(detail) = spd_violation(&sigma(&y), cell.dim) {
                return Err(Error::Ellipticity {
                    x: [f64::NAN; 3],
                    y,
                    detail,
                });
            }
        }
    }
    Ok(())
}

fn corrector_in(
    cs: &CellSpace,
    dim: usize,
    sigma: &(dyn Fn(&Point) -> Tensor + Sync),
    stiffness: &crate::discretize::CsrMatrix,
    k: usize,
) -> Result<CorrectorField> {
    let mut scale: f64 = 0.0;
    let mut rhs = assemble_flux_load(&cs.space, |_, y| {
        let s = sigma(y);
        let mut col = [0.0; 3];
        for a in 0..dim {
            col[a] = s[a][k];
            scale = scale.max(s[a][k].abs());
        }
        col
    });
    // a load that cancels up to rounding (e.g. no interface) is exactly zero
    let entry_scale = scale * cs.space.grid.h.powi(dim as i32 - 1);
    if rhs.iter().all(|v| v.abs() <= 1e-13 * entry_scale) {
        rhs.iter_mut().for_each(|v| *v = 0.0);
    }
    let opts = SolveOptions::with_tolerance(CORRECTOR_TOLERANCE)
        .nullspace(Nullspace::components(&cs.component_of, cs.components));
    let (mut values, report) = solve_spd(stiffness, &rhs, &opts)?;
    report.ensure_converged()?;
    cs.remove_component_means(&mut values);
    Ok(CorrectorField {
        phase: cs.phase,
        direction: k,
        values,
        report,
    })
}

/// Solves the cell problem for direction `k` (0-based) in phase `phase`.
pub fn solve_corrector(
    cell: &UnitCell,
    phase: Phase,
    sigma: &(dyn Fn(&Point) -> Tensor + Sync),
    k: usize,
) -> Result<CorrectorField> {
    if k >= cell.dim {
        return Err(Error::Invalid(format!(
            "direction {k} >= dimension {}",
            cell.dim
        )));
    }
    let cs = CellSpace::new(cell, phase)?;
    check_sigma(cell, &cs.space, &sigma)?;
    let stiffness = assemble_diffusion(&cs.space, |_, y| Ok(sigma(y)))?;
    corrector_in(&cs, cell.dim, sigma, &stiffness, k)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EffectiveTensor {
    pub phase: Phase,
    pub dim: usize,
    /// Leading `dim × dim` block is meaningful.
    pub matrix: Tensor,
    pub geometry_hash: String,
    pub sigma: String,
    pub resolution: usize,
    pub solves: Vec<SolveReport>,
}

impl EffectiveTensor {
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|a| self.matrix[a][..self.dim].to_vec())
            .collect()
    }
}

/// Effective tensor together with the correctors it was built from.
#[derive(Clone, Debug)]
pub struct CellSolution {
    pub tensor: EffectiveTensor,
    pub space: CellSpace,
    pub correctors: Vec<CorrectorField>,
}

/// `∫_{Y_j} σ (I − ∇χ)` by 2-point Gauss quadrature over the phase.
fn assemble_tensor(
    cs: &CellSpace,
    dim: usize,
    sigma: &(dyn Fn(&Point) -> Tensor + Sync),
    correctors: &[CorrectorField],
) -> Result<Tensor> {
    let table = ShapeTable::new(dim, &GAUSS2);
    let mut m = [[0.0; 3]; 3];
    for (k, chi) in correctors.iter().enumerate() {
        for (row, m_row) in m.iter_mut().enumerate().take(dim) {
            m_row[k] = integrate_cells(&cs.space, &table, &chi.values, |_, y, _, g| {
                let s = sigma(y);
                (0..dim)
                    .map(|l| s[row][l] * (if l == k { 1.0 } else { 0.0 } - g[l]))
                    .sum()
            })?;
        }
    }
    Ok(m)
}

/// Solves all correctors of a phase (directions in parallel) and assembles
/// `M_j`.
pub fn solve_cell(
    cell: &UnitCell,
    phase: Phase,
    sigma: &(dyn Fn(&Point) -> Tensor + Sync),
    sigma_description: &str,
) -> Result<CellSolution> {
    let cs = CellSpace::new(cell, phase)?;
    check_sigma(cell, &cs.space, &sigma)?;
    let stiffness = assemble_diffusion(&cs.space, |_, y| Ok(sigma(y)))?;
    let correctors = (0..cell.dim)
        .into_par_iter()
        .map(|k| corrector_in(&cs, cell.dim, sigma, &stiffness, k))
        .collect::<Result<Vec<_>>>()?;
    let matrix = assemble_tensor(&cs, cell.dim, sigma, &correctors)?;
    let tensor = EffectiveTensor {
        phase,
        dim: cell.dim,
        matrix,
        geometry_hash: cell.geometry_hash(),
        sigma: sigma_description.to_string(),
        resolution: cell.resolution,
        solves: correctors.iter().map(|c| c.report.clone()).collect(),
    };
    Ok(CellSolution {
        tensor,
        space: cs,
        correctors,
    })
}

/// `M_j` for an x-independent conductivity.
pub fn effective_tensor(
    cell: &UnitCell,
    phase: Phase,
    sigma: &Conductivity,
) -> Result<EffectiveTensor> {
    let dim = cell.dim;
    let x0 = [0.5; 3];
    let f = |y: &Point| sigma.eval(dim, &x0, y);
    Ok(solve_cell(cell, phase, &f, &sigma.describe())?.tensor)
}

/// `M_j(x)` at the given slow-variable points, one cell solve per point.
pub fn tabulate_tensor(
    cell: &UnitCell,
    phase: Phase,
    sigma: &Conductivity,
    points: &[Point],
) -> Result<Vec<Tensor>> {
    let dim = cell.dim;
    points
        .par_iter()
        .map(|x| {
            let f = |y: &Point| sigma.eval(dim, x, y);
            solve_cell(cell, phase, &f, "")
                .map(|s| s.tensor.matrix)
                .map_err(|e| match e {
                    Error::Ellipticity { y, detail, .. } => Error::Ellipticity { x: *x, y, detail },
                    other => other,
                })
        })
        .collect()
}

/// `∫_{Y_j} σ dy`, the upper (Voigt) bound of `M_j`.
pub fn voigt_bound(
    cell: &UnitCell,
    phase: Phase,
    sigma: &(dyn Fn(&Point) -> Tensor + Sync),
) -> Tensor {
    let space = cell.periodic_space(phase);
    let table = ShapeTable::new(cell.dim, &GAUSS2);
    let zeros = vec![0.0; space.len()];
    let mut t = [[0.0; 3]; 3];
    for a in 0..cell.dim {
        for b in 0..cell.dim {
            t[a][b] = integrate_cells(&space, &table, &zeros, |_, y, _, _| sigma(y)[a][b])
                .expect("field length matches its space");
        }
    }
    t
}

pub(crate) fn sym_eigenvalues(t: &Tensor, dim: usize) -> Vec<f64> {
    let m = DMatrix::from_fn(dim, dim, |a, b| 0.5 * (t[a][b] + t[b][a]));
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorDiagnostics {
    pub symmetry_defect: f64,
    pub eigenvalues: Vec<f64>,
    /// Smallest eigenvalue of `∫σ − M`; nonnegative when the bound holds.
    pub voigt_slack: f64,
    pub positive_definite: bool,
    /// Phase is periodically connected along every axis.
    pub spans_all_axes: bool,
    /// Positive definiteness matches connectivity.
    pub consistent: bool,
}

/// Eigenvalues below this fraction of the largest Voigt eigenvalue count as zero.
const PD_THRESHOLD: f64 = 1e-8;

pub fn tensor_diagnostics(
    m: &EffectiveTensor,
    cell: &UnitCell,
    sigma: &(dyn Fn(&Point) -> Tensor + Sync),
) -> TensorDiagnostics {
    let d = m.dim;
    let mut asym: f64 = 0.0;
    for a in 0..d {
        for b in 0..d {
            asym = asym.max((m.matrix[a][b] - m.matrix[b][a]).abs());
        }
    }
    let eigenvalues = sym_eigenvalues(&m.matrix, d);
    let voigt = voigt_bound(cell, m.phase, sigma);
    let mut diff = voigt;
    for a in 0..d {
        for b in 0..d {
            diff[a][b] -= m.matrix[a][b];
        }
    }
    let voigt_slack = sym_eigenvalues(&diff, d)[0];
    let scale = sym_eigenvalues(&voigt, d)
        .last()
        .copied()
        .unwrap_or(1.0)
        .max(1e-300);
    let positive_definite = eigenvalues[0] > PD_THRESHOLD * scale;
    let spans_all_axes = phase_connectivity(cell, m.phase).spans_all_axes;
    TensorDiagnostics {
        symmetry_defect: asym,
        eigenvalues,
        voigt_slack,
        positive_definite,
        spans_all_axes,
        consistent: positive_definite == spans_all_axes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_unit_cell, CellGeometrySpec};

    fn id(_: &Point) -> Tensor {
        identity_tensor()
    }

    fn laminate(d: usize) -> UnitCell {
        build_unit_cell(&CellGeometrySpec::laminate(0.5, 0, 8, d)).unwrap()
    }

    #[test]
    fn laminate_corrector_is_affine() {
        let cell = laminate(2);
        let chi = solve_corrector(&cell, Phase::Intra, &id, 0).unwrap();
        let cs = CellSpace::new(&cell, Phase::Intra).unwrap();
        // the slab occupies [1/4, 3/4); χ = y₁ − 1/2 there
        for (dof, v) in chi.values.iter().enumerate() {
            let y = cs.space.grid.node_position(cs.space.dof_node[dof] as usize);
            assert!((v - (y[0] - 0.5)).abs() < 1e-11, "{v} at {y:?}");
        }
        let chi2 = solve_corrector(&cell, Phase::Intra, &id, 1).unwrap();
        assert!(chi2.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn laminate_tensor_closed_form() {
        let cell = laminate(2);
        let mi = effective_tensor(&cell, Phase::Intra, &Conductivity::identity()).unwrap();
        let expect = [[0.0, 0.0], [0.0, 0.5]];
        for a in 0..2 {
            for b in 0..2 {
                assert!((mi.matrix[a][b] - expect[a][b]).abs() < 1e-10);
            }
        }
        let diag = tensor_diagnostics(&mi, &cell, &id);
        assert!(!diag.positive_definite);
        assert!(diag.consistent);
        assert!(diag.voigt_slack > -1e-12);
    }

    #[test]
    fn full_cell_returns_sigma() {
        let cell = build_unit_cell(&CellGeometrySpec::full(4, 3)).unwrap();
        let s = Conductivity::Diagonal {
            values: vec![1.0, 2.0, 3.0],
        };
        let m = effective_tensor(&cell, Phase::Intra, &s).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let e = if a == b { (a + 1) as f64 } else { 0.0 };
                assert!((m.matrix[a][b] - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn inclusion_tensors() {
        let cell = build_unit_cell(&CellGeometrySpec::inclusion(0.25, 8, 2)).unwrap();
        let mi = effective_tensor(&cell, Phase::Intra, &Conductivity::identity()).unwrap();
        assert!(mi.rows().iter().flatten().all(|v| v.abs() < 1e-10));
        let me = effective_tensor(&cell, Phase::Extra, &Conductivity::identity()).unwrap();
        let diag = tensor_diagnostics(&me, &cell, &id);
        assert!(diag.positive_definite && diag.consistent);
        assert!(diag.eigenvalues[1] <= cell.volume(Phase::Extra) + 1e-12);
        assert!(diag.symmetry_defect < 1e-10);
    }

    #[test]
    fn rejects_indefinite_sigma() {
        let cell = laminate(2);
        let bad = |_: &Point| {
            let mut t = identity_tensor();
            t[1][1] = -1.0;
            t
        };
        assert!(matches!(
            solve_corrector(&cell, Phase::Extra, &bad, 0),
            Err(Error::Ellipticity { .. })
        ));
    }

    #[test]
    fn component_means_vanish() {
        let cell = build_unit_cell(&CellGeometrySpec::inclusion(0.25, 8, 2)).unwrap();
        let cs = CellSpace::new(&cell, Phase::Extra).unwrap();
        let chi = solve_corrector(&cell, Phase::Extra, &id, 1).unwrap();
        assert!(cs.max_component_mean(&chi.values) < 1e-12);
    }
}
