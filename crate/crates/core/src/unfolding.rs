//! Discrete unfolding operators.
//!
//! With `ε = 1/N` every ε-cell of `Ω = (0,1)^d` is a complete scaled copy of
//! the unit cell, and the micro mesh restricted to cell `k` is the unit-cell
//! mesh mapped by `y ↦ ε(k + y)`. Unfolding is therefore an exact
//! re-indexing: the unfolded field stores, for every cell `k`, the nodal
//! values on the unit-cell mesh. Values are piecewise constant in `x` by
//! construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discretize::mesh::{ShapeTable, GAUSS2, GAUSS3};
use crate::discretize::{
    assemble_diffusion, assemble_volume_mass, identity_tensor, CsrMatrix, DofSpace, Grid, Point,
};
use crate::error::{Error, Result};
use crate::geometry::{tile_domain, Phase, TiledDomain, UnitCell};

/// Faces per cell above which the Gagliardo seminorm is refused.
pub const MAX_GAGLIARDO_FACES: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    /// `Ω × Γ`.
    Surface,
    /// `Ω × Y_j`.
    Volume(Phase),
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnfoldedField {
    pub target: Target,
    pub eps: f64,
    pub cells: usize,
    /// Unit-cell DOFs per ε-cell.
    pub local_len: usize,
    /// Cell-major values: `values[k * local_len + l]`.
    pub values: Vec<f64>,
}

impl UnfoldedField {
    pub fn cell(&self, k: usize) -> &[f64] {
        &self.values[k * self.local_len..(k + 1) * self.local_len]
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.target != other.target || self.values.len() != other.values.len() {
            return Err(Error::DimensionMismatch {
                context: "unfolded fields on different targets",
                expected: self.values.len(),
                got: other.values.len(),
            });
        }
        Ok(())
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.same_shape(other)?;
        Ok(UnfoldedField {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| f(*a, *b))
                .collect(),
            ..self.clone()
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }
}

/// Unit-cell operators used to measure unfolded fields.
struct LocalOperators {
    /// Surface mass on `Γ ⊂ Y`.
    surface_mass: CsrMatrix,
    surface_weights: Vec<f64>,
    volume_mass: [CsrMatrix; 2],
    volume_weights: [Vec<f64>; 2],
    laplace: [CsrMatrix; 2],
    /// For each local membrane DOF, the local DOF of each phase.
    trace: [Vec<u32>; 2],
    /// Face midpoints in `Y` and their measures.
    face_midpoints: Vec<Point>,
}

/// Maps between the micro DOFs of a tiled domain and unfolded arrays.
pub struct Unfolder {
    pub eps: f64,
    pub dim: usize,
    pub cells: usize,
    pub cells_per_axis: usize,
    pub membrane_area: f64,
    pub volumes: [f64; 2],
    local: LocalOperators,
    /// `surface_map[k * L + l]` is the global membrane DOF.
    surface_map: Vec<u32>,
    volume_map: [Vec<u32>; 2],
    local_faces: usize,
    local_surface: crate::discretize::SurfaceSpace,
}

fn weights_of(mass: &CsrMatrix) -> Vec<f64> {
    mass.row_sums()
}

impl Unfolder {
    pub fn new(domain: &TiledDomain) -> Result<Self> {
        let cell: &UnitCell = &domain.cell;
        let unit = tile_domain(cell, 1)?;
        let dim = cell.dim;
        let n = cell.resolution;
        let surface_mass = unit.membrane.mass_matrix(false)?;
        let mut volume_mass = Vec::new();
        let mut laplace = Vec::new();
        for p in Phase::BOTH {
            volume_mass.push(assemble_volume_mass(unit.phase(p)));
            laplace.push(assemble_diffusion(unit.phase(p), |_, _| {
                Ok(identity_tensor())
            })?);
        }
        let volume_mass: [CsrMatrix; 2] = volume_mass.try_into().expect("two phases");
        let local = LocalOperators {
            surface_weights: weights_of(&surface_mass),
            surface_mass,
            volume_weights: [weights_of(&volume_mass[0]), weights_of(&volume_mass[1])],
            volume_mass,
            laplace: laplace.try_into().expect("two phases"),
            trace: unit.membrane_to_phase.clone(),
            face_midpoints: unit
                .membrane
                .faces
                .iter()
                .map(|f| {
                    let mut p = unit.grid.node_position(f.origin as usize);
                    for a in 0..dim {
                        if a != f.axis as usize {
                            p[a] += 0.5 * unit.grid.h;
                        }
                    }
                    p
                })
                .collect(),
        };

        let cells = domain.num_cells();
        let local_coords = |space_nodes: &[u32]| -> Vec<[usize; 3]> {
            space_nodes
                .iter()
                .map(|&nd| unit.grid.node_coords(nd as usize))
                .collect()
        };
        let lattice = Grid::new(dim, domain.cells_per_axis, false, domain.eps);
        let global = &domain.grid;
        let map_space = |local_nodes: &[u32], node_dof: &[u32]| -> Vec<u32> {
            let coords = local_coords(local_nodes);
            let mut out = Vec::with_capacity(cells * coords.len());
            for k in 0..cells {
                let kc = lattice.cell_coords(k);
                for c in &coords {
                    let mut g = [0usize; 3];
                    for a in 0..dim {
                        g[a] = kc[a] * n + c[a];
                    }
                    out.push(node_dof[global.node_index(g)]);
                }
            }
            out
        };
        let surface_map = map_space(&unit.membrane.dof_node, &domain.membrane.node_dof);
        let volume_map = [
            map_space(
                &unit.phase(Phase::Intra).dof_node,
                &domain.phase(Phase::Intra).node_dof,
            ),
            map_space(
                &unit.phase(Phase::Extra).dof_node,
                &domain.phase(Phase::Extra).node_dof,
            ),
        ];
        Ok(Unfolder {
            eps: domain.eps,
            dim,
            cells,
            cells_per_axis: domain.cells_per_axis,
            membrane_area: cell.area,
            volumes: [cell.volume(Phase::Intra), cell.volume(Phase::Extra)],
            local,
            surface_map,
            volume_map,
            local_faces: unit.membrane.faces.len(),
            local_surface: unit.membrane,
        })
    }

    fn local_len(&self, target: Target) -> usize {
        match target {
            Target::Surface => self.local.surface_weights.len(),
            Target::Volume(p) => self.local.volume_weights[p.index()].len(),
        }
    }

    fn map(&self, target: Target) -> &[u32] {
        match target {
            Target::Surface => &self.surface_map,
            Target::Volume(p) => &self.volume_map[p.index()],
        }
    }

    fn gather(&self, target: Target, values: &[f64], expected: usize) -> Result<UnfoldedField> {
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "field to unfold",
                expected,
                got: values.len(),
            });
        }
        Ok(UnfoldedField {
            target,
            eps: self.eps,
            cells: self.cells,
            local_len: self.local_len(target),
            values: self
                .map(target)
                .iter()
                .map(|&g| values[g as usize])
                .collect(),
        })
    }

    /// `T_ε^b(v)(x, y) = v(ε⌊x/ε⌋ + εy)`.
    pub fn unfold_boundary(&self, domain: &TiledDomain, v: &[f64]) -> Result<UnfoldedField> {
        self.gather(Target::Surface, v, domain.membrane.len())
    }

    /// `T_ε^j(u)` on `Ω × Y_j`.
    pub fn unfold_volume(
        &self,
        domain: &TiledDomain,
        phase: Phase,
        u: &[f64],
    ) -> Result<UnfoldedField> {
        self.gather(Target::Volume(phase), u, domain.phase(phase).len())
    }

    /// An unfolded surface field from a function of `y` alone, identical in
    /// every cell.
    pub fn periodic_surface(&self, psi: impl Fn(&Point) -> f64) -> UnfoldedField {
        let local: Vec<f64> = self
            .local_surface
            .dof_node
            .iter()
            .map(|&nd| psi(&self.local_surface.grid.node_position(nd as usize)))
            .collect();
        let values = (0..self.cells)
            .flat_map(|_| local.iter().copied())
            .collect();
        UnfoldedField {
            target: Target::Surface,
            eps: self.eps,
            cells: self.cells,
            local_len: local.len(),
            values,
        }
    }

    /// Restriction of an unfolded volume field to `Ω × Γ`.
    pub fn restrict_to_surface(&self, f: &UnfoldedField) -> Result<UnfoldedField> {
        let Target::Volume(p) = f.target else {
            return Err(Error::Invalid("restriction needs a volume field".into()));
        };
        let trace = &self.local.trace[p.index()];
        let mut values = Vec::with_capacity(self.cells * trace.len());
        for k in 0..self.cells {
            let c = f.cell(k);
            values.extend(trace.iter().map(|&l| c[l as usize]));
        }
        Ok(UnfoldedField {
            target: Target::Surface,
            eps: f.eps,
            cells: f.cells,
            local_len: trace.len(),
            values,
        })
    }

    fn cell_volume(&self) -> f64 {
        self.eps.powi(self.dim as i32)
    }

    fn local_mass(&self, target: Target) -> &CsrMatrix {
        match target {
            Target::Surface => &self.local.surface_mass,
            Target::Volume(p) => &self.local.volume_mass[p.index()],
        }
    }

    fn local_weights(&self, target: Target) -> &[f64] {
        match target {
            Target::Surface => &self.local.surface_weights,
            Target::Volume(p) => &self.local.volume_weights[p.index()],
        }
    }

    /// `∫_Ω ∫ f dy dx`.
    pub fn integrate(&self, f: &UnfoldedField) -> f64 {
        let w = self.local_weights(f.target);
        (0..f.cells)
            .map(|k| f.cell(k).iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
            .sum::<f64>()
            * self.cell_volume()
    }

    /// `‖f‖_{L²(Ω×Γ)}` or `‖f‖_{L²(Ω×Y_j)}`.
    pub fn l2_norm(&self, f: &UnfoldedField) -> f64 {
        let m = self.local_mass(f.target);
        let s: f64 = (0..f.cells).map(|k| m.quad_form(f.cell(k))).sum();
        (s * self.cell_volume()).sqrt()
    }

    /// `‖∇_y f‖_{L²(Ω×Y_j)}` of a volume field.
    pub fn grad_y_norm(&self, f: &UnfoldedField) -> Result<f64> {
        let Target::Volume(p) = f.target else {
            return Err(Error::Invalid("∇_y needs a volume field".into()));
        };
        let k_y = &self.local.laplace[p.index()];
        let s: f64 = (0..f.cells).map(|k| k_y.quad_form(f.cell(k))).sum();
        Ok((s * self.cell_volume()).sqrt())
    }

    /// `‖f − g(x)‖_{L²(Ω×target)}` for a slow field `g` given by its cell
    /// moments `∫_{cell k} g` and `∫_{cell k} g²`.
    pub fn distance_to_slow(&self, f: &UnfoldedField, moments: &CellMoments) -> Result<f64> {
        if moments.first.len() != f.cells {
            return Err(Error::DimensionMismatch {
                context: "cell moments",
                expected: f.cells,
                got: moments.first.len(),
            });
        }
        let m = self.local_mass(f.target);
        let w = self.local_weights(f.target);
        let measure: f64 = w.iter().sum();
        let vol = self.cell_volume();
        let mut total = 0.0;
        for k in 0..f.cells {
            let c = f.cell(k);
            let lin: f64 = c.iter().zip(w).map(|(a, b)| a * b).sum();
            total +=
                vol * m.quad_form(c) - 2.0 * moments.first[k] * lin + measure * moments.second[k];
        }
        Ok(total.max(0.0).sqrt())
    }

    /// Cellwise means over `Y_j`: `M_ε^j(u)`.
    pub fn local_averages(&self, f: &UnfoldedField) -> Result<Vec<f64>> {
        let Target::Volume(p) = f.target else {
            return Err(Error::Invalid("local averages need a volume field".into()));
        };
        let w = &self.local.volume_weights[p.index()];
        let vol = self.volumes[p.index()];
        Ok((0..f.cells)
            .map(|k| f.cell(k).iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / vol)
            .collect())
    }

    /// `Q_ε^j`: Q1 interpolation in `x` of cell averages located at cell
    /// centres, clamped to the nearest cell near `∂Ω`.
    pub fn interpolant_at(&self, averages: &[f64], x: &Point) -> f64 {
        let n = self.cells_per_axis;
        let lattice = Grid::new(self.dim, n, false, self.eps);
        if n == 1 {
            return averages[0];
        }
        let mut base = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..self.dim {
            let s = (x[a] / self.eps - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = (s.floor() as usize).min(n - 2);
            base[a] = i0;
            t[a] = s - i0 as f64;
        }
        let mut value = 0.0;
        for corner in 0..(1 << self.dim) {
            let mut c = base;
            let mut weight = 1.0;
            for a in 0..self.dim {
                let bit = (corner >> a) & 1;
                c[a] += bit;
                weight *= if bit == 1 { t[a] } else { 1.0 - t[a] };
            }
            value += weight * averages[lattice.cell_index(c)];
        }
        value
    }

    /// `‖Q_ε^j(u) − u‖_{L²(Ω_j^ε)}`.
    pub fn interpolant_error(&self, domain: &TiledDomain, phase: Phase, u: &[f64]) -> Result<f64> {
        let f = self.unfold_volume(domain, phase, u)?;
        let avg = self.local_averages(&f)?;
        let space = domain.phase(phase);
        let table = ShapeTable::new(self.dim, &GAUSS3);
        let s = crate::discretize::assembly::integrate_cells(space, &table, u, |_, x, uh, _| {
            (self.interpolant_at(&avg, x) - uh).powi(2)
        })?;
        Ok(s.sqrt())
    }

    /// Gagliardo `H^{1/2}(Γ)` seminorm of an unfolded surface field, squared
    /// and averaged over cells, using face-midpoint collocation without the
    /// diagonal pairs.
    pub fn gagliardo(&self, f: &UnfoldedField) -> Result<f64> {
        if f.target != Target::Surface {
            return Err(Error::Invalid(
                "Gagliardo seminorm needs a surface field".into(),
            ));
        }
        if self.local_faces > MAX_GAGLIARDO_FACES {
            return Err(Error::Resource(format!(
                "Gagliardo seminorm on {} faces per cell (limit {MAX_GAGLIARDO_FACES})",
                self.local_faces
            )));
        }
        let mids = &self.local.face_midpoints;
        let area = self.local_surface.face_measure();
        let exponent = self.dim as i32;
        let mut total = 0.0;
        for k in 0..f.cells {
            let m = self.local_surface.face_midpoints(f.cell(k))?;
            for a in 0..mids.len() {
                for b in 0..mids.len() {
                    if a == b {
                        continue;
                    }
                    let r2: f64 = (0..self.dim)
                        .map(|i| (mids[a][i] - mids[b][i]).powi(2))
                        .sum();
                    if r2 == 0.0 {
                        continue;
                    }
                    total += (m[a] - m[b]).powi(2) / r2.sqrt().powi(exponent) * area * area;
                }
            }
        }
        Ok(total / f.cells as f64)
    }
}

/// Per ε-cell integrals `∫ g` and `∫ g²` of a slow field.
#[derive(Clone, Debug, Default)]
pub struct CellMoments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

/// Cell moments of a Q1 field on a full grid whose resolution is a multiple
/// of `cells_per_axis` (2-point Gauss per axis, exact for Q1 products).
pub fn cell_moments(
    space: &DofSpace,
    values: &[f64],
    cells_per_axis: usize,
) -> Result<CellMoments> {
    let grid = &space.grid;
    if !grid.cells.is_multiple_of(cells_per_axis) {
        return Err(Error::Invalid(format!(
            "macro resolution {} is not a multiple of {cells_per_axis}",
            grid.cells
        )));
    }
    let ratio = grid.cells / cells_per_axis;
    let dim = grid.dim;
    let lattice = Grid::new(dim, cells_per_axis, false, 1.0 / cells_per_axis as f64);
    let table = ShapeTable::new(dim, &GAUSS2);
    let vol = grid.h.powi(dim as i32);
    let mut out = CellMoments {
        first: vec![0.0; lattice.num_cells()],
        second: vec![0.0; lattice.num_cells()],
    };
    for e in space.active_cells() {
        let ec = grid.cell_coords(e);
        let mut kc = [0usize; 3];
        for a in 0..dim {
            kc[a] = ec[a] / ratio;
        }
        let k = lattice.cell_index(kc);
        let dofs = space.cell_dofs(e);
        for q in 0..table.len() {
            let u: f64 = (0..grid.local_nodes())
                .map(|a| values[dofs[a] as usize] * table.values[q][a])
                .sum();
            let w = table.rule.weights[q] * vol;
            out.first[k] += w * u;
            out.second[k] += w * u * u;
        }
    }
    Ok(out)
}

/// Cell moments of an analytic function by Gauss quadrature on `sub^d`
/// sub-boxes per cell.
pub fn cell_moments_of(
    f: impl Fn(&Point) -> f64,
    dim: usize,
    cells_per_axis: usize,
    sub: usize,
) -> CellMoments {
    let fine = Grid::new(
        dim,
        cells_per_axis * sub,
        false,
        1.0 / (cells_per_axis * sub) as f64,
    );
    let lattice = Grid::new(dim, cells_per_axis, false, 1.0 / cells_per_axis as f64);
    let rule = crate::discretize::mesh::TensorRule::new(dim, &GAUSS3);
    let vol = fine.h.powi(dim as i32);
    let mut out = CellMoments {
        first: vec![0.0; lattice.num_cells()],
        second: vec![0.0; lattice.num_cells()],
    };
    for e in 0..fine.num_cells() {
        let ec = fine.cell_coords(e);
        let mut kc = [0usize; 3];
        let mut o = [0.0; 3];
        for a in 0..dim {
            kc[a] = ec[a] / sub;
            o[a] = ec[a] as f64 * fine.h;
        }
        let k = lattice.cell_index(kc);
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let mut x = [0.0; 3];
            for a in 0..dim {
                x[a] = o[a] + fine.h * p[a];
            }
            let v = f(&x);
            out.first[k] += w * vol * v;
            out.second[k] += w * vol * v * v;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub eps: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `|lhs − rhs| / max(1, |lhs|, |rhs|)`.
    pub defect: f64,
    pub pass: bool,
}

fn check(name: &str, eps: f64, lhs: f64, rhs: f64, tol: f64) -> IdentityCheck {
    let defect = (lhs - rhs).abs() / 1f64.max(lhs.abs()).max(rhs.abs());
    IdentityCheck {
        name: name.to_string(),
        eps,
        lhs,
        rhs,
        defect,
        pass: defect <= tol,
    }
}

/// Runs the unfolding identities on random fields for each `N` in
/// `cells_per_axis`: integration formula, norm identities, product rule,
/// gradient scaling and trace compatibility.
pub fn identity_suite(
    cell: &UnitCell,
    cells_per_axis: &[usize],
    seed: u64,
    tol: f64,
) -> Result<Vec<IdentityCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &n in cells_per_axis {
        let domain = tile_domain(cell, n)?;
        let unf = Unfolder::new(&domain)?;
        let eps = domain.eps;
        let mut random =
            |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let v1 = random(domain.membrane.len());
        let v2 = random(domain.membrane.len());
        let m_gamma = domain.membrane.mass_matrix(false)?;
        let t1 = unf.unfold_boundary(&domain, &v1)?;
        let t2 = unf.unfold_boundary(&domain, &v2)?;

        let direct: f64 = m_gamma.row_sums().iter().zip(&v1).map(|(w, v)| w * v).sum();
        out.push(check(
            "integration_formula",
            eps,
            unf.integrate(&t1),
            eps * direct,
            tol,
        ));
        out.push(check(
            "boundary_norm",
            eps,
            unf.l2_norm(&t1),
            (eps * m_gamma.quad_form(&v1)).sqrt(),
            tol,
        ));
        let prod: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| a * b).collect();
        let tp = unf.unfold_boundary(&domain, &prod)?;
        let tt = t1.mul(&t2)?;
        let worst = tp
            .values
            .iter()
            .zip(&tt.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        out.push(check("product_rule", eps, worst, 0.0, tol));

        for p in Phase::BOTH {
            let space = domain.phase(p);
            let u = random(space.len());
            let tu = unf.unfold_volume(&domain, p, &u)?;
            let mass = assemble_volume_mass(space);
            out.push(check(
                &format!("volume_norm_{}", p.name()),
                eps,
                unf.l2_norm(&tu),
                mass.quad_form(&u).sqrt(),
                tol,
            ));
            let lap = assemble_diffusion(space, |_, _| Ok(identity_tensor()))?;
            out.push(check(
                &format!("gradient_scaling_{}", p.name()),
                eps,
                unf.grad_y_norm(&tu)?,
                eps * lap.quad_form(&u).sqrt(),
                tol,
            ));
            let trace: Vec<f64> = domain.membrane_to_phase[p.index()]
                .iter()
                .map(|&d| u[d as usize])
                .collect();
            let restricted = unf.restrict_to_surface(&tu)?;
            let direct = unf.unfold_boundary(&domain, &trace)?;
            let worst = restricted
                .values
                .iter()
                .zip(&direct.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            out.push(check(
                &format!("trace_compatibility_{}", p.name()),
                eps,
                worst,
                0.0,
                tol,
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_unit_cell, CellGeometrySpec};

    fn setup(n: usize) -> (TiledDomain, Unfolder) {
        let cell = build_unit_cell(&CellGeometrySpec::inclusion(0.25, 4, 2)).unwrap();
        let d = tile_domain(&cell, n).unwrap();
        let u = Unfolder::new(&d).unwrap();
        (d, u)
    }

    #[test]
    fn constant_unfolds_to_constant() {
        let (d, u) = setup(2);
        let t = u.unfold_boundary(&d, &vec![3.0; d.membrane.len()]).unwrap();
        assert!(t.values.iter().all(|v| *v == 3.0));
        // L2 = |c| sqrt(|Ω| |Γ|)
        assert!((u.l2_norm(&t) - 3.0 * u.membrane_area.sqrt()).abs() < 1e-13);
        assert!(u.gagliardo(&t).unwrap().abs() < 1e-15);
    }

    #[test]
    fn periodic_field_is_cell_independent() {
        let (d, u) = setup(4);
        let psi = |y: &Point| y[0] * y[0] - y[1];
        let v: Vec<f64> = d
            .membrane_positions()
            .iter()
            .map(|x| psi(&d.fast_variable(x)))
            .collect();
        let t = u.unfold_boundary(&d, &v).unwrap();
        for k in 1..t.cells {
            assert_eq!(t.cell(k), t.cell(0));
        }
        let p = u.periodic_surface(psi);
        assert!(t.sub(&p).unwrap().values.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn identities_hold() {
        let cell = build_unit_cell(&CellGeometrySpec::laminate(0.5, 0, 4, 2)).unwrap();
        for c in identity_suite(&cell, &[1, 2, 4], 7, 1e-12).unwrap() {
            assert!(c.pass, "{c:?}");
        }
    }

    #[test]
    fn interpolant_of_constant() {
        let (d, u) = setup(4);
        let space = d.phase(Phase::Extra);
        let c = vec![2.5; space.len()];
        let f = u.unfold_volume(&d, Phase::Extra, &c).unwrap();
        let avg = u.local_averages(&f).unwrap();
        assert!(avg.iter().all(|a| (a - 2.5).abs() < 1e-13));
        assert!(u.interpolant_error(&d, Phase::Extra, &c).unwrap() < 1e-12);
    }

    #[test]
    fn distance_to_slow_matches_explicit_difference() {
        let (d, u) = setup(2);
        let v: Vec<f64> = d.membrane_positions().iter().map(|x| x[0]).collect();
        let t = u.unfold_boundary(&d, &v).unwrap();
        // slow field equal to the cell constant 0 → distance is the norm
        let zero = CellMoments {
            first: vec![0.0; 4],
            second: vec![0.0; 4],
        };
        assert!((u.distance_to_slow(&t, &zero).unwrap() - u.l2_norm(&t)).abs() < 1e-14);
    }

    #[test]
    fn gagliardo_refuses_large_surfaces() {
        let cell = build_unit_cell(&CellGeometrySpec::inclusion(0.25, 64, 3)).unwrap();
        let d = tile_domain(&cell, 1).unwrap();
        let u = Unfolder::new(&d).unwrap();
        let t = u.unfold_boundary(&d, &vec![0.0; d.membrane.len()]).unwrap();
        assert!(matches!(u.gagliardo(&t), Err(Error::Resource(_))));
    }
}
