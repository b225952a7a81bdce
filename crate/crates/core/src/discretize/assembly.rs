//! Q1 volume assembly on structured DOF spaces.
//!
//! Matrices are assembled row by row: each row visits the active cells around
//! its node in fixed order, so results are independent of the thread count.

use rayon::prelude::*;

use super::mesh::{DofSpace, Point, ShapeTable, GAUSS2, NO_DOF};
use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// Symmetric 3×3 tensor; only the leading `d×d` block is used in `d` dimensions.
pub type Tensor = [[f64; 3]; 3];

pub fn identity_tensor() -> Tensor {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

pub fn scale_tensor(t: &Tensor, s: f64) -> Tensor {
    let mut out = *t;
    out.iter_mut().flatten().for_each(|v| *v *= s);
    out
}

/// Checks symmetry and positive definiteness of the leading `d×d` block.
/// Returns a description of the violation, if any.
pub fn spd_violation(t: &Tensor, dim: usize) -> Option<String> {
    for i in 0..dim {
        for j in 0..i {
            let scale = t[i][j].abs().max(t[j][i].abs()).max(1.0);
            if (t[i][j] - t[j][i]).abs() > 1e-12 * scale {
                return Some(format!("asymmetric entries ({i},{j})"));
            }
        }
    }
    // leading principal minors
    let m1 = t[0][0];
    let m2 = t[0][0] * t[1][1] - t[0][1] * t[1][0];
    let minors = if dim == 2 {
        vec![m1, m2]
    } else {
        let m3 = t[0][0] * (t[1][1] * t[2][2] - t[1][2] * t[2][1])
            - t[0][1] * (t[1][0] * t[2][2] - t[1][2] * t[2][0])
            + t[0][2] * (t[1][0] * t[2][1] - t[1][1] * t[2][0]);
        vec![m1, m2, m3]
    };
    minors
        .iter()
        .position(|m| !(m.is_finite() && *m > 0.0))
        .map(|k| format!("leading minor {} is {:.3e}", k + 1, minors[k]))
}

fn cell_point(space: &DofSpace, cell: usize, xi: &Point) -> Point {
    let o = space.cell_origin(cell);
    let h = space.grid.h;
    let mut p = [0.0; 3];
    for a in 0..space.grid.dim {
        p[a] = o[a] + h * xi[a];
    }
    p
}

/// Assembles rows of a bilinear form from a per-cell row kernel
/// `kernel(cell, local_row, out)` that fills `out[b]` for every local column.
fn assemble_rows<K>(space: &DofSpace, kernel: K) -> Result<CsrMatrix>
where
    K: Fn(usize, usize, &mut [f64; 8]) -> Result<()> + Sync,
{
    let grid = &space.grid;
    let nl = grid.local_nodes();
    let rows: Vec<Vec<(u32, f64)>> = (0..space.len())
        .into_par_iter()
        .map(|dof| {
            let node = space.dof_node[dof] as usize;
            let mut row = Vec::with_capacity(3usize.pow(grid.dim as u32));
            let mut buf = [0.0; 8];
            for (cell, a) in grid.node_cells(node) {
                if !space.active[cell] {
                    continue;
                }
                kernel(cell, a, &mut buf)?;
                let cc = grid.cell_coords(cell);
                for (b, &val) in buf.iter().enumerate().take(nl) {
                    let col = space.node_dof[grid.cell_node(cc, b)];
                    debug_assert_ne!(col, NO_DOF);
                    row.push((col, val));
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(CsrMatrix::from_rows(space.len(), rows))
}

/// Stiffness matrix `∫ K(x) ∇u·∇φ` over the active cells with 2-point Gauss
/// quadrature per axis. `tensor(cell, x)` supplies the coefficient at
/// quadrature points; errors it returns abort the assembly.
pub fn assemble_diffusion<T>(space: &DofSpace, tensor: T) -> Result<CsrMatrix>
where
    T: Fn(usize, &Point) -> Result<Tensor> + Sync,
{
    let dim = space.grid.dim;
    let table = ShapeTable::new(dim, &GAUSS2);
    let scale = space.grid.h.powi(dim as i32 - 2);
    let nl = space.grid.local_nodes();
    assemble_rows(space, |cell, a, out| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for q in 0..table.len() {
            let x = cell_point(space, cell, &table.rule.points[q]);
            let k = tensor(cell, &x)?;
            let ga = &table.grads[q][a];
            let mut kga = [0.0; 3];
            for i in 0..dim {
                for j in 0..dim {
                    kga[i] += k[i][j] * ga[j];
                }
            }
            let w = table.rule.weights[q] * scale;
            for (b, slot) in out.iter_mut().enumerate().take(nl) {
                let gb = &table.grads[q][b];
                let mut s = 0.0;
                for i in 0..dim {
                    s += kga[i] * gb[i];
                }
                *slot += w * s;
            }
        }
        Ok(())
    })
}

/// Consistent volume mass matrix over the active cells.
pub fn assemble_volume_mass(space: &DofSpace) -> CsrMatrix {
    let dim = space.grid.dim;
    let table = ShapeTable::new(dim, &GAUSS2);
    let scale = space.grid.h.powi(dim as i32);
    let nl = space.grid.local_nodes();
    assemble_rows(space, |_, a, out| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for q in 0..table.len() {
            let w = table.rule.weights[q] * scale * table.values[q][a];
            for (b, slot) in out.iter_mut().enumerate().take(nl) {
                *slot += w * table.values[q][b];
            }
        }
        Ok(())
    })
    .expect("mass assembly has no failure path")
}

/// Load vector `∫ f φ` with `f(cell, x)` sampled at 2-point Gauss points.
pub fn assemble_load<F>(space: &DofSpace, f: F) -> Vec<f64>
where
    F: Fn(usize, &Point) -> f64,
{
    let dim = space.grid.dim;
    let table = ShapeTable::new(dim, &GAUSS2);
    let scale = space.grid.h.powi(dim as i32);
    let nl = space.grid.local_nodes();
    let mut out = vec![0.0; space.len()];
    for cell in space.active_cells() {
        let dofs = space.cell_dofs(cell);
        for q in 0..table.len() {
            let x = cell_point(space, cell, &table.rule.points[q]);
            let fx = f(cell, &x) * table.rule.weights[q] * scale;
            for a in 0..nl {
                out[dofs[a] as usize] += fx * table.values[q][a];
            }
        }
    }
    out
}

/// Load vector `∫ g·∇φ` for a vector field `g(cell, x)` sampled at 2-point
/// Gauss points.
pub fn assemble_flux_load<G>(space: &DofSpace, mut g: G) -> Vec<f64>
where
    G: FnMut(usize, &Point) -> [f64; 3],
{
    let dim = space.grid.dim;
    let table = ShapeTable::new(dim, &GAUSS2);
    // gradients carry 1/h, the cell volume h^d
    let scale = space.grid.h.powi(dim as i32 - 1);
    let nl = space.grid.local_nodes();
    let mut out = vec![0.0; space.len()];
    for cell in space.active_cells() {
        let dofs = space.cell_dofs(cell);
        for q in 0..table.len() {
            let x = cell_point(space, cell, &table.rule.points[q]);
            let gx = g(cell, &x);
            let w = table.rule.weights[q] * scale;
            for a in 0..nl {
                let ga = &table.grads[q][a];
                let s: f64 = (0..dim).map(|i| gx[i] * ga[i]).sum();
                out[dofs[a] as usize] += w * s;
            }
        }
    }
    out
}

/// Sums `f(cell, x, u_h(x), ∇u_h(x)) · weight` over quadrature points of the
/// active cells, using the given shape table.
pub fn integrate_cells<F>(space: &DofSpace, table: &ShapeTable, values: &[f64], f: F) -> Result<f64>
where
    F: Fn(usize, &Point, f64, &[f64; 3]) -> f64,
{
    if values.len() != space.len() {
        return Err(Error::DimensionMismatch {
            context: "field on volume DOF space",
            expected: space.len(),
            got: values.len(),
        });
    }
    let dim = space.grid.dim;
    let h = space.grid.h;
    let vol = h.powi(dim as i32);
    let nl = space.grid.local_nodes();
    let mut total = 0.0;
    for cell in space.active_cells() {
        let dofs = space.cell_dofs(cell);
        for q in 0..table.len() {
            let mut u = 0.0;
            let mut g = [0.0; 3];
            for a in 0..nl {
                let ua = values[dofs[a] as usize];
                u += ua * table.values[q][a];
                for i in 0..dim {
                    g[i] += ua * table.grads[q][a][i] / h;
                }
            }
            let x = cell_point(space, cell, &table.rule.points[q]);
            total += table.rule.weights[q] * vol * f(cell, &x, u, &g);
        }
    }
    Ok(total)
}

/// `∫ u_h²` over the active cells (exact for Q1 fields).
pub fn l2_squared(space: &DofSpace, values: &[f64]) -> Result<f64> {
    let table = ShapeTable::new(space.grid.dim, &GAUSS2);
    integrate_cells(space, &table, values, |_, _, u, _| u * u)
}

/// `∫ |∇u_h|²` over the active cells (exact for Q1 fields).
pub fn h1_semi_squared(space: &DofSpace, values: &[f64]) -> Result<f64> {
    let table = ShapeTable::new(space.grid.dim, &GAUSS2);
    integrate_cells(space, &table, values, |_, _, _, g| {
        g.iter().map(|v| v * v).sum()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::mesh::Grid;

    fn unit_square(cells: usize) -> DofSpace {
        DofSpace::full(Grid::new(2, cells, false, 1.0 / cells as f64))
    }

    #[test]
    fn single_element_stiffness_matches_textbook() {
        let space = unit_square(1);
        let k = assemble_diffusion(&space, |_, _| Ok(identity_tensor())).unwrap();
        // bilinear square: diagonal 2/3, edge neighbours -1/6, opposite corner -1/3
        let expect = [
            [4.0, -1.0, -1.0, -2.0],
            [-1.0, 4.0, -2.0, -1.0],
            [-1.0, -2.0, 4.0, -1.0],
            [-2.0, -1.0, -1.0, 4.0],
        ];
        for (r, row) in expect.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert!((k.get(r, c) - v / 6.0).abs() < 1e-15, "({r},{c})");
            }
        }
        assert!(k.row_sums().iter().all(|s| s.abs() < 1e-15));
    }

    #[test]
    fn stiffness_is_linear_in_tensor() {
        let space = unit_square(4);
        let k1 = assemble_diffusion(&space, |_, _| Ok(identity_tensor())).unwrap();
        let k2 =
            assemble_diffusion(&space, |_, _| Ok(scale_tensor(&identity_tensor(), 2.0))).unwrap();
        assert_eq!(k2, k1.scaled(2.0));
    }

    #[test]
    fn mass_reproduces_area_and_affine_norm() {
        let space = unit_square(5);
        let m = assemble_volume_mass(&space);
        let ones = vec![1.0; space.len()];
        assert!((m.quad_form(&ones) - 1.0).abs() < 1e-14);
        let x1: Vec<f64> = space
            .dof_node
            .iter()
            .map(|&n| space.grid.node_position(n as usize)[0])
            .collect();
        assert!((l2_squared(&space, &x1).unwrap() - 1.0 / 3.0).abs() < 1e-14);
        assert!((m.quad_form(&x1) - 1.0 / 3.0).abs() < 1e-14);
        assert!((h1_semi_squared(&space, &x1).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn flux_load_matches_stiffness_of_affine_field() {
        // ∫ ∇x·∇φ = (K x)_φ for the affine field x
        let space = unit_square(4);
        let k = assemble_diffusion(&space, |_, _| Ok(identity_tensor())).unwrap();
        let x1: Vec<f64> = space
            .dof_node
            .iter()
            .map(|&n| space.grid.node_position(n as usize)[0])
            .collect();
        let kx = k.mul_vec(&x1);
        let f = assemble_flux_load(&space, |_, _| [1.0, 0.0, 0.0]);
        for (a, b) in kx.iter().zip(&f) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn spd_check_flags_indefinite() {
        let mut t = identity_tensor();
        assert!(spd_violation(&t, 3).is_none());
        t[1][1] = -1.0;
        assert!(spd_violation(&t, 2).is_some());
        let mut s = identity_tensor();
        s[0][1] = 0.5;
        assert!(spd_violation(&s, 2).is_some());
    }
}
