//! Axis-aligned interface faces on a bounded structured grid and the Q1
//! trace space living on them.

use super::mesh::{Grid, GAUSS2, GAUSS3, NO_DOF};
use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// A grid face normal to `axis` whose lowest-corner node is `origin`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Face {
    pub axis: u8,
    pub origin: u32,
    /// Orientation of the membrane normal (from phase i into phase e):
    /// `+1` along `axis` or `-1`.
    pub sign: i8,
}

/// Q1 trace space on a list of faces.
#[derive(Clone, Debug)]
pub struct SurfaceSpace {
    pub grid: Grid,
    pub faces: Vec<Face>,
    pub node_dof: Vec<u32>,
    pub dof_node: Vec<u32>,
}

fn tangential_axes(dim: usize, axis: usize) -> [usize; 2] {
    let mut t = [0; 2];
    let mut k = 0;
    for a in 0..dim {
        if a != axis {
            t[k] = a;
            k += 1;
        }
    }
    t
}

impl SurfaceSpace {
    pub fn new(grid: Grid, faces: Vec<Face>) -> Self {
        assert!(!grid.periodic, "surface spaces live on bounded grids");
        let mut node_dof = vec![NO_DOF; grid.num_nodes()];
        let mut touched = vec![false; grid.num_nodes()];
        let mut space = SurfaceSpace {
            grid,
            faces,
            node_dof: Vec::new(),
            dof_node: Vec::new(),
        };
        for f in &space.faces {
            for n in space.face_nodes(f).iter().take(space.nodes_per_face()) {
                touched[*n as usize] = true;
            }
        }
        let mut dof_node = Vec::new();
        for (node, t) in touched.iter().enumerate() {
            if *t {
                node_dof[node] = dof_node.len() as u32;
                dof_node.push(node as u32);
            }
        }
        space.node_dof = node_dof;
        space.dof_node = dof_node;
        space
    }

    pub fn len(&self) -> usize {
        self.dof_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dof_node.is_empty()
    }

    pub fn nodes_per_face(&self) -> usize {
        1 << (self.grid.dim - 1)
    }

    /// Area (3D) or length (2D) of one face.
    pub fn face_measure(&self) -> f64 {
        self.grid.h.powi(self.grid.dim as i32 - 1)
    }

    pub fn measure(&self) -> f64 {
        self.faces.len() as f64 * self.face_measure()
    }

    /// Nodes of a face; bit `k` of the local index is the offset along the
    /// `k`-th tangential axis.
    pub fn face_nodes(&self, f: &Face) -> [u32; 4] {
        let dim = self.grid.dim;
        let t = tangential_axes(dim, f.axis as usize);
        let c = self.grid.node_coords(f.origin as usize);
        let mut out = [NO_DOF; 4];
        for (local, slot) in out.iter_mut().enumerate().take(1 << (dim - 1)) {
            let mut cc = c;
            for (k, &ax) in t.iter().enumerate().take(dim - 1) {
                cc[ax] += (local >> k) & 1;
            }
            *slot = self.grid.node_index(cc) as u32;
        }
        out
    }

    pub fn face_dofs(&self, f: &Face) -> [u32; 4] {
        let mut nodes = self.face_nodes(f);
        for n in nodes.iter_mut().take(self.nodes_per_face()) {
            *n = self.node_dof[*n as usize];
        }
        nodes
    }

    fn check_len(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::DimensionMismatch {
                context: "field on surface DOF space",
                expected: self.len(),
                got: values.len(),
            });
        }
        Ok(())
    }

    /// Consistent surface mass matrix; `lumped` replaces it by row sums.
    pub fn mass_matrix(&self, lumped: bool) -> Result<CsrMatrix> {
        if self.faces.is_empty() {
            return Err(Error::Degenerate("membrane has no faces".into()));
        }
        let m1 = [[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]];
        let npf = self.nodes_per_face();
        let tdim = self.grid.dim - 1;
        let area = self.face_measure();
        let mut trip = Vec::with_capacity(self.faces.len() * npf * npf);
        for f in &self.faces {
            let dofs = self.face_dofs(f);
            for a in 0..npf {
                for b in 0..npf {
                    let mut v = area;
                    for k in 0..tdim {
                        v *= m1[(a >> k) & 1][(b >> k) & 1];
                    }
                    trip.push((dofs[a], dofs[b], v));
                }
            }
        }
        let m = CsrMatrix::from_triplets(self.len(), self.len(), &trip);
        Ok(if lumped { m.lumped() } else { m })
    }

    /// `∫_Γ |u|^p` with 3 Gauss points per tangential axis, which is exact
    /// for even `p ≤ 4` on Q1 traces.
    pub fn lp_power(&self, values: &[f64], p: i32) -> Result<f64> {
        self.check_len(values)?;
        self.integrate(values, |u| u.abs().powi(p))
    }

    /// `∫_Γ f(u_h)` with 3-point Gauss per tangential axis.
    pub fn integrate<F: Fn(f64) -> f64>(&self, values: &[f64], f: F) -> Result<f64> {
        self.check_len(values)?;
        let tdim = self.grid.dim - 1;
        let npf = self.nodes_per_face();
        let q = GAUSS3.len();
        let nq = q.pow(tdim as u32);
        let area = self.face_measure();
        let mut total = 0.0;
        for face in &self.faces {
            let dofs = self.face_dofs(face);
            for iq in 0..nq {
                let mut xi = [0.0; 2];
                let mut w = 1.0;
                let mut rest = iq;
                for slot in xi.iter_mut().take(tdim) {
                    let (x, wx) = GAUSS3[rest % q];
                    rest /= q;
                    *slot = x;
                    w *= wx;
                }
                let mut u = 0.0;
                for a in 0..npf {
                    let mut phi = 1.0;
                    for (k, x) in xi.iter().enumerate().take(tdim) {
                        phi *= if (a >> k) & 1 == 1 { *x } else { 1.0 - x };
                    }
                    u += phi * values[dofs[a] as usize];
                }
                total += w * area * f(u);
            }
        }
        Ok(total)
    }

    /// Midpoint value of a field on each face.
    pub fn face_midpoints(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check_len(values)?;
        let npf = self.nodes_per_face();
        Ok(self
            .faces
            .iter()
            .map(|f| {
                let d = self.face_dofs(f);
                d.iter().take(npf).map(|&k| values[k as usize]).sum::<f64>() / npf as f64
            })
            .collect())
    }

    /// Two-point Gauss points of a face in physical coordinates.
    pub fn face_gauss_points(&self, f: &Face) -> Vec<([f64; 3], f64)> {
        let dim = self.grid.dim;
        let t = tangential_axes(dim, f.axis as usize);
        let o = self.grid.node_position(f.origin as usize);
        let h = self.grid.h;
        let tdim = dim - 1;
        let nq = 2usize.pow(tdim as u32);
        (0..nq)
            .map(|iq| {
                let mut p = o;
                let mut w = self.face_measure();
                let mut rest = iq;
                for &ax in t.iter().take(tdim) {
                    let (x, wx) = GAUSS2[rest % 2];
                    rest /= 2;
                    p[ax] += h * x;
                    w *= wx;
                }
                (p, w)
            })
            .collect()
    }
}
