//! Structured voxel grids and Q1 degree-of-freedom maps.
//!
//! Nodes and cells are numbered lexicographically with axis 0 fastest. A grid
//! is either bounded (`cells + 1` nodes per axis) or periodic (`cells` nodes
//! per axis, wraparound identified).

/// Spatial point; the third coordinate is zero in 2D.
pub type Point = [f64; 3];

/// Sentinel for "node carries no DOF in this space".
pub const NO_DOF: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub cells: usize,
    pub periodic: bool,
    /// Cell edge length.
    pub h: f64,
}

impl Grid {
    pub fn new(dim: usize, cells: usize, periodic: bool, h: f64) -> Self {
        assert!(dim == 2 || dim == 3, "dimension must be 2 or 3");
        assert!(cells >= 1);
        Grid {
            dim,
            cells,
            periodic,
            h,
        }
    }

    pub fn nodes_per_axis(&self) -> usize {
        if self.periodic {
            self.cells
        } else {
            self.cells + 1
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes_per_axis().pow(self.dim as u32)
    }

    pub fn num_cells(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    /// Number of local nodes per cell (`2^d`).
    pub fn local_nodes(&self) -> usize {
        1 << self.dim
    }

    pub fn node_index(&self, c: [usize; 3]) -> usize {
        let n = self.nodes_per_axis();
        let mut idx = 0;
        for a in (0..self.dim).rev() {
            idx = idx * n + c[a];
        }
        idx
    }

    pub fn node_coords(&self, mut idx: usize) -> [usize; 3] {
        let n = self.nodes_per_axis();
        let mut c = [0; 3];
        for slot in c.iter_mut().take(self.dim) {
            *slot = idx % n;
            idx /= n;
        }
        c
    }

    pub fn cell_index(&self, c: [usize; 3]) -> usize {
        let mut idx = 0;
        for a in (0..self.dim).rev() {
            idx = idx * self.cells + c[a];
        }
        idx
    }

    pub fn cell_coords(&self, mut idx: usize) -> [usize; 3] {
        let mut c = [0; 3];
        for slot in c.iter_mut().take(self.dim) {
            *slot = idx % self.cells;
            idx /= self.cells;
        }
        c
    }

    /// Global node of local vertex `local` (bit `a` = offset along axis `a`).
    pub fn cell_node(&self, cell: [usize; 3], local: usize) -> usize {
        let n = self.nodes_per_axis();
        let mut c = [0; 3];
        for a in 0..self.dim {
            let v = cell[a] + ((local >> a) & 1);
            c[a] = if self.periodic { v % n } else { v };
        }
        self.node_index(c)
    }

    pub fn node_position(&self, idx: usize) -> Point {
        let c = self.node_coords(idx);
        let mut p = [0.0; 3];
        for a in 0..self.dim {
            p[a] = c[a] as f64 * self.h;
        }
        p
    }

    /// Nodes and Q1 weights of the cell containing `x` (non-periodic grids;
    /// points outside are clamped to the boundary cells).
    pub fn q1_weights(&self, x: &Point) -> Vec<(usize, f64)> {
        let mut cell = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..self.dim {
            let s = (x[a] / self.h).clamp(0.0, self.cells as f64);
            let i = (s.floor() as usize).min(self.cells - 1);
            cell[a] = i;
            t[a] = s - i as f64;
        }
        (0..self.local_nodes())
            .map(|local| {
                let mut w = 1.0;
                for a in 0..self.dim {
                    w *= if (local >> a) & 1 == 1 {
                        t[a]
                    } else {
                        1.0 - t[a]
                    };
                }
                (self.cell_node(cell, local), w)
            })
            .filter(|(_, w)| *w != 0.0)
            .collect()
    }

    /// Cells incident to a node, paired with the node's local index in each.
    pub fn node_cells(&self, node: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let c = self.node_coords(node);
        (0..self.local_nodes()).filter_map(move |local| {
            let mut cc = [0; 3];
            for a in 0..self.dim {
                let bit = (local >> a) & 1;
                if c[a] >= bit {
                    cc[a] = c[a] - bit;
                } else if self.periodic {
                    cc[a] = self.cells - 1;
                } else {
                    return None;
                }
                if cc[a] >= self.cells {
                    return None;
                }
            }
            Some((self.cell_index(cc), local))
        })
    }
}

/// Q1 space on the union of the active cells of a grid.
#[derive(Clone, Debug)]
pub struct DofSpace {
    pub grid: Grid,
    pub active: Vec<bool>,
    pub node_dof: Vec<u32>,
    pub dof_node: Vec<u32>,
}

impl DofSpace {
    /// DOFs are the nodes touched by at least one active cell, in node order.
    pub fn from_mask(grid: Grid, active: Vec<bool>) -> Self {
        assert_eq!(active.len(), grid.num_cells());
        let mut touched = vec![false; grid.num_nodes()];
        for (cell, _) in active.iter().enumerate().filter(|(_, a)| **a) {
            let cc = grid.cell_coords(cell);
            for local in 0..grid.local_nodes() {
                touched[grid.cell_node(cc, local)] = true;
            }
        }
        let mut node_dof = vec![NO_DOF; touched.len()];
        let mut dof_node = Vec::new();
        for (node, t) in touched.iter().enumerate() {
            if *t {
                node_dof[node] = dof_node.len() as u32;
                dof_node.push(node as u32);
            }
        }
        DofSpace {
            grid,
            active,
            node_dof,
            dof_node,
        }
    }

    pub fn full(grid: Grid) -> Self {
        let n = grid.num_cells();
        Self::from_mask(grid, vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.dof_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dof_node.is_empty()
    }

    pub fn active_cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.active
            .iter()
            .enumerate()
            .filter_map(|(c, a)| a.then_some(c))
    }

    /// DOF indices of the `2^d` vertices of an active cell.
    pub fn cell_dofs(&self, cell: usize) -> [u32; 8] {
        let cc = self.grid.cell_coords(cell);
        let mut out = [NO_DOF; 8];
        for (local, slot) in out.iter_mut().enumerate().take(self.grid.local_nodes()) {
            *slot = self.node_dof[self.grid.cell_node(cc, local)];
        }
        out
    }

    /// Lower corner of a cell.
    pub fn cell_origin(&self, cell: usize) -> Point {
        let cc = self.grid.cell_coords(cell);
        let mut p = [0.0; 3];
        for a in 0..self.grid.dim {
            p[a] = cc[a] as f64 * self.grid.h;
        }
        p
    }

    /// Integral of each basis function over the active cells (lumped mass).
    pub fn basis_integrals(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.len()];
        let share = self.grid.h.powi(self.grid.dim as i32) / self.grid.local_nodes() as f64;
        for cell in self.active_cells() {
            for &d in self.cell_dofs(cell).iter().take(self.grid.local_nodes()) {
                w[d as usize] += share;
            }
        }
        w
    }

    /// Total measure of the active cells.
    pub fn measure(&self) -> f64 {
        self.active.iter().filter(|a| **a).count() as f64 * self.grid.h.powi(self.grid.dim as i32)
    }

    /// Connected components of the DOF graph (DOFs sharing an active cell).
    /// Returns the component label of every DOF and the component count.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let mut parent: Vec<usize> = (0..self.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for cell in self.active_cells() {
            let dofs = self.cell_dofs(cell);
            let first = dofs[0] as usize;
            for &d in dofs.iter().take(self.grid.local_nodes()).skip(1) {
                let (ra, rb) = (find(&mut parent, first), find(&mut parent, d as usize));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut label = vec![usize::MAX; self.len()];
        let mut root_label = vec![usize::MAX; self.len()];
        let mut count = 0;
        for d in 0..self.len() {
            let r = find(&mut parent, d);
            if root_label[r] == usize::MAX {
                root_label[r] = count;
                count += 1;
            }
            label[d] = root_label[r];
        }
        (label, count)
    }
}

/// Two-point Gauss rule on [0, 1].
pub const GAUSS2: [(f64, f64); 2] = [
    (0.211_324_865_405_187_1, 0.5),
    (0.788_675_134_594_812_9, 0.5),
];

/// Three-point Gauss rule on [0, 1].
pub const GAUSS3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_3, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

/// Tensor-product quadrature on the reference cube [0,1]^d.
#[derive(Clone, Debug)]
pub struct TensorRule {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl TensorRule {
    pub fn new(dim: usize, rule: &[(f64, f64)]) -> Self {
        let q = rule.len();
        let total = q.pow(dim as u32);
        let mut points = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        for idx in 0..total {
            let mut p = [0.0; 3];
            let mut w = 1.0;
            let mut rest = idx;
            for slot in p.iter_mut().take(dim) {
                let (x, wx) = rule[rest % q];
                rest /= q;
                *slot = x;
                w *= wx;
            }
            points.push(p);
            weights.push(w);
        }
        TensorRule { points, weights }
    }
}

/// Q1 shape function `local` at reference point `xi`.
pub fn shape(dim: usize, local: usize, xi: &Point) -> f64 {
    (0..dim)
        .map(|a| {
            if (local >> a) & 1 == 1 {
                xi[a]
            } else {
                1.0 - xi[a]
            }
        })
        .product()
}

/// Reference gradient of Q1 shape function `local` at `xi`.
pub fn shape_grad(dim: usize, local: usize, xi: &Point) -> [f64; 3] {
    let mut g = [0.0; 3];
    for (a, slot) in g.iter_mut().enumerate().take(dim) {
        let mut v = if (local >> a) & 1 == 1 { 1.0 } else { -1.0 };
        for b in 0..dim {
            if b != a {
                v *= if (local >> b) & 1 == 1 {
                    xi[b]
                } else {
                    1.0 - xi[b]
                };
            }
        }
        *slot = v;
    }
    g
}

/// Shape values and reference gradients tabulated at the points of a rule.
#[derive(Clone, Debug)]
pub struct ShapeTable {
    pub dim: usize,
    pub rule: TensorRule,
    pub values: Vec<[f64; 8]>,
    pub grads: Vec<[[f64; 3]; 8]>,
}

impl ShapeTable {
    pub fn new(dim: usize, rule: &[(f64, f64)]) -> Self {
        let rule = TensorRule::new(dim, rule);
        let nl = 1 << dim;
        let mut values = Vec::with_capacity(rule.points.len());
        let mut grads = Vec::with_capacity(rule.points.len());
        for xi in &rule.points {
            let mut v = [0.0; 8];
            let mut g = [[0.0; 3]; 8];
            for a in 0..nl {
                v[a] = shape(dim, a, xi);
                g[a] = shape_grad(dim, a, xi);
            }
            values.push(v);
            grads.push(g);
        }
        ShapeTable {
            dim,
            rule,
            values,
            grads,
        }
    }

    pub fn len(&self) -> usize {
        self.rule.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rule.points.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_cells_bounded_corner() {
        let g = Grid::new(2, 3, false, 1.0 / 3.0);
        let cells: Vec<_> = g.node_cells(0).collect();
        assert_eq!(cells, vec![(0, 0)]);
        let interior = g.node_index([1, 1, 0]);
        assert_eq!(g.node_cells(interior).count(), 4);
    }

    #[test]
    fn node_cells_periodic_wrap() {
        let g = Grid::new(3, 4, true, 0.25);
        assert_eq!(g.node_cells(0).count(), 8);
        for (cell, local) in g.node_cells(0) {
            assert_eq!(g.cell_node(g.cell_coords(cell), local), 0);
        }
    }

    #[test]
    fn shape_partition_of_unity() {
        let t = ShapeTable::new(3, &GAUSS3);
        for q in 0..t.len() {
            let s: f64 = t.values[q].iter().sum();
            assert!((s - 1.0).abs() < 1e-15);
            for a in 0..3 {
                let gs: f64 = t.grads[q].iter().map(|g| g[a]).sum();
                assert!(gs.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn components_of_two_blocks() {
        let g = Grid::new(2, 4, false, 0.25);
        let mut mask = vec![false; 16];
        mask[g.cell_index([0, 0, 0])] = true;
        mask[g.cell_index([3, 3, 0])] = true;
        let space = DofSpace::from_mask(g, mask);
        assert_eq!(space.len(), 8);
        assert_eq!(space.components().1, 2);
    }
}
