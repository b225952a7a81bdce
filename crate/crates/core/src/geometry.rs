//! Voxel unit cells, their ε-periodic tiling of the unit cube, and phase
//! connectivity.
//!
//! The reference cell `Y = [0,1]^d` is split into `resolution^d` voxels, each
//! labelled intracellular (`i`) or extracellular (`e`). The membrane `Γ` is the
//! set of voxel faces separating the two labels. Membrane faces are required to
//! stay off the cell boundary so that the tiled membrane `Γ^ε` is exactly the
//! union of the scaled copies `ε(k + Γ)`.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discretize::mesh::{DofSpace, Grid, Point, NO_DOF};
use crate::discretize::surface::{Face, SurfaceSpace};
use crate::error::{Error, Result};

/// Above this many unknowns `tile_domain` refuses to build.
pub const MAX_DOFS: usize = 40_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "i")]
    Intra,
    #[serde(rename = "e")]
    Extra,
}

impl Phase {
    pub const BOTH: [Phase; 2] = [Phase::Intra, Phase::Extra];

    pub fn index(self) -> usize {
        match self {
            Phase::Intra => 0,
            Phase::Extra => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Intra => "i",
            Phase::Extra => "e",
        }
    }
}

/// Built-in cell shapes. Axes are 0-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CellKind {
    /// Intracellular slab of the given thickness, centred in the cell,
    /// normal to `axis`.
    Laminate { thickness: f64, axis: usize },
    /// Centred box. One half-width applies to all axes; otherwise one per axis.
    Inclusion { half_widths: Vec<f64> },
    /// Centred box plus square rods of half-width `bridge_half_width` along
    /// every axis, joining the box to its periodic neighbours.
    BridgedInclusion {
        half_widths: Vec<f64>,
        bridge_half_width: f64,
    },
    /// Homogeneous cell: intracellular everywhere, no membrane.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellGeometrySpec {
    #[serde(flatten)]
    pub kind: CellKind,
    /// Voxels per axis; a power of two, at least 4.
    pub resolution: usize,
    pub dimension: usize,
}

impl CellGeometrySpec {
    pub fn laminate(thickness: f64, axis: usize, resolution: usize, dimension: usize) -> Self {
        CellGeometrySpec {
            kind: CellKind::Laminate { thickness, axis },
            resolution,
            dimension,
        }
    }

    pub fn inclusion(half_width: f64, resolution: usize, dimension: usize) -> Self {
        CellGeometrySpec {
            kind: CellKind::Inclusion {
                half_widths: vec![half_width],
            },
            resolution,
            dimension,
        }
    }

    pub fn bridged(half_width: f64, bridge: f64, resolution: usize, dimension: usize) -> Self {
        CellGeometrySpec {
            kind: CellKind::BridgedInclusion {
                half_widths: vec![half_width],
                bridge_half_width: bridge,
            },
            resolution,
            dimension,
        }
    }

    pub fn full(resolution: usize, dimension: usize) -> Self {
        CellGeometrySpec {
            kind: CellKind::Full,
            resolution,
            dimension,
        }
    }
}

/// A membrane face of the unit cell: it separates voxel `lower` from its
/// neighbour in the `+axis` direction. `sign` orients the normal from the
/// intracellular voxel into the extracellular one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellFace {
    pub axis: usize,
    pub lower: usize,
    pub sign: i8,
}

#[derive(Clone, Debug)]
pub struct UnitCell {
    pub spec: CellGeometrySpec,
    pub dim: usize,
    pub resolution: usize,
    labels: Vec<Phase>,
    pub faces: Vec<CellFace>,
    volumes: [f64; 2],
    pub area: f64,
}

fn voxel_count(n: usize, d: usize) -> usize {
    n.pow(d as u32)
}

fn voxel_coords(mut idx: usize, n: usize, d: usize) -> [usize; 3] {
    let mut c = [0; 3];
    for slot in c.iter_mut().take(d) {
        *slot = idx % n;
        idx /= n;
    }
    c
}

fn voxel_index(c: [usize; 3], n: usize, d: usize) -> usize {
    (0..d).rev().fold(0, |acc, a| acc * n + c[a])
}

/// Converts a length in cell units to a voxel count, requiring alignment.
fn aligned(value: f64, n: usize, parameter: &str) -> Result<usize> {
    let v = value * n as f64;
    let r = v.round();
    if !(value.is_finite() && (v - r).abs() <= 1e-9 * n as f64) {
        return Err(Error::Alignment {
            parameter: parameter.to_string(),
            detail: format!("{value} × {n} voxels = {v} is not an integer"),
        });
    }
    Ok(r as usize)
}

fn per_axis(values: &[f64], dim: usize, parameter: &str) -> Result<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; dim]),
        l if l == dim => Ok(values.to_vec()),
        l => Err(Error::Geometry(format!(
            "{parameter}: expected 1 or {dim} values, got {l}"
        ))),
    }
}

/// Labels voxels and computes the membrane and the phase measures by exact
/// voxel counting.
pub fn build_unit_cell(spec: &CellGeometrySpec) -> Result<UnitCell> {
    let d = spec.dimension;
    let n = spec.resolution;
    if d != 2 && d != 3 {
        return Err(Error::Geometry(format!(
            "dimension must be 2 or 3, got {d}"
        )));
    }
    if n < 4 || !n.is_power_of_two() {
        return Err(Error::Geometry(format!(
            "resolution must be a power of two >= 4, got {n}"
        )));
    }
    let half = n / 2;
    let in_band = |c: usize, w: usize| c + w >= half && c < half + w;

    let label_fn: Box<dyn Fn([usize; 3]) -> Phase> = match &spec.kind {
        CellKind::Laminate { thickness, axis } => {
            if *axis >= d {
                return Err(Error::Geometry(format!(
                    "laminate axis {axis} >= dimension {d}"
                )));
            }
            let m = aligned(*thickness, n, "geometry.thickness")?;
            if m == 0 || m + 2 > n {
                return Err(Error::Geometry(format!(
                    "geometry.thickness: {thickness} leaves no extracellular layer on both sides \
                     at resolution {n} (need 1/{n} <= a <= 1 - 2/{n})"
                )));
            }
            let lo = (n - m) / 2;
            let axis = *axis;
            Box::new(move |c| {
                if c[axis] >= lo && c[axis] < lo + m {
                    Phase::Intra
                } else {
                    Phase::Extra
                }
            })
        }
        CellKind::Inclusion { half_widths } | CellKind::BridgedInclusion { half_widths, .. } => {
            let hw = per_axis(half_widths, d, "geometry.half_widths")?;
            let mut w = [0usize; 3];
            for a in 0..d {
                w[a] = aligned(hw[a], n, &format!("geometry.half_widths[{a}]"))?;
                if w[a] == 0 || w[a] >= half {
                    return Err(Error::Geometry(format!(
                        "geometry.half_widths[{a}] = {} must lie in (0, 1/2) with a margin of one voxel",
                        hw[a]
                    )));
                }
            }
            let bridge = match &spec.kind {
                CellKind::BridgedInclusion {
                    bridge_half_width, ..
                } => {
                    let b = aligned(*bridge_half_width, n, "geometry.bridge_half_width")?;
                    if b == 0 || (0..d).any(|a| b >= w[a]) {
                        return Err(Error::Geometry(format!(
                            "geometry.bridge_half_width = {bridge_half_width} must be positive \
                             and smaller than every half-width"
                        )));
                    }
                    Some(b)
                }
                _ => None,
            };
            Box::new(move |c| {
                let in_box = (0..d).all(|a| in_band(c[a], w[a]));
                let in_bridge = bridge.is_some_and(|b| {
                    (0..d).any(|along| (0..d).filter(|&o| o != along).all(|o| in_band(c[o], b)))
                });
                if in_box || in_bridge {
                    Phase::Intra
                } else {
                    Phase::Extra
                }
            })
        }
        CellKind::Full => Box::new(|_| Phase::Intra),
    };

    let total = voxel_count(n, d);
    let labels: Vec<Phase> = (0..total)
        .map(|v| label_fn(voxel_coords(v, n, d)))
        .collect();

    let mut faces = Vec::new();
    for v in 0..total {
        let c = voxel_coords(v, n, d);
        for axis in 0..d {
            let mut nb = c;
            nb[axis] = (c[axis] + 1) % n;
            let w = voxel_index(nb, n, d);
            if labels[v] == labels[w] {
                continue;
            }
            if c[axis] + 1 == n {
                return Err(Error::Geometry(format!(
                    "membrane meets the cell boundary normal to axis {axis}"
                )));
            }
            let sign = if labels[v] == Phase::Intra { 1 } else { -1 };
            faces.push(CellFace {
                axis,
                lower: v,
                sign,
            });
        }
    }

    let n_i = labels.iter().filter(|p| **p == Phase::Intra).count();
    let vol_i = n_i as f64 / total as f64;
    let vol_e = (total - n_i) as f64 / total as f64;
    let area = faces.len() as f64 * (1.0 / n as f64).powi(d as i32 - 1);
    Ok(UnitCell {
        spec: spec.clone(),
        dim: d,
        resolution: n,
        labels,
        faces,
        volumes: [vol_i, vol_e],
        area,
    })
}

impl UnitCell {
    pub fn label(&self, c: [usize; 3]) -> Phase {
        self.labels[voxel_index(c, self.resolution, self.dim)]
    }

    pub fn labels(&self) -> &[Phase] {
        &self.labels
    }

    /// `|Y_j|`.
    pub fn volume(&self, phase: Phase) -> f64 {
        self.volumes[phase.index()]
    }

    pub fn num_voxels(&self) -> usize {
        self.labels.len()
    }

    pub fn voxel_coords(&self, v: usize) -> [usize; 3] {
        voxel_coords(v, self.resolution, self.dim)
    }

    /// Q1 space on the periodic node grid of phase `j` (for cell problems).
    pub fn periodic_space(&self, phase: Phase) -> DofSpace {
        let grid = Grid::new(
            self.dim,
            self.resolution,
            true,
            1.0 / self.resolution as f64,
        );
        let mask = self.labels.iter().map(|p| *p == phase).collect();
        DofSpace::from_mask(grid, mask)
    }

    /// Stable digest of the labels, used for provenance.
    pub fn geometry_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update([self.dim as u8]);
        hasher.update((self.resolution as u64).to_le_bytes());
        hasher.update(
            self.labels
                .iter()
                .map(|p| p.index() as u8)
                .collect::<Vec<_>>(),
        );
        hex::encode(hasher.finalize())
    }

    /// Writes labelled voxels as a legacy ASCII VTK structured-points file.
    pub fn write_vtk(&self, path: &Path) -> Result<()> {
        let n = self.resolution;
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut body = || -> std::io::Result<()> {
            writeln!(w, "# vtk DataFile Version 3.0")?;
            writeln!(w, "unit cell phase labels (1 = intracellular)")?;
            writeln!(w, "ASCII")?;
            writeln!(w, "DATASET STRUCTURED_POINTS")?;
            let nz = if self.dim == 3 { n + 1 } else { 1 };
            writeln!(w, "DIMENSIONS {} {} {}", n + 1, n + 1, nz)?;
            writeln!(w, "ORIGIN 0 0 0")?;
            let h = 1.0 / n as f64;
            writeln!(w, "SPACING {h} {h} {h}")?;
            writeln!(w, "CELL_DATA {}", self.labels.len())?;
            writeln!(w, "SCALARS phase int 1")?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for p in &self.labels {
                writeln!(w, "{}", if *p == Phase::Intra { 1 } else { 0 })?;
            }
            w.flush()
        };
        body().map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentInfo {
    pub voxels: usize,
    /// Whether the component wraps around the periodic cell along each axis.
    pub spans: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityReport {
    pub phase: Phase,
    pub components: Vec<ComponentInfo>,
    /// Some component spans every axis.
    pub spans_all_axes: bool,
}

impl ConnectivityReport {
    pub fn count(&self) -> usize {
        self.components.len()
    }

    /// Axes spanned by at least one component.
    pub fn spanned_axes(&self) -> Vec<usize> {
        let d = self.components.first().map_or(0, |c| c.spans.len());
        (0..d)
            .filter(|&a| self.components.iter().any(|c| c.spans[a]))
            .collect()
    }
}

/// Components of a phase under face adjacency with periodic identification.
///
/// Each voxel is reached with an unwrapped integer position; reaching a voxel
/// again at a position shifted by a lattice vector means the component winds
/// around the torus along the axes where the shift is nonzero.
pub fn phase_connectivity(cell: &UnitCell, phase: Phase) -> ConnectivityReport {
    let n = cell.resolution as i64;
    let d = cell.dim;
    let mut lift: Vec<Option<[i64; 3]>> = vec![None; cell.num_voxels()];
    let mut components = Vec::new();
    for start in 0..cell.num_voxels() {
        if cell.labels[start] != phase || lift[start].is_some() {
            continue;
        }
        let c0 = cell.voxel_coords(start);
        lift[start] = Some([c0[0] as i64, c0[1] as i64, c0[2] as i64]);
        let mut queue = VecDeque::from([start]);
        let mut spans = vec![false; d];
        let mut size = 0;
        while let Some(v) = queue.pop_front() {
            size += 1;
            let pv = lift[v].unwrap();
            for axis in 0..d {
                for step in [-1i64, 1] {
                    let mut q = pv;
                    q[axis] += step;
                    let mut wrapped = [0usize; 3];
                    for a in 0..d {
                        wrapped[a] = q[a].rem_euclid(n) as usize;
                    }
                    let w = voxel_index(wrapped, cell.resolution, d);
                    if cell.labels[w] != phase {
                        continue;
                    }
                    match lift[w] {
                        None => {
                            lift[w] = Some(q);
                            queue.push_back(w);
                        }
                        Some(existing) => {
                            for a in 0..d {
                                if existing[a] != q[a] {
                                    spans[a] = true;
                                }
                            }
                        }
                    }
                }
            }
        }
        components.push(ComponentInfo {
            voxels: size,
            spans,
        });
    }
    let spans_all_axes = components.iter().any(|c| c.spans.iter().all(|s| *s));
    ConnectivityReport {
        phase,
        components,
        spans_all_axes,
    }
}

/// The ε-tiled domain `Ω = (0,1)^d` with `ε = 1/N`.
#[derive(Clone, Debug)]
pub struct TiledDomain {
    pub cell: UnitCell,
    /// Number of cells per axis, `N = 1/ε`.
    pub cells_per_axis: usize,
    pub eps: f64,
    pub grid: Grid,
    /// Q1 spaces on `Ω_i^ε` and `Ω_e^ε`.
    pub phases: [DofSpace; 2],
    pub membrane: SurfaceSpace,
    /// For each membrane DOF, the corresponding DOF of each phase.
    pub membrane_to_phase: [Vec<u32>; 2],
}

/// Tiles `Ω` with `N^d` copies of the unit cell scaled by `ε = 1/N`.
pub fn tile_domain(cell: &UnitCell, cells_per_axis: usize) -> Result<TiledDomain> {
    if cells_per_axis == 0 {
        return Err(Error::Invalid("cells per axis must be >= 1".into()));
    }
    let d = cell.dim;
    let n = cell.resolution;
    let m = cells_per_axis * n;
    let estimate = 2 * (m + 1).pow(d as u32);
    if estimate > MAX_DOFS {
        return Err(Error::Resource(format!(
            "tiling with N = {cells_per_axis} needs about {estimate} unknowns (limit {MAX_DOFS})"
        )));
    }
    let grid = Grid::new(d, m, false, 1.0 / m as f64);
    let mut masks = [vec![false; grid.num_cells()], vec![false; grid.num_cells()]];
    for v in 0..grid.num_cells() {
        let c = grid.cell_coords(v);
        let local = [c[0] % n, c[1] % n, c[2] % n];
        masks[cell.label(local).index()][v] = true;
    }
    let [mask_i, mask_e] = masks;
    let phases = [
        DofSpace::from_mask(grid.clone(), mask_i),
        DofSpace::from_mask(grid.clone(), mask_e),
    ];

    let mut faces = Vec::with_capacity(cells_per_axis.pow(d as u32) * cell.faces.len());
    let cells_grid = Grid::new(d, cells_per_axis, false, 1.0);
    for k in 0..cells_grid.num_cells() {
        let kc = cells_grid.cell_coords(k);
        for f in &cell.faces {
            let lc = cell.voxel_coords(f.lower);
            let mut node = [0usize; 3];
            for a in 0..d {
                node[a] = kc[a] * n + lc[a];
            }
            node[f.axis] += 1;
            faces.push(Face {
                axis: f.axis as u8,
                origin: grid.node_index(node) as u32,
                sign: f.sign,
            });
        }
    }
    let membrane = SurfaceSpace::new(grid.clone(), faces);
    let mut membrane_to_phase = [Vec::new(), Vec::new()];
    for (j, map) in membrane_to_phase.iter_mut().enumerate() {
        *map = membrane
            .dof_node
            .iter()
            .map(|&node| phases[j].node_dof[node as usize])
            .collect();
        debug_assert!(map.iter().all(|&x| x != NO_DOF));
    }
    Ok(TiledDomain {
        cell: cell.clone(),
        cells_per_axis,
        eps: 1.0 / cells_per_axis as f64,
        grid,
        phases,
        membrane,
        membrane_to_phase,
    })
}

impl TiledDomain {
    pub fn dim(&self) -> usize {
        self.cell.dim
    }

    pub fn phase(&self, p: Phase) -> &DofSpace {
        &self.phases[p.index()]
    }

    /// `|Γ^ε|`.
    pub fn membrane_area(&self) -> f64 {
        self.membrane.measure()
    }

    /// Fast variable `y = {x/ε}` of a point.
    pub fn fast_variable(&self, x: &Point) -> Point {
        let mut y = [0.0; 3];
        for a in 0..self.dim() {
            let s = x[a] / self.eps;
            y[a] = s - s.floor();
        }
        y
    }

    /// Components of a phase in the (non-periodic) tiled domain under face
    /// adjacency of voxels.
    pub fn phase_components(&self, phase: Phase) -> usize {
        let space = self.phase(phase);
        let g = &self.grid;
        let mut seen = vec![false; g.num_cells()];
        let mut count = 0;
        for start in space.active_cells() {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                let c = g.cell_coords(v);
                for axis in 0..g.dim {
                    for up in [false, true] {
                        let mut nb = c;
                        if up {
                            if c[axis] + 1 >= g.cells {
                                continue;
                            }
                            nb[axis] += 1;
                        } else {
                            if c[axis] == 0 {
                                continue;
                            }
                            nb[axis] -= 1;
                        }
                        let w = g.cell_index(nb);
                        if space.active[w] && !seen[w] {
                            seen[w] = true;
                            queue.push_back(w);
                        }
                    }
                }
            }
        }
        count
    }

    /// Membrane DOF of cell `k` (index in the cell lattice) at the local node
    /// `local` of the unit-cell grid with `resolution + 1` nodes per axis.
    pub fn global_node(&self, cell: usize, local: [usize; 3]) -> usize {
        let cells = Grid::new(self.dim(), self.cells_per_axis, false, self.eps);
        let kc = cells.cell_coords(cell);
        let n = self.cell.resolution;
        let mut c = [0; 3];
        for a in 0..self.dim() {
            c[a] = kc[a] * n + local[a];
        }
        self.grid.node_index(c)
    }

    pub fn num_cells(&self) -> usize {
        self.cells_per_axis.pow(self.dim() as u32)
    }

    /// Node positions of the DOFs of a phase.
    pub fn phase_positions(&self, phase: Phase) -> Vec<Point> {
        self.phase(phase)
            .dof_node
            .iter()
            .map(|&n| self.grid.node_position(n as usize))
            .collect()
    }

    pub fn membrane_positions(&self) -> Vec<Point> {
        self.membrane
            .dof_node
            .iter()
            .map(|&n| self.grid.node_position(n as usize))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laminate_measures() {
        let cell = build_unit_cell(&CellGeometrySpec::laminate(0.5, 0, 8, 2)).unwrap();
        assert_eq!(cell.volume(Phase::Intra), 0.5);
        assert_eq!(cell.volume(Phase::Extra), 0.5);
        assert_eq!(cell.area, 2.0);
        assert!(cell.faces.iter().all(|f| f.axis == 0));
    }

    #[test]
    fn inclusion_measures() {
        let cell = build_unit_cell(&CellGeometrySpec::inclusion(0.25, 8, 2)).unwrap();
        assert_eq!(cell.volume(Phase::Intra), 0.25);
        assert_eq!(cell.area, 2.0);
        let cell3 = build_unit_cell(&CellGeometrySpec::inclusion(0.25, 8, 3)).unwrap();
        assert_eq!(cell3.volume(Phase::Intra), 0.125);
        assert_eq!(cell3.area, 1.5);
    }

    #[test]
    fn normals_point_from_intra_to_extra() {
        let cell = build_unit_cell(&CellGeometrySpec::inclusion(0.25, 8, 2)).unwrap();
        for f in &cell.faces {
            let c = cell.voxel_coords(f.lower);
            let mut up = c;
            up[f.axis] += 1;
            let (from, to) = if f.sign > 0 { (c, up) } else { (up, c) };
            assert_eq!(cell.label(from), Phase::Intra);
            assert_eq!(cell.label(to), Phase::Extra);
        }
    }

    #[test]
    fn misaligned_thickness_names_parameter() {
        let err = build_unit_cell(&CellGeometrySpec::laminate(0.3, 0, 8, 2)).unwrap_err();
        match err {
            Error::Alignment { parameter, .. } => assert_eq!(parameter, "geometry.thickness"),
            other => panic!("unexpected {other:?}"),
        }
        let err = build_unit_cell(&CellGeometrySpec::bridged(0.25, 0.1, 8, 2)).unwrap_err();
        assert!(
            matches!(err, Error::Alignment { parameter, .. } if parameter == "geometry.bridge_half_width")
        );
    }

    #[test]
    fn invalid_parameters() {
        assert!(build_unit_cell(&CellGeometrySpec::laminate(0.5, 0, 6, 2)).is_err());
        assert!(build_unit_cell(&CellGeometrySpec::laminate(0.5, 0, 2, 2)).is_err());
        assert!(build_unit_cell(&CellGeometrySpec::laminate(7.0 / 8.0, 0, 8, 2)).is_err());
        assert!(build_unit_cell(&CellGeometrySpec::bridged(0.25, 0.25, 8, 2)).is_err());
        assert!(build_unit_cell(&CellGeometrySpec::inclusion(0.5, 8, 2)).is_err());
    }

    #[test]
    fn connectivity_examples() {
        let lam = build_unit_cell(&CellGeometrySpec::laminate(0.5, 0, 8, 2)).unwrap();
        let r = phase_connectivity(&lam, Phase::Intra);
        assert_eq!(r.count(), 1);
        assert_eq!(r.spanned_axes(), vec![1]);

        let inc = build_unit_cell(&CellGeometrySpec::inclusion(0.25, 8, 2)).unwrap();
        let ri = phase_connectivity(&inc, Phase::Intra);
        assert_eq!(ri.count(), 1);
        assert!(ri.spanned_axes().is_empty());
        let re = phase_connectivity(&inc, Phase::Extra);
        assert_eq!(re.count(), 1);
        assert!(re.spans_all_axes);

        let br = build_unit_cell(&CellGeometrySpec::bridged(0.25, 0.125, 8, 2)).unwrap();
        let rb = phase_connectivity(&br, Phase::Intra);
        assert_eq!(rb.count(), 1);
        assert!(rb.spans_all_axes);
        assert!(!phase_connectivity(&br, Phase::Extra).spans_all_axes);

        let br3 = build_unit_cell(&CellGeometrySpec::bridged(0.25, 0.125, 8, 3)).unwrap();
        assert!(phase_connectivity(&br3, Phase::Intra).spans_all_axes);
        assert!(phase_connectivity(&br3, Phase::Extra).spans_all_axes);
    }

    #[test]
    fn tiling_identity_and_face_counts() {
        let lam = build_unit_cell(&CellGeometrySpec::laminate(0.5, 0, 8, 2)).unwrap();
        let t1 = tile_domain(&lam, 1).unwrap();
        assert_eq!(t1.eps, 1.0);
        assert_eq!(t1.membrane.faces.len(), lam.faces.len());
        assert_eq!(t1.membrane_area(), lam.area);
        let t4 = tile_domain(&lam, 4).unwrap();
        assert_eq!(t4.membrane_area(), 8.0);
        assert_eq!(t4.eps * t4.membrane_area(), lam.area);
        assert_eq!(t4.membrane.faces.len(), 16 * lam.faces.len());
    }

    #[test]
    fn tiled_inclusions_are_disjoint() {
        let inc = build_unit_cell(&CellGeometrySpec::inclusion(0.25, 8, 2)).unwrap();
        let t = tile_domain(&inc, 2).unwrap();
        assert_eq!(t.phase_components(Phase::Intra), 4);
        assert_eq!(t.phase_components(Phase::Extra), 1);
        // every membrane node carries one DOF per phase
        for j in 0..2 {
            assert_eq!(t.membrane_to_phase[j].len(), t.membrane.len());
            assert!(t.membrane_to_phase[j].iter().all(|&x| x != NO_DOF));
        }
        // the inclusion membrane stays inside each cell
        let per_cell = tile_domain(&inc, 1).unwrap().membrane.len();
        assert_eq!(t.membrane.len(), 4 * per_cell);
    }

    #[test]
    fn full_cell_has_no_membrane() {
        let cell = build_unit_cell(&CellGeometrySpec::full(8, 2)).unwrap();
        assert_eq!(cell.area, 0.0);
        assert_eq!(cell.volume(Phase::Intra), 1.0);
        assert!(cell.faces.is_empty());
    }

    #[test]
    fn vtk_export_lists_every_voxel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cell.vtk");
        let cell = build_unit_cell(&CellGeometrySpec::inclusion(0.25, 4, 2)).unwrap();
        cell.write_vtk(&p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().count(), 10 + 16);
    }
}
