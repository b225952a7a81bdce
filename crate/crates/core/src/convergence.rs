//! The homogenization study: effective tensors, one macro run, micro runs
//! over a ladder of `ε = 1/N`, and the distance between them.
//!
//! Micro and macro share the time step, so every micro step is compared with
//! the macro state at the same time. The macro `v` enters the micro membrane
//! through Q1 interpolation; the unfolded metric uses exact per-cell moments
//! of the macro field instead.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell_problem::{effective_tensor, tabulate_tensor, Conductivity};
use crate::discretize::{CsrMatrix, Tensor};
use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::geometry::{build_unit_cell, tile_domain, CellGeometrySpec, Phase, UnitCell};
use crate::macro_sim::{run_macro, MacroConfig, MacroSolver, MacroState, TensorField};
use crate::membrane::MembraneModel;
use crate::micro_sim::{micro_monitors, run_micro_with, EstimateReport, MicroConfig};
use crate::unfolding::{cell_moments, Unfolder};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub cell: CellGeometrySpec,
    pub sigma: [Conductivity; 2],
    pub sources: [ScalarField; 2],
    pub v0: ScalarField,
    pub w0: ScalarField,
    pub membrane: MembraneModel,
    pub dt: f64,
    pub final_time: f64,
    pub tolerance: f64,
    /// `N` for each `ε = 1/N`, strictly increasing.
    pub cells_per_axis: Vec<usize>,
    /// Defaults to `N_max · n`.
    pub macro_resolution: Option<usize>,
    /// Shift of the first translation monitor, in steps. Defaults to
    /// `steps / 16`.
    pub translation_base: Option<usize>,
    pub translation_shifts: usize,
    pub parallel: bool,
    /// Stored in the report for provenance.
    pub config_hash: String,
}

impl StudyConfig {
    pub fn new(
        cell: CellGeometrySpec,
        membrane: MembraneModel,
        cells_per_axis: Vec<usize>,
        dt: f64,
        final_time: f64,
    ) -> Self {
        StudyConfig {
            cell,
            sigma: [Conductivity::identity(), Conductivity::identity()],
            sources: [ScalarField::default(), ScalarField::default()],
            v0: ScalarField::default(),
            w0: ScalarField::default(),
            membrane,
            dt,
            final_time,
            tolerance: crate::micro_sim::DEFAULT_TOLERANCE,
            cells_per_axis,
            macro_resolution: None,
            translation_base: None,
            translation_shifts: 3,
            parallel: true,
            config_hash: String::new(),
        }
    }

    pub fn steps(&self) -> usize {
        (self.final_time / self.dt + 1e-9).floor() as usize
    }

    /// Validates the study against its cell; returns the macro resolution.
    pub fn check(&self, cell: &UnitCell) -> Result<usize> {
        if self.cells_per_axis.is_empty() {
            return Err(Error::Invalid("study needs at least one eps value".into()));
        }
        if self.cells_per_axis.contains(&0) {
            return Err(Error::Invalid("eps must be 1/N with N >= 1".into()));
        }
        if self.cells_per_axis.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid(
                "eps values must be strictly decreasing".into(),
            ));
        }
        if !(cell.area > 0.0) {
            return Err(Error::Degenerate(
                "the study needs a membrane (|Γ| = 0)".into(),
            ));
        }
        let n_max = *self.cells_per_axis.last().unwrap();
        let res = self.macro_resolution.unwrap_or(n_max * cell.resolution);
        if let Some(n) = self
            .cells_per_axis
            .iter()
            .find(|&&n| !res.is_multiple_of(n))
        {
            return Err(Error::Invalid(format!(
                "macro resolution {res} is not a multiple of N = {n}"
            )));
        }
        if res < n_max * cell.resolution {
            log::warn!(
                "macro resolution {res} is coarser than the finest micro grid ({})",
                n_max * cell.resolution
            );
        }
        Ok(res)
    }
}

/// One row of the study per `ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsResult {
    pub eps: f64,
    pub cells_per_axis: usize,
    /// `ε^{1/2} ‖v^ε − v‖_{L²((0,T)×Γ^ε)}`.
    pub e_eps: f64,
    /// `ε^{1/2} ‖v^ε(T) − v(T)‖_{L²(Γ^ε)}`.
    pub e_final: f64,
    /// `‖T_ε^b(v^ε) − v‖_{L²((0,T)×Ω×Γ)}`.
    pub unfolded_l2: f64,
    pub unfolded_final: f64,
    /// Largest relative gap between the direct and the re-indexed
    /// computation of the same membrane norm.
    pub consistency_defect: f64,
    /// `‖M_ε^j(u_j^ε) − u_j‖_{L²((0,T)×Ω)}`.
    pub avg_err: [f64; 2],
    /// `∫₀^T ∫ σ_j ∇u_j^ε · ∇u_j^ε`.
    pub energy_micro: [f64; 2],
    /// `∫₀^T ∫ M_j ∇u_j · ∇u_j`.
    pub energy_macro: [f64; 2],
    /// `|micro − macro|` energy per phase.
    pub energy_gap: [f64; 2],
    pub order_e: Option<f64>,
    pub order_unfolded: Option<f64>,
    pub estimates: EstimateReport,
    pub micro_dofs: usize,
    pub max_iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub version: String,
    pub config_hash: String,
    pub geometry_hash: String,
    pub dim: usize,
    pub macro_resolution: usize,
    pub steps: usize,
    pub dt: f64,
    pub tensors: [Vec<Vec<f64>>; 2],
    pub rows: Vec<EpsResult>,
}

fn strictly_decreasing(v: impl Iterator<Item = f64>) -> bool {
    let v: Vec<f64> = v.collect();
    v.windows(2).all(|w| w[1] < w[0])
}

impl ConvergenceReport {
    pub fn e_decreasing(&self) -> bool {
        strictly_decreasing(self.rows.iter().map(|r| r.e_eps))
    }

    pub fn unfolded_decreasing(&self) -> bool {
        strictly_decreasing(self.rows.iter().map(|r| r.unfolded_l2))
    }

    /// Whether the energy gap shrinks in both phases.
    pub fn energy_gap_decreasing(&self) -> bool {
        (0..2).all(|j| strictly_decreasing(self.rows.iter().map(|r| r.energy_gap[j])))
    }
}

/// Trapezoidal rule on a uniform time grid.
fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => dt * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1])),
    }
}

fn observed_order(prev: (f64, f64), cur: (f64, f64)) -> Option<f64> {
    let r = (prev.1 / cur.1).ln() / (prev.0 / cur.0).ln();
    r.is_finite().then_some(r)
}

/// Macro tensors: uniform when `σ_j` does not depend on `x`, otherwise one
/// cell problem per macro element centre.
pub fn macro_tensors(
    cell: &UnitCell,
    sigma: &[Conductivity; 2],
    resolution: usize,
) -> Result<[TensorField; 2]> {
    let mut out = Vec::with_capacity(2);
    for p in Phase::BOTH {
        let s = &sigma[p.index()];
        if s.depends_on_x() {
            let grid =
                crate::discretize::Grid::new(cell.dim, resolution, false, 1.0 / resolution as f64);
            let centres: Vec<_> = (0..grid.num_cells())
                .map(|e| {
                    let c = grid.cell_coords(e);
                    let mut x = [0.0; 3];
                    for a in 0..cell.dim {
                        x[a] = (c[a] as f64 + 0.5) * grid.h;
                    }
                    x
                })
                .collect();
            out.push(TensorField::PerElement(tabulate_tensor(
                cell, p, s, &centres,
            )?));
        } else {
            out.push(TensorField::Uniform(effective_tensor(cell, p, s)?.matrix));
        }
    }
    Ok(out
        .try_into()
        .unwrap_or_else(|_| unreachable!("two phases")))
}

fn tensor_rows(t: &TensorField, dim: usize) -> Vec<Vec<f64>> {
    match t {
        TensorField::Uniform(m) => rows_of(m, dim),
        // the mean tensor is reported for x-dependent conductivities
        TensorField::PerElement(v) => {
            let mut mean = [[0.0; 3]; 3];
            for m in v {
                for a in 0..3 {
                    for b in 0..3 {
                        mean[a][b] += m[a][b] / v.len() as f64;
                    }
                }
            }
            rows_of(&mean, dim)
        }
    }
}

fn rows_of(m: &Tensor, dim: usize) -> Vec<Vec<f64>> {
    (0..dim).map(|a| m[a][..dim].to_vec()).collect()
}

/// Interpolation from macro DOFs to the given points.
fn interpolation(solver: &MacroSolver, points: &[crate::discretize::Point]) -> CsrMatrix {
    let space = &solver.space;
    let rows = points
        .iter()
        .map(|x| {
            space
                .grid
                .q1_weights(x)
                .into_iter()
                .map(|(node, w)| (space.node_dof[node], w))
                .collect()
        })
        .collect();
    CsrMatrix::from_rows(space.len(), rows)
}

struct MacroReference<'a> {
    solver: &'a MacroSolver,
    states: &'a [MacroState],
}

impl MacroReference<'_> {
    fn energy(&self, p: Phase, k: usize) -> f64 {
        let s = &self.states[k];
        let u = if p == Phase::Intra { &s.u_i } else { &s.u_e };
        // M_i of isolated inclusions is zero up to rounding, which can make
        // the quadratic form a tiny negative number
        self.solver.stiffness(p).quad_form(u).max(0.0)
    }
}

fn compare(
    cfg: &StudyConfig,
    cell: &UnitCell,
    n: usize,
    reference: &MacroReference,
) -> Result<EpsResult> {
    let domain = tile_domain(cell, n)?;
    let unfolder = Unfolder::new(&domain)?;
    let interp = interpolation(reference.solver, &domain.membrane_positions());
    let eps = domain.eps;
    let micro_dofs = domain.phase(Phase::Intra).len() + domain.phase(Phase::Extra).len();

    let mut micro = MicroConfig::new(domain.clone(), cfg.membrane.clone(), cfg.dt, cfg.final_time);
    micro.sigma = cfg.sigma.clone();
    micro.sources = cfg.sources.clone();
    micro.v0 = cfg.v0.clone();
    micro.w0 = cfg.w0.clone();
    micro.tolerance = cfg.tolerance;
    micro.snapshot_stride = cfg.steps().max(1);
    micro.record_v_history = true;

    let steps = micro.steps();
    let mut e_sq = Vec::with_capacity(steps + 1);
    let mut unf_sq = Vec::with_capacity(steps + 1);
    let mut avg_sq = [Vec::with_capacity(steps + 1), Vec::with_capacity(steps + 1)];
    let mut energy = [Vec::with_capacity(steps + 1), Vec::with_capacity(steps + 1)];
    let mut defect: f64 = 0.0;
    let mut mass: Option<CsrMatrix> = None;
    let macro_space = &reference.solver.space;

    let traj = run_micro_with(micro, |solver, state| {
        let mac = reference.states.get(state.step).ok_or_else(|| {
            Error::Invalid(format!(
                "macro trajectory has no state for step {}",
                state.step
            ))
        })?;
        let m_gamma = solver.membrane_mass();
        if mass.is_none() {
            mass = Some(m_gamma.clone());
        }
        let v_macro = interp.mul_vec(&mac.v);
        let diff: Vec<f64> = state.v.iter().zip(&v_macro).map(|(a, b)| a - b).collect();
        let direct = eps * m_gamma.quad_form(&diff);
        let unfolded_diff = unfolder.unfold_boundary(&domain, &diff)?;
        let reindexed = unfolder.l2_norm(&unfolded_diff).powi(2);
        defect = defect.max((direct - reindexed).abs() / direct.max(f64::MIN_POSITIVE));
        e_sq.push(direct);

        let tv = unfolder.unfold_boundary(&domain, &state.v)?;
        let moments = cell_moments(macro_space, &mac.v, n)?;
        unf_sq.push(unfolder.distance_to_slow(&tv, &moments)?.powi(2));

        for p in Phase::BOTH {
            let j = p.index();
            let (micro_u, macro_u) = match p {
                Phase::Intra => (&state.u_i, &mac.u_i),
                Phase::Extra => (&state.u_e, &mac.u_e),
            };
            let tu = unfolder.unfold_volume(&domain, p, micro_u)?;
            let averages = unfolder.local_averages(&tu)?;
            let m = cell_moments(macro_space, macro_u, n)?;
            let vol = eps.powi(cell.dim as i32);
            let sq: f64 = averages
                .iter()
                .zip(m.first.iter().zip(&m.second))
                .map(|(a, (f, s))| vol * a * a - 2.0 * a * f + s)
                .sum();
            avg_sq[j].push(sq.max(0.0));
            energy[j].push(solver.stiffness(p).quad_form(micro_u));
        }
        Ok(())
    })
    .map_err(|e| e.context(format!("micro run at eps = 1/{n}")))?;

    let dt = cfg.dt;
    let base = cfg.translation_base.unwrap_or((steps / 16).max(1));
    let estimates = micro_monitors(
        &traj,
        mass.as_ref().expect("observer ran"),
        base,
        cfg.translation_shifts,
    );
    let energy_micro = [trapezoid(&energy[0], dt), trapezoid(&energy[1], dt)];
    let macro_energy = |p: Phase| {
        let vals: Vec<f64> = (0..=steps).map(|k| reference.energy(p, k)).collect();
        trapezoid(&vals, dt)
    };
    let energy_macro = [macro_energy(Phase::Intra), macro_energy(Phase::Extra)];
    let energy_gap = [
        (energy_micro[0] - energy_macro[0]).abs(),
        (energy_micro[1] - energy_macro[1]).abs(),
    ];
    Ok(EpsResult {
        eps,
        cells_per_axis: n,
        e_eps: trapezoid(&e_sq, dt).sqrt(),
        e_final: e_sq.last().copied().unwrap_or(0.0).sqrt(),
        unfolded_l2: trapezoid(&unf_sq, dt).sqrt(),
        unfolded_final: unf_sq.last().copied().unwrap_or(0.0).sqrt(),
        consistency_defect: defect,
        avg_err: [
            trapezoid(&avg_sq[0], dt).sqrt(),
            trapezoid(&avg_sq[1], dt).sqrt(),
        ],
        energy_micro,
        energy_macro,
        energy_gap,
        order_e: None,
        order_unfolded: None,
        estimates,
        micro_dofs,
        max_iterations: traj.log.iter().map(|r| r.iterations).max().unwrap_or(0),
    })
}

/// Runs the study. Micro runs for different `ε` are independent and run
/// concurrently unless `parallel` is off.
pub fn run_study(cfg: &StudyConfig) -> Result<ConvergenceReport> {
    let cell = build_unit_cell(&cfg.cell)?;
    let resolution = cfg.check(&cell)?;
    let tensors =
        macro_tensors(&cell, &cfg.sigma, resolution).map_err(|e| e.context("cell problems"))?;
    let tensor_report = [
        tensor_rows(&tensors[0], cell.dim),
        tensor_rows(&tensors[1], cell.dim),
    ];

    let mut mac = MacroConfig::from_cell(
        &cell,
        tensors,
        resolution,
        cfg.membrane.clone(),
        cfg.dt,
        cfg.final_time,
    );
    mac.sources = cfg.sources.clone();
    mac.v0 = cfg.v0.clone();
    mac.w0 = cfg.w0.clone();
    mac.tolerance = cfg.tolerance;
    let (solver, traj) = run_macro(mac).map_err(|e| e.context("macro run"))?;
    let reference = MacroReference {
        solver: &solver,
        states: &traj.snapshots,
    };

    let mut rows: Vec<EpsResult> = if cfg.parallel {
        cfg.cells_per_axis
            .par_iter()
            .map(|&n| compare(cfg, &cell, n, &reference))
            .collect::<Result<_>>()?
    } else {
        cfg.cells_per_axis
            .iter()
            .map(|&n| compare(cfg, &cell, n, &reference))
            .collect::<Result<_>>()?
    };
    for k in 1..rows.len() {
        let (a, b) = (&rows[k - 1], &rows[k]);
        let order_e = observed_order((a.eps, a.e_eps), (b.eps, b.e_eps));
        let order_u = observed_order((a.eps, a.unfolded_l2), (b.eps, b.unfolded_l2));
        rows[k].order_e = order_e;
        rows[k].order_unfolded = order_u;
    }
    Ok(ConvergenceReport {
        version: VERSION.to_string(),
        config_hash: cfg.config_hash.clone(),
        geometry_hash: cell.geometry_hash(),
        dim: cell.dim,
        macro_resolution: resolution,
        steps: cfg.steps(),
        dt: cfg.dt,
        tensors: tensor_report,
        rows,
    })
}

#[derive(Serialize)]
struct CsvRow {
    eps: f64,
    e_eps: f64,
    #[serde(rename = "unfolded_L2")]
    unfolded_l2: f64,
    avg_err_ui: f64,
    avg_err_ue: f64,
    energy_micro_i: f64,
    energy_micro_e: f64,
    energy_macro_i: f64,
    energy_macro_e: f64,
    order_e: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportPaths {
    pub csv: PathBuf,
    pub json: PathBuf,
}

/// Writes `convergence.csv` and `convergence.json` into `dir`.
pub fn write_report(report: &ConvergenceReport, dir: &Path) -> Result<ReportPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("convergence.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::io(&csv_path, e.into()))?;
    for r in &report.rows {
        w.serialize(CsvRow {
            eps: r.eps,
            e_eps: r.e_eps,
            unfolded_l2: r.unfolded_l2,
            avg_err_ui: r.avg_err[0],
            avg_err_ue: r.avg_err[1],
            energy_micro_i: r.energy_micro[0],
            energy_micro_e: r.energy_micro[1],
            energy_macro_i: r.energy_macro[0],
            energy_macro_e: r.energy_macro[1],
            order_e: r.order_e,
        })
        .map_err(|e| Error::io(&csv_path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    let json_path = dir.join("convergence.json");
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::io(&json_path, e.into()))?;
    std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    Ok(ReportPaths {
        csv: csv_path,
        json: json_path,
    })
}

pub fn read_report(path: &Path) -> Result<ConvergenceReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::io(path, e.into()))
}
