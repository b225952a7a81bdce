//! Time integration of the microscopic bidomain model on an ε-tiled domain.
//!
//! Each step updates the gating variable explicitly, `wⁿ⁺¹ = wⁿ + dt H(vⁿ, wⁿ)`,
//! then solves the coupled elliptic system for `(u_i, u_e)` with diffusion
//! implicit and the ionic current `I(vⁿ, wⁿ⁺¹)` explicit, and finally sets
//! `vⁿ⁺¹ = u_i|_Γ − u_e|_Γ`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cell_problem::Conductivity;
use crate::coupled::CoupledSystem;
use crate::discretize::{
    assemble_diffusion, assemble_load, assemble_volume_mass, identity_tensor, spd_violation,
    CsrMatrix, SolveReport,
};
use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::geometry::{Phase, TiledDomain};
use crate::membrane::MembraneModel;

/// Default relative residual target of the coupled solves.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct MicroConfig {
    pub domain: TiledDomain,
    /// `σ_i`, `σ_e` as functions of `(x, y)`.
    pub sigma: [Conductivity; 2],
    /// `s_i`, `s_e` as functions of `(x, y)`.
    pub sources: [ScalarField; 2],
    pub v0: ScalarField,
    pub w0: ScalarField,
    pub membrane: MembraneModel,
    pub dt: f64,
    pub final_time: f64,
    pub snapshot_stride: usize,
    pub tolerance: f64,
    /// Keep `v` at every step (needed for translation monitors).
    pub record_v_history: bool,
}

impl MicroConfig {
    pub fn new(domain: TiledDomain, membrane: MembraneModel, dt: f64, final_time: f64) -> Self {
        MicroConfig {
            domain,
            sigma: [Conductivity::identity(), Conductivity::identity()],
            sources: [ScalarField::default(), ScalarField::default()],
            v0: ScalarField::default(),
            w0: ScalarField::default(),
            membrane,
            dt,
            final_time,
            snapshot_stride: 1,
            tolerance: DEFAULT_TOLERANCE,
            record_v_history: false,
        }
    }

    pub fn steps(&self) -> usize {
        (self.final_time / self.dt + 1e-9).floor() as usize
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Invalid(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.final_time >= self.dt) {
            return Err(Error::Invalid(format!(
                "final time {} must be at least dt = {}",
                self.final_time, self.dt
            )));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::Invalid("snapshot stride must be >= 1".into()));
        }
        if self.domain.membrane.faces.is_empty() {
            return Err(Error::Degenerate("tiled domain has no membrane".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicroState {
    pub step: usize,
    pub t: f64,
    pub u_i: Vec<f64>,
    pub u_e: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

/// Per-step quantities; norms are unscaled (no powers of ε).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorRow {
    pub step: usize,
    pub t: f64,
    pub grad_ui_sq: f64,
    pub grad_ue_sq: f64,
    pub ui_sq: f64,
    pub ue_sq: f64,
    /// `‖v‖²_{L²(Γ^ε)}`.
    pub v_sq: f64,
    /// `‖v‖⁴_{L⁴(Γ^ε)}`.
    pub v_l4: f64,
    pub w_sq: f64,
    /// `‖(wⁿ − wⁿ⁻¹)/dt‖²_{L²(Γ^ε)}`; zero at the first row.
    pub dw_sq: f64,
    /// `∫ σ_j ∇u_j·∇u_j`.
    pub energy_i: f64,
    pub energy_e: f64,
    pub iterations: usize,
    pub relative_residual: f64,
}

#[derive(Clone, Debug)]
pub struct MicroTrajectory {
    pub eps: f64,
    pub dt: f64,
    pub snapshots: Vec<MicroState>,
    pub log: Vec<MonitorRow>,
    /// `v` at every step when requested.
    pub v_history: Vec<Vec<f64>>,
}

/// Assembled operators of a micro run.
pub struct MicroSolver {
    pub config: MicroConfig,
    pub(crate) system: CoupledSystem,
    laplace: [CsrMatrix; 2],
    volume_mass: [CsrMatrix; 2],
}

fn sigma_checked(
    sigma: &Conductivity,
    domain: &TiledDomain,
    x: &crate::discretize::Point,
) -> Result<crate::discretize::Tensor> {
    let y = domain.fast_variable(x);
    let t = sigma.eval(domain.dim(), x, &y);
    match spd_violation(&t, domain.dim()) {
        None => Ok(t),
        Some(detail) => Err(Error::Ellipticity { x: *x, y, detail }),
    }
}

impl MicroSolver {
    pub fn new(config: MicroConfig) -> Result<Self> {
        config.validate()?;
        let d = &config.domain;
        let dim = d.dim();
        let mut stiff = Vec::with_capacity(2);
        let mut loads = Vec::with_capacity(2);
        let mut laplace = Vec::with_capacity(2);
        let mut volume_mass = Vec::with_capacity(2);
        for p in Phase::BOTH {
            let space = d.phase(p);
            let sigma = &config.sigma[p.index()];
            stiff.push(assemble_diffusion(space, |_, x| {
                sigma_checked(sigma, d, x)
            })?);
            let src = &config.sources[p.index()];
            loads.push(
                if matches!(src, ScalarField::Constant { value } if *value == 0.0) {
                    vec![0.0; space.len()]
                } else {
                    assemble_load(space, |_, x| src.eval(dim, x, &d.fast_variable(x)))
                },
            );
            laplace.push(assemble_diffusion(space, |_, _| Ok(identity_tensor()))?);
            volume_mass.push(assemble_volume_mass(space));
        }
        let slope = config.membrane.max_current_slope(2.0);
        if slope > 0.0 && config.dt > 0.1 / slope {
            log::warn!(
                "dt = {} exceeds the explicit ionic stability ceiling 0.1/max|dI/dv| = {:.3e}",
                config.dt,
                0.1 / slope
            );
        }
        let [a_i, a_e]: [CsrMatrix; 2] = stiff.try_into().expect("two phases");
        let [f_i, f_e]: [Vec<f64>; 2] = loads.try_into().expect("two phases");
        let system = CoupledSystem::new(
            a_i,
            a_e,
            d.membrane.mass_matrix(false)?,
            d.membrane_to_phase[0].clone(),
            d.membrane_to_phase[1].clone(),
            f_i,
            f_e,
            &d.phase(Phase::Intra).basis_integrals(),
            &d.phase(Phase::Extra).basis_integrals(),
            d.eps,
            config.dt,
            config.tolerance,
        );
        Ok(MicroSolver {
            config,
            system,
            laplace: laplace.try_into().expect("two phases"),
            volume_mass: volume_mass.try_into().expect("two phases"),
        })
    }

    pub fn domain(&self) -> &TiledDomain {
        &self.config.domain
    }

    /// Compatible load `(F_i, F_e)` as used by the solver.
    pub fn load(&self) -> &[f64] {
        &self.system.load
    }

    /// `∫ (s_i + s_e)` before the compatibility projection.
    pub fn raw_total_source(&self) -> f64 {
        self.system.raw_total_source
    }

    pub fn stiffness(&self, p: Phase) -> &CsrMatrix {
        match p {
            Phase::Intra => &self.system.a_i,
            Phase::Extra => &self.system.a_e,
        }
    }

    pub fn membrane_mass(&self) -> &CsrMatrix {
        &self.system.mass
    }

    fn sample_membrane(&self, f: &ScalarField) -> Vec<f64> {
        let d = self.domain();
        d.membrane_positions()
            .iter()
            .map(|x| f.eval(d.dim(), x, &d.fast_variable(x)))
            .collect()
    }

    /// Initial state: sampled `v₀, w₀` and potentials from one elliptic solve
    /// with `u_i|_Γ − u_e|_Γ = v₀`.
    pub fn init_state(&self) -> Result<(MicroState, SolveReport)> {
        let v0 = self.sample_membrane(&self.config.v0);
        let w0 = self.sample_membrane(&self.config.w0);
        self.state_from(v0, w0)
    }

    /// Initial state for given membrane values.
    pub fn state_from(&self, v0: Vec<f64>, w0: Vec<f64>) -> Result<(MicroState, SolveReport)> {
        let n = self.domain().membrane.len();
        for (name, f) in [("v0", &v0), ("w0", &w0)] {
            if f.len() != n {
                return Err(Error::DimensionMismatch {
                    context: if name == "v0" {
                        "initial v"
                    } else {
                        "initial w"
                    },
                    expected: n,
                    got: f.len(),
                });
            }
        }
        let (u, report) = self.system.initial(&v0)?;
        let (u_i, u_e) = u.split_at(self.system.n_i);
        let state = MicroState {
            step: 0,
            t: 0.0,
            u_i: u_i.to_vec(),
            u_e: u_e.to_vec(),
            v: self.system.trace(&u),
            w: w0,
        };
        Ok((state, report))
    }

    pub fn step(&self, state: &MicroState) -> Result<(MicroState, SolveReport)> {
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
        let mut guess = state.u_i.clone();
        guess.extend_from_slice(&state.u_e);
        let out = self.system.solve_step(&state.v, &ionic, None, &guess)?;
        let v = self.system.trace(&out.u);
        let (u_i, u_e) = out.u.split_at(self.system.n_i);
        Ok((
            MicroState {
                step: state.step + 1,
                t,
                u_i: u_i.to_vec(),
                u_e: u_e.to_vec(),
                v,
                w,
            },
            out.report,
        ))
    }

    pub fn monitor(
        &self,
        state: &MicroState,
        prev_w: Option<&[f64]>,
        report: &SolveReport,
    ) -> Result<MonitorRow> {
        let mem = &self.domain().membrane;
        let dw_sq = match prev_w {
            Some(pw) => {
                let dw: Vec<f64> = state
                    .w
                    .iter()
                    .zip(pw)
                    .map(|(a, b)| (a - b) / self.config.dt)
                    .collect();
                self.system.mass.quad_form(&dw)
            }
            None => 0.0,
        };
        Ok(MonitorRow {
            step: state.step,
            t: state.t,
            grad_ui_sq: self.laplace[0].quad_form(&state.u_i),
            grad_ue_sq: self.laplace[1].quad_form(&state.u_e),
            ui_sq: self.volume_mass[0].quad_form(&state.u_i),
            ue_sq: self.volume_mass[1].quad_form(&state.u_e),
            v_sq: self.system.mass.quad_form(&state.v),
            v_l4: mem.lp_power(&state.v, 4)?,
            w_sq: self.system.mass.quad_form(&state.w),
            dw_sq,
            energy_i: self.system.a_i.quad_form(&state.u_i),
            energy_e: self.system.a_e.quad_form(&state.u_e),
            iterations: report.iterations,
            relative_residual: report.relative_residual,
        })
    }
}

/// Runs to the final time, calling `observer` on every state (including the
/// initial one).
pub fn run_micro_with<F>(config: MicroConfig, mut observer: F) -> Result<MicroTrajectory>
where
    F: FnMut(&MicroSolver, &MicroState) -> Result<()>,
{
    let solver = MicroSolver::new(config)?;
    let cfg = &solver.config;
    let steps = cfg.steps();
    let (mut state, report) = solver.init_state()?;
    let mut log = vec![solver.monitor(&state, None, &report)?];
    let mut snapshots = vec![state.clone()];
    let mut v_history = Vec::new();
    if cfg.record_v_history {
        v_history.push(state.v.clone());
    }
    observer(&solver, &state)?;
    for n in 1..=steps {
        let (next, report) = solver.step(&state)?;
        log.push(solver.monitor(&next, Some(&state.w), &report)?);
        if cfg.record_v_history {
            v_history.push(next.v.clone());
        }
        observer(&solver, &next)?;
        if n % cfg.snapshot_stride == 0 {
            snapshots.push(next.clone());
        }
        state = next;
    }
    Ok(MicroTrajectory {
        eps: cfg.domain.eps,
        dt: cfg.dt,
        snapshots,
        log,
        v_history,
    })
}

pub fn run_micro(config: MicroConfig) -> Result<MicroTrajectory> {
    run_micro_with(config, |_, _| Ok(()))
}

/// ε-scaled a-priori quantities of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub eps: f64,
    /// (a) `‖∇u_j‖_{L²(0,T;L²)}` for `j = i, e`.
    pub grad_u: [f64; 2],
    /// (b) `‖u_j‖_{L²(0,T;L²)}`.
    pub u: [f64; 2],
    /// (c) `ε^{1/2} ‖v‖_{L^∞(0,T;L²(Γ^ε))}`.
    pub v_sup: f64,
    /// (d) `ε^{1/4} ‖v‖_{L⁴((0,T)×Γ^ε)}`.
    pub v_l4: f64,
    /// (e) `ε^{1/2} ‖w‖_{L^∞(0,T;L²(Γ^ε))}`.
    pub w_sup: f64,
    /// (f) `ε^{1/2} ‖∂_t w‖_{L²((0,T)×Γ^ε)}`.
    pub dw: f64,
    /// `(Δt, ε ∫₀^{T−Δt} ‖v(t+Δt) − v(t)‖² dt)`.
    pub translation: Vec<(f64, f64)>,
}

impl EstimateReport {
    /// The monitored quantities (a)–(f) in a fixed order with labels.
    pub fn quantities(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("grad_ui", self.grad_u[0]),
            ("grad_ue", self.grad_u[1]),
            ("ui", self.u[0]),
            ("ue", self.u[1]),
            ("v_sup", self.v_sup),
            ("v_l4", self.v_l4),
            ("w_sup", self.w_sup),
            ("dw", self.dw),
        ]
    }
}

/// Time integrals use the right-endpoint rule over steps `1..=N`. The
/// translation quantity is evaluated at shifts `base · 2^k` steps,
/// `k < shifts`, and needs the recorded `v` history.
pub fn micro_monitors(
    traj: &MicroTrajectory,
    mass: &CsrMatrix,
    base: usize,
    shifts: usize,
) -> EstimateReport {
    let eps = traj.eps;
    let dt = traj.dt;
    let rows = &traj.log[1.min(traj.log.len())..];
    let integral = |f: &dyn Fn(&MonitorRow) -> f64| rows.iter().map(|r| dt * f(r)).sum::<f64>();
    let sup = |f: &dyn Fn(&MonitorRow) -> f64| traj.log.iter().map(f).fold(0.0, f64::max);
    let mut translation = Vec::new();
    let h = &traj.v_history;
    for k in 0..shifts {
        let s = base << k;
        if h.is_empty() || s >= h.len() {
            break;
        }
        let mut total = 0.0;
        for n in 0..h.len() - s {
            let diff: Vec<f64> = h[n + s].iter().zip(&h[n]).map(|(a, b)| a - b).collect();
            total += dt * mass.quad_form(&diff);
        }
        translation.push((s as f64 * dt, eps * total));
    }
    EstimateReport {
        eps,
        grad_u: [
            integral(&|r| r.grad_ui_sq).sqrt(),
            integral(&|r| r.grad_ue_sq).sqrt(),
        ],
        u: [integral(&|r| r.ui_sq).sqrt(), integral(&|r| r.ue_sq).sqrt()],
        v_sup: (eps * sup(&|r| r.v_sq)).sqrt(),
        v_l4: (eps * integral(&|r| r.v_l4)).powf(0.25),
        w_sup: (eps * sup(&|r| r.w_sq)).sqrt(),
        dw: (eps * integral(&|r| r.dw_sq)).sqrt(),
        translation,
    }
}

/// Writes the monitor log as CSV, one row per step.
pub fn write_monitor_csv(log: &[MonitorRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for row in log {
        w.serialize(row).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes membrane fields of each snapshot as ASCII CSV files
/// `snapshot_<step>.csv` with node coordinates, `v` and `w`.
pub fn write_snapshots(traj: &MicroTrajectory, domain: &TiledDomain, dir: &Path) -> Result<()> {
    let pos = domain.membrane_positions();
    for s in &traj.snapshots {
        let path = dir.join(format!("snapshot_{:06}.csv", s.step));
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut body = || -> std::io::Result<()> {
            writeln!(w, "# t = {:.17e}", s.t)?;
            writeln!(w, "x,y,z,v,w")?;
            for (k, p) in pos.iter().enumerate() {
                writeln!(
                    w,
                    "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                    p[0], p[1], p[2], s.v[k], s.w[k]
                )?;
            }
            w.flush()
        };
        body().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
