//! The coupled elliptic–capacitive system shared by the micro and macro
//! solvers.
//!
//! Unknowns are `U = (u_i, u_e)`. A linear map `B` takes `U` to the membrane
//! values `v = u_i|_Γ − u_e|_Γ`. Testing the intracellular equation with `φ_i`
//! and the extracellular one with `−φ_e` and adding gives, per time step,
//!
//! `(c/dt) BᵀMB U + diag(A_i, A_e) U = (c/dt) BᵀM (vⁿ − dt I) + F`,
//!
//! where `M` is the membrane mass matrix and `c` the capacitive scale (`ε` on
//! the micro level, `|Γ|` on the macro level). The matrix is symmetric
//! positive semidefinite with the single nullspace vector `(1, 1)`.

use crate::discretize::mesh::NO_DOF;
use crate::discretize::{
    solve_spd, solve_spd_from, CsrMatrix, Nullspace, SolveOptions, SolveReport,
};
use crate::error::{Error, Result};
use crate::membrane::MembraneModel;

pub(crate) struct CoupledSystem {
    pub n_i: usize,
    pub n_e: usize,
    pub to_i: Vec<u32>,
    pub to_e: Vec<u32>,
    pub mass: CsrMatrix,
    pub a_i: CsrMatrix,
    pub a_e: CsrMatrix,
    system: CsrMatrix,
    /// Compatible load `(F_i, F_e)`.
    pub load: Vec<f64>,
    /// `Σ_j ∫ s_j` before projection.
    pub raw_total_source: f64,
    weights_e: Vec<f64>,
    pub capacitance: f64,
    pub dt: f64,
    pub tolerance: f64,
}

pub(crate) struct StepOutput {
    pub u: Vec<f64>,
    pub report: SolveReport,
    pub rhs_norm: f64,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl CoupledSystem {
    /// `load_i`, `load_e` are `∫ s_j φ` on each phase; `weights_j` the basis
    /// integrals `∫ φ` used for compatibility projection and pinning.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a_i: CsrMatrix,
        a_e: CsrMatrix,
        mass: CsrMatrix,
        to_i: Vec<u32>,
        to_e: Vec<u32>,
        mut load_i: Vec<f64>,
        mut load_e: Vec<f64>,
        weights_i: &[f64],
        weights_e: &[f64],
        capacitance: f64,
        dt: f64,
        tolerance: f64,
    ) -> Self {
        let n_i = a_i.nrows;
        let n_e = a_e.nrows;
        // subtract the volume-weighted joint mean of the sources
        let total: f64 = load_i.iter().chain(&load_e).sum();
        let volume: f64 = weights_i.iter().chain(weights_e).sum();
        let mean = total / volume;
        load_i
            .iter_mut()
            .zip(weights_i)
            .for_each(|(f, w)| *f -= mean * w);
        load_e
            .iter_mut()
            .zip(weights_e)
            .for_each(|(f, w)| *f -= mean * w);
        let mut load = load_i;
        load.extend(load_e);

        let scale = capacitance / dt;
        let mut trip = Vec::with_capacity(4 * mass.nnz());
        for r in 0..mass.nrows {
            let (cols, vals) = mass.row(r);
            let (ri, re) = (to_i[r], to_e[r] + n_i as u32);
            for (&c, &m) in cols.iter().zip(vals) {
                let (ci, ce) = (to_i[c as usize], to_e[c as usize] + n_i as u32);
                let m = scale * m;
                trip.push((ri, ci, m));
                trip.push((ri, ce, -m));
                trip.push((re, ci, -m));
                trip.push((re, ce, m));
            }
        }
        let n = n_i + n_e;
        let coupling = CsrMatrix::from_triplets(n, n, &trip);
        let system = CsrMatrix::block_diag(&a_i, &a_e).add_scaled(&coupling, 1.0);
        CoupledSystem {
            n_i,
            n_e,
            to_i,
            to_e,
            mass,
            a_i,
            a_e,
            system,
            load,
            raw_total_source: total,
            weights_e: weights_e.to_vec(),
            capacitance,
            dt,
            tolerance,
        }
    }

    pub fn len(&self) -> usize {
        self.n_i + self.n_e
    }

    fn options(&self, reference: f64) -> SolveOptions {
        let n = self.len();
        SolveOptions::with_tolerance(self.tolerance)
            .nullspace(Nullspace::constant(n))
            .max_iter(((40.0 * (n as f64).sqrt()) as usize).max(2000))
            .reference_norm(reference)
    }

    /// `v = u_i|_Γ − u_e|_Γ`.
    pub fn trace(&self, u: &[f64]) -> Vec<f64> {
        let (ui, ue) = u.split_at(self.n_i);
        self.to_i
            .iter()
            .zip(&self.to_e)
            .map(|(&i, &e)| ui[i as usize] - ue[e as usize])
            .collect()
    }

    /// Shifts both potentials so that `∫ u_e = 0`.
    pub fn pin(&self, u: &mut [f64]) {
        let ue = &u[self.n_i..];
        let mean = ue
            .iter()
            .zip(&self.weights_e)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / self.weights_e.iter().sum::<f64>();
        u.iter_mut().for_each(|x| *x -= mean);
    }

    /// Potentials with `B U = v0` exactly that satisfy the elliptic equations
    /// away from the membrane, from one reduced solve in which each
    /// intracellular membrane unknown is slaved to its extracellular partner.
    pub fn initial(&self, v0: &[f64]) -> Result<(Vec<f64>, SolveReport)> {
        let n_i = self.n_i;
        let n_e = self.n_e;
        let mut slave = vec![NO_DOF; n_i];
        for (m, &i) in self.to_i.iter().enumerate() {
            slave[i as usize] = m as u32;
        }
        // reduced unknowns: all extracellular, then free intracellular
        let mut map = vec![0u32; n_i];
        let mut next = n_e as u32;
        for k in 0..n_i {
            map[k] = if slave[k] == NO_DOF {
                next += 1;
                next - 1
            } else {
                self.to_e[slave[k] as usize]
            };
        }
        let nr = next as usize;
        let mut g = vec![0.0; n_i + n_e];
        for (m, &i) in self.to_i.iter().enumerate() {
            g[i as usize] = v0[m];
        }
        let mut full_rhs = self.load.clone();
        let ag_i = self.a_i.mul_vec(&g[..n_i]);
        full_rhs[..n_i]
            .iter_mut()
            .zip(&ag_i)
            .for_each(|(r, a)| *r -= a);

        let mut trip = Vec::with_capacity(self.a_i.nnz() + self.a_e.nnz());
        for r in 0..n_i {
            let (cols, vals) = self.a_i.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                trip.push((map[r], map[c as usize], v));
            }
        }
        for r in 0..n_e {
            let (cols, vals) = self.a_e.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                trip.push((r as u32, c, v));
            }
        }
        let reduced = CsrMatrix::from_triplets(nr, nr, &trip);
        let mut rhs = vec![0.0; nr];
        for r in 0..n_i {
            rhs[map[r] as usize] += full_rhs[r];
        }
        for r in 0..n_e {
            rhs[r] += full_rhs[n_i + r];
        }
        let reference = norm(&self.load) + norm(&ag_i);
        let opts = SolveOptions::with_tolerance(self.tolerance)
            .nullspace(Nullspace::constant(nr))
            .max_iter(((40.0 * (nr as f64).sqrt()) as usize).max(2000))
            .reference_norm(reference);
        let (z, report) = solve_spd(&reduced, &rhs, &opts)?;
        report.ensure_converged()?;
        let mut u = g;
        for k in 0..n_i {
            u[k] += z[map[k] as usize];
        }
        u[n_i..].copy_from_slice(&z[..n_e]);
        self.pin(&mut u);
        Ok((u, report))
    }

    /// Nodal ionic current `I(vⁿ, wⁿ⁺¹)`, rejecting non-finite values.
    pub fn ionic(&self, model: &MembraneModel, v: &[f64], w: &[f64], t: f64) -> Result<Vec<f64>> {
        let out: Vec<f64> = v
            .iter()
            .zip(w)
            .map(|(&v, &w)| model.current(v, w))
            .collect();
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("ionic current at t = {t}")));
        }
        Ok(out)
    }

    /// One implicit solve given the current membrane potential and ionic
    /// current. `extra` is added to the load (e.g. manufactured forcing).
    pub fn solve_step(
        &self,
        v: &[f64],
        ionic: &[f64],
        extra: Option<&[f64]>,
        guess: &[f64],
    ) -> Result<StepOutput> {
        let shifted: Vec<f64> = v.iter().zip(ionic).map(|(v, i)| v - self.dt * i).collect();
        let y = self.mass.mul_vec(&shifted);
        let scale = self.capacitance / self.dt;
        let mut rhs = self.load.clone();
        let mut reference = norm(&rhs) + scale * norm(&y);
        if let Some(extra) = extra {
            rhs.iter_mut().zip(extra).for_each(|(r, e)| *r += e);
            reference += norm(extra);
        }
        for (m, ym) in y.iter().enumerate() {
            rhs[self.to_i[m] as usize] += scale * ym;
            rhs[self.n_i + self.to_e[m] as usize] -= scale * ym;
        }
        let (mut u, report) =
            solve_spd_from(&self.system, &rhs, Some(guess), &self.options(reference))?;
        report.ensure_converged()?;
        self.pin(&mut u);
        Ok(StepOutput {
            u,
            report,
            rhs_norm: norm(&rhs),
        })
    }

    /// `A_i u_i + A_e u_e − (F_i + F_e)`. Only meaningful when both phases
    /// share one DOF numbering, as on the macro level.
    pub fn constraint_residual(&self, u: &[f64]) -> Vec<f64> {
        let (ui, ue) = u.split_at(self.n_i);
        let ri = self.a_i.mul_vec(ui);
        let re = self.a_e.mul_vec(ue);
        ri.iter()
            .zip(&re)
            .zip(self.load[..self.n_i].iter().zip(&self.load[self.n_i..]))
            .map(|((a, b), (fi, fe))| a + b - fi - fe)
            .collect()
    }
}
