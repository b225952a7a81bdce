//! Jacobi-preconditioned conjugate gradients with nullspace projection.

use serde::{Deserialize, Serialize};

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// Orthogonal basis of a known nullspace (e.g. constants per connected
/// component). Modes need not be normalized but must be mutually orthogonal.
#[derive(Clone, Debug)]
pub struct Nullspace {
    modes: Vec<Vec<f64>>,
    norms_sq: Vec<f64>,
}

impl Nullspace {
    pub fn new(modes: Vec<Vec<f64>>) -> Self {
        let norms_sq = modes.iter().map(|m| dot(m, m)).collect();
        Nullspace { modes, norms_sq }
    }

    /// The single constant mode on `n` unknowns.
    pub fn constant(n: usize) -> Self {
        Self::new(vec![vec![1.0; n]])
    }

    /// One indicator mode per component label.
    pub fn components(labels: &[usize], count: usize) -> Self {
        let mut modes = vec![vec![0.0; labels.len()]; count];
        for (i, &l) in labels.iter().enumerate() {
            modes[l][i] = 1.0;
        }
        Self::new(modes)
    }

    pub fn dim(&self) -> usize {
        self.modes.len()
    }

    /// Removes the nullspace component of `x` in place.
    pub fn project(&self, x: &mut [f64]) {
        for (m, &nsq) in self.modes.iter().zip(&self.norms_sq) {
            if nsq == 0.0 {
                continue;
            }
            let c = dot(m, x) / nsq;
            if c != 0.0 {
                x.iter_mut().zip(m).for_each(|(xi, mi)| *xi -= c * mi);
            }
        }
    }

    /// Euclidean norm of the nullspace component of `x`.
    pub fn component_norm(&self, x: &[f64]) -> f64 {
        self.modes
            .iter()
            .zip(&self.norms_sq)
            .filter(|(_, n)| **n > 0.0)
            .map(|(m, n)| dot(m, x).powi(2) / n)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Relative residual target `‖b - Ax‖ ≤ tol ‖b‖`.
    pub tolerance: f64,
    /// Iteration cap; `None` means `10 * sqrt(n)` (at least 100).
    pub max_iter: Option<usize>,
    pub nullspace: Option<Nullspace>,
    /// Largest admissible relative nullspace component of `b`.
    pub consistency_tolerance: f64,
    /// Magnitude of the terms that were summed into `b`. A right side that
    /// cancels to rounding level relative to it is treated as zero.
    pub reference_norm: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tolerance: 1e-10,
            max_iter: None,
            nullspace: None,
            consistency_tolerance: 1e-8,
            reference_norm: None,
        }
    }
}

impl SolveOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        SolveOptions {
            tolerance,
            ..Default::default()
        }
    }

    pub fn nullspace(mut self, ns: Nullspace) -> Self {
        self.nullspace = Some(ns);
        self
    }

    pub fn reference_norm(mut self, r: f64) -> Self {
        self.reference_norm = Some(r);
        self
    }

    pub fn max_iter(mut self, n: usize) -> Self {
        self.max_iter = Some(n);
        self
    }

    fn iteration_cap(&self, n: usize) -> usize {
        self.max_iter
            .unwrap_or_else(|| ((10.0 * (n as f64).sqrt()).ceil() as usize).max(100))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    pub projected: bool,
}

impl SolveReport {
    /// Turns a non-converged report into an error.
    pub fn ensure_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
                residual: self.relative_residual,
            })
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b` for symmetric positive (semi)definite `A` starting from zero.
pub fn solve_spd(a: &CsrMatrix, b: &[f64], opts: &SolveOptions) -> Result<(Vec<f64>, SolveReport)> {
    solve_spd_from(a, b, None, opts)
}

/// As [`solve_spd`] with an optional initial guess.
///
/// When a nullspace is given, the right side must be orthogonal to it up to
/// `consistency_tolerance` (relative); it is then projected exactly, and the
/// residual and iterate are projected every iteration. The returned solution
/// is orthogonal to the nullspace.
pub fn solve_spd_from(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = a.nrows;
    if a.ncols != n {
        return Err(Error::DimensionMismatch {
            context: "solve_spd (matrix must be square)",
            expected: n,
            got: a.ncols,
        });
    }
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            context: "solve_spd right-hand side",
            expected: n,
            got: b.len(),
        });
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("solve_spd right-hand side".into()));
    }

    let mut rhs = b.to_vec();
    let reference = opts.reference_norm.unwrap_or(0.0);
    let b_norm = norm(&rhs).max(reference);
    let projected = opts.nullspace.is_some();
    if let Some(ns) = &opts.nullspace {
        let comp = ns.component_norm(&rhs);
        if b_norm > 0.0 && comp > opts.consistency_tolerance * b_norm {
            return Err(Error::Inconsistent {
                component: comp / b_norm,
                tolerance: opts.consistency_tolerance,
            });
        }
        ns.project(&mut rhs);
    }
    let b_norm = norm(&rhs);

    let mut x = match x0 {
        Some(g) => {
            if g.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "solve_spd initial guess",
                    expected: n,
                    got: g.len(),
                });
            }
            g.to_vec()
        }
        None => vec![0.0; n],
    };
    if let Some(ns) = &opts.nullspace {
        ns.project(&mut x);
    }
    if b_norm == 0.0 || b_norm <= 1e-14 * reference {
        let report = SolveReport {
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
            projected,
        };
        return Ok((vec![0.0; n], report));
    }

    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut r = a.mul_vec(&x);
    r.iter_mut().zip(&rhs).for_each(|(ri, bi)| *ri = bi - *ri);
    if let Some(ns) = &opts.nullspace {
        ns.project(&mut r);
    }
    let precondition = |r: &[f64], z: &mut Vec<f64>| {
        z.iter_mut()
            .zip(r.iter().zip(&inv_diag))
            .for_each(|(zi, (ri, di))| *zi = ri * di);
        if let Some(ns) = &opts.nullspace {
            ns.project(z);
        }
    };
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let cap = opts.iteration_cap(n);
    let target = opts.tolerance * b_norm;
    let mut res = norm(&r);
    let mut it = 0;
    let mut restarts = 0;
    while it < cap {
        if res <= target {
            // confirm against the true residual; restart once it drifts
            let mut r_true = a.mul_vec(&x);
            r_true
                .iter_mut()
                .zip(&rhs)
                .for_each(|(ri, bi)| *ri = bi - *ri);
            if let Some(ns) = &opts.nullspace {
                ns.project(&mut r_true);
            }
            let true_res = norm(&r_true);
            if true_res <= target || restarts >= 3 {
                break;
            }
            restarts += 1;
            r = r_true;
            precondition(&r, &mut z);
            rz = dot(&r, &z);
            p.copy_from_slice(&z);
        }
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rz / pap;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut()
            .zip(&ap)
            .for_each(|(ri, api)| *ri -= alpha * api);
        if let Some(ns) = &opts.nullspace {
            ns.project(&mut r);
            ns.project(&mut x);
        }
        it += 1;
        res = norm(&r);
        if res <= target {
            continue;
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut()
            .zip(&z)
            .for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }

    let mut r_true = a.mul_vec(&x);
    r_true
        .iter_mut()
        .zip(&rhs)
        .for_each(|(ri, bi)| *ri = bi - *ri);
    if let Some(ns) = &opts.nullspace {
        ns.project(&mut r_true);
    }
    let rel = norm(&r_true) / b_norm;
    let report = SolveReport {
        iterations: it,
        relative_residual: rel,
        converged: rel <= opts.tolerance,
        projected,
    };
    Ok((x, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_converges_in_one_iteration() {
        let a = CsrMatrix::identity(5);
        let b = vec![1.0, -2.0, 3.0, 0.5, 4.0];
        let (x, rep) = solve_spd(&a, &b, &SolveOptions::default()).unwrap();
        assert_eq!(x, b);
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
    }

    #[test]
    fn diagonal_system() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (1, 1, 1.0)]);
        let (x, rep) = solve_spd(&a, &[2.0, 1.0], &SolveOptions::default()).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
        assert!(rep.converged);
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let a = CsrMatrix::identity(3);
        let (x, rep) = solve_spd(&a, &[0.0; 3], &SolveOptions::default()).unwrap();
        assert_eq!(x, vec![0.0; 3]);
        assert!(rep.converged && rep.iterations == 0);
    }

    #[test]
    fn inconsistent_singular_system_is_rejected() {
        let lap = CsrMatrix::from_triplets(
            2,
            2,
            &[(0, 0, 1.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 1.0)],
        );
        let opts = SolveOptions::default().nullspace(Nullspace::constant(2));
        let err = solve_spd(&lap, &[1.0, 0.0], &opts).unwrap_err();
        assert!(matches!(err, Error::Inconsistent { .. }));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let n = 50;
        let mut t = Vec::new();
        for i in 0..n as u32 {
            t.push((i, i, 2.0 + i as f64));
            if i + 1 < n as u32 {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &t);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let (_, rep) = solve_spd(&a, &b, &SolveOptions::default().max_iter(2)).unwrap();
        assert!(!rep.converged);
        assert!(rep.ensure_converged().is_err());
    }
}
