//! Polynomial membrane models `I(v,w) = I₁(v) + I₂(v) w`,
//! `H(v,w) = h(v) + c_H w`, and numerical checks of their structure.

use serde::{Deserialize, Serialize};

use crate::cell_problem::sym_eigenvalues;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembraneModel {
    /// Coefficients of `I₁` in increasing degree (`v⁰ … v³`).
    pub i1: [f64; 4],
    /// `I₂(v) = i2[0] + i2[1] v`.
    pub i2: [f64; 2],
    /// Coefficients of `h` in increasing degree.
    pub h: [f64; 3],
    pub c_h1: f64,
}

/// Membrane section of a configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum MembraneConfig {
    /// `I = v(v−a)(v−1) + w`, `H = ϵ(kv − w)`.
    Fhn {
        #[serde(default = "default_a")]
        a: f64,
        #[serde(default = "default_k")]
        k: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    Polynomial {
        i1: [f64; 4],
        #[serde(default)]
        i2: [f64; 2],
        #[serde(default)]
        h: [f64; 3],
        #[serde(default)]
        c_h1: f64,
    },
}

fn default_a() -> f64 {
    0.1
}
fn default_k() -> f64 {
    0.5
}
fn default_epsilon() -> f64 {
    0.01
}

impl Default for MembraneConfig {
    fn default() -> Self {
        MembraneConfig::Fhn {
            a: default_a(),
            k: default_k(),
            epsilon: default_epsilon(),
        }
    }
}

impl MembraneConfig {
    pub fn model(&self) -> MembraneModel {
        match *self {
            MembraneConfig::Fhn { a, k, epsilon } => MembraneModel::fitzhugh_nagumo(a, k, epsilon),
            MembraneConfig::Polynomial { i1, i2, h, c_h1 } => MembraneModel { i1, i2, h, c_h1 },
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            MembraneConfig::Fhn { a, k, epsilon } => {
                if !(a > 0.0 && a < 1.0) {
                    return Err(format!("a = {a} must lie in (0, 1)"));
                }
                if !(k > 0.0 && epsilon > 0.0) {
                    return Err("k and epsilon must be positive".into());
                }
                Ok(())
            }
            MembraneConfig::Polynomial { i1, i2, h, c_h1 } => {
                let all = i1.iter().chain(&i2).chain(&h).chain([&c_h1]);
                if all.into_iter().any(|v| !v.is_finite()) {
                    return Err("coefficients must be finite".into());
                }
                Ok(())
            }
        }
    }
}

fn poly(c: &[f64], v: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, ci| acc * v + ci)
}

fn poly_deriv(c: &[f64], v: f64) -> f64 {
    c.iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (k, ci)| acc * v + k as f64 * ci)
}

impl MembraneModel {
    pub fn fitzhugh_nagumo(a: f64, k: f64, epsilon: f64) -> Self {
        // v(v−a)(v−1) = v³ − (1+a)v² + a v
        MembraneModel {
            i1: [0.0, a, -(1.0 + a), 1.0],
            i2: [1.0, 0.0],
            h: [0.0, epsilon * k, 0.0],
            c_h1: -epsilon,
        }
    }

    /// `I = slope · v`, `H = 0`.
    pub fn linear(slope: f64) -> Self {
        MembraneModel {
            i1: [0.0, slope, 0.0, 0.0],
            i2: [0.0, 0.0],
            h: [0.0; 3],
            c_h1: 0.0,
        }
    }

    pub fn zero() -> Self {
        Self::linear(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.i1
            .iter()
            .chain(&self.i2)
            .chain(&self.h)
            .all(|c| *c == 0.0)
            && self.c_h1 == 0.0
    }

    pub fn current(&self, v: f64, w: f64) -> f64 {
        poly(&self.i1, v) + poly(&self.i2, v) * w
    }

    pub fn gating(&self, v: f64, w: f64) -> f64 {
        poly(&self.h, v) + self.c_h1 * w
    }

    /// `[[∂I/∂v, ∂I/∂w], [∂H/∂v, ∂H/∂w]]`.
    pub fn jacobian(&self, v: f64, w: f64) -> [[f64; 2]; 2] {
        [
            [poly_deriv(&self.i1, v) + self.i2[1] * w, poly(&self.i2, v)],
            [poly_deriv(&self.h, v), self.c_h1],
        ]
    }

    /// Largest `|∂I/∂v|` over `v, w ∈ [-r, r]`.
    pub fn max_current_slope(&self, r: f64) -> f64 {
        let n = 200;
        let mut worst: f64 = 0.0;
        for a in 0..=n {
            let v = -r + 2.0 * r * a as f64 / n as f64;
            for w in [-r, r] {
                worst = worst.max(self.jacobian(v, w)[0][0].abs());
            }
        }
        worst
    }

    /// A constant `C_I` with `|I(v,w)|^{4/3} ≤ C_I (1 + |v|⁴ + |w|²)`.
    ///
    /// With `A = Σ|I₁ coefficients|` and `B = |c₃| + |c₄|`,
    /// `|I| ≤ (A+B)(1 + |v|³ + (1+|v|)|w|)`. Splitting the 4/3 power of the
    /// three-term sum costs `3^{1/3}`, and Young's inequality bounds
    /// `((1+|v|)|w|)^{4/3} ≤ (2/3)|w|² + (8/3)(1 + |v|⁴)`.
    pub fn growth_constant(&self) -> f64 {
        let a: f64 = self.i1.iter().map(|c| c.abs()).sum();
        let b = self.i2[0].abs() + self.i2[1].abs();
        3f64.cbrt() * (11.0 / 3.0) * (a + b).powf(4.0 / 3.0)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StructureOptions {
    /// Samples cover `[-v_range, v_range] × [-w_range, w_range]`.
    pub v_range: f64,
    pub w_range: f64,
    pub samples: usize,
    pub mu_grid: Vec<f64>,
}

impl StructureOptions {
    /// Box `[-2,2]²` with a logarithmic μ grid that includes `extra` values.
    pub fn with_mu(extra: &[f64]) -> Self {
        let mut mu_grid: Vec<f64> = (-8..=4).map(|e| 10f64.powi(e)).collect();
        mu_grid.extend_from_slice(extra);
        mu_grid.sort_by(f64::total_cmp);
        mu_grid.dedup();
        StructureOptions {
            v_range: 2.0,
            w_range: 2.0,
            samples: 81,
            mu_grid,
        }
    }
}

impl Default for StructureOptions {
    fn default() -> Self {
        Self::with_mu(&[])
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StructureReport {
    /// `γ, β` with `vI − wH ≥ γ v⁴ − β (v² + w²)` on the samples.
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    /// `(μ, min over samples of the smallest eigenvalue of sym ∇F^μ)`.
    pub mu_scan: Vec<(f64, f64)>,
    pub best_mu: f64,
    /// Largest of the scanned minima: `λ^μ_min(z) ≥ λ̂` on the sample box.
    pub lambda_hat: f64,
    pub growth_constant: f64,
    /// Largest ratio `|I|^{4/3} / (C_I (1 + v⁴ + w²))` on the samples.
    pub growth_ratio: f64,
    pub warnings: Vec<String>,
}

fn sample_grid(opts: &StructureOptions) -> impl Iterator<Item = (f64, f64)> + '_ {
    let n = opts.samples.max(2);
    let coord = move |k: usize, r: f64| -r + 2.0 * r * k as f64 / (n - 1) as f64;
    (0..n).flat_map(move |a| (0..n).map(move |b| (coord(a, opts.v_range), coord(b, opts.w_range))))
}

/// Smallest eigenvalue of the symmetric part of `∇F^μ`, `F^μ = (μI, −H)`.
pub fn min_eigenvalue(model: &MembraneModel, mu: f64, v: f64, w: f64) -> f64 {
    let j = model.jacobian(v, w);
    let t = [
        [mu * j[0][0], mu * j[0][1], 0.0],
        [-j[1][0], -j[1][1], 0.0],
        [0.0; 3],
    ];
    sym_eigenvalues(&t, 2)[0]
}

pub fn check_membrane_structure(model: &MembraneModel, opts: &StructureOptions) -> StructureReport {
    let mut warnings = Vec::new();
    let lead = model.i1[3];
    let (gamma, beta) = if lead > 0.0 {
        let gamma = 0.5 * lead;
        let mut beta: f64 = 0.0;
        for (v, w) in sample_grid(opts) {
            let r2 = v * v + w * w;
            if r2 == 0.0 {
                continue;
            }
            let q = v * model.current(v, w) - w * model.gating(v, w);
            beta = beta.max((gamma * v.powi(4) - q) / r2);
        }
        (Some(gamma), Some(beta))
    } else {
        warnings.push(format!(
            "no quartic coercivity: leading coefficient of I₁ is {lead}, so no γ > 0 exists"
        ));
        (None, None)
    };

    let mu_scan: Vec<(f64, f64)> = opts
        .mu_grid
        .iter()
        .map(|&mu| {
            let lmin = sample_grid(opts)
                .map(|(v, w)| min_eigenvalue(model, mu, v, w))
                .fold(f64::INFINITY, f64::min);
            (mu, lmin)
        })
        .collect();
    let (best_mu, lambda_hat) =
        mu_scan
            .iter()
            .copied()
            .fold((f64::NAN, f64::NEG_INFINITY), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            });
    if !lambda_hat.is_finite() {
        warnings.push("eigenvalue scan produced no finite bound".into());
    }

    let growth_constant = model.growth_constant();
    let growth_ratio = sample_grid(opts)
        .map(|(v, w)| {
            model.current(v, w).abs().powf(4.0 / 3.0)
                / (growth_constant * (1.0 + v.powi(4) + w * w)).max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max);
    if growth_ratio > 1.0 {
        warnings.push(format!("growth bound violated (ratio {growth_ratio:.3})"));
    }

    StructureReport {
        gamma,
        beta,
        mu_scan,
        best_mu,
        lambda_hat,
        growth_constant,
        growth_ratio,
        warnings,
    }
}

/// Largest entrywise gap between the analytic Jacobian and central
/// differences with step `step` over the sample box.
pub fn jacobian_defect(model: &MembraneModel, opts: &StructureOptions, step: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (v, w) in sample_grid(opts) {
        let j = model.jacobian(v, w);
        let fd = [
            [
                (model.current(v + step, w) - model.current(v - step, w)) / (2.0 * step),
                (model.current(v, w + step) - model.current(v, w - step)) / (2.0 * step),
            ],
            [
                (model.gating(v + step, w) - model.gating(v - step, w)) / (2.0 * step),
                (model.gating(v, w + step) - model.gating(v, w - step)) / (2.0 * step),
            ],
        ];
        for a in 0..2 {
            for b in 0..2 {
                worst = worst.max((j[a][b] - fd[a][b]).abs());
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fhn() -> MembraneModel {
        MembraneModel::fitzhugh_nagumo(0.1, 0.5, 0.01)
    }

    #[test]
    fn fhn_values() {
        let m = fhn();
        assert_eq!(m.current(0.0, 0.0), 0.0);
        assert!(m.current(1.0, 0.0).abs() < 1e-15);
        assert!((m.current(0.1, 0.5) - 0.5).abs() < 1e-15);
        assert_eq!(m.gating(0.0, 0.0), 0.0);
        assert!((m.gating(1.0, 0.0) - 0.005).abs() < 1e-15);
        assert!((m.gating(0.0, 1.0) + 0.01).abs() < 1e-15);
    }

    #[test]
    fn fhn_structure() {
        let m = fhn();
        let opts = StructureOptions::with_mu(&[0.005]);
        let r = check_membrane_structure(&m, &opts);
        assert!(r.warnings.is_empty(), "{:?}", r.warnings);
        assert!(r.gamma.unwrap() > 0.0);
        assert!(r.lambda_hat.is_finite());
        // at μ = ϵk the symmetric part is diag(μ I_v, ϵ)
        let at = r.mu_scan.iter().find(|(mu, _)| *mu == 0.005).unwrap().1;
        let iv_min = (0..opts.samples)
            .map(|k| -2.0 + 4.0 * k as f64 / (opts.samples - 1) as f64)
            .map(|v| 3.0 * v * v - 2.2 * v + 0.1)
            .fold(f64::INFINITY, f64::min);
        assert!((at - 0.005 * iv_min).abs() < 1e-15);
        assert!(jacobian_defect(&m, &opts, 1e-5) < 1e-6);
    }

    #[test]
    fn linear_model_takes_warning_path() {
        let m = MembraneModel {
            i1: [0.0, 1.0, 0.0, 0.0],
            i2: [0.0, 0.0],
            h: [0.0; 3],
            c_h1: -1.0,
        };
        let r = check_membrane_structure(&m, &StructureOptions::default());
        assert!(r.gamma.is_none());
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn preset_parses_from_toml() {
        let c: MembraneConfig = toml::from_str("preset = \"fhn\"\na = 0.2").unwrap();
        assert_eq!(
            c,
            MembraneConfig::Fhn {
                a: 0.2,
                k: 0.5,
                epsilon: 0.01
            }
        );
        assert!(MembraneConfig::Fhn {
            a: 1.5,
            k: 0.5,
            epsilon: 0.01
        }
        .validate()
        .is_err());
    }
}
