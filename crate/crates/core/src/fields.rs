//! Scalar fields used for initial data, sources and conductivity modulation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::discretize::Point;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ScalarField {
    Constant {
        value: f64,
    },
    /// `mean + amplitude · Π_a cos(π k x_a)`.
    CosineProduct {
        mean: f64,
        amplitude: f64,
        #[serde(default = "one")]
        wavenumber: f64,
    },
    /// `base + amplitude · exp(-|x - center|² / width²)`.
    Gaussian {
        #[serde(default)]
        base: f64,
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
    },
    /// `offset + Σ_a slope_a x_a`.
    Affine {
        #[serde(default)]
        offset: f64,
        slope: Vec<f64>,
    },
    /// Periodic in the fast variable: `mean + amplitude · Π_a cos(2π y_a)`.
    /// Evaluated at `y`, not `x`.
    CellCosine {
        mean: f64,
        amplitude: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for ScalarField {
    fn default() -> Self {
        ScalarField::Constant { value: 0.0 }
    }
}

impl ScalarField {
    pub fn constant(value: f64) -> Self {
        ScalarField::Constant { value }
    }

    /// Evaluates at slow variable `x` and fast variable `y`.
    pub fn eval(&self, dim: usize, x: &Point, y: &Point) -> f64 {
        match self {
            ScalarField::Constant { value } => *value,
            ScalarField::CosineProduct {
                mean,
                amplitude,
                wavenumber,
            } => {
                let p: f64 = (0..dim).map(|a| (PI * wavenumber * x[a]).cos()).product();
                mean + amplitude * p
            }
            ScalarField::Gaussian {
                base,
                amplitude,
                center,
                width,
            } => {
                let r2: f64 = (0..dim)
                    .map(|a| (x[a] - center.get(a).copied().unwrap_or(0.5)).powi(2))
                    .sum();
                base + amplitude * (-r2 / (width * width)).exp()
            }
            ScalarField::Affine { offset, slope } => {
                offset
                    + (0..dim)
                        .map(|a| slope.get(a).copied().unwrap_or(0.0) * x[a])
                        .sum::<f64>()
            }
            ScalarField::CellCosine { mean, amplitude } => {
                let p: f64 = (0..dim).map(|a| (2.0 * PI * y[a]).cos()).product();
                mean + amplitude * p
            }
        }
    }

    /// Whether the field depends on the fast variable.
    pub fn depends_on_cell(&self) -> bool {
        matches!(self, ScalarField::CellCosine { .. })
    }

    /// Whether the field is spatially constant.
    pub fn is_constant(&self) -> bool {
        matches!(self, ScalarField::Constant { .. })
            || matches!(self, ScalarField::CosineProduct { amplitude, .. } if *amplitude == 0.0)
            || matches!(self, ScalarField::CellCosine { amplitude, .. } if *amplitude == 0.0)
    }

    pub fn validate(&self, dim: usize) -> std::result::Result<(), String> {
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(format!("{what} must be finite"))
            }
        };
        match self {
            ScalarField::Constant { value } => finite(*value, "value"),
            ScalarField::CosineProduct {
                mean,
                amplitude,
                wavenumber,
            } => {
                finite(*mean, "mean")?;
                finite(*amplitude, "amplitude")?;
                finite(*wavenumber, "wavenumber")
            }
            ScalarField::Gaussian {
                base,
                amplitude,
                center,
                width,
            } => {
                finite(*base, "base")?;
                finite(*amplitude, "amplitude")?;
                if center.len() != dim {
                    return Err(format!(
                        "center needs {dim} coordinates, got {}",
                        center.len()
                    ));
                }
                if !(*width > 0.0) {
                    return Err("width must be positive".into());
                }
                Ok(())
            }
            ScalarField::Affine { offset, slope } => {
                finite(*offset, "offset")?;
                if slope.len() != dim {
                    return Err(format!("slope needs {dim} entries, got {}", slope.len()));
                }
                Ok(())
            }
            ScalarField::CellCosine { mean, amplitude } => {
                finite(*mean, "mean")?;
                finite(*amplitude, "amplitude")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluations() {
        let x = [0.25, 0.5, 0.0];
        let y = [0.0, 0.0, 0.0];
        assert_eq!(ScalarField::constant(2.0).eval(2, &x, &y), 2.0);
        let c = ScalarField::CosineProduct {
            mean: 1.0,
            amplitude: 1.0,
            wavenumber: 1.0,
        };
        assert!((c.eval(2, &x, &y) - 1.0).abs() < 1e-15);
        let a = ScalarField::Affine {
            offset: 1.0,
            slope: vec![2.0, 4.0],
        };
        assert_eq!(a.eval(2, &x, &y), 3.5);
        let cc = ScalarField::CellCosine {
            mean: 0.0,
            amplitude: 1.0,
        };
        assert_eq!(cc.eval(2, &x, &y), 1.0);
    }

    #[test]
    fn toml_round_trip() {
        let f = ScalarField::Gaussian {
            base: 0.0,
            amplitude: 1.0,
            center: vec![0.5, 0.5],
            width: 0.2,
        };
        let s = toml::to_string(&f).unwrap();
        let back: ScalarField = toml::from_str(&s).unwrap();
        assert_eq!(f, back);
        assert!(back.validate(3).is_err());
    }
}
