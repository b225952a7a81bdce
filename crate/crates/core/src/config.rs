//! Run configuration in TOML.
//!
//! Sections: `geometry`, `sigma`, `sources`, `membrane`, `time`, `solver`,
//! `study`. Every numeric default lives in the table below and nowhere else.
//!
//! | key                         | default                 |
//! |-----------------------------|-------------------------|
//! | `sigma.intra`, `sigma.extra`| isotropic 1             |
//! | `sources.intra/extra`       | constant 0              |
//! | `membrane.preset`           | `fhn`, a=0.1 k=0.5 ϵ=0.01 |
//! | `membrane.v0`, `membrane.w0`| constant 0              |
//! | `time.dt`                   | 0.1                     |
//! | `time.final_time`           | 20                      |
//! | `time.snapshot_stride`      | 10                      |
//! | `solver.tolerance`          | 1e-10                   |
//! | `study.eps`                 | [1/2, 1/4, 1/8]         |
//! | `study.micro_eps`           | smallest `study.eps`    |
//! | `study.macro_resolution`    | `N_max · resolution`    |
//! | `study.translation_base`    | `steps / 8` steps       |
//! | `study.translation_shifts`  | 3                       |
//! | `study.seed`                | 1                       |

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cell_problem::Conductivity;
use crate::convergence::StudyConfig;
use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::geometry::{build_unit_cell, CellGeometrySpec, UnitCell};
use crate::membrane::MembraneConfig;

mod defaults {
    pub const DT: f64 = 0.1;
    pub const FINAL_TIME: f64 = 20.0;
    pub const SNAPSHOT_STRIDE: usize = 10;
    pub const TOLERANCE: f64 = 1e-10;
    pub const EPS: [f64; 3] = [0.5, 0.25, 0.125];
    pub const TRANSLATION_SHIFTS: usize = 3;
    /// The first translation shift as a fraction of the number of steps.
    pub const TRANSLATION_FRACTION: usize = 8;
    pub const SEED: u64 = 1;
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasePair<T> {
    #[serde(default)]
    pub intra: T,
    #[serde(default)]
    pub extra: T,
}

impl<T: Clone> PhasePair<T> {
    pub fn to_array(&self) -> [T; 2] {
        [self.intra.clone(), self.extra.clone()]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MembraneSection {
    #[serde(flatten)]
    pub model: MembraneConfig,
    #[serde(default)]
    pub v0: ScalarField,
    #[serde(default)]
    pub w0: ScalarField,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    #[serde(default = "dt")]
    pub dt: f64,
    #[serde(default = "final_time")]
    pub final_time: f64,
    #[serde(default = "snapshot_stride")]
    pub snapshot_stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "tolerance")]
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    #[serde(default = "eps")]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub micro_eps: Option<f64>,
    #[serde(default)]
    pub macro_resolution: Option<usize>,
    #[serde(default)]
    pub translation_base: Option<usize>,
    #[serde(default = "translation_shifts")]
    pub translation_shifts: usize,
    #[serde(default = "seed")]
    pub seed: u64,
}

fn dt() -> f64 {
    defaults::DT
}
fn final_time() -> f64 {
    defaults::FINAL_TIME
}
fn snapshot_stride() -> usize {
    defaults::SNAPSHOT_STRIDE
}
fn tolerance() -> f64 {
    defaults::TOLERANCE
}
fn eps() -> Vec<f64> {
    defaults::EPS.to_vec()
}
fn translation_shifts() -> usize {
    defaults::TRANSLATION_SHIFTS
}
fn seed() -> u64 {
    defaults::SEED
}

impl Default for TimeSection {
    fn default() -> Self {
        TimeSection {
            dt: dt(),
            final_time: final_time(),
            snapshot_stride: snapshot_stride(),
        }
    }
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            tolerance: tolerance(),
        }
    }
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection {
            eps: eps(),
            micro_eps: None,
            macro_resolution: None,
            translation_base: None,
            translation_shifts: translation_shifts(),
            seed: seed(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: CellGeometrySpec,
    #[serde(default)]
    pub sigma: PhasePair<Conductivity>,
    #[serde(default)]
    pub sources: PhasePair<ScalarField>,
    #[serde(default)]
    pub membrane: MembraneSection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub study: StudySection,
}

/// `N` with `eps = 1/N`, if there is one.
pub fn cells_for_eps(eps: f64) -> Option<usize> {
    if !(eps > 0.0 && eps <= 1.0) {
        return None;
    }
    let n = (1.0 / eps).round();
    ((1.0 / n - eps).abs() <= 1e-12 * eps).then_some(n as usize)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(list) => Error::Config(
                list.into_iter()
                    .map(|m| format!("{}: {m}", path.display()))
                    .collect(),
            ),
            other => other,
        })
    }

    /// Checks every section and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let dim = self.geometry.dimension;
        match build_unit_cell(&self.geometry) {
            Ok(cell) => {
                let res = self.macro_resolution(&cell);
                if let Some(n) = self
                    .cells_per_axis()
                    .into_iter()
                    .find(|&n| !res.is_multiple_of(n))
                {
                    errors.push(format!(
                        "study.macro_resolution: {res} is not a multiple of N = {n}"
                    ));
                }
            }
            Err(e) => errors.push(format!("geometry: {e}")),
        }
        for (name, s) in [
            ("sigma.intra", &self.sigma.intra),
            ("sigma.extra", &self.sigma.extra),
        ] {
            if let Err(e) = s.validate(dim) {
                errors.push(format!("{name}: {e}"));
            }
        }
        for (name, f) in [
            ("sources.intra", &self.sources.intra),
            ("sources.extra", &self.sources.extra),
            ("membrane.v0", &self.membrane.v0),
            ("membrane.w0", &self.membrane.w0),
        ] {
            if let Err(e) = f.validate(dim) {
                errors.push(format!("{name}: {e}"));
            }
        }
        if let Err(e) = self.membrane.model.validate() {
            errors.push(format!("membrane: {e}"));
        }
        let t = &self.time;
        if !(t.dt > 0.0 && t.dt.is_finite()) {
            errors.push(format!("time.dt: {} must be positive", t.dt));
        } else if !(t.final_time >= t.dt) {
            errors.push(format!(
                "time.final_time: {} must be at least dt = {}",
                t.final_time, t.dt
            ));
        }
        if t.snapshot_stride == 0 {
            errors.push("time.snapshot_stride: must be >= 1".into());
        }
        if !(self.solver.tolerance > 0.0 && self.solver.tolerance < 1.0) {
            errors.push(format!(
                "solver.tolerance: {} must lie in (0, 1)",
                self.solver.tolerance
            ));
        }
        if self.study.eps.is_empty() {
            errors.push("study.eps: needs at least one value".into());
        }
        for e in self.study.eps.iter().chain(self.study.micro_eps.iter()) {
            if cells_for_eps(*e).is_none() {
                errors.push(format!("study.eps: {e}: eps must be 1/N"));
            }
        }
        if self.study.eps.windows(2).any(|w| !(w[1] < w[0])) {
            errors.push("study.eps: values must be strictly decreasing".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    /// Hex sha256 of the canonical JSON serialization (defaults filled in).
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("configuration serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn cell(&self) -> Result<UnitCell> {
        build_unit_cell(&self.geometry)
    }

    pub fn cells_per_axis(&self) -> Vec<usize> {
        self.study
            .eps
            .iter()
            .filter_map(|e| cells_for_eps(*e))
            .collect()
    }

    /// `N` for the `micro` subcommand.
    pub fn micro_cells(&self) -> usize {
        self.study
            .micro_eps
            .and_then(cells_for_eps)
            .or_else(|| self.cells_per_axis().into_iter().max())
            .unwrap_or(1)
    }

    pub fn macro_resolution(&self, cell: &UnitCell) -> usize {
        self.study.macro_resolution.unwrap_or_else(|| {
            self.cells_per_axis().into_iter().max().unwrap_or(1) * cell.resolution
        })
    }

    pub fn steps(&self) -> usize {
        (self.time.final_time / self.time.dt + 1e-9).floor() as usize
    }

    pub fn study_config(&self, cell: &UnitCell) -> Result<StudyConfig> {
        let mut s = StudyConfig::new(
            self.geometry.clone(),
            self.membrane.model.model(),
            self.cells_per_axis(),
            self.time.dt,
            self.time.final_time,
        );
        s.sigma = self.sigma.to_array();
        s.sources = self.sources.to_array();
        s.v0 = self.membrane.v0.clone();
        s.w0 = self.membrane.w0.clone();
        s.tolerance = self.solver.tolerance;
        s.macro_resolution = Some(self.macro_resolution(cell));
        s.translation_base = Some(
            self.study
                .translation_base
                .unwrap_or((self.steps() / defaults::TRANSLATION_FRACTION).max(1)),
        );
        s.translation_shifts = self.study.translation_shifts;
        s.config_hash = self.hash();
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[geometry]
kind = "laminate"
thickness = 0.5
axis = 0
resolution = 8
dimension = 2
"#;

    #[test]
    fn minimal_laminate_gets_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.time.dt, 0.1);
        assert_eq!(c.solver.tolerance, 1e-10);
        assert_eq!(c.study.eps, vec![0.5, 0.25, 0.125]);
        assert_eq!(c.sigma.intra, Conductivity::identity());
        assert_eq!(c.membrane.model, MembraneConfig::default());
    }

    #[test]
    fn misaligned_thickness_names_parameter() {
        let text = MINIMAL.replace("0.5", "0.3");
        let Err(Error::Config(list)) = RunConfig::parse(&text) else {
            panic!("expected config error")
        };
        assert!(
            list.iter().any(|m| m.contains("geometry.thickness")),
            "{list:?}"
        );
    }

    #[test]
    fn eps_must_be_reciprocal_integer() {
        let text = format!("{MINIMAL}\n[study]\neps = [0.5, 0.3]\n");
        let Err(Error::Config(list)) = RunConfig::parse(&text) else {
            panic!("expected config error")
        };
        assert!(
            list.iter().any(|m| m.contains("eps must be 1/N")),
            "{list:?}"
        );
    }

    #[test]
    fn all_errors_are_reported() {
        let text = format!(
            "{}\n[time]\ndt = -1.0\n[study]\neps = []\n",
            MINIMAL.replace("0.5", "0.3")
        );
        let Err(Error::Config(list)) = RunConfig::parse(&text) else {
            panic!("expected config error")
        };
        assert!(list.len() >= 3, "{list:?}");
        assert!(list.iter().any(|m| m.starts_with("time.dt")));
        assert!(list.iter().any(|m| m.starts_with("study.eps")));
        assert!(list.iter().any(|m| m.starts_with("geometry")));
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let Err(Error::Config(list)) = RunConfig::parse("[geometry]\nkind = \n") else {
            panic!("expected config error")
        };
        assert!(list[0].contains("line 2"), "{list:?}");
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = RunConfig::parse(MINIMAL).unwrap();
        let spaced = MINIMAL
            .replace(" = ", "   =   ")
            .replace("\n[", "\n\n# comment\n[");
        let b = RunConfig::parse(&spaced).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig::parse(&MINIMAL.replace("resolution = 8", "resolution = 16")).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn reciprocal_detection() {
        assert_eq!(cells_for_eps(0.125), Some(8));
        assert_eq!(cells_for_eps(1.0 / 3.0), Some(3));
        assert_eq!(cells_for_eps(0.3), None);
        assert_eq!(cells_for_eps(0.0), None);
    }
}
