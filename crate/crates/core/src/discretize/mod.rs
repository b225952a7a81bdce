//! Structured-grid Q1 discretization: meshes, sparse operators, assembly,
//! and the conjugate-gradient solver.

pub mod assembly;
pub mod cg;
pub mod mesh;
pub mod sparse;
pub mod surface;

pub use assembly::{
    assemble_diffusion, assemble_flux_load, assemble_load, assemble_volume_mass, identity_tensor,
    scale_tensor, spd_violation, Tensor,
};
pub use cg::{solve_spd, solve_spd_from, Nullspace, SolveOptions, SolveReport};
pub use mesh::{DofSpace, Grid, Point};
pub use sparse::CsrMatrix;
pub use surface::{Face, SurfaceSpace};
