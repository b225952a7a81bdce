//! Multiscale bidomain solver for cardiac electrophysiology on periodic
//! cell geometries, with tools to measure how the microscopic model
//! approaches its homogenized limit.

pub mod cell_problem;
pub mod cli;
pub mod config;
pub mod convergence;
mod coupled;
pub mod discretize;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod macro_sim;
pub mod membrane;
pub mod micro_sim;
pub mod unfolding;

pub use error::{Error, Result};
