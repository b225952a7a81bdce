//! Command-line front end: `bidomain <subcommand> --config <path> [--out <dir>] [--serial]`.
//!
//! Exit status is 0 on success, 1 on numerical failure and 2 on configuration
//! errors. Failures are also reported as one JSON object on stderr.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::cell_problem::{effective_tensor, tensor_diagnostics, Conductivity};
use crate::config::RunConfig;
use crate::convergence::{macro_tensors, run_study, write_report, VERSION};
use crate::error::{Error, Result};
use crate::geometry::{phase_connectivity, tile_domain, Phase, UnitCell};
use crate::macro_sim::{macro_residuals, run_macro, MacroConfig};
use crate::membrane::{check_membrane_structure, StructureOptions};
use crate::micro_sim::{
    micro_monitors, run_micro, write_monitor_csv, write_snapshots, MicroConfig,
};
use crate::unfolding::identity_suite;

/// Identity tolerance of `unfold-check`.
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Parser)]
#[command(
    name = "bidomain",
    version,
    about = "Multiscale bidomain solver and homogenization checks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long, global = true)]
    pub serial: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Effective tensors and cell diagnostics.
    CellTensor,
    /// One micro run at `study.micro_eps`.
    Micro,
    /// One macro run with the effective tensors.
    Macro,
    /// The homogenization study over `study.eps`.
    Converge,
    /// Unfolding identities on random fields.
    UnfoldCheck,
}

/// 2 for problems with the input, 1 for everything else.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Config(_)
        | Error::Alignment { .. }
        | Error::Geometry(_)
        | Error::Degenerate(_)
        | Error::Ellipticity { .. }
        | Error::Invalid(_) => 2,
        _ => 1,
    }
}

fn kind(e: &Error) -> &'static str {
    match e.root() {
        Error::Config(_) => "config",
        Error::Alignment { .. } => "alignment",
        Error::Geometry(_) => "geometry",
        Error::Degenerate(_) => "degenerate",
        Error::Ellipticity { .. } => "ellipticity",
        Error::DimensionMismatch { .. } => "dimension-mismatch",
        Error::Inconsistent { .. } => "inconsistent",
        Error::NotConverged { .. } => "not-converged",
        Error::NonFinite(_) => "non-finite",
        Error::Resource(_) => "resource",
        Error::Invalid(_) => "invalid",
        Error::Io { .. } => "io",
        Error::Context { .. } => "context",
    }
}

pub fn error_json(e: &Error) -> Value {
    let mut v = json!({
        "error": kind(e),
        "message": e.to_string(),
        "exit_code": exit_code(e),
        "version": VERSION,
    });
    if let Error::Config(list) = e.root() {
        v["errors"] = json!(list);
    }
    v
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, e.into()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn header(cfg: &RunConfig, command: &str) -> Value {
    json!({
        "command": command,
        "version": VERSION,
        "config_hash": cfg.hash(),
    })
}

fn cell_tensor(cfg: &RunConfig, cell: &UnitCell, out: &Path) -> Result<Value> {
    let mut v = header(cfg, "cell-tensor");
    v["geometry_hash"] = json!(cell.geometry_hash());
    v["volumes"] = json!([cell.volume(Phase::Intra), cell.volume(Phase::Extra)]);
    v["membrane_area"] = json!(cell.area);
    let sigma = cfg.sigma.to_array();
    for p in Phase::BOTH {
        let conn = phase_connectivity(cell, p);
        let mut entry = json!({ "connectivity": conn });
        if cell.volume(p) > 0.0 {
            let s: &Conductivity = &sigma[p.index()];
            if s.depends_on_x() {
                log::warn!(
                    "σ_{} depends on x; the tensor is reported at x = 0",
                    p.name()
                );
            }
            let m = effective_tensor(cell, p, s)?;
            let dim = cell.dim;
            let f = |y: &crate::discretize::Point| s.eval(dim, &[0.0; 3], y);
            entry["diagnostics"] = json!(tensor_diagnostics(&m, cell, &f));
            entry["tensor"] = json!(m.rows());
        }
        v[p.name()] = entry;
    }
    v["membrane"] = json!(check_membrane_structure(
        &cfg.membrane.model.model(),
        &StructureOptions::default()
    ));
    write_json(&out.join("cell_tensor.json"), &v)?;
    Ok(v)
}

fn micro(cfg: &RunConfig, cell: &UnitCell, out: &Path) -> Result<Value> {
    let n = cfg.micro_cells();
    let domain = tile_domain(cell, n)?;
    let mut mc = MicroConfig::new(
        domain.clone(),
        cfg.membrane.model.model(),
        cfg.time.dt,
        cfg.time.final_time,
    );
    mc.sigma = cfg.sigma.to_array();
    mc.sources = cfg.sources.to_array();
    mc.v0 = cfg.membrane.v0.clone();
    mc.w0 = cfg.membrane.w0.clone();
    mc.snapshot_stride = cfg.time.snapshot_stride;
    mc.tolerance = cfg.solver.tolerance;
    mc.record_v_history = true;
    let mass = domain.membrane.mass_matrix(false)?;
    let traj = run_micro(mc)?;
    write_monitor_csv(&traj.log, &out.join("micro_monitors.csv"))?;
    let snaps = out.join("micro_snapshots");
    std::fs::create_dir_all(&snaps).map_err(|e| Error::io(&snaps, e))?;
    write_snapshots(&traj, &domain, &snaps)?;
    let steps = cfg.steps();
    let base = cfg.study.translation_base.unwrap_or((steps / 8).max(1));
    let estimates = micro_monitors(&traj, &mass, base, cfg.study.translation_shifts);
    let mut v = header(cfg, "micro");
    v["eps"] = json!(domain.eps);
    v["steps"] = json!(steps);
    v["estimates"] = json!(estimates);
    write_json(&out.join("micro_summary.json"), &v)?;
    Ok(v)
}

fn macro_run(cfg: &RunConfig, cell: &UnitCell, out: &Path) -> Result<Value> {
    let resolution = cfg.macro_resolution(cell);
    let tensors = macro_tensors(cell, &cfg.sigma.to_array(), resolution)?;
    let mut mc = MacroConfig::from_cell(
        cell,
        tensors,
        resolution,
        cfg.membrane.model.model(),
        cfg.time.dt,
        cfg.time.final_time,
    );
    mc.sources = cfg.sources.to_array();
    mc.v0 = cfg.membrane.v0.clone();
    mc.w0 = cfg.membrane.w0.clone();
    mc.snapshot_stride = cfg.time.snapshot_stride;
    mc.tolerance = cfg.solver.tolerance;
    let (solver, traj) = run_macro(mc)?;
    let residuals = macro_residuals(&solver, &traj);

    let path = out.join("macro_final.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::io(&path, e.into()))?;
    w.write_record(["x", "y", "z", "u_i", "u_e", "v", "w"])
        .map_err(|e| Error::io(&path, e.into()))?;
    let last = traj.snapshots.last().expect("initial state is recorded");
    for (k, x) in solver.positions().iter().enumerate() {
        let vals = [
            x[0],
            x[1],
            x[2],
            last.u_i[k],
            last.u_e[k],
            last.v[k],
            last.w[k],
        ];
        w.write_record(vals.iter().map(|v| v.to_string()))
            .map_err(|e| Error::io(&path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let mut v = header(cfg, "macro");
    v["resolution"] = json!(resolution);
    v["final_time"] = json!(last.t);
    v["residuals"] = json!(residuals);
    write_json(&out.join("macro_summary.json"), &v)?;
    Ok(v)
}

fn converge(cfg: &RunConfig, cell: &UnitCell, out: &Path, serial: bool) -> Result<Value> {
    let mut study = cfg.study_config(cell)?;
    study.parallel = !serial;
    let report = run_study(&study)?;
    let paths = write_report(&report, out)?;
    let mut v = header(cfg, "converge");
    v["csv"] = json!(paths.csv);
    v["json"] = json!(paths.json);
    v["e_decreasing"] = json!(report.e_decreasing());
    v["unfolded_decreasing"] = json!(report.unfolded_decreasing());
    v["rows"] = json!(report
        .rows
        .iter()
        .map(|r| json!({"eps": r.eps, "e_eps": r.e_eps, "unfolded_L2": r.unfolded_l2, "order_e": r.order_e}))
        .collect::<Vec<_>>());
    Ok(v)
}

fn unfold_check(cfg: &RunConfig, cell: &UnitCell, out: &Path) -> Result<Value> {
    let checks = identity_suite(
        cell,
        &cfg.cells_per_axis(),
        cfg.study.seed,
        IDENTITY_TOLERANCE,
    )?;
    let passed = checks.iter().all(|c| c.pass);
    let mut v = header(cfg, "unfold-check");
    v["identities_passed"] = json!(passed);
    v["tolerance"] = json!(IDENTITY_TOLERANCE);
    v["checks"] = json!(checks);
    write_json(&out.join("unfold_check.json"), &v)?;
    Ok(v)
}

/// Runs a subcommand on a parsed configuration and returns its summary.
pub fn dispatch(command: Command, cfg: &RunConfig, out: &Path, serial: bool) -> Result<Value> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cell = cfg.cell()?;
    match command {
        Command::CellTensor => cell_tensor(cfg, &cell, out),
        Command::Micro => micro(cfg, &cell, out),
        Command::Macro => macro_run(cfg, &cell, out),
        Command::Converge => converge(cfg, &cell, out, serial),
        Command::UnfoldCheck => unfold_check(cfg, &cell, out),
    }
}

/// Thread count from `BIDOMAIN_THREADS`, forced to 1 in serial mode.
pub fn thread_count(serial: bool) -> Option<usize> {
    if serial {
        return Some(1);
    }
    std::env::var("BIDOMAIN_THREADS")
        .ok()?
        .parse()
        .ok()
        .filter(|&n| n > 0)
}

/// Parses the configuration and dispatches; returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    if let Some(n) = thread_count(cli.serial) {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("could not configure the thread pool: {e}");
        }
    }
    let result = match &cli.config {
        None => Err(Error::Config(vec!["--config <path> is required".into()])),
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            Error::Io { .. } => Error::Config(vec![e.to_string()]),
            other => other,
        }),
    }
    .and_then(|cfg| dispatch(cli.command, &cfg, &cli.out, cli.serial));
    match result {
        Ok(summary) => {
            // a closed pipe on stdout is not a failure of the run
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
            let _ = writeln!(std::io::stdout(), "{text}");
            0
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_root_cause() {
        assert_eq!(exit_code(&Error::Config(vec![])), 2);
        assert_eq!(exit_code(&Error::Invalid("x".into()).context("study")), 2);
        let numerical = Error::NotConverged {
            iterations: 3,
            residual: 1.0,
        };
        assert_eq!(exit_code(&numerical.context("micro run")), 1);
    }

    #[test]
    fn error_json_lists_config_errors() {
        let v = error_json(&Error::Config(vec!["a".into(), "b".into()]));
        assert_eq!(v["exit_code"], 2);
        assert_eq!(v["errors"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn parses_global_flags_after_subcommand() {
        let cli = Cli::try_parse_from(["bidomain", "converge", "--config", "c.toml", "--serial"])
            .unwrap();
        assert_eq!(cli.command, Command::Converge);
        assert!(cli.serial);
        assert_eq!(cli.out, PathBuf::from("out"));
    }
}
