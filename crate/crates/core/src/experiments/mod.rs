//! Experiment harnesses, analytic references and output writers.
//!
//! Every run takes a [`RunConfig`]. When `output_dir` is set it receives the
//! resolved configuration (`config.json`), a trace CSV, field files and a
//! JSON report.

mod config;
mod runs;
mod writers;

use std::path::Path;

pub use config::{Experiment, MaskedSide, OccupancyMethod, Physics, RunConfig, ShapeSource, TrainingConfig};
pub use runs::{
    circle_family, channel_diagnostics, query_model, run_disk_convergence, run_ns_channel, run_parametric,
    run_occupancy, run_poisson_shape, ChannelReport, ConvergenceReport, ConvergenceRow, OccupancyReport, OverfitReport, ParametricReport,
    PoissonShapeReport, QueryReport, ShapeQuery,
};
pub use writers::{
    csv_string, parse_csv, pgm_string, read_csv, write_csv, write_field_pgm, write_field_vtk, write_json,
    write_nodal_vtk, write_string,
};

use crate::error::Result;
use crate::grid_fem::{BackgroundGrid, ElementQuadrature};
use crate::occupancy::OccupancyField;

/// `u(r) = (R² − r²)/4`, the solution of `−Δu = 1` on a disk of radius `R`
/// with `u = 0` on its rim; zero for `r > R`.
pub fn exact_disk_solution(r: f64, radius: f64) -> f64 {
    if r > radius {
        0.0
    } else {
        0.25 * (radius * radius - r * r)
    }
}

/// `√∫ (Σₐ Bₐ uₐ − reference)²` over the Gauss points left unmasked by `occ`.
pub fn masked_l2_error(
    grid: &BackgroundGrid,
    occ: &OccupancyField,
    values: &[f64],
    reference: impl Fn([f64; 2]) -> f64,
) -> Result<f64> {
    let quad = ElementQuadrature::new(grid, 2)?;
    let mask = occ.gauss_mask(grid, &quad);
    let nq = quad.len();
    let mut sum = 0.0;
    for e in 0..grid.num_elements() {
        let nodes = grid.element_nodes(e);
        for q in 0..nq {
            if !mask[e * nq + q] {
                continue;
            }
            let gp = quad.point(grid, e, q);
            let uh: f64 = (0..4).map(|a| gp.values[a] * values[nodes[a]]).sum();
            sum += gp.jxw * (uh - reference(gp.physical)).powi(2);
        }
    }
    Ok(sum.sqrt())
}

/// `√∫ (u − v)²` between two nodal scalar fields over the unmasked region.
pub fn masked_l2_distance(grid: &BackgroundGrid, occ: &OccupancyField, u: &[f64], v: &[f64]) -> Result<f64> {
    let diff: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
    masked_l2_error(grid, occ, &diff, |_| 0.0)
}

fn prepare_output(cfg: &RunConfig) -> Result<Option<&Path>> {
    match cfg.output_dir.as_deref() {
        None => Ok(None),
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
            write_string(&cfg.to_json(), dir.join("config.json"))?;
            Ok(Some(dir))
        }
    }
}

#[cfg(test)]
mod tests;
