use std::path::Path;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::{Experiment, OccupancyMethod, RunConfig, ShapeSource};
use super::writers::{write_csv, write_field_pgm, write_field_vtk, write_json, write_nodal_vtk};
use super::{exact_disk_solution, masked_l2_distance, masked_l2_error, prepare_output};
use crate::error::{Error, Result};
use crate::geometry::BoundaryPointCloud;
use crate::grid_fem::{BackgroundGrid, ElementQuadrature, NodalField};
use crate::occupancy::{
    eikonal_loss, eikonal_sdf, occupancy_grid, winding_number, EikonalParams, ElementLabel, OccupancyField,
};
use crate::optimizer::probes::loglog_slope;
use crate::optimizer::{MinimizeOptions, OptimTrace, StepSchedule};
use crate::parametric::{train_family, DenseNet, ShapeSample};
use crate::residual::{
    solve_navier_stokes, solve_poisson, LossBreakdown, PdeProblem, PoissonSolve, PoissonSystem,
};

fn circle_params(cfg: &RunConfig) -> Result<([f64; 2], f64, usize)> {
    match cfg.shape {
        ShapeSource::Circle { center, radius, points } => Ok((center, radius, points)),
        _ => Err(Error::Config(format!("{:?} needs a circle shape", cfg.experiment))),
    }
}

fn single_entry_trace(loss: f64, grad: &[f64], seconds: f64) -> OptimTrace {
    OptimTrace {
        loss: vec![loss],
        grad_norm: vec![grad.iter().fold(0.0, |m, g| m.max(g.abs()))],
        dist_to_ref: vec![f64::NAN],
        seconds: vec![seconds],
        converged: true,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub cells: usize,
    pub h: f64,
    pub l2_error: f64,
    /// Solution at the grid node nearest the disk center.
    pub center_value: f64,
    pub loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log error` against `log h`.
    pub slope: f64,
    pub exact_center: f64,
    pub errors_decrease: bool,
}

/// Converged direct solves of the disk problem over `cfg.resolutions`.
pub fn run_disk_convergence(cfg: &RunConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let out = prepare_output(cfg)?;
    let (center, radius, _) = circle_params(cfg)?;
    let cloud = cfg.shape.cloud()?;
    let exact = |p: [f64; 2]| exact_disk_solution((p[0] - center[0]).hypot(p[1] - center[1]), radius);
    let mut rows = Vec::new();
    let mut finest = None;
    for &n in &cfg.resolutions {
        let start = Instant::now();
        let grid = cfg.grid_with(n)?;
        let occ = cfg.occupancy_for(&cloud, &grid)?;
        let prob = cfg.problem(&cloud);
        let sys = PoissonSystem::assemble(&grid, &occ, &cloud, &prob, &cfg.weights)?;
        let sol = solve_poisson(&grid, &sys, None, &PoissonSolve::Direct)?;
        let l2_error = masked_l2_error(&grid, &occ, sol.field.values(), exact)?;
        let h = grid.h();
        let ci = ((center[0] - grid.lower()[0]) / h).round() as usize;
        let cj = ((center[1] - grid.lower()[1]) / h).round() as usize;
        let center_value = sol.field.values()[grid.node_index(ci, cj)];
        let row = ConvergenceRow {
            cells: n,
            h,
            l2_error,
            center_value,
            loss: sol.breakdown.total,
            seconds: start.elapsed().as_secs_f64(),
        };
        info!("disk n = {n}: L2 error {l2_error:.4e}, center {center_value:.6}");
        rows.push(row);
        finest = Some((grid, sol.field));
    }
    let hs: Vec<f64> = rows.iter().map(|r| r.h.ln()).collect();
    let es: Vec<f64> = rows.iter().map(|r| r.l2_error.ln()).collect();
    let report = ConvergenceReport {
        slope: loglog_slope(&hs, &es),
        exact_center: exact_disk_solution(0.0, radius),
        errors_decrease: rows.windows(2).all(|w| w[1].l2_error < w[0].l2_error),
        rows,
    };
    if let Some(dir) = out {
        let table: Vec<Vec<f64>> = report
            .rows
            .iter()
            .map(|r| vec![r.cells as f64, r.h, r.l2_error, r.center_value, r.loss, r.seconds])
            .collect();
        write_csv(&["cells", "h", "l2_error", "center_value", "loss", "seconds"], &table, dir.join("convergence.csv"))?;
        write_csv(&["cells", "loss"], &table.iter().map(|r| vec![r[0], r[4]]).collect::<Vec<_>>(), dir.join("trace.csv"))?;
        if let Some((grid, field)) = &finest {
            write_nodal_vtk(grid, field, &["u"], dir.join("solution.vtk"))?;
            write_field_pgm(grid, field.values(), dir.join("solution.pgm"))?;
        }
        write_json(&report, dir.join("report.json"))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonShapeReport {
    pub breakdown: LossBreakdown,
    pub min_active: f64,
    pub max_active: f64,
    pub maximum_principle: bool,
    /// `max |u(pᵢ) − g|` over the cloud.
    pub boundary_deviation: f64,
    /// `max |u|` over the outer-wall nodes.
    pub wall_max_abs: f64,
    /// Largest increase between consecutive samples along the ray from the
    /// object centroid to the right wall (0 for a non-increasing profile).
    pub radial_max_increase: f64,
}

fn ray_profile(grid: &BackgroundGrid, field: &NodalField, cloud: &BoundaryPointCloud, samples: usize) -> Result<Vec<f64>> {
    let c = cloud.centroid();
    let end = [grid.upper()[0], c[1]];
    let eps = 1e-9 * grid.h();
    let mut inside_until = 0;
    let pts: Vec<[f64; 2]> = (0..=samples)
        .map(|k| {
            let t = k as f64 / samples as f64;
            [c[0] + t * (end[0] - c[0]), c[1]]
        })
        .collect();
    for (k, p) in pts.iter().enumerate() {
        if winding_number(cloud, p, eps)? > 0.5 {
            inside_until = k + 1;
        }
    }
    pts[inside_until.min(samples)..]
        .iter()
        .map(|&p| field.interpolate_component(grid, p, 0))
        .collect()
}

/// Heat-source solve: `u = g` on the cloud, zero walls, object interior
/// masked.
pub fn run_poisson_shape(cfg: &RunConfig) -> Result<PoissonShapeReport> {
    cfg.validate()?;
    let out = prepare_output(cfg)?;
    let start = Instant::now();
    let grid = cfg.grid()?;
    let cloud = cfg.shape.cloud()?;
    let occ = cfg.occupancy_for(&cloud, &grid)?;
    let prob = cfg.problem(&cloud);
    let sys = PoissonSystem::assemble(&grid, &occ, &cloud, &prob, &cfg.weights)?;
    let sol = solve_poisson(&grid, &sys, None, &PoissonSolve::Direct)?;
    let u = sol.field.values();
    let active: Vec<f64> = (0..grid.num_nodes()).filter(|&i| !occ.is_interior(i)).map(|i| u[i]).collect();
    let min_active = active.iter().copied().fold(f64::INFINITY, f64::min);
    let max_active = active.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut boundary_deviation: f64 = 0.0;
    for i in 0..cloud.len() {
        let v = sol.field.interpolate_component(&grid, cloud.point2(i), 0)?;
        boundary_deviation = boundary_deviation.max((v - prob.robin.g).abs());
    }
    let wall_max_abs = (0..grid.num_nodes())
        .filter(|&i| grid.is_boundary_node(i))
        .fold(0.0f64, |m, i| m.max(u[i].abs()));
    let profile = ray_profile(&grid, &sol.field, &cloud, 4 * grid.cells()[0])?;
    let radial_max_increase = profile.windows(2).fold(0.0f64, |m, w| m.max(w[1] - w[0]));
    let hi = prob.robin.g.max(0.0);
    let lo = prob.robin.g.min(0.0);
    let report = PoissonShapeReport {
        breakdown: sol.breakdown,
        min_active,
        max_active,
        maximum_principle: min_active >= lo - 1e-6 && max_active <= hi + 1e-6,
        boundary_deviation,
        wall_max_abs,
        radial_max_increase,
    };
    if let Some(dir) = out {
        let x = sys.restrict(u);
        single_entry_trace(sol.breakdown.total, &sys.gradient(&x), start.elapsed().as_secs_f64())
            .write_csv(dir.join("trace.csv"))?;
        write_nodal_vtk(&grid, &sol.field, &["u"], dir.join("solution.vtk"))?;
        write_field_pgm(&grid, u, dir.join("solution.pgm"))?;
        write_field_pgm(&grid, occ.chi(), dir.join("occupancy.pgm"))?;
        write_json(&report, dir.join("report.json"))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub viscosity: f64,
    pub reynolds: f64,
    pub iterations: usize,
    pub breakdown: LossBreakdown,
    /// `‖∇·u‖ / ‖∇u‖` over the fluid Gauss points.
    pub divergence: f64,
    /// Same ratio for the lumped L² projection of `∇·u` onto the nodal basis.
    pub weak_divergence: f64,
    /// `‖uₓ(x, y) − uₓ(x, H − y)‖ / ‖uₓ‖` over fluid nodes.
    pub symmetry_defect: f64,
    /// Largest speed at the cloud points divided by the peak inflow.
    pub slip_ratio: f64,
    /// Location of the largest centerline pressure upstream of the object.
    pub stagnation_x: f64,
    /// Most upstream cloud point on the centerline.
    pub front_x: f64,
    pub stagnation_on_front: bool,
    /// `max |u − u_inlet|` over the inflow nodes.
    pub inlet_deviation: f64,
    pub seconds: f64,
}

/// Flow diagnostics of a channel solution `u = (uₓ, u_y, p)`.
pub fn channel_diagnostics(
    grid: &BackgroundGrid,
    occ: &OccupancyField,
    cloud: &BoundaryPointCloud,
    u: &NodalField,
    peak: f64,
) -> Result<ChannelReport> {
    if u.n_dof() != 3 {
        return Err(Error::State(format!("flow field has {} components, expected 3", u.n_dof())));
    }
    let quad = ElementQuadrature::new(grid, 2)?;
    let mask = occ.gauss_mask(grid, &quad);
    let nq = quad.len();
    let mut div2 = 0.0;
    let mut grad2 = 0.0;
    let mut proj = vec![0.0; grid.num_nodes()];
    let mut mass = vec![0.0; grid.num_nodes()];
    for e in 0..grid.num_elements() {
        let nodes = grid.element_nodes(e);
        for q in 0..nq {
            if !mask[e * nq + q] {
                continue;
            }
            let gp = quad.point(grid, e, q);
            let mut g = [[0.0; 2]; 2];
            for a in 0..4 {
                for c in 0..2 {
                    for d in 0..2 {
                        g[c][d] += gp.gradients[a][d] * u.get(nodes[a], c);
                    }
                }
            }
            let div = g[0][0] + g[1][1];
            div2 += gp.jxw * div * div;
            grad2 += gp.jxw * g.iter().flatten().map(|v| v * v).sum::<f64>();
            for a in 0..4 {
                proj[nodes[a]] += gp.jxw * gp.values[a] * div;
                mass[nodes[a]] += gp.jxw * gp.values[a];
            }
        }
    }
    let weak2: f64 = proj
        .iter()
        .zip(&mass)
        .filter(|(_, &m)| m > 0.0)
        .map(|(p, m)| p * p / m)
        .sum();
    let grad_norm = grad2.sqrt().max(f64::MIN_POSITIVE);

    let [nx, ny] = grid.nodes_per_axis();
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..ny {
        for i in 0..nx {
            let a = grid.node_index(i, j);
            let b = grid.node_index(i, ny - 1 - j);
            if occ.is_interior(a) || occ.is_interior(b) {
                continue;
            }
            num += (u.get(a, 0) - u.get(b, 0)).powi(2);
            den += u.get(a, 0).powi(2);
        }
    }

    let mut slip: f64 = 0.0;
    for i in 0..cloud.len() {
        let v = u.interpolate(grid, cloud.point2(i))?;
        slip = slip.max(v[0].hypot(v[1]));
    }

    let centroid = cloud.centroid();
    let jm = ((centroid[1] - grid.lower()[1]) / grid.spacing()[1]).round() as usize;
    let mut front_x = f64::INFINITY;
    for i in 0..cloud.len() {
        let p = cloud.point2(i);
        if (p[1] - centroid[1]).abs() <= grid.spacing()[1] {
            front_x = front_x.min(p[0]);
        }
    }
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    for i in 0..nx {
        let a = grid.node_index(i, jm);
        let x = grid.node_coords(a)[0];
        if x > centroid[0] || occ.is_interior(a) {
            continue;
        }
        if u.get(a, 2) > best.0 {
            best = (u.get(a, 2), x);
        }
    }
    let h = grid.spacing()[0];

    let height = grid.extent()[1];
    let mut inlet: f64 = 0.0;
    for j in 0..ny {
        let a = grid.node_index(0, j);
        let s = 2.0 * (grid.node_coords(a)[1] - grid.lower()[1]) / height - 1.0;
        inlet = inlet.max((u.get(a, 0) - peak * (1.0 - s * s)).abs()).max(u.get(a, 1).abs());
    }

    Ok(ChannelReport {
        viscosity: f64::NAN,
        reynolds: f64::NAN,
        iterations: 0,
        breakdown: LossBreakdown { pde_term: 0.0, boundary_term: 0.0, exterior_term: 0.0, total: 0.0, weights: [0.0; 3] },
        divergence: div2.sqrt() / grad_norm,
        weak_divergence: weak2.sqrt() / grad_norm,
        symmetry_defect: if den > 0.0 { (num / den).sqrt() } else { 0.0 },
        slip_ratio: slip / peak.abs().max(f64::MIN_POSITIVE),
        stagnation_x: best.1,
        front_x,
        stagnation_on_front: (best.1 - front_x).abs() <= 2.0 * h,
        inlet_deviation: inlet,
        seconds: 0.0,
    })
}

/// Steady flow past the configured obstacle in the `2 × 1` channel.
pub fn run_ns_channel(cfg: &RunConfig) -> Result<ChannelReport> {
    cfg.validate()?;
    let out = prepare_output(cfg)?;
    let start = Instant::now();
    let grid = cfg.grid()?;
    let cloud = cfg.shape.cloud()?;
    let occ = cfg.occupancy_for(&cloud, &grid)?;
    let prob = cfg.problem(&cloud);
    let (u, solve) = solve_navier_stokes(&grid, &occ, &cloud, &prob, &cfg.weights, &cfg.ns_solver)?;
    let mut report = channel_diagnostics(&grid, &occ, &cloud, &u, cfg.physics.peak_inflow)?;
    report.viscosity = prob.viscosity;
    report.reynolds = cfg.physics.reynolds;
    report.iterations = solve.iterations;
    report.breakdown = solve.breakdown;
    report.seconds = start.elapsed().as_secs_f64();
    info!(
        "channel: divergence {:.3e}, symmetry {:.3e}, slip {:.3e}, stagnation x {:.4}",
        report.divergence, report.symmetry_defect, report.slip_ratio, report.stagnation_x
    );
    if let Some(dir) = out {
        solve.trace.write_csv(dir.join("trace.csv"))?;
        write_nodal_vtk(&grid, &u, &["ux", "uy", "p"], dir.join("flow.vtk"))?;
        let speed: Vec<f64> = (0..grid.num_nodes()).map(|i| u.get(i, 0).hypot(u.get(i, 1))).collect();
        write_field_pgm(&grid, &speed, dir.join("speed.pgm"))?;
        write_field_pgm(&grid, &u.component(2), dir.join("pressure.pgm"))?;
        write_json(&report, dir.join("report.json"))?;
    }
    Ok(report)
}

/// `count` circles along a path through `(center, radius)`: centers shift
/// by ±0.15 in `x` and radii scale by `0.8..=1.2`.
pub fn circle_family(
    grid: &BackgroundGrid,
    center: [f64; 2],
    radius: f64,
    points: usize,
    count: usize,
) -> Result<Vec<ShapeSample>> {
    (0..count)
        .map(|k| {
            let t = if count > 1 { k as f64 / (count - 1) as f64 } else { 0.5 };
            let c = [center[0] + 0.3 * (t - 0.5), center[1]];
            ShapeSample::circle(grid, c, radius * (0.8 + 0.4 * t), points)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeQuery {
    pub index: usize,
    pub descriptor: Vec<f64>,
    pub held_out: bool,
    /// L² distance between the predicted field and the direct solve.
    pub distance: f64,
    pub boundary_term: f64,
    pub exterior_term: f64,
    pub total: f64,
    pub direct_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverfitReport {
    /// L² error of the direct solve against the exact disk solution.
    pub direct_error: f64,
    /// L² distance between the single-shape network and the direct solve.
    pub network_distance: f64,
    pub ratio: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricReport {
    pub shapes: Vec<ShapeQuery>,
    pub train_mean_distance: f64,
    pub held_out_max_distance: f64,
    /// `held_out_max_distance / train_mean_distance`.
    pub held_out_ratio: f64,
    pub train_mean_boundary: f64,
    pub held_out_max_boundary: f64,
    pub final_loss: f64,
    pub epochs: usize,
    pub overfit: Option<OverfitReport>,
}

fn network_sizes(cfg: &RunConfig, inputs: usize, outputs: usize) -> Vec<usize> {
    std::iter::once(inputs).chain(cfg.training.hidden.iter().copied()).chain([outputs]).collect()
}

fn training_options(cfg: &RunConfig, epochs: usize) -> MinimizeOptions {
    let mut opts = MinimizeOptions::new(StepSchedule::adam(cfg.training.learning_rate));
    opts.stop.max_epochs = epochs;
    opts.stop.grad_tol = 0.0;
    opts.gradient_check = None;
    opts
}

fn query_sample(
    net: &DenseNet,
    grid: &BackgroundGrid,
    sample: &ShapeSample,
    prob: &PdeProblem,
    cfg: &RunConfig,
) -> Result<(ShapeQuery, NodalField)> {
    let sys = PoissonSystem::assemble(grid, &sample.occupancy, &sample.cloud, prob, &cfg.weights)?;
    let direct = solve_poisson(grid, &sys, None, &PoissonSolve::Direct)?;
    let pred = net.forward(&sample.descriptor)?;
    let b = sys.breakdown(&sys.restrict(&pred));
    let query = ShapeQuery {
        index: 0,
        descriptor: sample.descriptor.clone(),
        held_out: false,
        distance: masked_l2_distance(grid, &sample.occupancy, &pred, direct.field.values())?,
        boundary_term: b.boundary_term,
        exterior_term: b.exterior_term,
        total: b.total,
        direct_total: direct.breakdown.total,
    };
    Ok((query, NodalField::new(grid, 1, pred)?))
}

/// Single-shape fit of the disk problem against its direct solve.
fn overfit_disk(cfg: &RunConfig, grid: &BackgroundGrid) -> Result<OverfitReport> {
    let disk = RunConfig { cells: cfg.cells, ..RunConfig::disk_convergence() };
    let (center, radius, _) = circle_params(&disk)?;
    let cloud = disk.shape.cloud()?;
    let occ = disk.occupancy_for(&cloud, grid)?;
    let prob = disk.problem(&cloud);
    let sys = PoissonSystem::assemble(grid, &occ, &cloud, &prob, &disk.weights)?;
    let direct = solve_poisson(grid, &sys, None, &PoissonSolve::Direct)?;
    let direct_error = masked_l2_error(grid, &occ, direct.field.values(), |p| {
        exact_disk_solution((p[0] - center[0]).hypot(p[1] - center[1]), radius)
    })?;
    let sample = ShapeSample { descriptor: vec![center[0], center[1], radius], cloud, occupancy: occ };
    let mut net = DenseNet::new(&network_sizes(cfg, 3, grid.num_nodes()), cfg.training.init_seed)?;
    let opts = training_options(cfg, cfg.training.overfit_epochs);
    let rep = train_family(&mut net, grid, std::slice::from_ref(&sample), &prob, &disk.weights, &opts, 1, cfg.training.batch_seed)?;
    let pred = net.forward(&sample.descriptor)?;
    let network_distance = masked_l2_distance(grid, &sample.occupancy, &pred, direct.field.values())?;
    Ok(OverfitReport {
        direct_error,
        network_distance,
        ratio: network_distance / direct_error,
        final_loss: rep.shape_losses[0],
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Trains the dense model on a circle family with some members held out and
/// compares every member against its direct solve.
pub fn run_parametric(cfg: &RunConfig) -> Result<ParametricReport> {
    cfg.validate()?;
    let out = prepare_output(cfg)?;
    let tc = &cfg.training;
    if tc.family_size < 2 {
        return Err(Error::Config("the family needs at least two shapes".into()));
    }
    if tc.held_out.iter().any(|&k| k >= tc.family_size) {
        return Err(Error::Config(format!("held-out indices {:?} exceed family size {}", tc.held_out, tc.family_size)));
    }
    let grid = cfg.grid()?;
    let (center, radius, points) = circle_params(cfg)?;
    let family = circle_family(&grid, center, radius, points, tc.family_size)?;
    let train: Vec<ShapeSample> = family
        .iter()
        .enumerate()
        .filter(|(k, _)| !tc.held_out.contains(k))
        .map(|(_, s)| s.clone())
        .collect();
    if train.is_empty() {
        return Err(Error::Config("every shape is held out".into()));
    }
    let prob = cfg.problem(&family[0].cloud);
    let mut net = DenseNet::new(&network_sizes(cfg, 3, grid.num_nodes()), tc.init_seed)?;
    let opts = training_options(cfg, tc.epochs);
    let batch = tc.batch_size.clamp(1, train.len());
    let rep = train_family(&mut net, &grid, &train, &prob, &cfg.weights, &opts, batch, tc.batch_seed)?;
    info!("parametric training: final loss {:.4e}", rep.trace.final_loss().unwrap_or(f64::NAN));

    let mut shapes = Vec::with_capacity(family.len());
    let mut fields = Vec::with_capacity(family.len());
    for (k, sample) in family.iter().enumerate() {
        let (mut q, field) = query_sample(&net, &grid, sample, &prob, cfg)?;
        q.index = k;
        q.held_out = tc.held_out.contains(&k);
        shapes.push(q);
        fields.push(field);
    }
    let in_train = || shapes.iter().filter(|s| !s.held_out);
    let held = || shapes.iter().filter(|s| s.held_out);
    let train_mean_distance = mean(in_train().map(|s| s.distance));
    let held_out_max_distance = held().map(|s| s.distance).fold(f64::NAN, f64::max);
    let overfit = if tc.overfit_epochs > 0 { Some(overfit_disk(cfg, &grid)?) } else { None };
    let report = ParametricReport {
        train_mean_distance,
        held_out_max_distance,
        held_out_ratio: held_out_max_distance / train_mean_distance,
        train_mean_boundary: mean(in_train().map(|s| s.boundary_term)),
        held_out_max_boundary: held().map(|s| s.boundary_term).fold(f64::NAN, f64::max),
        final_loss: rep.trace.final_loss().unwrap_or(f64::NAN),
        epochs: rep.trace.len(),
        overfit,
        shapes,
    };
    if let Some(dir) = out {
        rep.trace.write_csv(dir.join("trace.csv"))?;
        net.save(tc.checkpoint.clone().unwrap_or_else(|| dir.join("model.txt")))?;
        for (k, field) in fields.iter().enumerate() {
            write_nodal_vtk(&grid, field, &["u"], dir.join(format!("shape_{k}.vtk")))?;
        }
        write_json(&report, dir.join("report.json"))?;
    } else if let Some(path) = &tc.checkpoint {
        net.save(path)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub query: ShapeQuery,
}

/// Evaluates a saved model on the circle `descriptor = (cx, cy, R)` and
/// compares it with the direct solve.
pub fn query_model(cfg: &RunConfig, checkpoint: &Path, descriptor: [f64; 3]) -> Result<QueryReport> {
    cfg.validate()?;
    let out = prepare_output(cfg)?;
    let net = DenseNet::load(checkpoint)?;
    let grid = cfg.grid()?;
    if net.output_dim() != grid.num_nodes() {
        return Err(Error::Config(format!(
            "model emits {} values but the grid has {} nodes",
            net.output_dim(),
            grid.num_nodes()
        )));
    }
    let (_, _, points) = circle_params(cfg)?;
    let sample = ShapeSample::circle(&grid, [descriptor[0], descriptor[1]], descriptor[2], points)?;
    let prob = cfg.problem(&sample.cloud);
    let (query, field) = query_sample(&net, &grid, &sample, &prob, cfg)?;
    let report = QueryReport { query };
    if let Some(dir) = out {
        let b = &report.query;
        OptimTrace {
            loss: vec![b.total],
            grad_norm: vec![f64::NAN],
            dist_to_ref: vec![b.distance],
            seconds: vec![0.0],
            converged: true,
        }
        .write_csv(dir.join("trace.csv"))?;
        write_nodal_vtk(&grid, &field, &["u"], dir.join("prediction.vtk"))?;
        write_field_pgm(&grid, field.values(), dir.join("prediction.pgm"))?;
        write_json(&report, dir.join("report.json"))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyReport {
    pub interior_nodes: usize,
    pub active_elements: usize,
    pub cut_elements: usize,
    pub inactive_elements: usize,
    /// Signed-distance loss at the returned field (signed-distance runs).
    pub eikonal_loss: Option<f64>,
}

/// Occupancy of the configured shape, by winding numbers or, for
/// [`Experiment::Sdf`], by the signed-distance fit.
pub fn run_occupancy(cfg: &RunConfig) -> Result<OccupancyReport> {
    cfg.validate()?;
    let out = prepare_output(cfg)?;
    let start = Instant::now();
    let grid = cfg.grid()?;
    let cloud = cfg.shape.cloud()?;
    let (occ, eikonal_loss) = match (cfg.experiment, cfg.occupancy) {
        (Experiment::Sdf, method) => {
            let params = match method {
                OccupancyMethod::Eikonal(p) => p,
                OccupancyMethod::Winding => EikonalParams::default(),
            };
            let occ = eikonal_sdf(&cloud, &grid, &params)?;
            let phi = occ.phi().expect("signed-distance field carries phi");
            let loss = eikonal_loss(&cloud, &grid, phi, &params)?;
            (occ, Some(loss))
        }
        _ => (occupancy_grid(&cloud, &grid)?, None),
    };
    let report = OccupancyReport {
        interior_nodes: occ.num_interior(),
        active_elements: occ.count(ElementLabel::Active),
        cut_elements: occ.count(ElementLabel::Cut),
        inactive_elements: occ.count(ElementLabel::Inactive),
        eikonal_loss,
    };
    if let Some(dir) = out {
        single_entry_trace(eikonal_loss.unwrap_or(0.0), &[], start.elapsed().as_secs_f64()).write_csv(dir.join("trace.csv"))?;
        let mut blocks: Vec<(&str, &[f64])> = vec![("chi", occ.chi())];
        if let Some(phi) = occ.phi() {
            blocks.push(("phi", phi));
            write_field_pgm(&grid, phi, dir.join("phi.pgm"))?;
        }
        write_field_vtk(&grid, &blocks, dir.join("occupancy.vtk"))?;
        write_field_pgm(&grid, occ.chi(), dir.join("occupancy.pgm"))?;
        write_json(&report, dir.join("report.json"))?;
    }
    Ok(report)
}
