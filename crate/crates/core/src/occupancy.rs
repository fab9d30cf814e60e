//! Inside/outside classification of grid nodes from an oriented point cloud.
//!
//! Generalized winding numbers give `χ ≈ 1` inside the closed boundary and
//! `χ ≈ 0` outside. Nodes with `χ` above the threshold belong to the object;
//! elements are inactive (all corners inside), active (none inside) or cut.
//! A signed-distance field can be fitted on top by minimizing a viscous
//! Eikonal residual, with the sign seeded from the winding numbers.

use std::f64::consts::PI;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundaryPointCloud;
use crate::grid_fem::{shape_values, BackgroundGrid, ElementQuadrature};
use crate::sparse::{normal_matrix, solve_spd_matrix, SparseRows};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Generalized winding number of `cloud` at `q`.
///
/// 2D: `Σ aᵢ (pᵢ−q)·nᵢ / (2π‖pᵢ−q‖²)`; 3D: `Σ aᵢ (pᵢ−q)·nᵢ / (4π‖pᵢ−q‖³)`.
/// Distances below `eps` are clamped to `eps`.
pub fn winding_number(cloud: &BoundaryPointCloud, q: &[f64], eps: f64) -> Result<f64> {
    let d = cloud.dim();
    if q.len() != d {
        return Err(Error::Config(format!("query has {} coordinates, cloud is {d}D", q.len())));
    }
    let eps2 = eps * eps;
    let mut sum = 0.0;
    for i in 0..cloud.len() {
        let p = cloud.point(i);
        let n = cloud.normal(i);
        let mut dot = 0.0;
        let mut r2 = 0.0;
        for k in 0..d {
            let r = p[k] - q[k];
            dot += r * n[k];
            r2 += r * r;
        }
        let r2 = r2.max(eps2);
        sum += cloud.area(i) * dot / if d == 2 { r2 } else { r2 * r2.sqrt() };
    }
    Ok(sum / if d == 2 { 2.0 * PI } else { 4.0 * PI })
}

/// Winding numbers at many 2D points, evaluated in parallel.
pub fn winding_numbers(cloud: &BoundaryPointCloud, queries: &[[f64; 2]], eps: f64) -> Result<Vec<f64>> {
    queries.par_iter().map(|q| winding_number(cloud, q, eps)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementLabel {
    /// No corner inside the object.
    Active,
    /// Every corner inside the object.
    Inactive,
    /// Corners on both sides.
    Cut,
}

/// Per-node occupancy with the derived node and element classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyField {
    cells: [usize; 2],
    chi: Vec<f64>,
    phi: Option<Vec<f64>>,
    threshold: f64,
    interior: Vec<bool>,
    elements: Vec<ElementLabel>,
}

impl OccupancyField {
    pub fn from_chi(grid: &BackgroundGrid, chi: Vec<f64>, threshold: f64) -> Result<Self> {
        if chi.len() != grid.num_nodes() {
            return Err(Error::State(format!(
                "occupancy has {} values for {} nodes",
                chi.len(),
                grid.num_nodes()
            )));
        }
        if let Some(i) = chi.iter().position(|c| !c.is_finite()) {
            return Err(Error::Domain(format!("non-finite occupancy at node {i}")));
        }
        let interior: Vec<bool> = chi.iter().map(|&c| c > threshold).collect();
        let elements = classify_labels(grid, &interior);
        Ok(Self {
            cells: grid.cells(),
            chi,
            phi: None,
            threshold,
            interior,
            elements,
        })
    }

    /// No object: every node exterior, every element active.
    pub fn empty(grid: &BackgroundGrid) -> Self {
        Self::from_chi(grid, vec![0.0; grid.num_nodes()], DEFAULT_THRESHOLD).expect("sizes match")
    }

    /// The other side of the boundary: `χ ↦ 1 − χ`, `φ ↦ −φ`.
    pub fn complement(&self) -> Self {
        let chi: Vec<f64> = self.chi.iter().map(|c| 1.0 - c).collect();
        let interior: Vec<bool> = self.interior.iter().map(|b| !b).collect();
        let elements = self
            .elements
            .iter()
            .map(|l| match l {
                ElementLabel::Active => ElementLabel::Inactive,
                ElementLabel::Inactive => ElementLabel::Active,
                ElementLabel::Cut => ElementLabel::Cut,
            })
            .collect();
        Self {
            cells: self.cells,
            chi,
            phi: self.phi.as_ref().map(|p| p.iter().map(|v| -v).collect()),
            threshold: 1.0 - self.threshold,
            interior,
            elements,
        }
    }

    pub fn check_grid(&self, grid: &BackgroundGrid) -> Result<()> {
        if self.cells != grid.cells() {
            return Err(Error::State(format!(
                "occupancy classified on a {:?} grid, used with {:?}",
                self.cells,
                grid.cells()
            )));
        }
        Ok(())
    }

    pub fn chi(&self) -> &[f64] {
        &self.chi
    }

    pub fn phi(&self) -> Option<&[f64]> {
        self.phi.as_deref()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn is_interior(&self, node: usize) -> bool {
        self.interior[node]
    }

    pub fn interior_mask(&self) -> &[bool] {
        &self.interior
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.interior.len()).filter(|&i| self.interior[i]).collect()
    }

    pub fn num_interior(&self) -> usize {
        self.interior.iter().filter(|&&b| b).count()
    }

    pub fn element_labels(&self) -> &[ElementLabel] {
        &self.elements
    }

    /// Elements that take part in assembly (active or cut).
    pub fn assembled_elements(&self) -> Vec<bool> {
        self.elements.iter().map(|l| *l != ElementLabel::Inactive).collect()
    }

    pub fn count(&self, label: ElementLabel) -> usize {
        self.elements.iter().filter(|&&l| l == label).count()
    }

    /// Whether a point of element `e` with basis values `values` lies inside
    /// the object (interpolated `χ` above the threshold).
    pub fn point_masked(&self, nodes: &[usize; 4], values: &[f64; 4]) -> bool {
        let chi: f64 = (0..4).map(|a| values[a] * self.chi[nodes[a]]).sum();
        chi > self.threshold
    }

    /// Contributing Gauss points, flattened as `e * quad.len() + q`.
    pub fn gauss_mask(&self, grid: &BackgroundGrid, quad: &ElementQuadrature) -> Vec<bool> {
        let nq = quad.len();
        let mut mask = vec![false; grid.num_elements() * nq];
        for e in 0..grid.num_elements() {
            match self.elements[e] {
                ElementLabel::Inactive => {}
                ElementLabel::Active => mask[e * nq..(e + 1) * nq].iter_mut().for_each(|m| *m = true),
                ElementLabel::Cut => {
                    let nodes = grid.element_nodes(e);
                    for q in 0..nq {
                        mask[e * nq + q] = !self.point_masked(&nodes, &quad.values[q]);
                    }
                }
            }
        }
        mask
    }
}

fn classify_labels(grid: &BackgroundGrid, interior: &[bool]) -> Vec<ElementLabel> {
    (0..grid.num_elements())
        .map(|e| {
            let inside = grid.element_nodes(e).iter().filter(|&&n| interior[n]).count();
            match inside {
                0 => ElementLabel::Active,
                4 => ElementLabel::Inactive,
                _ => ElementLabel::Cut,
            }
        })
        .collect()
}

/// Element labels of `field` recomputed from its node classification.
pub fn classify_elements(field: &OccupancyField, grid: &BackgroundGrid) -> Result<Vec<ElementLabel>> {
    field.check_grid(grid)?;
    Ok(classify_labels(grid, &field.interior))
}

/// Winding numbers at every grid node, classified with threshold 0.5.
pub fn occupancy_grid(cloud: &BoundaryPointCloud, grid: &BackgroundGrid) -> Result<OccupancyField> {
    if cloud.dim() != 2 {
        return Err(Error::Config("grid occupancy needs a 2D cloud".into()));
    }
    let eps = 1e-9 * grid.h();
    let chi = winding_numbers(cloud, &grid.node_positions(), eps)?;
    OccupancyField::from_chi(grid, chi, DEFAULT_THRESHOLD)
}

/// Settings for the signed-distance fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EikonalParams {
    /// Viscosity weight in `[0, 0.5]`.
    pub tau: f64,
    pub iters: usize,
    /// Initial Levenberg–Marquardt damping, relative to the normal-matrix diagonal.
    pub step: f64,
    /// Weight of the `φ = 0` penalty at the cloud points.
    pub boundary_weight: f64,
    pub quadrature_order: usize,
}

impl Default for EikonalParams {
    fn default() -> Self {
        Self {
            tau: 0.001,
            iters: 200,
            step: 1e-3,
            boundary_weight: 1.0,
            quadrature_order: 2,
        }
    }
}

/// Nodal 5-point Laplacian as sparse rows. At a wall the missing neighbour is
/// a linear extrapolation, which zeroes the second difference along that axis.
fn nodal_laplacian(grid: &BackgroundGrid) -> SparseRows {
    let [nx, ny] = grid.nodes_per_axis();
    let [hx, hy] = grid.spacing();
    let mut lap = SparseRows::new(grid.num_nodes());
    for idx in 0..grid.num_nodes() {
        let (i, j) = grid.node_ij(idx);
        let mut row = Vec::with_capacity(5);
        if i > 0 && i + 1 < nx {
            let c = 1.0 / (hx * hx);
            row.extend([(idx - 1, c), (idx, -2.0 * c), (idx + 1, c)]);
        }
        if j > 0 && j + 1 < ny {
            let c = 1.0 / (hy * hy);
            row.extend([(idx - nx, c), (idx, -2.0 * c), (idx + nx, c)]);
        }
        lap.push_row(&row);
    }
    lap
}

struct EikonalSystem<'a> {
    grid: &'a BackgroundGrid,
    quad: ElementQuadrature,
    lap: SparseRows,
    tau: f64,
    /// `(element, basis values)` of each cloud point.
    anchors: Vec<(usize, [f64; 4])>,
    sqrt_bw: f64,
}

impl EikonalSystem<'_> {
    /// Residual vector and (optionally) its Jacobian.
    ///
    /// The Jacobian linearizes `‖∇φ‖` as `∇φ/√(‖∇φ‖² + δ²)`; `δ = 0` is exact.
    fn evaluate(&self, phi: &[f64], jacobian: bool, smoothing: f64) -> (Vec<f64>, Option<SparseRows>) {
        let grid = self.grid;
        let tau = self.tau;
        let lphi = self.lap.mul(phi);
        let nq = self.quad.len();
        let per_element: Vec<(Vec<f64>, Vec<Vec<(usize, f64)>>)> = (0..grid.num_elements())
            .into_par_iter()
            .map(|e| {
                let nodes = grid.element_nodes(e);
                let mut res = Vec::with_capacity(nq);
                let mut rows = Vec::new();
                for q in 0..nq {
                    let w = self.quad.jxw[q].sqrt();
                    let vals = &self.quad.values[q];
                    let grads = &self.quad.gradients[q];
                    let mut g = [0.0; 2];
                    let mut lq = 0.0;
                    for a in 0..4 {
                        g[0] += grads[a][0] * phi[nodes[a]];
                        g[1] += grads[a][1] * phi[nodes[a]];
                        lq += vals[a] * lphi[nodes[a]];
                    }
                    let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
                    res.push(w * ((1.0 + tau) * gn + tau * lq - 1.0));
                    if jacobian {
                        let mut row = Vec::with_capacity(24);
                        let soft = (gn * gn + smoothing * smoothing).sqrt();
                        if soft > 0.0 {
                            let dir = [g[0] / soft, g[1] / soft];
                            for a in 0..4 {
                                let v = w * (1.0 + tau) * (dir[0] * grads[a][0] + dir[1] * grads[a][1]);
                                row.push((nodes[a], v));
                            }
                        }
                        if tau > 0.0 {
                            for a in 0..4 {
                                let c = w * tau * vals[a];
                                for (col, l) in self.lap.row(nodes[a]) {
                                    row.push((col, c * l));
                                }
                            }
                        }
                        rows.push(row);
                    }
                }
                (res, rows)
            })
            .collect();
        let mut residual = Vec::with_capacity(grid.num_elements() * nq + self.anchors.len());
        let mut jac = jacobian.then(|| SparseRows::new(grid.num_nodes()));
        for (res, rows) in per_element {
            residual.extend(res);
            if let Some(j) = jac.as_mut() {
                rows.iter().for_each(|r| j.push_row(r));
            }
        }
        for (e, vals) in &self.anchors {
            let nodes = grid.element_nodes(*e);
            residual.push(self.sqrt_bw * (0..4).map(|a| vals[a] * phi[nodes[a]]).sum::<f64>());
            if let Some(j) = jac.as_mut() {
                let row: Vec<(usize, f64)> = (0..4).map(|a| (nodes[a], self.sqrt_bw * vals[a])).collect();
                j.push_row(&row);
            }
        }
        (residual, jac)
    }

    /// Levenberg–Marquardt on the current `tau`, starting from `phi`.
    fn minimize(&self, mut phi: Vec<f64>, iters: usize, mut damping: f64) -> Result<(Vec<f64>, f64)> {
        let n = self.grid.num_nodes();
        let mut smoothing = 1.0;
        let (mut res, mut jac) = self.evaluate(&phi, true, smoothing);
        let mut loss = sum_sq(&res);
        let mut rising = 0usize;
        for it in 0..iters {
            let j = jac.take().expect("jacobian evaluated");
            let mut rhs = vec![0.0; n];
            j.tmul_add(&res, -1.0, &mut rhs);
            let mut diag = vec![0.0; n];
            j.gram_diag_add(1.0, &mut diag);
            let mean_diag = diag.iter().sum::<f64>() / n as f64;
            loop {
                let shift: Vec<f64> = diag.iter().map(|d| damping * (d + 1e-3 * mean_diag)).collect();
                let normal = normal_matrix(&[(&j, 1.0)], &shift)?;
                let delta = solve_spd_matrix(&normal, &rhs)?;
                let trial: Vec<f64> = phi.iter().zip(&delta).map(|(p, d)| p + d).collect();
                let (tres, tjac) = self.evaluate(&trial, true, 0.5 * smoothing);
                let tloss = sum_sq(&tres);
                if tloss.is_finite() && tloss < loss {
                    let decrease = (loss - tloss) / loss.max(f64::MIN_POSITIVE);
                    phi = trial;
                    res = tres;
                    jac = tjac;
                    loss = tloss;
                    rising = 0;
                    smoothing *= 0.5;
                    damping = (damping / 3.0).max(1e-12);
                    debug!("eikonal tau {}: iteration {it}, loss {loss:.6e}", self.tau);
                    if decrease < 1e-10 {
                        return Ok((phi, loss));
                    }
                    break;
                }
                rising += 1;
                if rising >= 50 {
                    return Err(Error::Diverged { iteration: it, loss: tloss });
                }
                damping *= 4.0;
                if damping > 1e12 {
                    // no descent direction left: stationary to working precision
                    return Ok((phi, loss));
                }
            }
        }
        Ok((phi, loss))
    }
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).fold(0.0, |s, x| s + x)
}

/// Loss value of the viscous Eikonal fit for a given nodal `phi`.
pub fn eikonal_loss(cloud: &BoundaryPointCloud, grid: &BackgroundGrid, phi: &[f64], params: &EikonalParams) -> Result<f64> {
    let sys = eikonal_system(cloud, grid, params)?;
    if phi.len() != grid.num_nodes() {
        return Err(Error::State(format!("{} values for {} nodes", phi.len(), grid.num_nodes())));
    }
    Ok(sum_sq(&sys.evaluate(phi, false, 0.0).0))
}

fn eikonal_system<'a>(cloud: &BoundaryPointCloud, grid: &'a BackgroundGrid, params: &EikonalParams) -> Result<EikonalSystem<'a>> {
    if !(0.0..=0.5).contains(&params.tau) {
        return Err(Error::Config(format!("viscosity weight {} outside [0, 0.5]", params.tau)));
    }
    if params.iters == 0 {
        return Err(Error::Config("at least one iteration required".into()));
    }
    if !(params.step > 0.0) || !(params.boundary_weight > 0.0) {
        return Err(Error::Config("damping and boundary weight must be positive".into()));
    }
    let anchors = (0..cloud.len())
        .map(|i| {
            grid.locate(cloud.point2(i))
                .map(|(e, local)| (e, shape_values(local).expect("located point is in the element")))
                .map_err(|_| Error::Domain(format!("cloud point {i} lies outside the grid")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EikonalSystem {
        grid,
        quad: ElementQuadrature::new(grid, params.quadrature_order)?,
        lap: nodal_laplacian(grid),
        tau: params.tau,
        anchors,
        sqrt_bw: params.boundary_weight.sqrt(),
    })
}

/// Signed distance to the cloud (negative inside) on the grid nodes.
///
/// Minimizes `Σ_gauss w|J| ((1+τ)‖∇φ‖ + τ Lφ − 1)² + λ_b Σᵢ φ(pᵢ)²`, where
/// `L` is the nodal 5-point Laplacian interpolated to Gauss points. With
/// this sign of the viscous term the vanishing-viscosity solution is the
/// distance function that is negative inside (its kinks are minima).
///
/// Starts from `φ₀ = (0.5 − χ_w) h` and runs Levenberg–Marquardt on a
/// decreasing sequence of viscosities ending at `params.tau`, each stage
/// warm-started from the previous one. The returned field has `χ = 1` where
/// `φ < 0`.
pub fn eikonal_sdf(cloud: &BoundaryPointCloud, grid: &BackgroundGrid, params: &EikonalParams) -> Result<OccupancyField> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let winding = occupancy_grid(cloud, grid)?;
    let mut sys = eikonal_system(cloud, grid, params)?;
    let h = grid.h();
    let mut phi: Vec<f64> = winding.chi().iter().map(|c| (0.5 - c) * h).collect();
    let mut stages = Vec::new();
    let mut t = CONTINUATION_START.max(params.tau);
    while t > params.tau {
        stages.push(t);
        t *= 0.25;
    }
    stages.push(params.tau);
    for tau in stages {
        sys.tau = tau;
        let (next, loss) = sys.minimize(phi, params.iters, params.step)?;
        debug!("eikonal stage tau {tau}: loss {loss:.6e}");
        phi = next;
    }
    finish(grid, phi)
}

const CONTINUATION_START: f64 = 0.1;

fn finish(grid: &BackgroundGrid, phi: Vec<f64>) -> Result<OccupancyField> {
    let chi = phi.iter().map(|&p| if p < 0.0 { 1.0 } else { 0.0 }).collect();
    let mut field = OccupancyField::from_chi(grid, chi, DEFAULT_THRESHOLD)?;
    field.phi = Some(phi);
    Ok(field)
}
