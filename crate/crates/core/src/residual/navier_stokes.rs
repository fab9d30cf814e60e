use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_inputs, cloud_stencils, CloudStencil, DofMap, LossBreakdown, LossWeights, PdeKind, PdeProblem};
use crate::error::{Error, Result};
use crate::geometry::BoundaryPointCloud;
use crate::grid_fem::{BackgroundGrid, ElementQuadrature, NodalField};
use crate::occupancy::OccupancyField;
use crate::optimizer::{Objective, OptimTrace};
use crate::sparse::{normal_matrix, solve_spd_matrix, SparseRows};

const NDOF: usize = 3;

type ElementResidual = ([[f64; NDOF]; 4], Option<Box<[[[[f64; NDOF]; 4]; NDOF]; 4]>>);

/// Steady incompressible Navier–Stokes loss on equal-order bilinear
/// elements, unknowns `(u_x, u_y, p)` per node.
///
/// Momentum rows: `∫ Bᵢ (u·∇)u + ν ∇Bᵢ·∇u − p ∇Bᵢ − Bᵢ f`; continuity rows:
/// `∫ Bᵢ ∇·u + ε_p ∇Bᵢ·∇p` with `ε_p = c h²`. The integrals run over the whole
/// grid: object velocities are held at the fill value by the exterior penalty
/// and carry no momentum rows, while their continuity rows are kept. The
/// momentum rows also carry the object term `κ/h Σ aᵢ Bⱼ(pᵢ)(u(pᵢ) − g)`.
/// The cloud penalty acts on both velocity components and the exterior
/// penalty on velocities only.
pub struct NsSystem<'a> {
    grid: &'a BackgroundGrid,
    quad: ElementQuadrature,
    dofs: DofMap,
    weights: [f64; 3],
    viscosity: f64,
    eps_p: f64,
    body_force: [f64; 2],
    /// Global unknown → Galerkin row.
    row_of: Vec<Option<usize>>,
    row_dofs: Vec<usize>,
    boundary: SparseRows,
    /// Per cloud point: stencil nodes and `λ_Γ aᵢ Bₐ(pᵢ)` weights of the
    /// boundary term inside the momentum rows.
    traction: Vec<([usize; 4], [f64; 4])>,
    boundary_target: Vec<f64>,
    exterior: SparseRows,
    exterior_target: Vec<f64>,
    exterior_constant: f64,
}

impl<'a> NsSystem<'a> {
    pub fn new(
        grid: &'a BackgroundGrid,
        occ: &OccupancyField,
        cloud: &BoundaryPointCloud,
        prob: &PdeProblem,
        weights: &LossWeights,
    ) -> Result<Self> {
        check_inputs(grid, occ, prob, None)?;
        weights.validate()?;
        if prob.kind != PdeKind::NavierStokes {
            return Err(Error::Config("Navier–Stokes assembly needs a Navier–Stokes problem".into()));
        }
        let dofs = DofMap::new(grid, &prob.walls, NDOF);
        let nf = dofs.num_free();
        let quad = ElementQuadrature::new(grid, prob.quadrature_order)?;

        let mut row_of = vec![None; grid.num_nodes() * NDOF];
        let mut row_dofs = Vec::new();
        for node in 0..grid.num_nodes() {
            for d in 0..NDOF {
                if occ.is_interior(node) && d < 2 {
                    continue;
                }
                let g = node * NDOF + d;
                if dofs.free_index[g].is_some() {
                    row_of[g] = Some(row_dofs.len());
                    row_dofs.push(g);
                }
            }
        }

        let stencils: Vec<CloudStencil> = cloud_stencils(grid, cloud)?;
        let mut boundary = SparseRows::new(nf);
        let mut boundary_target = Vec::new();
        for st in &stencils {
            for d in 0..2 {
                let mut row = Vec::with_capacity(4);
                let mut target = prob.robin.g;
                for a in 0..4 {
                    let c = prob.robin.alpha * st.values[a]
                        + prob.robin.beta * (st.gradients[a][0] * st.normal[0] + st.gradients[a][1] * st.normal[1]);
                    let g = st.nodes[a] * NDOF + d;
                    match (dofs.free_index[g], dofs.fixed[g]) {
                        (Some(col), _) => row.push((col, c)),
                        (None, Some(v)) => target -= c * v,
                        (None, None) => unreachable!(),
                    }
                }
                boundary.push_row(&row);
                boundary_target.push(target);
            }
        }

        let mut exterior = SparseRows::new(nf);
        let mut exterior_target = Vec::new();
        let mut exterior_constant = 0.0;
        for node in occ.interior_nodes() {
            for d in 0..2 {
                let g = node * NDOF + d;
                match (dofs.free_index[g], dofs.fixed[g]) {
                    (Some(col), _) => {
                        exterior.push_row(&[(col, 1.0)]);
                        exterior_target.push(prob.interior_value);
                    }
                    (None, Some(v)) => exterior_constant += (v - prob.interior_value).powi(2),
                    (None, None) => unreachable!(),
                }
            }
        }

        let h = grid.h();
        let gamma = prob.object_penalty / h;
        let traction = stencils
            .iter()
            .enumerate()
            .map(|(i, st)| (st.nodes, st.values.map(|b| gamma * cloud.area(i) * b)))
            .collect();
        Ok(Self {
            traction,
            grid,
            quad,
            dofs,
            weights: weights.effective(grid),
            viscosity: prob.viscosity,
            eps_p: prob.pressure_stabilization * h * h,
            body_force: prob.body_force,
            row_of,
            row_dofs,
            boundary,
            boundary_target,
            exterior,
            exterior_target,
            exterior_constant,
        })
    }

    pub fn num_free(&self) -> usize {
        self.dofs.num_free()
    }

    pub fn num_rows(&self) -> usize {
        self.row_dofs.len()
    }

    pub fn restrict(&self, values: &[f64]) -> Vec<f64> {
        self.dofs.restrict(values)
    }

    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        self.dofs.expand(x)
    }

    pub fn scatter(&self, x: &[f64]) -> Vec<f64> {
        self.dofs.scatter(x)
    }

    /// Global unknown index (`node * 3 + component`) of each Galerkin row.
    pub fn row_dofs(&self) -> &[usize] {
        &self.row_dofs
    }

    fn element(&self, e: usize, u: &[f64], jacobian: bool) -> Option<ElementResidual> {
        let nodes = self.grid.element_nodes(e);
        let nu = self.viscosity;
        let mut res = [[0.0; NDOF]; 4];
        let mut jac = jacobian.then(|| Box::new([[[[0.0; NDOF]; 4]; NDOF]; 4]));
        for q in 0..self.quad.len() {
            let w = self.quad.jxw[q];
            let bv = &self.quad.values[q];
            let bg = &self.quad.gradients[q];
            let mut val = [0.0; NDOF];
            let mut grad = [[0.0; 2]; NDOF];
            for a in 0..4 {
                for d in 0..NDOF {
                    let c = u[nodes[a] * NDOF + d];
                    val[d] += bv[a] * c;
                    grad[d][0] += bg[a][0] * c;
                    grad[d][1] += bg[a][1] * c;
                }
            }
            let [ux, uy, p] = val;
            let conv = [ux * grad[0][0] + uy * grad[0][1], ux * grad[1][0] + uy * grad[1][1]];
            let div = grad[0][0] + grad[1][1];
            for a in 0..4 {
                let (ba, ga) = (bv[a], bg[a]);
                for c in 0..2 {
                    res[a][c] += w
                        * (ba * conv[c] + nu * (ga[0] * grad[c][0] + ga[1] * grad[c][1]) - p * ga[c]
                            - ba * self.body_force[c]);
                }
                res[a][2] += w * (ba * div + self.eps_p * (ga[0] * grad[2][0] + ga[1] * grad[2][1]));
                if let Some(j) = jac.as_mut() {
                    for b in 0..4 {
                        let (bb, gb) = (bv[b], bg[b]);
                        let lap = ga[0] * gb[0] + ga[1] * gb[1];
                        let adv = ux * gb[0] + uy * gb[1];
                        // momentum x
                        j[a][0][b][0] += w * (ba * (bb * grad[0][0] + adv) + nu * lap);
                        j[a][0][b][1] += w * ba * bb * grad[0][1];
                        j[a][0][b][2] -= w * bb * ga[0];
                        // momentum y
                        j[a][1][b][0] += w * ba * bb * grad[1][0];
                        j[a][1][b][1] += w * (ba * (bb * grad[1][1] + adv) + nu * lap);
                        j[a][1][b][2] -= w * bb * ga[1];
                        // continuity
                        j[a][2][b][0] += w * ba * gb[0];
                        j[a][2][b][1] += w * ba * gb[1];
                        j[a][2][b][2] += w * self.eps_p * lap;
                    }
                }
            }
        }
        Some((res, jac))
    }

    /// Galerkin residual (one entry per row) and, optionally, its Jacobian
    /// with respect to the free unknowns.
    pub fn evaluate(&self, x: &[f64], jacobian: bool) -> (Vec<f64>, Option<SparseRows>) {
        let u = self.expand(x);
        let locals: Vec<Option<ElementResidual>> = (0..self.grid.num_elements())
            .into_par_iter()
            .map(|e| self.element(e, &u, jacobian))
            .collect();
        let mut residual = vec![0.0; self.row_dofs.len()];
        let mut triplets = Vec::new();
        for (e, local) in locals.into_iter().enumerate() {
            let Some((res, jac)) = local else { continue };
            let nodes = self.grid.element_nodes(e);
            for a in 0..4 {
                for c in 0..NDOF {
                    let Some(r) = self.row_of[nodes[a] * NDOF + c] else { continue };
                    residual[r] += res[a][c];
                    if let Some(j) = jac.as_ref() {
                        for b in 0..4 {
                            for d in 0..NDOF {
                                if let Some(col) = self.dofs.free_index[nodes[b] * NDOF + d] {
                                    triplets.push((r, col, j[a][c][b][d]));
                                }
                            }
                        }
                    }
                }
            }
        }
        let rb = self.boundary_residual(x);
        for (i, (nodes, coef)) in self.traction.iter().enumerate() {
            for d in 0..2 {
                let row = 2 * i + d;
                for a in 0..4 {
                    let Some(r) = self.row_of[nodes[a] * NDOF + d] else { continue };
                    residual[r] += coef[a] * rb[row];
                    if jacobian {
                        for (col, c) in self.boundary.row(row) {
                            triplets.push((r, col, coef[a] * c));
                        }
                    }
                }
            }
        }
        let jac = jacobian.then(|| SparseRows::from_triplets(self.row_dofs.len(), self.num_free(), triplets));
        (residual, jac)
    }

    fn linear_residual(m: &SparseRows, x: &[f64], t: &[f64]) -> Vec<f64> {
        m.mul(x).iter().zip(t).map(|(a, b)| a - b).collect()
    }

    /// Velocity no-slip (Robin) residual per cloud point and component.
    pub fn boundary_residual(&self, x: &[f64]) -> Vec<f64> {
        Self::linear_residual(&self.boundary, x, &self.boundary_target)
    }

    pub fn exterior_residual(&self, x: &[f64]) -> Vec<f64> {
        Self::linear_residual(&self.exterior, x, &self.exterior_target)
    }

    fn breakdown_with(&self, x: &[f64], pde: &[f64]) -> LossBreakdown {
        let sq = |v: &[f64]| v.iter().map(|r| r * r).fold(0.0, |s, x| s + x);
        let [l0, l1, l2] = self.weights;
        let pde_term = l0 * sq(pde);
        let boundary_term = l1 * sq(&self.boundary_residual(x));
        let exterior_term = l2 * (sq(&self.exterior_residual(x)) + self.exterior_constant);
        LossBreakdown {
            pde_term,
            boundary_term,
            exterior_term,
            total: pde_term + boundary_term + exterior_term,
            weights: self.weights,
        }
    }

    pub fn breakdown(&self, x: &[f64]) -> LossBreakdown {
        self.breakdown_with(x, &self.evaluate(x, false).0)
    }

    fn gradient_with(&self, x: &[f64], pde: &[f64], jac: &SparseRows) -> Vec<f64> {
        let [l0, l1, l2] = self.weights;
        let mut g = vec![0.0; self.num_free()];
        jac.tmul_add(pde, 2.0 * l0, &mut g);
        self.boundary.tmul_add(&self.boundary_residual(x), 2.0 * l1, &mut g);
        self.exterior.tmul_add(&self.exterior_residual(x), 2.0 * l2, &mut g);
        g
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (pde, jac) = self.evaluate(x, true);
        Ok(self.gradient_with(x, &pde, &jac.expect("jacobian requested")))
    }
}

impl Objective for NsSystem<'_> {
    fn dim(&self) -> usize {
        self.num_free()
    }

    fn loss(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.breakdown(theta).total)
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        NsSystem::gradient(self, theta)
    }

    fn loss_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (pde, jac) = self.evaluate(theta, true);
        let jac = jac.expect("jacobian requested");
        Ok((self.breakdown_with(theta, &pde).total, self.gradient_with(theta, &pde, &jac)))
    }
}

/// Galerkin residual of the momentum and continuity equations at every
/// unknown (`node * 3 + component`); zero on object nodes and prescribed
/// wall unknowns.
pub fn ns_residual(u: &NodalField, grid: &BackgroundGrid, occ: &OccupancyField, prob: &PdeProblem) -> Result<Vec<f64>> {
    check_inputs(grid, occ, prob, Some(u))?;
    let empty = BoundaryPointCloud::empty(2);
    let sys = NsSystem::new(grid, occ, &empty, prob, &LossWeights::default())?;
    let (r, _) = sys.evaluate(&sys.restrict(u.values()), false);
    let mut out = vec![0.0; u.values().len()];
    for (i, &g) in sys.row_dofs.iter().enumerate() {
        out[g] = r[i];
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NsSolveOptions {
    pub max_iterations: usize,
    /// Stop when the relative loss decrease of an accepted step falls below this.
    pub rel_decrease_tol: f64,
    pub initial_damping: f64,
    /// Viscosity multipliers applied in turn before the target viscosity,
    /// each stage warm-starting the next.
    pub continuation: [f64; 2],
}

impl Default for NsSolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            rel_decrease_tol: 1e-12,
            initial_damping: 1e-4,
            continuation: [8.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NsSolveReport {
    pub iterations: usize,
    pub breakdown: LossBreakdown,
    pub trace: OptimTrace,
}

/// Levenberg–Marquardt on the Navier–Stokes loss.
fn levenberg_marquardt(sys: &NsSystem<'_>, mut x: Vec<f64>, opts: &NsSolveOptions, trace: &mut OptimTrace) -> Result<(Vec<f64>, usize)> {
    let start = std::time::Instant::now();
    let [l0, l1, l2] = sys.weights;
    let (mut pde, mut jac) = sys.evaluate(&x, true);
    let mut loss = sys.breakdown_with(&x, &pde).total;
    let mut damping = opts.initial_damping;
    let mut iterations = 0;
    let mut rising = 0;
    for it in 0..opts.max_iterations {
        let j = jac.take().expect("jacobian evaluated");
        let grad = sys.gradient_with(&x, &pde, &j);
        let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        trace.push(loss, gnorm, f64::NAN, start.elapsed().as_secs_f64());
        let rhs: Vec<f64> = grad.iter().map(|g| -0.5 * g).collect();
        let mut diag = vec![0.0; sys.num_free()];
        j.gram_diag_add(l0, &mut diag);
        sys.boundary.gram_diag_add(l1, &mut diag);
        sys.exterior.gram_diag_add(l2, &mut diag);
        let mean = diag.iter().sum::<f64>() / diag.len().max(1) as f64;
        loop {
            let shift: Vec<f64> = diag.iter().map(|d| damping * (d + 1e-6 * mean)).collect();
            let normal = normal_matrix(&[(&j, l0), (&sys.boundary, l1), (&sys.exterior, l2)], &shift)?;
            let delta = solve_spd_matrix(&normal, &rhs)?;
            let trial: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
            let (tpde, tjac) = sys.evaluate(&trial, true);
            let tloss = sys.breakdown_with(&trial, &tpde).total;
            if tloss.is_finite() && tloss < loss {
                let decrease = (loss - tloss) / loss.max(f64::MIN_POSITIVE);
                x = trial;
                pde = tpde;
                jac = tjac;
                loss = tloss;
                rising = 0;
                iterations = it + 1;
                damping = (damping / 5.0).max(1e-14);
                debug!("navier-stokes iteration {it}: loss {loss:.6e}");
                if decrease < opts.rel_decrease_tol {
                    return Ok((x, iterations));
                }
                break;
            }
            rising += 1;
            if rising >= 50 {
                return Err(Error::Diverged { iteration: it, loss: tloss });
            }
            damping *= 4.0;
            if damping > 1e10 {
                return Ok((x, iterations));
            }
        }
    }
    Ok((x, iterations))
}

/// Solves the steady Navier–Stokes loss from rest, continuing in viscosity
/// from `continuation[0]·ν` down to `ν`.
pub fn solve_navier_stokes(
    grid: &BackgroundGrid,
    occ: &OccupancyField,
    cloud: &BoundaryPointCloud,
    prob: &PdeProblem,
    weights: &LossWeights,
    opts: &NsSolveOptions,
) -> Result<(NodalField, NsSolveReport)> {
    let mut x: Option<Vec<f64>> = None;
    let mut trace = OptimTrace::default();
    let mut total_iterations = 0;
    let stages: Vec<f64> = opts.continuation.iter().copied().filter(|&m| m > 1.0).chain([1.0]).collect();
    let mut final_sys = None;
    for m in stages {
        let mut staged = prob.clone();
        staged.viscosity = prob.viscosity * m;
        let sys = NsSystem::new(grid, occ, cloud, &staged, weights)?;
        let x0 = x.take().unwrap_or_else(|| vec![0.0; sys.num_free()]);
        let (xs, its) = levenberg_marquardt(&sys, x0, opts, &mut trace)?;
        info!("navier-stokes stage nu = {:.3e}: {its} iterations", staged.viscosity);
        total_iterations += its;
        x = Some(xs);
        final_sys = Some(sys);
    }
    let sys = final_sys.expect("at least one stage");
    let x = x.expect("at least one stage");
    let breakdown = sys.breakdown(&x);
    trace.converged = true;
    let field = NodalField::new(grid, NDOF, sys.expand(&x))?;
    Ok((
        field,
        NsSolveReport {
            iterations: total_iterations,
            breakdown,
            trace,
        },
    ))
}
