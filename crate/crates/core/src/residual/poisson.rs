use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_inputs, cloud_stencils, DofMap, LossBreakdown, LossWeights, PdeKind, PdeProblem};
use crate::error::{Error, Result};
use crate::geometry::BoundaryPointCloud;
use crate::grid_fem::{BackgroundGrid, ElementQuadrature, NodalField};
use crate::occupancy::{ElementLabel, OccupancyField};
use crate::optimizer::{conjugate_gradient, minimize, CgReport, MinimizeOptions, Objective, OptimTrace};
use crate::sparse::{normal_matrix, solve_spd_matrix, SparseRows};

/// Element stiffness `∫ ∇Bₐ·∇B_b` and load `∫ Bₐ f` over the unmasked Gauss
/// points of every assembled element; `None` for inactive elements.
pub(crate) fn element_matrices(
    grid: &BackgroundGrid,
    occ: &OccupancyField,
    quad: &ElementQuadrature,
    forcing: f64,
) -> Vec<Option<([[f64; 4]; 4], [f64; 4])>> {
    let labels = occ.element_labels();
    (0..grid.num_elements())
        .into_par_iter()
        .map(|e| {
            if labels[e] == ElementLabel::Inactive {
                return None;
            }
            let nodes = grid.element_nodes(e);
            let mut k = [[0.0; 4]; 4];
            let mut f = [0.0; 4];
            for q in 0..quad.len() {
                if labels[e] == ElementLabel::Cut && occ.point_masked(&nodes, &quad.values[q]) {
                    continue;
                }
                let w = quad.jxw[q];
                let g = &quad.gradients[q];
                for a in 0..4 {
                    f[a] += w * quad.values[q][a] * forcing;
                    for b in 0..4 {
                        k[a][b] += w * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                    }
                }
            }
            Some((k, f))
        })
        .collect()
}

/// The Poisson loss as a linear least-squares problem over the free nodal
/// values `x`: `J = λ‖Kx − t‖² + λ₁‖Bx − t_b‖² + λ₂(‖Ex − t_e‖² + c_e)`.
#[derive(Debug, Clone)]
pub struct PoissonSystem {
    num_nodes: usize,
    dofs: DofMap,
    weights: [f64; 3],
    /// Nodes owning a Galerkin row (free and outside the object).
    pde_nodes: Vec<usize>,
    stiffness: SparseRows,
    load: Vec<f64>,
    boundary: SparseRows,
    boundary_target: Vec<f64>,
    exterior: SparseRows,
    exterior_target: Vec<f64>,
    /// Unweighted exterior penalty of object nodes with prescribed values.
    exterior_constant: f64,
}

impl PoissonSystem {
    pub fn assemble(
        grid: &BackgroundGrid,
        occ: &OccupancyField,
        cloud: &BoundaryPointCloud,
        prob: &PdeProblem,
        weights: &LossWeights,
    ) -> Result<Self> {
        check_inputs(grid, occ, prob, None)?;
        weights.validate()?;
        if prob.kind != PdeKind::Poisson {
            return Err(Error::Config("Poisson assembly needs a Poisson problem".into()));
        }
        let dofs = DofMap::new(grid, &prob.walls, 1);
        let n = grid.num_nodes();
        let nf = dofs.num_free();
        let value = |node: usize| dofs.fixed[node];

        let mut row_of = vec![None; n];
        let mut pde_nodes = Vec::new();
        for node in 0..n {
            if dofs.free_index[node].is_some() && !occ.is_interior(node) {
                row_of[node] = Some(pde_nodes.len());
                pde_nodes.push(node);
            }
        }

        let quad = ElementQuadrature::new(grid, prob.quadrature_order)?;
        let locals = element_matrices(grid, occ, &quad, prob.forcing);
        let mut triplets = Vec::new();
        let mut load = vec![0.0; pde_nodes.len()];
        for (e, local) in locals.iter().enumerate() {
            let Some((k, f)) = local else { continue };
            let nodes = grid.element_nodes(e);
            for a in 0..4 {
                let Some(r) = row_of[nodes[a]] else { continue };
                load[r] += f[a];
                for b in 0..4 {
                    match (dofs.free_index[nodes[b]], value(nodes[b])) {
                        (Some(c), _) => triplets.push((r, c, k[a][b])),
                        (None, Some(v)) => load[r] -= k[a][b] * v,
                        (None, None) => unreachable!(),
                    }
                }
            }
        }
        let stiffness = SparseRows::from_triplets(pde_nodes.len(), nf, triplets);

        let mut boundary = SparseRows::new(nf);
        let mut boundary_target = Vec::with_capacity(cloud.len());
        for st in cloud_stencils(grid, cloud)? {
            let mut row = Vec::with_capacity(4);
            let mut target = prob.robin.g;
            for a in 0..4 {
                let c = prob.robin.alpha * st.values[a]
                    + prob.robin.beta * (st.gradients[a][0] * st.normal[0] + st.gradients[a][1] * st.normal[1]);
                match (dofs.free_index[st.nodes[a]], value(st.nodes[a])) {
                    (Some(col), _) => row.push((col, c)),
                    (None, Some(v)) => target -= c * v,
                    (None, None) => unreachable!(),
                }
            }
            boundary.push_row(&row);
            boundary_target.push(target);
        }

        let mut exterior = SparseRows::new(nf);
        let mut exterior_target = Vec::new();
        let mut exterior_constant = 0.0;
        for node in occ.interior_nodes() {
            match (dofs.free_index[node], value(node)) {
                (Some(col), _) => {
                    exterior.push_row(&[(col, 1.0)]);
                    exterior_target.push(prob.interior_value);
                }
                (None, Some(v)) => exterior_constant += (v - prob.interior_value).powi(2),
                (None, None) => unreachable!(),
            }
        }

        Ok(Self {
            num_nodes: n,
            dofs,
            weights: weights.effective(grid),
            pde_nodes,
            stiffness,
            load,
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

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn weights(&self) -> [f64; 3] {
        self.weights
    }

    /// Global node index of every free unknown.
    pub fn free_nodes(&self) -> &[usize] {
        &self.dofs.free
    }

    pub fn pde_nodes(&self) -> &[usize] {
        &self.pde_nodes
    }

    /// Prescribed value of `node`, if it is not optimized.
    pub fn fixed_value(&self, node: usize) -> Option<f64> {
        self.dofs.fixed[node]
    }

    /// Free unknowns taken from a full nodal vector.
    pub fn restrict(&self, values: &[f64]) -> Vec<f64> {
        self.dofs.restrict(values)
    }

    /// Full nodal vector with prescribed values in place.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        self.dofs.expand(x)
    }

    /// Free-space vector scattered to all nodes, zero on prescribed ones.
    pub fn scatter(&self, x: &[f64]) -> Vec<f64> {
        self.dofs.scatter(x)
    }

    fn residual(m: &SparseRows, x: &[f64], t: &[f64]) -> Vec<f64> {
        m.mul(x).iter().zip(t).map(|(a, b)| a - b).collect()
    }

    /// Galerkin residual, one entry per row in [`Self::pde_nodes`].
    pub fn pde_residual(&self, x: &[f64]) -> Vec<f64> {
        Self::residual(&self.stiffness, x, &self.load)
    }

    /// Galerkin residual at every node, zero where no row exists.
    pub fn nodal_residual(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_nodes];
        for (r, v) in self.pde_residual(x).into_iter().enumerate() {
            out[self.pde_nodes[r]] = v;
        }
        out
    }

    /// `α u(pᵢ) + β ∇u(pᵢ)·nᵢ − g` per cloud point.
    pub fn boundary_residual(&self, x: &[f64]) -> Vec<f64> {
        Self::residual(&self.boundary, x, &self.boundary_target)
    }

    pub fn exterior_residual(&self, x: &[f64]) -> Vec<f64> {
        Self::residual(&self.exterior, x, &self.exterior_target)
    }

    pub fn breakdown(&self, x: &[f64]) -> LossBreakdown {
        let sq = |v: Vec<f64>| v.iter().map(|r| r * r).fold(0.0, |s, x| s + x);
        let [l0, l1, l2] = self.weights;
        let pde_term = l0 * sq(self.pde_residual(x));
        let boundary_term = l1 * sq(self.boundary_residual(x));
        let exterior_term = l2 * (sq(self.exterior_residual(x)) + self.exterior_constant);
        LossBreakdown {
            pde_term,
            boundary_term,
            exterior_term,
            total: pde_term + boundary_term + exterior_term,
            weights: self.weights,
        }
    }

    /// `∇J = 2(λKᵀr + λ₁Bᵀr_b + λ₂Eᵀr_e)`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let [l0, l1, l2] = self.weights;
        let mut g = vec![0.0; self.num_free()];
        self.stiffness.tmul_add(&self.pde_residual(x), 2.0 * l0, &mut g);
        self.boundary.tmul_add(&self.boundary_residual(x), 2.0 * l1, &mut g);
        self.exterior.tmul_add(&self.exterior_residual(x), 2.0 * l2, &mut g);
        g
    }

    /// `A v` with `A = λKᵀK + λ₁BᵀB + λ₂EᵀE`, half the loss Hessian.
    pub fn apply_normal(&self, v: &[f64], out: &mut [f64]) {
        let [l0, l1, l2] = self.weights;
        out.iter_mut().for_each(|o| *o = 0.0);
        self.stiffness.tmul_add(&self.stiffness.mul(v), l0, out);
        self.boundary.tmul_add(&self.boundary.mul(v), l1, out);
        self.exterior.tmul_add(&self.exterior.mul(v), l2, out);
    }

    pub fn normal_diagonal(&self) -> Vec<f64> {
        let [l0, l1, l2] = self.weights;
        let mut d = vec![0.0; self.num_free()];
        self.stiffness.gram_diag_add(l0, &mut d);
        self.boundary.gram_diag_add(l1, &mut d);
        self.exterior.gram_diag_add(l2, &mut d);
        d
    }

    /// `λKᵀt + λ₁Bᵀt_b + λ₂Eᵀt_e`, so that `∇J = 2(Ax − b)`.
    pub fn normal_rhs(&self) -> Vec<f64> {
        let [l0, l1, l2] = self.weights;
        let mut b = vec![0.0; self.num_free()];
        self.stiffness.tmul_add(&self.load, l0, &mut b);
        self.boundary.tmul_add(&self.boundary_target, l1, &mut b);
        self.exterior.tmul_add(&self.exterior_target, l2, &mut b);
        b
    }

    /// Normal-equation entries `A` as triplets (free indices).
    pub fn normal_triplets(&self) -> Vec<(usize, usize, f64)> {
        let [l0, l1, l2] = self.weights;
        let mut t = Vec::new();
        self.stiffness.gram_triplets(l0, &mut t);
        self.boundary.gram_triplets(l1, &mut t);
        self.exterior.gram_triplets(l2, &mut t);
        t
    }

    /// Exact minimizer of the quadratic loss via sparse Cholesky.
    pub fn minimize_direct(&self) -> Result<Vec<f64>> {
        let [l0, l1, l2] = self.weights;
        let a = normal_matrix(
            &[(&self.stiffness, l0), (&self.boundary, l1), (&self.exterior, l2)],
            &vec![0.0; self.num_free()],
        )?;
        solve_spd_matrix(&a, &self.normal_rhs())
    }

    /// Minimizes the quadratic loss by Jacobi-preconditioned conjugate
    /// gradients from `x0`.
    pub fn minimize_cg(&self, x0: Vec<f64>, rel_tol: f64, max_iter: usize) -> Result<(Vec<f64>, CgReport)> {
        let diag = self.normal_diagonal();
        conjugate_gradient(|v, out| self.apply_normal(v, out), &self.normal_rhs(), x0, Some(&diag), rel_tol, max_iter)
    }
}

impl Objective for PoissonSystem {
    fn dim(&self) -> usize {
        self.num_free()
    }

    fn loss(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.breakdown(theta).total)
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(PoissonSystem::gradient(self, theta))
    }
}

/// How to minimize the Poisson loss.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum PoissonSolve {
    /// Sparse Cholesky factorization of the normal equations.
    #[default]
    Direct,
    /// Conjugate gradients on the quadratic loss.
    ConjugateGradient { rel_tol: f64, max_iter: usize },
    /// Gradient-based minimization with a step schedule.
    FirstOrder(MinimizeOptions),
}

/// Result of [`solve_poisson`].
#[derive(Debug, Clone)]
pub struct PoissonSolution {
    pub field: NodalField,
    pub breakdown: LossBreakdown,
    /// Per-epoch log (first-order methods).
    pub trace: Option<OptimTrace>,
    pub cg: Option<CgReport>,
}

/// Minimizes the Poisson loss from `initial` (zeros when `None`).
pub fn solve_poisson(
    grid: &BackgroundGrid,
    system: &PoissonSystem,
    initial: Option<&NodalField>,
    method: &PoissonSolve,
) -> Result<PoissonSolution> {
    let x0 = match initial {
        Some(u) => system.restrict(u.values()),
        None => vec![0.0; system.num_free()],
    };
    let (x, trace, cg) = match method {
        PoissonSolve::Direct => (system.minimize_direct()?, None, None),
        PoissonSolve::ConjugateGradient { rel_tol, max_iter } => {
            let (x, rep) = system.minimize_cg(x0, *rel_tol, *max_iter)?;
            (x, None, Some(rep))
        }
        PoissonSolve::FirstOrder(opts) => {
            let (x, trace) = minimize(system, x0, opts)?;
            (x, Some(trace), None)
        }
    };
    Ok(PoissonSolution {
        field: NodalField::new(grid, 1, system.expand(&x))?,
        breakdown: system.breakdown(&x),
        trace,
        cg,
    })
}

/// Galerkin residual `R_i = ∫ ∇Bᵢ·∇u − Bᵢ f` over the unmasked region, one
/// entry per node; rows of object nodes and of nodes with prescribed wall
/// values are zero.
pub fn poisson_residual(u: &NodalField, grid: &BackgroundGrid, occ: &OccupancyField, prob: &PdeProblem) -> Result<Vec<f64>> {
    check_inputs(grid, occ, prob, Some(u))?;
    let empty = BoundaryPointCloud::empty(2);
    let sys = PoissonSystem::assemble(grid, occ, &empty, prob, &LossWeights::default())?;
    Ok(sys.nodal_residual(&sys.restrict(u.values())))
}

/// `Σᵢ |α u(pᵢ) + β ∇u(pᵢ)·nᵢ − g|²` and the per-point residuals, using the
/// field values as given.
pub fn boundary_penalty(
    u: &NodalField,
    grid: &BackgroundGrid,
    cloud: &BoundaryPointCloud,
    prob: &PdeProblem,
) -> Result<(f64, Vec<f64>)> {
    if u.num_nodes() != grid.num_nodes() {
        return Err(Error::State(format!("field has {} nodes, grid has {}", u.num_nodes(), grid.num_nodes())));
    }
    let robin = prob.robin;
    let stencils = cloud_stencils(grid, cloud)?;
    let mut residuals = Vec::with_capacity(stencils.len() * u.n_dof());
    let components = if prob.kind == PdeKind::NavierStokes { 2 } else { 1 };
    for st in &stencils {
        for d in 0..components {
            let mut val = -robin.g;
            for a in 0..4 {
                let c = robin.alpha * st.values[a]
                    + robin.beta * (st.gradients[a][0] * st.normal[0] + st.gradients[a][1] * st.normal[1]);
                val += c * u.get(st.nodes[a], d);
            }
            residuals.push(val);
        }
    }
    Ok((residuals.iter().map(|r| r * r).fold(0.0, |s, x| s + x), residuals))
}

/// `Σ_{j inside} |U_j − g_in|²` over the first unknown of every object node
/// (the velocity components for three-unknown fields).
pub fn exterior_penalty(u: &NodalField, occ: &OccupancyField, interior_value: f64) -> Result<f64> {
    if u.num_nodes() != occ.chi().len() {
        return Err(Error::State(format!("field has {} nodes, occupancy {}", u.num_nodes(), occ.chi().len())));
    }
    let components = if u.n_dof() == 3 { 2 } else { u.n_dof() };
    Ok(occ
        .interior_nodes()
        .into_iter()
        .flat_map(|j| (0..components).map(move |d| (j, d)))
        .map(|(j, d)| (u.get(j, d) - interior_value).powi(2))
        .fold(0.0, |s, x| s + x))
}

/// All loss terms at `u`. Prescribed wall unknowns take their prescribed
/// values.
pub fn total_loss(
    u: &NodalField,
    grid: &BackgroundGrid,
    occ: &OccupancyField,
    cloud: &BoundaryPointCloud,
    prob: &PdeProblem,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    check_inputs(grid, occ, prob, Some(u))?;
    match prob.kind {
        PdeKind::Poisson => {
            let sys = PoissonSystem::assemble(grid, occ, cloud, prob, weights)?;
            Ok(sys.breakdown(&sys.restrict(u.values())))
        }
        PdeKind::NavierStokes => {
            let sys = super::NsSystem::new(grid, occ, cloud, prob, weights)?;
            Ok(sys.breakdown(&sys.restrict(u.values())))
        }
    }
}

/// `∂J/∂U` for every unknown; zero on prescribed wall unknowns.
pub fn loss_gradient(
    u: &NodalField,
    grid: &BackgroundGrid,
    occ: &OccupancyField,
    cloud: &BoundaryPointCloud,
    prob: &PdeProblem,
    weights: &LossWeights,
) -> Result<Vec<f64>> {
    check_inputs(grid, occ, prob, Some(u))?;
    match prob.kind {
        PdeKind::Poisson => {
            let sys = PoissonSystem::assemble(grid, occ, cloud, prob, weights)?;
            Ok(sys.scatter(&sys.gradient(&sys.restrict(u.values()))))
        }
        PdeKind::NavierStokes => {
            let sys = super::NsSystem::new(grid, occ, cloud, prob, weights)?;
            Ok(sys.scatter(&sys.gradient(&sys.restrict(u.values()))?))
        }
    }
}
