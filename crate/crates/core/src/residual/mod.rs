//! The combined loss: Galerkin residual over the active region, Robin
//! penalty at the cloud points and an exterior penalty on object nodes.
//!
//! `J(U) = λ‖R(U)‖² + λ₁ Σᵢ |α u(pᵢ) + β ∇u(pᵢ)·nᵢ − g|² + λ₂ Σ_{j inside} |U_j − g_in|²`
//!
//! Outer-wall Dirichlet values are imposed strongly: those unknowns take
//! their prescribed values whatever the input holds, so the loss does not
//! depend on them and their gradient entries are zero.

mod navier_stokes;
mod poisson;
#[cfg(test)]
mod tests;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundaryPointCloud;
use crate::grid_fem::{shape_gradients, shape_values, BackgroundGrid, NodalField, WallSide};
use crate::occupancy::OccupancyField;

pub use navier_stokes::{ns_residual, solve_navier_stokes, NsSolveOptions, NsSolveReport, NsSystem};
pub use poisson::{
    boundary_penalty, exterior_penalty, loss_gradient, poisson_residual, solve_poisson, total_loss, PoissonSolution,
    PoissonSolve, PoissonSystem,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeKind {
    Poisson,
    NavierStokes,
}

/// Value prescribed on one unknown along one outer wall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WallValue {
    /// Natural (do-nothing) condition.
    Free,
    Fixed { value: f64 },
    /// `c0 + cx·x + cy·y`.
    Affine { c0: f64, cx: f64, cy: f64 },
    /// `peak · (1 − (2t/L − 1)²)` with `t` the position along the wall of length `L`.
    Parabolic { peak: f64 },
}

/// Per-wall, per-unknown outer-boundary data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallConditions {
    pub left: Vec<WallValue>,
    pub right: Vec<WallValue>,
    pub bottom: Vec<WallValue>,
    pub top: Vec<WallValue>,
}

impl WallConditions {
    pub fn uniform(values: Vec<WallValue>) -> Self {
        Self {
            left: values.clone(),
            right: values.clone(),
            bottom: values.clone(),
            top: values,
        }
    }

    /// Every wall fixed to `value`, one unknown per node.
    pub fn dirichlet(value: f64) -> Self {
        Self::uniform(vec![WallValue::Fixed { value }])
    }

    /// Parabolic inflow on the left, no-slip top and bottom, free outflow.
    pub fn channel(peak: f64) -> Self {
        let wall = vec![WallValue::Fixed { value: 0.0 }, WallValue::Fixed { value: 0.0 }, WallValue::Free];
        Self {
            left: vec![WallValue::Parabolic { peak }, WallValue::Fixed { value: 0.0 }, WallValue::Free],
            right: vec![WallValue::Free; 3],
            bottom: wall.clone(),
            top: wall,
        }
    }

    fn side(&self, side: WallSide) -> &[WallValue] {
        match side {
            WallSide::Left => &self.left,
            WallSide::Right => &self.right,
            WallSide::Bottom => &self.bottom,
            WallSide::Top => &self.top,
        }
    }

    /// Prescribed value of unknown `dof` at `node`, if any. At corners the
    /// bottom and top walls take precedence over left and right.
    pub fn prescribed(&self, grid: &BackgroundGrid, node: usize, dof: usize) -> Option<f64> {
        let x = grid.node_coords(node);
        let (lo, hi) = (grid.lower(), grid.upper());
        for side in [WallSide::Bottom, WallSide::Top, WallSide::Left, WallSide::Right] {
            if !grid.on_side(node, side) {
                continue;
            }
            let value = self.side(side).get(dof).copied().unwrap_or(WallValue::Free);
            let (t, len) = match side {
                WallSide::Left | WallSide::Right => (x[1] - lo[1], hi[1] - lo[1]),
                WallSide::Bottom | WallSide::Top => (x[0] - lo[0], hi[0] - lo[0]),
            };
            match value {
                WallValue::Free => {}
                WallValue::Fixed { value } => return Some(value),
                WallValue::Affine { c0, cx, cy } => return Some(c0 + cx * x[0] + cy * x[1]),
                WallValue::Parabolic { peak } => {
                    let s = 2.0 * t / len - 1.0;
                    return Some(peak * (1.0 - s * s));
                }
            }
        }
        None
    }

    fn validate(&self, n_dof: usize) -> Result<()> {
        for side in WallSide::ALL {
            if self.side(side).len() != n_dof {
                return Err(Error::Config(format!(
                    "{side:?} wall lists {} values for {n_dof} unknowns per node",
                    self.side(side).len()
                )));
            }
        }
        Ok(())
    }
}

/// Robin data `α u + β ∂u/∂n = g` on the immersed boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Robin {
    pub alpha: f64,
    pub beta: f64,
    pub g: f64,
}

impl Robin {
    pub fn dirichlet(g: f64) -> Self {
        Self { alpha: 1.0, beta: 0.0, g }
    }
}

/// PDE, coefficients and boundary data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeProblem {
    pub kind: PdeKind,
    /// Poisson source `f` in `−Δu = f`.
    pub forcing: f64,
    /// Navier–Stokes body force.
    pub body_force: [f64; 2],
    /// Condition on the immersed boundary (per velocity component for NS).
    pub robin: Robin,
    pub walls: WallConditions,
    /// Kinematic viscosity (NS only).
    pub viscosity: f64,
    /// Target value on object-interior nodes.
    pub interior_value: f64,
    /// Pressure stabilization `ε_p = c h²` (NS only).
    pub pressure_stabilization: f64,
    /// Weight `κ` of the object boundary term `κ/h Σ aᵢ Bⱼ(pᵢ)(αu + β∂ₙu − g)`
    /// added to the Galerkin rows (NS only).
    #[serde(default)]
    pub object_penalty: f64,
    pub quadrature_order: usize,
}

impl PdeProblem {
    /// `−Δu = f` with `u = g` on the cloud, `g_in = g`, and zero outer walls.
    pub fn poisson(forcing: f64, g: f64) -> Self {
        Self {
            kind: PdeKind::Poisson,
            forcing,
            body_force: [0.0, 0.0],
            robin: Robin::dirichlet(g),
            walls: WallConditions::dirichlet(0.0),
            viscosity: 0.0,
            interior_value: g,
            pressure_stabilization: 0.0,
            object_penalty: 0.0,
            quadrature_order: 2,
        }
    }

    /// Steady channel flow with a parabolic inlet of the given peak speed and
    /// no-slip on the cloud.
    pub fn navier_stokes(viscosity: f64, peak: f64) -> Self {
        Self {
            kind: PdeKind::NavierStokes,
            forcing: 0.0,
            body_force: [0.0, 0.0],
            robin: Robin::dirichlet(0.0),
            walls: WallConditions::channel(peak),
            viscosity,
            interior_value: 0.0,
            pressure_stabilization: 1.0,
            object_penalty: 10.0,
            quadrature_order: 2,
        }
    }

    pub fn n_dof(&self) -> usize {
        match self.kind {
            PdeKind::Poisson => 1,
            PdeKind::NavierStokes => 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.robin.alpha == 0.0 && self.robin.beta == 0.0 {
            return Err(Error::Config("Robin coefficients alpha and beta are both zero".into()));
        }
        if self.kind == PdeKind::NavierStokes && !(self.viscosity > 0.0) {
            return Err(Error::Config(format!("viscosity must be positive, got {}", self.viscosity)));
        }
        if !(1..=3).contains(&self.quadrature_order) {
            return Err(Error::Config(format!("quadrature order {} not in 1..=3", self.quadrature_order)));
        }
        self.walls.validate(self.n_dof())
    }
}

/// Penalty weights `λ, λ₁, λ₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub pde: f64,
    pub boundary: f64,
    pub exterior: f64,
    /// Multiply `λ₁` and `λ₂` by `1/h`.
    pub scale_by_inverse_h: bool,
    /// Multiply `λ` by `h^-p`. With `p = 2` the PDE term keeps its size
    /// relative to the penalties as the grid is refined.
    #[serde(default)]
    pub pde_inverse_h_power: i32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pde: 1.0,
            boundary: 1.0,
            exterior: 1.0,
            scale_by_inverse_h: false,
            pde_inverse_h_power: 0,
        }
    }
}

impl LossWeights {
    /// `(λ, λ₁, λ₂)` as applied on `grid`.
    pub fn effective(&self, grid: &BackgroundGrid) -> [f64; 3] {
        let s = if self.scale_by_inverse_h { 1.0 / grid.h() } else { 1.0 };
        let p = grid.h().powi(-self.pde_inverse_h_power);
        [self.pde * p, self.boundary * s, self.exterior * s]
    }

    /// Unit weights with the PDE term scaled by `1/h²`.
    pub fn mesh_scaled() -> Self {
        Self {
            pde_inverse_h_power: 2,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if [self.pde, self.boundary, self.exterior].iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// The three loss terms, each already multiplied by its weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pde_term: f64,
    pub boundary_term: f64,
    pub exterior_term: f64,
    pub total: f64,
    /// `(λ, λ₁, λ₂)` as applied.
    pub weights: [f64; 3],
}

/// Which unknowns are optimized and the values of the others.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct DofMap {
    pub n_dof: usize,
    /// Prescribed value per global unknown (`node * n_dof + dof`).
    pub fixed: Vec<Option<f64>>,
    /// Global → free index.
    pub free_index: Vec<Option<usize>>,
    /// Free → global index.
    pub free: Vec<usize>,
}

impl DofMap {
    pub fn new(grid: &BackgroundGrid, walls: &WallConditions, n_dof: usize) -> Self {
        let total = grid.num_nodes() * n_dof;
        let mut fixed = vec![None; total];
        for node in 0..grid.num_nodes() {
            if grid.is_boundary_node(node) {
                for d in 0..n_dof {
                    fixed[node * n_dof + d] = walls.prescribed(grid, node, d);
                }
            }
        }
        let mut free_index = vec![None; total];
        let mut free = Vec::new();
        for (g, f) in fixed.iter().enumerate() {
            if f.is_none() {
                free_index[g] = Some(free.len());
                free.push(g);
            }
        }
        Self { n_dof, fixed, free_index, free }
    }

    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&g| full[g]).collect()
    }

    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        self.fixed
            .iter()
            .zip(&self.free_index)
            .map(|(f, i)| match (f, i) {
                (Some(v), _) => *v,
                (None, Some(i)) => x[*i],
                (None, None) => unreachable!("every unknown is fixed or free"),
            })
            .collect()
    }

    /// Scatters a free-space vector to global length, zero on fixed entries.
    pub fn scatter(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.fixed.len()];
        for (i, &g) in self.free.iter().enumerate() {
            out[g] = x[i];
        }
        out
    }
}

/// Basis data of the element containing each cloud point.
#[derive(Debug, Clone)]
pub(crate) struct CloudStencil {
    pub nodes: [usize; 4],
    pub values: [f64; 4],
    pub gradients: [[f64; 2]; 4],
    pub normal: [f64; 2],
}

pub(crate) fn cloud_stencils(grid: &BackgroundGrid, cloud: &BoundaryPointCloud) -> Result<Vec<CloudStencil>> {
    if cloud.dim() != 2 && !cloud.is_empty() {
        return Err(Error::Config("assembly needs a 2D cloud".into()));
    }
    (0..cloud.len())
        .map(|i| {
            let p = cloud.point2(i);
            let (e, local) = grid
                .locate(p)
                .map_err(|_| Error::Domain(format!("cloud point {i} at ({}, {}) lies outside the grid", p[0], p[1])))?;
            Ok(CloudStencil {
                nodes: grid.element_nodes(e),
                values: shape_values(local)?,
                gradients: shape_gradients(local, grid.spacing())?,
                normal: cloud.normal2(i),
            })
        })
        .collect()
}

pub(crate) fn check_inputs(grid: &BackgroundGrid, occ: &OccupancyField, prob: &PdeProblem, field: Option<&NodalField>) -> Result<()> {
    prob.validate()?;
    occ.check_grid(grid)?;
    if let Some(u) = field {
        if u.n_dof() != prob.n_dof() {
            return Err(Error::State(format!(
                "field has {} unknowns per node, the problem needs {}",
                u.n_dof(),
                prob.n_dof()
            )));
        }
        if u.num_nodes() != grid.num_nodes() {
            return Err(Error::State(format!("field has {} nodes, grid has {}", u.num_nodes(), grid.num_nodes())));
        }
    }
    Ok(())
}
