use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side of the rectangular background domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WallSide {
    Left,
    Right,
    Bottom,
    Top,
}

impl WallSide {
    pub const ALL: [WallSide; 4] = [WallSide::Left, WallSide::Right, WallSide::Bottom, WallSide::Top];
}

/// Uniform axis-aligned grid of bilinear elements over a rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundGrid {
    cells: [usize; 2],
    lower: [f64; 2],
    upper: [f64; 2],
}

impl BackgroundGrid {
    /// `n x n` cells over `[0,1]^2`.
    pub fn unit_square(cells_per_side: usize) -> Result<Self> {
        Self::new([cells_per_side, cells_per_side], [0.0, 0.0], [1.0, 1.0])
    }

    pub fn new(cells: [usize; 2], lower: [f64; 2], upper: [f64; 2]) -> Result<Self> {
        if cells[0] == 0 || cells[1] == 0 {
            return Err(Error::Config(format!("grid needs at least one cell per axis, got {cells:?}")));
        }
        for a in 0..2 {
            if !(lower[a].is_finite() && upper[a].is_finite() && upper[a] > lower[a]) {
                return Err(Error::Config(format!(
                    "invalid grid bounds on axis {a}: [{}, {}]",
                    lower[a], upper[a]
                )));
            }
        }
        Ok(Self { cells, lower, upper })
    }

    pub fn cells(&self) -> [usize; 2] {
        self.cells
    }

    pub fn nodes_per_axis(&self) -> [usize; 2] {
        [self.cells[0] + 1, self.cells[1] + 1]
    }

    pub fn lower(&self) -> [f64; 2] {
        self.lower
    }

    pub fn upper(&self) -> [f64; 2] {
        self.upper
    }

    pub fn extent(&self) -> [f64; 2] {
        [self.upper[0] - self.lower[0], self.upper[1] - self.lower[1]]
    }

    /// Cell sizes `(hx, hy)`.
    pub fn spacing(&self) -> [f64; 2] {
        let e = self.extent();
        [e[0] / self.cells[0] as f64, e[1] / self.cells[1] as f64]
    }

    /// Characteristic cell size (the larger of `hx`, `hy`).
    pub fn h(&self) -> f64 {
        let s = self.spacing();
        s[0].max(s[1])
    }

    pub fn num_nodes(&self) -> usize {
        (self.cells[0] + 1) * (self.cells[1] + 1)
    }

    pub fn num_elements(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    #[inline]
    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.cells[0] + 1) + i
    }

    #[inline]
    pub fn node_ij(&self, idx: usize) -> (usize, usize) {
        let nx = self.cells[0] + 1;
        (idx % nx, idx / nx)
    }

    #[inline]
    pub fn node_coords(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.node_ij(idx);
        let s = self.spacing();
        [self.lower[0] + i as f64 * s[0], self.lower[1] + j as f64 * s[1]]
    }

    #[inline]
    pub fn element_index(&self, ex: usize, ey: usize) -> usize {
        ey * self.cells[0] + ex
    }

    #[inline]
    pub fn element_ij(&self, e: usize) -> (usize, usize) {
        (e % self.cells[0], e / self.cells[0])
    }

    /// Global node indices of an element, counterclockwise from lower-left.
    #[inline]
    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let (ex, ey) = self.element_ij(e);
        [
            self.node_index(ex, ey),
            self.node_index(ex + 1, ey),
            self.node_index(ex + 1, ey + 1),
            self.node_index(ex, ey + 1),
        ]
    }

    pub fn element_center(&self, e: usize) -> [f64; 2] {
        self.to_physical(e, [0.0, 0.0])
    }

    /// Maps reference coordinates of element `e` to physical space.
    #[inline]
    pub fn to_physical(&self, e: usize, local: [f64; 2]) -> [f64; 2] {
        let (ex, ey) = self.element_ij(e);
        let s = self.spacing();
        [
            self.lower[0] + (ex as f64 + 0.5 * (local[0] + 1.0)) * s[0],
            self.lower[1] + (ey as f64 + 0.5 * (local[1] + 1.0)) * s[1],
        ]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.locate(p).is_ok()
    }

    /// Owning element and reference coordinates of a physical point.
    pub fn locate(&self, p: [f64; 2]) -> Result<(usize, [f64; 2])> {
        let s = self.spacing();
        let mut idx = [0usize; 2];
        let mut local = [0.0; 2];
        for a in 0..2 {
            let tol = 1e-12 * self.extent()[a];
            if !p[a].is_finite() || p[a] < self.lower[a] - tol || p[a] > self.upper[a] + tol {
                return Err(Error::Domain(format!(
                    "point ({}, {}) lies outside the grid [{}, {}] x [{}, {}]",
                    p[0], p[1], self.lower[0], self.upper[0], self.lower[1], self.upper[1]
                )));
            }
            let t = ((p[a] - self.lower[a]) / s[a]).max(0.0);
            let cell = (t.floor() as usize).min(self.cells[a] - 1);
            idx[a] = cell;
            local[a] = (2.0 * (t - cell as f64) - 1.0).clamp(-1.0, 1.0);
        }
        Ok((self.element_index(idx[0], idx[1]), local))
    }

    /// Whether a node lies on the given side of the domain.
    pub fn on_side(&self, idx: usize, side: WallSide) -> bool {
        let (i, j) = self.node_ij(idx);
        match side {
            WallSide::Left => i == 0,
            WallSide::Right => i == self.cells[0],
            WallSide::Bottom => j == 0,
            WallSide::Top => j == self.cells[1],
        }
    }

    pub fn is_boundary_node(&self, idx: usize) -> bool {
        WallSide::ALL.iter().any(|&s| self.on_side(idx, s))
    }

    /// All node coordinates in index order.
    pub fn node_positions(&self) -> Vec<[f64; 2]> {
        (0..self.num_nodes()).map(|i| self.node_coords(i)).collect()
    }
}
