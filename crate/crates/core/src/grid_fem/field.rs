use serde::{Deserialize, Serialize};

use super::basis::{gradients_unchecked, values_unchecked};
use super::grid::BackgroundGrid;
use crate::error::{Error, Result};

/// Nodal coefficients `U` of a finite-element field, `n_dof` unknowns per
/// node, stored node-major (`values[node * n_dof + dof]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodalField {
    n_dof: usize,
    values: Vec<f64>,
}

impl NodalField {
    pub fn new(grid: &BackgroundGrid, n_dof: usize, values: Vec<f64>) -> Result<Self> {
        if n_dof == 0 {
            return Err(Error::Config("a field needs at least one unknown per node".into()));
        }
        if values.len() != grid.num_nodes() * n_dof {
            return Err(Error::State(format!(
                "field has {} values, expected {} nodes x {} dofs",
                values.len(),
                grid.num_nodes(),
                n_dof
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite nodal value at index {i}")));
        }
        Ok(Self { n_dof, values })
    }

    pub fn zeros(grid: &BackgroundGrid, n_dof: usize) -> Self {
        Self {
            n_dof: n_dof.max(1),
            values: vec![0.0; grid.num_nodes() * n_dof.max(1)],
        }
    }

    /// Scalar field sampled from `f` at the nodes.
    pub fn from_fn(grid: &BackgroundGrid, f: impl Fn([f64; 2]) -> f64) -> Self {
        Self {
            n_dof: 1,
            values: grid.node_positions().into_iter().map(f).collect(),
        }
    }

    pub fn n_dof(&self) -> usize {
        self.n_dof
    }

    pub fn num_nodes(&self) -> usize {
        self.values.len() / self.n_dof
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, node: usize, dof: usize) -> f64 {
        self.values[node * self.n_dof + dof]
    }

    /// One component as a scalar nodal vector.
    pub fn component(&self, dof: usize) -> Vec<f64> {
        self.values.iter().skip(dof).step_by(self.n_dof).copied().collect()
    }

    fn check_grid(&self, grid: &BackgroundGrid) -> Result<()> {
        if self.num_nodes() != grid.num_nodes() {
            return Err(Error::State(format!(
                "field defined on {} nodes, grid has {}",
                self.num_nodes(),
                grid.num_nodes()
            )));
        }
        Ok(())
    }

    /// `u^h(p)` for every component.
    pub fn interpolate(&self, grid: &BackgroundGrid, p: [f64; 2]) -> Result<Vec<f64>> {
        self.check_grid(grid)?;
        let (e, local) = grid.locate(p)?;
        let nodes = grid.element_nodes(e);
        let w = values_unchecked(local);
        Ok((0..self.n_dof)
            .map(|d| (0..4).map(|a| w[a] * self.get(nodes[a], d)).sum())
            .collect())
    }

    pub fn interpolate_component(&self, grid: &BackgroundGrid, p: [f64; 2], dof: usize) -> Result<f64> {
        self.check_dof(dof)?;
        self.check_grid(grid)?;
        let (e, local) = grid.locate(p)?;
        let nodes = grid.element_nodes(e);
        let w = values_unchecked(local);
        Ok((0..4).map(|a| w[a] * self.get(nodes[a], dof)).sum())
    }

    /// `∇u^h(p)` for every component, taken from the element owning `p`.
    pub fn interpolate_gradient(&self, grid: &BackgroundGrid, p: [f64; 2]) -> Result<Vec<[f64; 2]>> {
        (0..self.n_dof)
            .map(|d| self.interpolate_gradient_component(grid, p, d))
            .collect()
    }

    pub fn interpolate_gradient_component(&self, grid: &BackgroundGrid, p: [f64; 2], dof: usize) -> Result<[f64; 2]> {
        self.check_dof(dof)?;
        self.check_grid(grid)?;
        let (e, local) = grid.locate(p)?;
        let nodes = grid.element_nodes(e);
        let g = gradients_unchecked(local, grid.spacing());
        let mut out = [0.0; 2];
        for a in 0..4 {
            let u = self.get(nodes[a], dof);
            out[0] += g[a][0] * u;
            out[1] += g[a][1] * u;
        }
        Ok(out)
    }

    fn check_dof(&self, dof: usize) -> Result<()> {
        if dof >= self.n_dof {
            return Err(Error::Config(format!("component {dof} out of range for {} dofs", self.n_dof)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_and_linear_reproduction() {
        let g = BackgroundGrid::unit_square(10).unwrap();
        let c = NodalField::from_fn(&g, |_| 3.5);
        assert!((c.interpolate(&g, [0.123, 0.77]).unwrap()[0] - 3.5).abs() < 1e-14);
        assert_eq!(c.interpolate_gradient(&g, [0.5, 0.5]).unwrap()[0], [0.0, 0.0]);

        let lin = NodalField::from_fn(&g, |p| p[0]);
        assert!((lin.interpolate(&g, [0.37, 0.9]).unwrap()[0] - 0.37).abs() < 1e-13);
        let grad = lin.interpolate_gradient_component(&g, [0.37, 0.9], 0).unwrap();
        assert!((grad[0] - 1.0).abs() < 1e-12 && grad[1].abs() < 1e-12);
    }

    #[test]
    fn bilinear_span_is_exact() {
        let g = BackgroundGrid::new([7, 5], [-0.5, 0.25], [1.5, 1.0]).unwrap();
        let f = |p: [f64; 2]| 0.3 - 1.2 * p[0] + 2.0 * p[1] + 0.7 * p[0] * p[1];
        let field = NodalField::from_fn(&g, f);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let p = [rng.gen_range(-0.5..1.5), rng.gen_range(0.25..1.0)];
            assert!((field.interpolate(&g, p).unwrap()[0] - f(p)).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_interpolation_error_is_second_order() {
        // |f - I_h f| <= h^2/8 * max|f''| per direction for f = x^2
        let n = 64;
        let g = BackgroundGrid::unit_square(n).unwrap();
        let field = NodalField::from_fn(&g, |p| p[0] * p[0]);
        let h = g.h();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = [rng.gen::<f64>(), rng.gen::<f64>()];
            let err = (field.interpolate(&g, p).unwrap()[0] - p[0] * p[0]).abs();
            assert!(err <= 0.25 * h * h + 1e-15, "err {err} at {p:?}");
        }
    }

    #[test]
    fn quadratic_gradient_error_is_first_order() {
        let g = BackgroundGrid::unit_square(128).unwrap();
        let field = NodalField::from_fn(&g, |p| p[0] * p[0]);
        let h = g.h();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = [rng.gen_range(0.01..0.99), rng.gen_range(0.01..0.99)];
            let grad = field.interpolate_gradient(&g, p).unwrap()[0];
            assert!((grad[0] - 2.0 * p[0]).abs() <= h + 1e-12);
            assert!(grad[1].abs() < 1e-12);
        }
    }

    #[test]
    fn continuity_across_element_faces() {
        let g = BackgroundGrid::unit_square(4).unwrap();
        let field = NodalField::from_fn(&g, |p| (3.0 * p[0]).sin() * p[1].exp());
        let x = 0.5;
        let left = field.interpolate(&g, [x - 1e-13, 0.3]).unwrap()[0];
        let right = field.interpolate(&g, [x, 0.3]).unwrap()[0];
        assert!((left - right).abs() < 1e-11);
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = BackgroundGrid::unit_square(2).unwrap();
        assert!(NodalField::new(&g, 1, vec![0.0; 8]).is_err());
        assert!(NodalField::new(&g, 1, vec![f64::NAN; 9]).is_err());
        let f = NodalField::zeros(&g, 1);
        assert!(f.interpolate(&g, [2.0, 0.5]).is_err());
        let other = BackgroundGrid::unit_square(3).unwrap();
        assert!(f.interpolate(&other, [0.5, 0.5]).is_err());
    }

    #[test]
    fn component_extraction() {
        let g = BackgroundGrid::unit_square(1).unwrap();
        let f = NodalField::new(&g, 3, (0..12).map(|v| v as f64).collect()).unwrap();
        assert_eq!(f.component(1), vec![1.0, 4.0, 7.0, 10.0]);
        assert_eq!(f.get(2, 2), 8.0);
    }
}
