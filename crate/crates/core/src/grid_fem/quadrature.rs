use rayon::prelude::*;

use super::basis::{gradients_unchecked, values_unchecked};
use super::grid::BackgroundGrid;
use crate::error::{Error, Result};

/// Tensor-product Gauss–Legendre rule on the reference element `[-1,1]^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

fn gauss_legendre_1d(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    match order {
        1 => Ok((vec![0.0], vec![2.0])),
        2 => {
            let a = 1.0 / 3f64.sqrt();
            Ok((vec![-a, a], vec![1.0, 1.0]))
        }
        3 => {
            let a = (3.0f64 / 5.0).sqrt();
            Ok((vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0]))
        }
        _ => Err(Error::Config(format!("unsupported Gauss order {order} (expected 1, 2 or 3)"))),
    }
}

/// Gauss rule with `order` points per axis in `dim` dimensions.
pub fn gauss_rule(order: usize, dim: usize) -> Result<QuadratureRule> {
    if !(1..=3).contains(&dim) {
        return Err(Error::Config(format!("unsupported quadrature dimension {dim}")));
    }
    let (p1, w1) = gauss_legendre_1d(order)?;
    let n = p1.len().pow(dim as u32);
    let mut points = Vec::with_capacity(n * dim);
    let mut weights = Vec::with_capacity(n);
    // first axis varies fastest
    for flat in 0..n {
        let mut rem = flat;
        let mut w = 1.0;
        for _ in 0..dim {
            let k = rem % p1.len();
            rem /= p1.len();
            points.push(p1[k]);
            w *= w1[k];
        }
        weights.push(w);
    }
    Ok(QuadratureRule { dim, points, weights })
}

impl QuadratureRule {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, q: usize) -> &[f64] {
        &self.points[q * self.dim..(q + 1) * self.dim]
    }

    pub fn weight(&self, q: usize) -> f64 {
        self.weights[q]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Basis data tabulated at the Gauss points of one (any) grid element.
///
/// All elements of a uniform grid share the same Jacobian, so the table is
/// built once per grid and rule.
#[derive(Debug, Clone)]
pub struct ElementQuadrature {
    pub local: Vec<[f64; 2]>,
    pub values: Vec<[f64; 4]>,
    pub gradients: Vec<[[f64; 2]; 4]>,
    /// Quadrature weight times `|J| = hx*hy/4`.
    pub jxw: Vec<f64>,
}

impl ElementQuadrature {
    pub fn new(grid: &BackgroundGrid, order: usize) -> Result<Self> {
        let rule = gauss_rule(order, 2)?;
        let spacing = grid.spacing();
        let det_j = 0.25 * spacing[0] * spacing[1];
        let mut out = ElementQuadrature {
            local: Vec::with_capacity(rule.len()),
            values: Vec::with_capacity(rule.len()),
            gradients: Vec::with_capacity(rule.len()),
            jxw: Vec::with_capacity(rule.len()),
        };
        for q in 0..rule.len() {
            let p = rule.point(q);
            let local = [p[0], p[1]];
            out.local.push(local);
            out.values.push(values_unchecked(local));
            out.gradients.push(gradients_unchecked(local, spacing));
            out.jxw.push(rule.weight(q) * det_j);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.jxw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jxw.is_empty()
    }

    pub fn point<'a>(&'a self, grid: &BackgroundGrid, element: usize, q: usize) -> GaussPoint<'a> {
        GaussPoint {
            element,
            index: q,
            local: self.local[q],
            physical: grid.to_physical(element, self.local[q]),
            jxw: self.jxw[q],
            values: &self.values[q],
            gradients: &self.gradients[q],
        }
    }
}

/// One quadrature point of one element, with its tabulated basis data.
#[derive(Debug, Clone, Copy)]
pub struct GaussPoint<'a> {
    pub element: usize,
    pub index: usize,
    pub local: [f64; 2],
    pub physical: [f64; 2],
    pub jxw: f64,
    pub values: &'a [f64; 4],
    pub gradients: &'a [[f64; 2]; 4],
}

/// Sums `integrand` over the Gauss points of the active elements, weighted by
/// `w * |J|`.
///
/// Elements are evaluated in parallel; per-element partial sums are reduced
/// sequentially in element order, so the result does not depend on the
/// number of threads.
pub fn integrate_masked<F>(grid: &BackgroundGrid, quad: &ElementQuadrature, active: &[bool], integrand: F) -> Result<f64>
where
    F: Fn(&GaussPoint<'_>) -> f64 + Sync,
{
    if active.len() != grid.num_elements() {
        return Err(Error::State(format!(
            "active mask has {} entries for {} elements",
            active.len(),
            grid.num_elements()
        )));
    }
    let partial: Vec<f64> = (0..grid.num_elements())
        .into_par_iter()
        .map(|e| {
            if !active[e] {
                return 0.0;
            }
            (0..quad.len())
                .map(|q| {
                    let gp = quad.point(grid, e, q);
                    gp.jxw * integrand(&gp)
                })
                .sum()
        })
        .collect();
    Ok(compensated_sum(&partial))
}

/// Neumaier-compensated sum, in slice order.
pub(crate) fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for &v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + carry
}
