use crate::error::{Error, Result};

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    /// `‖b − A x‖₂ / ‖b‖₂` at exit.
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for `A x = b` with `A` symmetric
/// positive definite, given only through `apply(x, out)` computing `out = A x`.
///
/// Minimizing a convex quadratic `½xᵀAx − bᵀx` is the same problem, so this is
/// the minimizer used for quadratic PDE losses.
pub fn conjugate_gradient<F>(
    apply: F,
    b: &[f64],
    x0: Vec<f64>,
    diag: Option<&[f64]>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CgReport)>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    if x0.len() != n || diag.is_some_and(|d| d.len() != n) {
        return Err(Error::State("conjugate gradient operands differ in length".into()));
    }
    let inv_diag: Vec<f64> = match diag {
        Some(d) => d.iter().map(|&v| if v > 0.0 { 1.0 / v } else { 1.0 }).collect(),
        None => vec![1.0; n],
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let bnorm = dot(b, b).sqrt();
    let mut x = x0;
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok((x, CgReport { iterations: 0, relative_residual: 0.0 }));
    }
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        let rel = dot(&r, &r).sqrt() / bnorm;
        if rel <= rel_tol {
            return Ok((x, CgReport { iterations: it, relative_residual: rel }));
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::LinearSolver(format!("operator not positive definite at iteration {it} (pᵀAp = {pap:e})")));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        // refresh the recursive residual periodically against drift
        if it % 200 == 199 {
            apply(&x, &mut ax);
            for i in 0..n {
                r[i] = b[i] - ax[i];
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rel = dot(&r, &r).sqrt() / bnorm;
    if rel <= rel_tol {
        Ok((x, CgReport { iterations: max_iter, relative_residual: rel }))
    } else {
        Err(Error::NotConverged(format!(
            "conjugate gradient stopped after {max_iter} iterations at relative residual {rel:.3e}"
        )))
    }
}
