//! Synthetic problems with known constants for measuring gradient-descent rates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::minimize::{minimize, MinimizeOptions, Objective};
use super::schedule::StepSchedule;
use super::stochastic::{minimize_stochastic, StochasticObjective};
use crate::error::{Error, Result};

/// `J(θ) = ½ (θ − c)ᵀ A (θ − c)` with a dense symmetric positive definite `A`.
#[derive(Debug, Clone)]
pub struct SpdQuadratic {
    pub matrix: Vec<Vec<f64>>,
    pub center: Vec<f64>,
}

impl SpdQuadratic {
    pub fn diagonal(eigenvalues: &[f64], center: Vec<f64>) -> Self {
        let n = eigenvalues.len();
        let mut matrix = vec![vec![0.0; n]; n];
        for i in 0..n {
            matrix[i][i] = eigenvalues[i];
        }
        Self { matrix, center }
    }

    fn residual(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.center).map(|(t, c)| t - c).collect()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.matrix.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }
}

impl Objective for SpdQuadratic {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn loss(&self, theta: &[f64]) -> Result<f64> {
        let r = self.residual(theta);
        Ok(0.5 * r.iter().zip(self.apply(&r)).map(|(a, b)| a * b).sum::<f64>())
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.apply(&self.residual(theta)))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionReport {
    pub kappa: f64,
    pub expected: f64,
    /// `‖θ_{k+1} − θ*‖ / ‖θ_k − θ*‖` for every step taken.
    pub ratios: Vec<f64>,
    pub max_deviation: f64,
}

/// Gradient descent with `η = 2/(μ+β)` on `diag(1, κ)` started from `(1, 1)`.
///
/// Both error components contract by `(κ−1)/(κ+1)` in magnitude, so the
/// measured ratio should match the strongly convex bound exactly.
pub fn contraction_probe(kappa: f64, steps: usize) -> Result<ContractionReport> {
    if !(kappa > 1.0) {
        return Err(Error::Config(format!("condition number must exceed 1, got {kappa}")));
    }
    let q = SpdQuadratic::diagonal(&[1.0, kappa], vec![0.0, 0.0]);
    let mut opts = MinimizeOptions::new(StepSchedule::ConstantStronglyConvex { mu: 1.0, beta: kappa });
    opts.stop.max_epochs = steps;
    opts.stop.grad_tol = 0.0;
    opts.reference = Some(vec![0.0, 0.0]);
    let (_, trace) = minimize(&q, vec![1.0, 1.0], &opts)?;
    let expected = 1.0 - 2.0 / (kappa + 1.0);
    let ratios: Vec<f64> = trace.dist_to_ref.windows(2).map(|w| w[1] / w[0]).collect();
    let max_deviation = ratios.iter().fold(0.0f64, |m, r| m.max((r - expected).abs()));
    Ok(ContractionReport { kappa, expected, ratios, max_deviation })
}

/// Finite-sum quadratic `Jᵢ(θ) = ½ (θ − cᵢ)ᵀ H (θ − cᵢ)` with diagonal `H` and
/// offsets `cᵢ = θ* + ξᵢ` whose noise is centered exactly, so the mean loss is
/// minimized at `θ*` and single-sample gradients are unbiased.
#[derive(Debug, Clone)]
pub struct NoisyQuadratic {
    pub curvature: Vec<f64>,
    pub optimum: Vec<f64>,
    pub offsets: Vec<Vec<f64>>,
}

impl NoisyQuadratic {
    pub fn new(dim: usize, samples: usize, noise: f64, seed: u64) -> Result<Self> {
        if dim == 0 || samples < 2 {
            return Err(Error::Config("noisy quadratic needs dim ≥ 1 and at least 2 samples".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let curvature: Vec<f64> = (0..dim)
            .map(|j| if dim == 1 { 1.0 } else { 1.0 + 2.0 * j as f64 / (dim - 1) as f64 })
            .collect();
        let optimum: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut noise_vecs: Vec<Vec<f64>> =
            (0..samples).map(|_| (0..dim).map(|_| noise * rng.gen_range(-1.0..1.0)).collect()).collect();
        for j in 0..dim {
            let mean = noise_vecs.iter().map(|v| v[j]).sum::<f64>() / samples as f64;
            noise_vecs.iter_mut().for_each(|v| v[j] -= mean);
        }
        let offsets = noise_vecs
            .into_iter()
            .map(|v| v.iter().zip(&optimum).map(|(n, o)| o + n).collect())
            .collect();
        Ok(Self { curvature, optimum, offsets })
    }

    pub fn mu(&self) -> f64 {
        self.curvature.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn beta(&self) -> f64 {
        self.curvature.iter().cloned().fold(0.0, f64::max)
    }
}

impl StochasticObjective for NoisyQuadratic {
    fn dim(&self) -> usize {
        self.optimum.len()
    }

    fn num_samples(&self) -> usize {
        self.offsets.len()
    }

    fn sample_loss_and_gradient(&self, i: usize, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let c = &self.offsets[i];
        let mut loss = 0.0;
        let grad = (0..theta.len())
            .map(|j| {
                let r = theta[j] - c[j];
                loss += 0.5 * self.curvature[j] * r * r;
                self.curvature[j] * r
            })
            .collect();
        Ok((loss, grad))
    }
}

fn squared_distance_trajectory(
    problem: &NoisyQuadratic,
    schedule: StepSchedule,
    iterations: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut opts = MinimizeOptions::new(schedule);
    opts.gradient_check = None;
    opts.stop.max_epochs = iterations;
    opts.stop.grad_tol = 0.0;
    opts.reference = Some(problem.optimum.clone());
    let theta0 = vec![0.0; problem.optimum.len()];
    let (_, trace) = minimize_stochastic(problem, theta0, &opts, 1, seed)?;
    Ok(trace.dist_to_ref.iter().map(|d| d * d).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct FloorReport {
    pub eta: f64,
    pub floor: f64,
    pub half_eta_floor: f64,
    /// `floor(η/2) / floor(η)`; near 0.5 when the floor is proportional to η.
    pub ratio: f64,
}

/// Stationary `‖θ − θ*‖²` of single-sample SGD at a constant step, averaged
/// over the second half of the run, at `η` and `η/2`.
pub fn sgd_floor_probe(problem: &NoisyQuadratic, eta: f64, iterations: usize, seed: u64) -> Result<FloorReport> {
    let floor_at = |eta: f64| -> Result<f64> {
        let schedule = StepSchedule::ConstantPl { eta, mu: problem.mu() };
        let d = squared_distance_trajectory(problem, schedule, iterations, seed)?;
        let tail = &d[d.len() / 2..];
        Ok(tail.iter().sum::<f64>() / tail.len() as f64)
    };
    let floor = floor_at(eta)?;
    let half_eta_floor = floor_at(0.5 * eta)?;
    Ok(FloorReport { eta, floor, half_eta_floor, ratio: half_eta_floor / floor })
}

#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub checkpoints: Vec<usize>,
    /// Mean of `‖θ_K − θ*‖²` over independent runs at each checkpoint.
    pub mean_sq_error: Vec<f64>,
    pub slope: f64,
}

/// Single-sample SGD with the diminishing schedule, averaged over `runs`
/// seeds; reports the log-log slope of the mean squared error against `K`.
pub fn diminishing_rate_probe(problem: &NoisyQuadratic, checkpoints: &[usize], runs: usize, seed: u64) -> Result<RateReport> {
    let kmax = *checkpoints.iter().max().ok_or_else(|| Error::Config("no checkpoints".into()))?;
    if runs == 0 || checkpoints.contains(&0) {
        return Err(Error::Config("need at least one run and positive checkpoints".into()));
    }
    let schedule = StepSchedule::Diminishing { mu: problem.mu() };
    let mut sums = vec![0.0; checkpoints.len()];
    for r in 0..runs {
        let d = squared_distance_trajectory(problem, schedule, kmax, seed.wrapping_add(r as u64))?;
        for (s, &k) in sums.iter_mut().zip(checkpoints) {
            *s += d[k];
        }
    }
    let mean_sq_error: Vec<f64> = sums.iter().map(|s| s / runs as f64).collect();
    let xs: Vec<f64> = checkpoints.iter().map(|&k| (k as f64).ln()).collect();
    let ys: Vec<f64> = mean_sq_error.iter().map(|e| e.ln()).collect();
    Ok(RateReport { checkpoints: checkpoints.to_vec(), mean_sq_error, slope: loglog_slope(&xs, &ys) })
}

/// Least-squares slope of `ys` against `xs`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::stochastic::FullBatch;
    use proptest::prelude::*;

    #[test]
    fn contraction_matches_bound() {
        for kappa in [1.5, 3.0, 10.0] {
            let rep = contraction_probe(kappa, 20).unwrap();
            assert!(rep.max_deviation < 1e-8, "kappa {kappa}: {}", rep.max_deviation);
        }
        assert!(contraction_probe(1.0, 5).is_err());
    }

    #[test]
    fn noisy_quadratic_mean_gradient_vanishes_at_optimum() {
        let p = NoisyQuadratic::new(5, 40, 0.5, 3).unwrap();
        let g = FullBatch(&p).gradient(&p.optimum).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn slope_of_power_law() {
        let xs: Vec<f64> = (1..6).map(|k| (k as f64).ln()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 1.5 * x).collect();
        assert!((loglog_slope(&xs, &ys) + 1.5).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn gd_respects_strongly_convex_bound(
            ev in prop::collection::vec(1.0f64..20.0, 2..6),
            angle in 0.0f64..std::f64::consts::PI,
            start in prop::collection::vec(-5.0f64..5.0, 6),
        ) {
            let n = ev.len();
            let mu = ev.iter().cloned().fold(f64::INFINITY, f64::min);
            let beta = ev.iter().cloned().fold(0.0, f64::max);
            // rotate the first two coordinates so the matrix is not diagonal
            let (s, c) = angle.sin_cos();
            let mut q = vec![vec![0.0; n]; n];
            for i in 0..n { q[i][i] = 1.0; }
            q[0][0] = c; q[0][1] = -s; q[1][0] = s; q[1][1] = c;
            let mut a = vec![vec![0.0; n]; n];
            for i in 0..n { for j in 0..n { for k in 0..n { a[i][j] += q[i][k] * ev[k] * q[j][k]; } } }
            let quad = SpdQuadratic { matrix: a, center: vec![0.0; n] };
            let mut opts = MinimizeOptions::new(StepSchedule::ConstantStronglyConvex { mu, beta });
            opts.gradient_check = None;
            opts.stop.max_epochs = 30;
            opts.stop.grad_tol = 0.0;
            opts.reference = Some(vec![0.0; n]);
            let (_, trace) = minimize(&quad, start[..n].to_vec(), &opts).unwrap();
            let rate = 1.0 - 2.0 / (beta / mu + 1.0);
            let d0 = trace.dist_to_ref[0].powi(2);
            for (k, d) in trace.dist_to_ref.iter().enumerate() {
                prop_assert!(d * d <= rate.powi(2 * k as i32) * d0 * (1.0 + 1e-9) + 1e-300);
            }
        }
    }
}
