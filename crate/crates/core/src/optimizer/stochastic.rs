use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::minimize::{dist2, gradient_check, inf_norm, MinimizeOptions, Objective, OptimTrace};
use super::schedule::Stepper;
use crate::error::{Error, Result};

/// A loss that is the mean of per-sample losses over a finite dataset.
pub trait StochasticObjective {
    fn dim(&self) -> usize;

    fn num_samples(&self) -> usize;

    /// Loss and gradient of sample `i` at `theta`.
    fn sample_loss_and_gradient(&self, i: usize, theta: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Mean loss and gradient over `batch`, accumulated in the order given.
    fn batch_loss_and_gradient(&self, batch: &[usize], theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.dim()];
        for &i in batch {
            let (l, g) = self.sample_loss_and_gradient(i, theta)?;
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let inv = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        Ok((loss * inv, grad))
    }
}

/// Views a [`StochasticObjective`] as its full-batch mean.
pub struct FullBatch<'a, S: ?Sized>(pub &'a S);

impl<S: StochasticObjective + ?Sized> Objective for FullBatch<'_, S> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn loss(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.loss_and_gradient(theta)?.0)
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.loss_and_gradient(theta)?.1)
    }

    fn loss_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let all: Vec<usize> = (0..self.0.num_samples()).collect();
        self.0.batch_loss_and_gradient(&all, theta)
    }
}

/// Mini-batch stochastic minimization.
///
/// Each epoch draws `batch_size` distinct samples uniformly from a ChaCha8
/// stream seeded by `seed`, sorts them, and takes one step along their mean
/// gradient. The trace logs the mini-batch loss and gradient, so with
/// `batch_size == num_samples` the run coincides with [`super::minimize`] on
/// [`FullBatch`].
pub fn minimize_stochastic<S: StochasticObjective + ?Sized>(
    obj: &S,
    theta0: Vec<f64>,
    opts: &MinimizeOptions,
    batch_size: usize,
    seed: u64,
) -> Result<(Vec<f64>, OptimTrace)> {
    opts.schedule.validate()?;
    let n = obj.num_samples();
    if n == 0 {
        return Err(Error::Config("dataset is empty".into()));
    }
    if batch_size == 0 || batch_size > n {
        return Err(Error::Config(format!("batch size {batch_size} not in 1..={n}")));
    }
    if theta0.len() != obj.dim() {
        return Err(Error::State(format!(
            "initial parameters have length {}, objective expects {}",
            theta0.len(),
            obj.dim()
        )));
    }
    if let Some(tol) = opts.gradient_check {
        let rel = gradient_check(&FullBatch(obj), &theta0, 3, 0x5eed)?;
        if rel > tol {
            return Err(Error::GradientCheck { rel_err: rel, tol });
        }
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = theta0;
    let mut stepper = Stepper::new(opts.schedule, theta.len());
    let mut trace = OptimTrace::default();
    let mut rising = 0usize;
    let mut prev_loss = f64::INFINITY;
    for epoch in 0..=opts.stop.max_epochs {
        let mut batch = sample(&mut rng, n, batch_size).into_vec();
        batch.sort_unstable();
        let (loss, grad) = obj.batch_loss_and_gradient(&batch, &theta)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { epoch, what: "loss".into() });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { epoch, what: "gradient".into() });
        }
        let gnorm = inf_norm(&grad);
        let dist = opts.reference.as_deref().map_or(f64::NAN, |r| dist2(&theta, r));
        trace.push(loss, gnorm, dist, start.elapsed().as_secs_f64());

        if let Some(window) = opts.stop.divergence_window {
            rising = if loss > prev_loss { rising + 1 } else { 0 };
            if rising >= window {
                return Err(Error::Diverged { iteration: epoch, loss });
            }
        }
        prev_loss = loss;

        if gnorm <= opts.stop.grad_tol || opts.stop.loss_tol.is_some_and(|t| loss <= t) {
            trace.converged = true;
            break;
        }
        if epoch == opts.stop.max_epochs {
            break;
        }
        stepper.step(&mut theta, &grad);
    }
    Ok((theta, trace))
}
