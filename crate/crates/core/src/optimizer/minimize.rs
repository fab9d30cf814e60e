use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schedule::{StepSchedule, Stepper};
use crate::error::{Error, Result};

/// A differentiable scalar loss over a flat parameter vector.
pub trait Objective {
    fn dim(&self) -> usize;

    fn loss(&self, theta: &[f64]) -> Result<f64>;

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>>;

    fn loss_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.loss(theta)?, self.gradient(theta)?))
    }
}

/// Stopping rule; whichever limit is hit first ends the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopCriteria {
    pub max_epochs: usize,
    /// Threshold on `‖∇J‖∞`.
    pub grad_tol: f64,
    pub loss_tol: Option<f64>,
    /// Abort when the loss has increased this many consecutive epochs.
    pub divergence_window: Option<usize>,
}

impl Default for StopCriteria {
    fn default() -> Self {
        Self {
            max_epochs: 20_000,
            grad_tol: 1e-8,
            loss_tol: None,
            divergence_window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizeOptions {
    pub schedule: StepSchedule,
    pub stop: StopCriteria,
    /// Relative tolerance of the finite-difference gradient check at `θ₀`;
    /// `None` disables the check.
    pub gradient_check: Option<f64>,
    /// Reference optimum used for the distance column of the trace.
    #[serde(skip)]
    pub reference: Option<Vec<f64>>,
}

impl MinimizeOptions {
    pub fn new(schedule: StepSchedule) -> Self {
        Self {
            schedule,
            stop: StopCriteria::default(),
            gradient_check: Some(1e-4),
            reference: None,
        }
    }
}

/// Per-epoch optimization log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimTrace {
    pub loss: Vec<f64>,
    pub grad_norm: Vec<f64>,
    /// `‖θ_k − θ*‖₂` when a reference was supplied, NaN otherwise.
    pub dist_to_ref: Vec<f64>,
    pub seconds: Vec<f64>,
    pub converged: bool,
}

impl OptimTrace {
    pub fn len(&self) -> usize {
        self.loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss.is_empty()
    }

    pub(crate) fn push(&mut self, loss: f64, grad_norm: f64, dist: f64, seconds: f64) {
        self.loss.push(loss);
        self.grad_norm.push(grad_norm);
        self.dist_to_ref.push(dist);
        self.seconds.push(seconds);
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss.last().copied()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,grad_norm,dist_to_ref,seconds\n");
        for k in 0..self.len() {
            let _ = writeln!(
                s,
                "{},{:.17e},{:.17e},{:.17e},{:.6}",
                k, self.loss[k], self.grad_norm[k], self.dist_to_ref[k], self.seconds[k]
            );
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Central-difference check of the gradient along a few random directions.
///
/// Returns the largest relative error `|gᵀd − fd| / max(|gᵀd|, |fd|, floor)`.
pub fn gradient_check<O: Objective + ?Sized>(obj: &O, theta: &[f64], directions: usize, seed: u64) -> Result<f64> {
    let g = obj.gradient(theta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 + inf_norm(theta);
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let d: Vec<f64> = (0..theta.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let eps = 1e-6 * scale;
        let plus: Vec<f64> = theta.iter().zip(&d).map(|(t, di)| t + eps * di).collect();
        let minus: Vec<f64> = theta.iter().zip(&d).map(|(t, di)| t - eps * di).collect();
        let fd = (obj.loss(&plus)? - obj.loss(&minus)?) / (2.0 * eps);
        let an: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        let floor = 1e-10 * (1.0 + obj.loss(theta)?.abs());
        let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(floor);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// First-order minimization of `obj` from `theta0`.
///
/// Epoch `k` evaluates the loss and gradient at `θ_k`, logs them, stops if a
/// criterion is met and otherwise takes one step. The run is deterministic for
/// a deterministic objective.
pub fn minimize<O: Objective + ?Sized>(obj: &O, theta0: Vec<f64>, opts: &MinimizeOptions) -> Result<(Vec<f64>, OptimTrace)> {
    opts.schedule.validate()?;
    if theta0.len() != obj.dim() {
        return Err(Error::State(format!(
            "initial parameters have length {}, objective expects {}",
            theta0.len(),
            obj.dim()
        )));
    }
    if let Some(tol) = opts.gradient_check {
        let rel = gradient_check(obj, &theta0, 3, 0x5eed)?;
        if rel > tol {
            return Err(Error::GradientCheck { rel_err: rel, tol });
        }
    }
    let start = Instant::now();
    let mut theta = theta0;
    let mut stepper = Stepper::new(opts.schedule, theta.len());
    let mut trace = OptimTrace::default();
    let mut rising = 0usize;
    let mut prev_loss = f64::INFINITY;
    for epoch in 0..=opts.stop.max_epochs {
        let (loss, grad) = obj.loss_and_gradient(&theta)?;
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
        if epoch % 1000 == 0 {
            debug!("epoch {epoch}: loss {loss:.6e}, |grad| {gnorm:.3e}");
        }
    }
    Ok((theta, trace))
}
