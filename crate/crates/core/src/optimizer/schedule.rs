use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step-size regime for first-order minimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    /// Plain gradient descent with a fixed step.
    Constant { eta: f64 },
    /// `η = 2 / (μ + β)` for a μ-strongly convex, β-smooth loss.
    ConstantStronglyConvex { mu: f64, beta: f64 },
    /// Fixed step below `1 / (2μ)` for a μ-PL loss.
    ConstantPl { eta: f64, mu: f64 },
    /// `η_k = (2k + 1) / (2μ (k + 1)^2)`.
    Diminishing { mu: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl StepSchedule {
    pub fn adam(lr: f64) -> Self {
        StepSchedule::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match *self {
            StepSchedule::Constant { eta } => positive("eta", eta),
            StepSchedule::ConstantStronglyConvex { mu, beta } => {
                positive("mu", mu)?;
                positive("beta", beta)?;
                if beta < mu {
                    return Err(Error::Config(format!("smoothness {beta} below strong convexity {mu}")));
                }
                Ok(())
            }
            StepSchedule::ConstantPl { eta, mu } => {
                positive("eta", eta)?;
                positive("mu", mu)?;
                if eta >= 0.5 / mu {
                    return Err(Error::Config(format!("PL step {eta} must be below 1/(2 mu) = {}", 0.5 / mu)));
                }
                Ok(())
            }
            StepSchedule::Diminishing { mu } => positive("mu", mu),
            StepSchedule::Adam { lr, beta1, beta2, eps } => {
                positive("lr", lr)?;
                positive("eps", eps)?;
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    return Err(Error::Config(format!("Adam betas must lie in [0, 1), got {beta1}, {beta2}")));
                }
                Ok(())
            }
        }
    }

    /// Step size at (zero-based) iteration `k`; `None` for Adam, whose step
    /// is per-coordinate.
    pub fn step_size(&self, k: usize) -> Option<f64> {
        match *self {
            StepSchedule::Constant { eta } | StepSchedule::ConstantPl { eta, .. } => Some(eta),
            StepSchedule::ConstantStronglyConvex { mu, beta } => Some(2.0 / (mu + beta)),
            StepSchedule::Diminishing { mu } => {
                let k = k as f64;
                Some((2.0 * k + 1.0) / (2.0 * mu * (k + 1.0).powi(2)))
            }
            StepSchedule::Adam { .. } => None,
        }
    }
}

/// Mutable per-run optimizer state (Adam moments, iteration counter).
#[derive(Debug, Clone)]
pub(crate) struct Stepper {
    schedule: StepSchedule,
    k: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Stepper {
    pub(crate) fn new(schedule: StepSchedule, dim: usize) -> Self {
        let moments = matches!(schedule, StepSchedule::Adam { .. });
        Self {
            schedule,
            k: 0,
            m: if moments { vec![0.0; dim] } else { Vec::new() },
            v: if moments { vec![0.0; dim] } else { Vec::new() },
        }
    }

    /// Applies one update in place.
    pub(crate) fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        match self.schedule {
            StepSchedule::Adam { lr, beta1, beta2, eps } => {
                let t = (self.k + 1) as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for i in 0..theta.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let mhat = self.m[i] / c1;
                    let vhat = self.v[i] / c2;
                    theta[i] -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
            _ => {
                let eta = self.schedule.step_size(self.k).expect("non-Adam schedule has a step size");
                theta.iter_mut().zip(grad).for_each(|(t, g)| *t -= eta * g);
            }
        }
        self.k += 1;
    }
}
