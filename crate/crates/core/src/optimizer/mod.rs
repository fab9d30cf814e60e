//! First-order minimization, step-size schedules and rate probes.

mod cg;
mod minimize;
pub mod probes;
mod schedule;
mod stochastic;

pub use cg::{conjugate_gradient, CgReport};
pub use minimize::{gradient_check, minimize, MinimizeOptions, Objective, OptimTrace, StopCriteria};
pub use schedule::StepSchedule;
pub use stochastic::{minimize_stochastic, FullBatch, StochasticObjective};
