use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{circle_cloud, read_cloud, sample_spline_shape, BoundaryPointCloud, SplineShapeSpec};
use crate::grid_fem::BackgroundGrid;
use crate::occupancy::{eikonal_sdf, occupancy_grid, EikonalParams, OccupancyField};
use crate::residual::{LossWeights, NsSolveOptions, PdeKind, PdeProblem, Robin, WallConditions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    DiskConvergence,
    PoissonShape,
    NsChannel,
    Parametric,
    Occupancy,
    Sdf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ShapeSource {
    Circle { center: [f64; 2], radius: f64, points: usize },
    Spline(SplineShapeSpec),
    File { path: PathBuf },
}

impl ShapeSource {
    pub fn cloud(&self) -> Result<BoundaryPointCloud> {
        match self {
            ShapeSource::Circle { center, radius, points } => circle_cloud(*center, *radius, *points),
            ShapeSource::Spline(spec) => sample_spline_shape(spec),
            ShapeSource::File { path } => read_cloud(path),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum OccupancyMethod {
    Winding,
    Eikonal(EikonalParams),
}

/// Which side of the cloud is removed from the PDE region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskedSide {
    /// The object interior (heat source, obstacle).
    Inside,
    /// Everything outside the cloud (PDE posed on the object itself).
    Outside,
}

/// Scalar PDE data shared by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Physics {
    pub forcing: f64,
    pub alpha: f64,
    pub beta: f64,
    pub g: f64,
    pub interior_value: f64,
    /// Reynolds number `U_max · chord / ν`.
    pub reynolds: f64,
    pub peak_inflow: f64,
    pub object_penalty: f64,
    pub pressure_stabilization: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Self {
            forcing: 0.0,
            alpha: 1.0,
            beta: 0.0,
            g: 1.0,
            interior_value: 1.0,
            reynolds: 40.0,
            peak_inflow: 1.0,
            object_penalty: 10.0,
            pressure_stabilization: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub family_size: usize,
    pub held_out: Vec<usize>,
    pub init_seed: u64,
    pub batch_seed: u64,
    /// Epochs of the single-shape fit; 0 skips it.
    pub overfit_epochs: usize,
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            epochs: 5000,
            batch_size: 6,
            family_size: 8,
            held_out: vec![2, 5],
            init_seed: 0,
            batch_seed: 1,
            overfit_epochs: 5000,
            checkpoint: None,
        }
    }
}

/// Complete, serializable description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub experiment: Experiment,
    /// Cells per unit length.
    pub cells: usize,
    /// Resolution sweep of the convergence study.
    pub resolutions: Vec<usize>,
    pub shape: ShapeSource,
    pub occupancy: OccupancyMethod,
    pub masked: MaskedSide,
    pub physics: Physics,
    pub weights: LossWeights,
    pub ns_solver: NsSolveOptions,
    pub training: TrainingConfig,
    pub seed: u64,
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::poisson_shape()
    }
}

impl RunConfig {
    fn base(experiment: Experiment) -> Self {
        Self {
            experiment,
            cells: 32,
            resolutions: vec![16, 32, 64, 128],
            shape: ShapeSource::Circle { center: [0.5, 0.5], radius: 0.25, points: 1000 },
            occupancy: OccupancyMethod::Winding,
            masked: MaskedSide::Inside,
            physics: Physics::default(),
            weights: LossWeights::mesh_scaled(),
            ns_solver: NsSolveOptions::default(),
            training: TrainingConfig::default(),
            seed: 0,
            threads: None,
            output_dir: None,
        }
    }

    /// `−Δu = 1` on the disk `r < 0.25` with `u = 0` on its rim.
    pub fn disk_convergence() -> Self {
        Self {
            shape: ShapeSource::Circle { center: [0.5, 0.5], radius: 0.25, points: 2000 },
            masked: MaskedSide::Outside,
            physics: Physics { forcing: 1.0, g: 0.0, interior_value: 0.0, ..Physics::default() },
            ..Self::base(Experiment::DiskConvergence)
        }
    }

    /// Heat source: `u = 1` on the object, `u = 0` on the walls, `f = 0`.
    /// The cloud penalty is weighted `30/h` so the rim values reach the
    /// boundary data without overshooting into the fluid.
    pub fn poisson_shape() -> Self {
        Self {
            weights: LossWeights { boundary: 30.0, scale_by_inverse_h: true, ..LossWeights::mesh_scaled() },
            ..Self::base(Experiment::PoissonShape)
        }
    }

    /// Channel `[0, 2] × [0, 1]` with a disk of diameter 0.25 at `(0.5, 0.5)`.
    pub fn ns_channel() -> Self {
        Self {
            cells: 64,
            shape: ShapeSource::Circle { center: [0.5, 0.5], radius: 0.125, points: 400 },
            physics: Physics { g: 0.0, interior_value: 0.0, ..Physics::default() },
            weights: LossWeights { pde_inverse_h_power: 4, ..LossWeights::default() },
            ..Self::base(Experiment::NsChannel)
        }
    }

    /// Circle family for the geometry-conditioned model.
    pub fn parametric() -> Self {
        Self {
            shape: ShapeSource::Circle { center: [0.5, 0.5], radius: 0.15, points: 256 },
            ..Self::base(Experiment::Parametric)
        }
    }

    pub fn defaults_for(experiment: Experiment) -> Self {
        match experiment {
            Experiment::DiskConvergence => Self::disk_convergence(),
            Experiment::NsChannel => Self::ns_channel(),
            Experiment::Parametric => Self::parametric(),
            Experiment::PoissonShape => Self::poisson_shape(),
            Experiment::Occupancy | Experiment::Sdf => Self::base(experiment),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells == 0 {
            return Err(Error::Config("cells must be positive".into()));
        }
        if self.experiment == Experiment::DiskConvergence {
            if self.resolutions.len() < 2 {
                return Err(Error::Config("convergence study needs at least two resolutions".into()));
            }
            if self.resolutions.windows(2).any(|w| w[0] >= w[1]) || self.resolutions[0] == 0 {
                return Err(Error::Config(format!("resolutions {:?} must be positive and ascending", self.resolutions)));
            }
        }
        if self.experiment == Experiment::NsChannel && !(self.physics.reynolds > 0.0) {
            return Err(Error::Config("Reynolds number must be positive".into()));
        }
        Ok(())
    }

    /// Unit square at the configured resolution, or the 2 × 1 channel for
    /// flow runs.
    pub fn grid_with(&self, cells: usize) -> Result<BackgroundGrid> {
        match self.experiment {
            Experiment::NsChannel => BackgroundGrid::new([2 * cells, cells], [0.0, 0.0], [2.0, 1.0]),
            _ => BackgroundGrid::unit_square(cells),
        }
    }

    pub fn grid(&self) -> Result<BackgroundGrid> {
        self.grid_with(self.cells)
    }

    /// Occupancy of `cloud` on `grid` with the masked side applied.
    pub fn occupancy_for(&self, cloud: &BoundaryPointCloud, grid: &BackgroundGrid) -> Result<OccupancyField> {
        let occ = match self.occupancy {
            OccupancyMethod::Winding => occupancy_grid(cloud, grid)?,
            OccupancyMethod::Eikonal(params) => eikonal_sdf(cloud, grid, &params)?,
        };
        Ok(match self.masked {
            MaskedSide::Inside => occ,
            MaskedSide::Outside => occ.complement(),
        })
    }

    /// Characteristic length of the obstacle (its diameter for circles,
    /// otherwise the extent of its point cloud along `y`).
    pub fn chord(&self, cloud: &BoundaryPointCloud) -> f64 {
        match &self.shape {
            ShapeSource::Circle { radius, .. } => 2.0 * radius,
            _ => {
                let ys = (0..cloud.len()).map(|i| cloud.point2(i)[1]);
                let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), y| (l.min(y), h.max(y)));
                hi - lo
            }
        }
    }

    pub fn problem(&self, cloud: &BoundaryPointCloud) -> PdeProblem {
        let ph = &self.physics;
        let robin = Robin { alpha: ph.alpha, beta: ph.beta, g: ph.g };
        match self.experiment {
            Experiment::NsChannel => PdeProblem {
                robin,
                pressure_stabilization: ph.pressure_stabilization,
                object_penalty: ph.object_penalty,
                ..PdeProblem::navier_stokes(ph.peak_inflow * self.chord(cloud) / ph.reynolds, ph.peak_inflow)
            },
            _ => PdeProblem {
                kind: PdeKind::Poisson,
                forcing: ph.forcing,
                robin,
                interior_value: ph.interior_value,
                walls: WallConditions::dirichlet(0.0),
                ..PdeProblem::poisson(ph.forcing, ph.g)
            },
        }
    }
}
