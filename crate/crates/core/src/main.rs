use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use serde::Serialize;

use ibfem::experiments::{
    query_model, run_disk_convergence, run_ns_channel, run_occupancy, run_parametric, run_poisson_shape, write_csv,
    Experiment, OccupancyMethod, RunConfig, ShapeSource,
};
use ibfem::geometry::{circle_cloud, sample_spline_shape, write_cloud, SplineShapeSpec};
use ibfem::occupancy::EikonalParams;
use ibfem::Result;

#[derive(Parser)]
#[command(name = "ibfem", version, about = "Immersed-boundary finite elements trained by loss minimization")]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample random closed spline shapes (or a circle) to point-cloud files.
    GenShapes(GenShapes),
    /// Winding-number occupancy of a shape on the background grid.
    Occupancy(Common),
    /// Signed-distance field of a shape.
    Sdf {
        #[command(flatten)]
        common: Common,
        /// Viscosity weight in [0, 0.5].
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Heat-source Poisson problem around a shape.
    SolvePoisson(Common),
    /// Steady channel flow past a shape.
    SolveNs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reynolds: Option<f64>,
    },
    /// Grid convergence study on the disk problem.
    ConvergeDisk {
        #[command(flatten)]
        common: Common,
        /// Comma-separated cells per side, ascending.
        #[arg(long, value_delimiter = ',')]
        resolutions: Option<Vec<usize>>,
    },
    /// Train the geometry-conditioned model on a circle family.
    TrainParam {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Epochs of the single-shape fit (0 skips it).
        #[arg(long)]
        overfit_epochs: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a trained model on the circle `cx,cy,R`.
    Query {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_parser = parse_triple)]
        descriptor: [f64; 3],
    },
}

fn parse_triple(s: &str) -> std::result::Result<[f64; 3], String> {
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected three comma-separated numbers, got {}", v.len()))
}

#[derive(Args)]
struct Common {
    /// Full run configuration (JSON); flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cells per unit length.
    #[arg(long)]
    cells: Option<usize>,
    /// Point-cloud file replacing the default shape.
    #[arg(long)]
    cloud: Option<PathBuf>,
    /// Circle `cx,cy,R` replacing the default shape.
    #[arg(long, value_parser = parse_triple)]
    circle: Option<[f64; 3]>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    pde_weight: Option<f64>,
    #[arg(long)]
    boundary_weight: Option<f64>,
    #[arg(long)]
    exterior_weight: Option<f64>,
    /// Multiply the boundary and exterior weights by 1/h.
    #[arg(long)]
    inverse_h: Option<bool>,
    /// Occupancy from the signed-distance fit instead of winding numbers.
    #[arg(long)]
    sdf_occupancy: bool,
}

impl Common {
    fn resolve(&self, experiment: Experiment, threads: Option<usize>) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::defaults_for(experiment),
        };
        cfg.experiment = experiment;
        if let Some(v) = self.cells {
            cfg.cells = v;
        }
        if let Some(path) = &self.cloud {
            cfg.shape = ShapeSource::File { path: path.clone() };
        }
        if let Some(c) = &self.circle {
            let points = match cfg.shape {
                ShapeSource::Circle { points, .. } => points,
                _ => 1000,
            };
            cfg.shape = ShapeSource::Circle { center: [c[0], c[1]], radius: c[2], points };
        }
        if let (Some(n), ShapeSource::Circle { points, .. }) = (self.points, &mut cfg.shape) {
            *points = n;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.pde_weight {
            cfg.weights.pde = v;
        }
        if let Some(v) = self.boundary_weight {
            cfg.weights.boundary = v;
        }
        if let Some(v) = self.exterior_weight {
            cfg.weights.exterior = v;
        }
        if let Some(v) = self.inverse_h {
            cfg.weights.scale_by_inverse_h = v;
        }
        if self.sdf_occupancy {
            cfg.occupancy = OccupancyMethod::Eikonal(EikonalParams::default());
        }
        if self.out.is_some() {
            cfg.output_dir = self.out.clone();
        }
        if threads.is_some() {
            cfg.threads = threads;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenShapes {
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    control: usize,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Write a single circle `cx,cy,R` instead of spline shapes.
    #[arg(long, value_parser = parse_triple)]
    circle: Option<[f64; 3]>,
    #[arg(long)]
    out: PathBuf,
}

fn gen_shapes(args: &GenShapes) -> Result<()> {
    std::fs::create_dir_all(&args.out).map_err(|source| ibfem::Error::Io { path: args.out.clone(), source })?;
    if let Some(c) = &args.circle {
        let cloud = circle_cloud([c[0], c[1]], c[2], args.samples)?;
        return write_cloud(&cloud, args.out.join("circle.txt"));
    }
    let mut descriptors = Vec::with_capacity(args.count);
    for k in 0..args.count {
        let spec = SplineShapeSpec {
            num_control: args.control,
            seed: args.seed + k as u64,
            samples: args.samples,
            ..SplineShapeSpec::default()
        };
        write_cloud(&sample_spline_shape(&spec)?, args.out.join(format!("shape_{k}.txt")))?;
        descriptors.push(std::iter::once(k as f64).chain(spec.descriptor()).collect::<Vec<f64>>());
    }
    let mut header = vec!["index".to_string()];
    header.extend((0..args.control).map(|i| format!("y{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&header, &descriptors, args.out.join("descriptors.csv"))
}

fn print_json<T: Serialize>(value: &T) {
    match serde_json::to_string_pretty(value) {
        Ok(s) => println!("{s}"),
        Err(e) => error!("cannot format report: {e}"),
    }
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads;
    match cli.command {
        Command::GenShapes(args) => gen_shapes(&args)?,
        Command::Occupancy(common) => print_json(&run_occupancy(&common.resolve(Experiment::Occupancy, threads)?)?),
        Command::Sdf { common, tau, iters } => {
            let mut cfg = common.resolve(Experiment::Sdf, threads)?;
            let mut params = match cfg.occupancy {
                OccupancyMethod::Eikonal(p) => p,
                OccupancyMethod::Winding => EikonalParams::default(),
            };
            if let Some(t) = tau {
                params.tau = t;
            }
            if let Some(n) = iters {
                params.iters = n;
            }
            cfg.occupancy = OccupancyMethod::Eikonal(params);
            print_json(&run_occupancy(&cfg)?);
        }
        Command::SolvePoisson(common) => print_json(&run_poisson_shape(&common.resolve(Experiment::PoissonShape, threads)?)?),
        Command::SolveNs { common, reynolds } => {
            let mut cfg = common.resolve(Experiment::NsChannel, threads)?;
            if let Some(re) = reynolds {
                cfg.physics.reynolds = re;
            }
            print_json(&run_ns_channel(&cfg)?);
        }
        Command::ConvergeDisk { common, resolutions } => {
            let mut cfg = common.resolve(Experiment::DiskConvergence, threads)?;
            if let Some(r) = resolutions {
                cfg.resolutions = r;
            }
            print_json(&run_disk_convergence(&cfg)?);
        }
        Command::TrainParam { common, epochs, learning_rate, overfit_epochs, checkpoint } => {
            let mut cfg = common.resolve(Experiment::Parametric, threads)?;
            if let Some(v) = epochs {
                cfg.training.epochs = v;
            }
            if let Some(v) = learning_rate {
                cfg.training.learning_rate = v;
            }
            if let Some(v) = overfit_epochs {
                cfg.training.overfit_epochs = v;
            }
            if checkpoint.is_some() {
                cfg.training.checkpoint = checkpoint;
            }
            print_json(&run_parametric(&cfg)?);
        }
        Command::Query { common, model, descriptor } => {
            let cfg = common.resolve(Experiment::Parametric, threads)?;
            print_json(&query_model(&cfg, &model, descriptor)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("cannot set thread count: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
