//! A small dense network mapping a shape descriptor to the nodal field,
//! trained over a family of shapes on the combined Poisson loss.
//!
//! Layer `l` computes `z = W a + b` with `W` stored row-major (`out × in`)
//! followed by `b`; hidden layers apply the activation, the output layer is
//! linear and multiplied by a fixed scale.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{circle_cloud, BoundaryPointCloud};
use crate::grid_fem::{BackgroundGrid, NodalField};
use crate::occupancy::{occupancy_grid, OccupancyField};
use crate::optimizer::{minimize_stochastic, MinimizeOptions, OptimTrace, StochasticObjective};
use crate::residual::{LossWeights, PdeKind, PdeProblem, PoissonSystem};

const CHECKPOINT_MAGIC: &str = "ibfem-densenet 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation value.
    fn slope(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    sizes: Vec<usize>,
    activation: Activation,
    output_scale: f64,
    params: Vec<f64>,
}

impl DenseNet {
    /// `Σ (in + 1)·out` over the layers of `sizes`.
    pub fn num_params_for(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// All-zero network.
    pub fn zeros(sizes: &[usize], activation: Activation, output_scale: f64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("layer sizes {sizes:?} need at least two positive entries")));
        }
        if !output_scale.is_finite() {
            return Err(Error::Config("output scale must be finite".into()));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            activation,
            output_scale,
            params: vec![0.0; Self::num_params_for(sizes)],
        })
    }

    /// Tanh network with output scale 0.1 and weights and biases drawn from
    /// `U(−1/√fan_in, 1/√fan_in)`.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes, Activation::Tanh, 0.1)?;
        net.initialize(seed);
        Ok(net)
    }

    pub fn initialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut k = 0;
        for w in self.sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] + 1) * w[1] {
                self.params[k] = rng.gen_range(-bound..bound);
                k += 1;
            }
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Config(format!(
                "parameter vector has length {}, network has {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    fn check(&self, params: &[f64], desc: &[f64]) -> Result<()> {
        if desc.len() != self.input_dim() {
            return Err(Error::Config(format!(
                "descriptor has length {}, network expects {}",
                desc.len(),
                self.input_dim()
            )));
        }
        if params.len() != self.params.len() {
            return Err(Error::Config(format!(
                "parameter vector has length {}, network has {}",
                params.len(),
                self.params.len()
            )));
        }
        Ok(())
    }

    /// Activations of every layer; the last entry is the unscaled output.
    fn activations(&self, params: &[f64], desc: &[f64]) -> Vec<Vec<f64>> {
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(desc.to_vec());
        let mut k = 0;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[k..k + n_in * n_out];
            let bias = &params[k + n_in * n_out..k + (n_in + 1) * n_out];
            k += (n_in + 1) * n_out;
            let a = &acts[l];
            let hidden = l + 1 < layers;
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    let s = row.iter().zip(a).map(|(w, x)| w * x).sum::<f64>() + bias[o];
                    if hidden {
                        self.activation.apply(s)
                    } else {
                        s
                    }
                })
                .collect();
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, desc: &[f64]) -> Result<Vec<f64>> {
        self.forward_with(&self.params, desc)
    }

    /// Output for an explicit parameter vector of this architecture.
    pub fn forward_with(&self, params: &[f64], desc: &[f64]) -> Result<Vec<f64>> {
        self.check(params, desc)?;
        let mut acts = self.activations(params, desc);
        let mut out = acts.pop().expect("output layer");
        out.iter_mut().for_each(|v| *v *= self.output_scale);
        Ok(out)
    }

    /// Output as a nodal field with `n_dof` unknowns per node.
    pub fn forward_field(&self, grid: &BackgroundGrid, n_dof: usize, desc: &[f64]) -> Result<NodalField> {
        NodalField::new(grid, n_dof, self.forward(desc)?)
    }

    pub fn backward(&self, desc: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        self.backward_with(&self.params, desc, cotangent)
    }

    /// Gradient of `⟨cotangent, forward(desc)⟩` with respect to the parameters.
    pub fn backward_with(&self, params: &[f64], desc: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        self.check(params, desc)?;
        if cotangent.len() != self.output_dim() {
            return Err(Error::Config(format!(
                "cotangent has length {}, network output is {}",
                cotangent.len(),
                self.output_dim()
            )));
        }
        let acts = self.activations(params, desc);
        let mut grad = vec![0.0; params.len()];
        let mut delta: Vec<f64> = cotangent.iter().map(|c| c * self.output_scale).collect();
        let mut end = params.len();
        for l in (0..self.sizes.len() - 1).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let start = end - (n_in + 1) * n_out;
            let a = &acts[l];
            for o in 0..n_out {
                let d = delta[o];
                grad[start + n_in * n_out + o] = d;
                if d != 0.0 {
                    let row = &mut grad[start + o * n_in..start + (o + 1) * n_in];
                    row.iter_mut().zip(a).for_each(|(g, x)| *g = d * x);
                }
            }
            if l > 0 {
                let weights = &params[start..start + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, w) in prev.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                        *p += w * d;
                    }
                }
                for (p, x) in prev.iter_mut().zip(a) {
                    *p *= self.activation.slope(*x);
                }
                delta = prev;
            }
            end = start;
        }
        Ok(grad)
    }

    /// Text checkpoint: magic line, activation, output scale, layer sizes,
    /// then one parameter per line in layer order (weights row-major, then
    /// biases).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(s, "activation {}", self.activation.name());
        let _ = writeln!(s, "scale {:e}", self.output_scale);
        let sizes: Vec<String> = self.sizes.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(s, "sizes {}", sizes.join(" "));
        for p in &self.params {
            let _ = writeln!(s, "{p:e}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Parse { line: 0, msg: format!("missing {what}") })
        };
        let (ln, magic) = next("header")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Parse { line: ln, msg: format!("expected '{CHECKPOINT_MAGIC}'") });
        }
        let field = |(ln, line): (usize, &str), key: &str| -> Result<String> {
            line.strip_prefix(key)
                .map(|r| r.trim().to_string())
                .ok_or_else(|| Error::Parse { line: ln, msg: format!("expected '{key}'") })
        };
        let act_line = next("activation")?;
        let activation = match field(act_line, "activation")?.as_str() {
            "tanh" => Activation::Tanh,
            "identity" => Activation::Identity,
            other => return Err(Error::Parse { line: act_line.0, msg: format!("unknown activation '{other}'") }),
        };
        let scale_line = next("scale")?;
        let output_scale: f64 = field(scale_line, "scale")?
            .parse()
            .map_err(|e| Error::Parse { line: scale_line.0, msg: format!("bad scale: {e}") })?;
        let sizes_line = next("sizes")?;
        let sizes = field(sizes_line, "sizes")?
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse { line: sizes_line.0, msg: format!("bad layer size: {e}") })?;
        let mut net = Self::zeros(&sizes, activation, output_scale)
            .map_err(|e| Error::Parse { line: sizes_line.0, msg: e.to_string() })?;
        let mut params = Vec::with_capacity(net.params.len());
        for (ln, line) in lines {
            if line.is_empty() {
                continue;
            }
            params.push(line.parse::<f64>().map_err(|e| Error::Parse { line: ln, msg: format!("bad parameter: {e}") })?);
        }
        if params.len() != net.params.len() {
            return Err(Error::Parse {
                line: 0,
                msg: format!("layer sizes {sizes:?} need {} parameters, found {}", net.params.len(), params.len()),
            });
        }
        net.params = params;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// One member of a training family.
#[derive(Debug, Clone)]
pub struct ShapeSample {
    pub descriptor: Vec<f64>,
    pub cloud: BoundaryPointCloud,
    pub occupancy: OccupancyField,
}

impl ShapeSample {
    /// Circle with descriptor `(cx, cy, R)` and winding-number occupancy.
    pub fn circle(grid: &BackgroundGrid, center: [f64; 2], radius: f64, points: usize) -> Result<Self> {
        let cloud = circle_cloud(center, radius, points)?;
        let occupancy = occupancy_grid(&cloud, grid)?;
        Ok(Self {
            descriptor: vec![center[0], center[1], radius],
            cloud,
            occupancy,
        })
    }
}

/// Mean Poisson loss over a shape family as a function of the network
/// parameters.
pub struct FamilyLoss<'a> {
    net: &'a DenseNet,
    grid: &'a BackgroundGrid,
    descriptors: Vec<Vec<f64>>,
    systems: Vec<PoissonSystem>,
}

impl<'a> FamilyLoss<'a> {
    pub fn new(
        net: &'a DenseNet,
        grid: &'a BackgroundGrid,
        dataset: &[ShapeSample],
        prob: &PdeProblem,
        weights: &LossWeights,
    ) -> Result<Self> {
        if prob.kind != PdeKind::Poisson {
            return Err(Error::Config("family training supports the Poisson problem".into()));
        }
        if net.output_dim() != grid.num_nodes() {
            return Err(Error::Config(format!(
                "network emits {} values, grid has {} nodes",
                net.output_dim(),
                grid.num_nodes()
            )));
        }
        let mut descriptors = Vec::with_capacity(dataset.len());
        let mut systems = Vec::with_capacity(dataset.len());
        for s in dataset {
            if s.descriptor.len() != net.input_dim() {
                return Err(Error::Config(format!(
                    "descriptor has length {}, network expects {}",
                    s.descriptor.len(),
                    net.input_dim()
                )));
            }
            descriptors.push(s.descriptor.clone());
            systems.push(PoissonSystem::assemble(grid, &s.occupancy, &s.cloud, prob, weights)?);
        }
        Ok(Self { net, grid, descriptors, systems })
    }

    pub fn shape_loss(&self, i: usize, theta: &[f64]) -> Result<f64> {
        let u = self.net.forward_with(theta, &self.descriptors[i])?;
        let sys = &self.systems[i];
        Ok(sys.breakdown(&sys.restrict(&u)).total)
    }

    pub fn grid(&self) -> &BackgroundGrid {
        self.grid
    }
}

impl StochasticObjective for FamilyLoss<'_> {
    fn dim(&self) -> usize {
        self.net.num_params()
    }

    fn num_samples(&self) -> usize {
        self.systems.len()
    }

    fn sample_loss_and_gradient(&self, i: usize, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let desc = &self.descriptors[i];
        let u = self.net.forward_with(theta, desc)?;
        let sys = &self.systems[i];
        let x = sys.restrict(&u);
        let loss = sys.breakdown(&x).total;
        let cot = sys.scatter(&sys.gradient(&x));
        Ok((loss, self.net.backward_with(theta, desc, &cot)?))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilyReport {
    /// Final loss of each shape, in dataset order.
    pub shape_losses: Vec<f64>,
    pub trace: OptimTrace,
}

/// Trains `net` on the mean loss of `dataset` with mini-batches of
/// `batch_size` drawn from `seed`.
///
/// Samples are put in a canonical order (lexicographic by descriptor) first,
/// so a permuted dataset yields the same parameters.
#[allow(clippy::too_many_arguments)]
pub fn train_family(
    net: &mut DenseNet,
    grid: &BackgroundGrid,
    dataset: &[ShapeSample],
    prob: &PdeProblem,
    weights: &LossWeights,
    opts: &MinimizeOptions,
    batch_size: usize,
    seed: u64,
) -> Result<FamilyReport> {
    if dataset.is_empty() {
        return Err(Error::Config("training family is empty".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&dataset[a].descriptor, &dataset[b].descriptor);
        da.iter()
            .zip(db)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let canonical: Vec<ShapeSample> = order.iter().map(|&i| dataset[i].clone()).collect();
    let frozen = net.clone();
    let family = FamilyLoss::new(&frozen, grid, &canonical, prob, weights)?;
    let (theta, trace) = minimize_stochastic(&family, net.params().to_vec(), opts, batch_size, seed)?;
    let mut shape_losses = vec![0.0; dataset.len()];
    for (k, &i) in order.iter().enumerate() {
        shape_losses[i] = family.shape_loss(k, &theta)?;
    }
    net.set_params(theta)?;
    Ok(FamilyReport { shape_losses, trace })
}
