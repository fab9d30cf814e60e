//! Oriented boundary point clouds: synthetic generators (circles, spheres,
//! closed B-spline blobs) and a plain-text file format.
//!
//! File format, one point per row, whitespace separated, `#` starts a
//! comment line:
//!
//! ```text
//! x y nx ny a          (2D)
//! x y z nx ny nz a     (3D)
//! ```

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UNIT_TOL: f64 = 1e-10;

/// Points sampling a closed boundary, with outward unit normals and the
/// boundary measure each point represents (arclength share in 2D, area in 3D).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPointCloud {
    dim: usize,
    points: Vec<f64>,
    normals: Vec<f64>,
    areas: Vec<f64>,
}

impl BoundaryPointCloud {
    /// Builds a cloud from flat coordinate arrays. Normals that are not unit
    /// length are normalized (with a warning); zero normals and non-positive
    /// areas are rejected.
    pub fn new(dim: usize, points: Vec<f64>, mut normals: Vec<f64>, areas: Vec<f64>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Config(format!("point clouds must be 2D or 3D, got {dim}")));
        }
        let n = areas.len();
        if points.len() != n * dim || normals.len() != n * dim {
            return Err(Error::Config(format!(
                "inconsistent cloud arrays: {} coordinates, {} normal components, {} areas in {dim}D",
                points.len(),
                normals.len(),
                n
            )));
        }
        if let Some(i) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite coordinate in point {}", i / dim)));
        }
        for (i, &a) in areas.iter().enumerate() {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::Domain(format!("point {i} has non-positive area {a}")));
            }
        }
        for (i, nrm) in normals.chunks_mut(dim).enumerate() {
            let len = nrm.iter().map(|c| c * c).sum::<f64>().sqrt();
            if !(len > 0.0 && len.is_finite()) {
                return Err(Error::Domain(format!("point {i} has a degenerate normal")));
            }
            if (len - 1.0).abs() > UNIT_TOL {
                warn!("normal of point {i} has length {len}; normalizing");
                nrm.iter_mut().for_each(|c| *c /= len);
            }
        }
        Ok(Self {
            dim,
            points,
            normals,
            areas,
        })
    }

    /// Cloud without points (no immersed object).
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            points: Vec::new(),
            normals: Vec::new(),
            areas: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.areas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.areas.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn normal(&self, i: usize) -> &[f64] {
        &self.normals[i * self.dim..(i + 1) * self.dim]
    }

    pub fn area(&self, i: usize) -> f64 {
        self.areas[i]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    /// First two coordinates of point `i`.
    pub fn point2(&self, i: usize) -> [f64; 2] {
        let p = self.point(i);
        [p[0], p[1]]
    }

    pub fn normal2(&self, i: usize) -> [f64; 2] {
        let n = self.normal(i);
        [n[0], n[1]]
    }

    /// Total boundary measure (perimeter in 2D).
    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for p in self.points.chunks(self.dim) {
            c.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
        let n = self.len().max(1) as f64;
        c.iter_mut().for_each(|a| *a /= n);
        c
    }

    pub fn translated(&self, shift: &[f64]) -> Self {
        let mut out = self.clone();
        for p in out.points.chunks_mut(self.dim) {
            p.iter_mut().zip(shift).for_each(|(a, b)| *a += b);
        }
        out
    }

    /// Uniform scaling about `center`; point measures scale by `s^(d-1)`.
    pub fn scaled_about(&self, center: &[f64], s: f64) -> Self {
        let mut out = self.clone();
        for p in out.points.chunks_mut(self.dim) {
            p.iter_mut().zip(center).for_each(|(a, c)| *a = c + s * (*a - c));
        }
        let f = s.powi(self.dim as i32 - 1);
        out.areas.iter_mut().for_each(|a| *a *= f);
        out
    }
}

/// `n` equally spaced points on a circle, counterclockwise, with radial
/// normals and equal arclength weights `2πR/n`.
pub fn circle_cloud(center: [f64; 2], radius: f64, n: usize) -> Result<BoundaryPointCloud> {
    if n < 8 {
        return Err(Error::Config(format!("circle needs at least 8 points, got {n}")));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Config(format!("circle radius must be positive, got {radius}")));
    }
    let mut points = Vec::with_capacity(2 * n);
    let mut normals = Vec::with_capacity(2 * n);
    for i in 0..n {
        let t = 2.0 * PI * i as f64 / n as f64;
        let (s, c) = t.sin_cos();
        points.extend([center[0] + radius * c, center[1] + radius * s]);
        normals.extend([c, s]);
    }
    let areas = vec![2.0 * PI * radius / n as f64; n];
    BoundaryPointCloud::new(2, points, normals, areas)
}

/// Quasi-uniform (Fibonacci) sampling of a sphere with equal area weights.
pub fn sphere_cloud(center: [f64; 3], radius: f64, n: usize) -> Result<BoundaryPointCloud> {
    if n < 8 {
        return Err(Error::Config(format!("sphere needs at least 8 points, got {n}")));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Config(format!("sphere radius must be positive, got {radius}")));
    }
    let golden = PI * (3.0 - 5f64.sqrt());
    let mut points = Vec::with_capacity(3 * n);
    let mut normals = Vec::with_capacity(3 * n);
    for i in 0..n {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let r = (1.0 - z * z).sqrt();
        let (s, c) = (golden * i as f64).sin_cos();
        let nrm = [r * c, r * s, z];
        points.extend((0..3).map(|a| center[a] + radius * nrm[a]));
        normals.extend(nrm);
    }
    let areas = vec![4.0 * PI * radius * radius / n as f64; n];
    BoundaryPointCloud::new(3, points, normals, areas)
}

/// Random closed spline blob: control points with `x` uniformly spaced on
/// `[0, 1]` and `y` drawn uniformly from `y_range`, closed by periodic wrap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineShapeSpec {
    pub num_control: usize,
    pub seed: u64,
    pub degree: usize,
    pub samples: usize,
    pub y_range: (f64, f64),
}

impl Default for SplineShapeSpec {
    fn default() -> Self {
        Self {
            num_control: 8,
            seed: 0,
            degree: 3,
            samples: 1000,
            y_range: (0.2, 0.8),
        }
    }
}

impl SplineShapeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.degree == 0 {
            return Err(Error::Config("spline degree must be at least 1".into()));
        }
        if self.num_control < self.degree + 1 {
            return Err(Error::Config(format!(
                "{} control points are too few for degree {}",
                self.num_control, self.degree
            )));
        }
        if self.samples < 8 {
            return Err(Error::Config(format!("need at least 8 samples, got {}", self.samples)));
        }
        let (lo, hi) = self.y_range;
        if !(lo < hi) {
            return Err(Error::Config(format!("empty y range ({lo}, {hi})")));
        }
        Ok(())
    }

    /// Control polygon drawn deterministically from the seed.
    pub fn control_points(&self) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let m = self.num_control;
        (0..m)
            .map(|k| {
                let x = if m > 1 { k as f64 / (m - 1) as f64 } else { 0.0 };
                [x, rng.gen_range(self.y_range.0..self.y_range.1)]
            })
            .collect()
    }

    /// Fixed-length descriptor: the control-point ordinates.
    pub fn descriptor(&self) -> Vec<f64> {
        self.control_points().iter().map(|p| p[1]).collect()
    }
}

pub fn sample_spline_shape(spec: &SplineShapeSpec) -> Result<BoundaryPointCloud> {
    spec.validate()?;
    sample_closed_bspline(&spec.control_points(), spec.degree, spec.samples)
}

/// Cardinal B-spline of the given degree, supported on `[0, degree + 1)`.
fn cardinal_bspline(degree: usize, x: f64) -> f64 {
    if degree == 0 {
        return if (0.0..1.0).contains(&x) { 1.0 } else { 0.0 };
    }
    let p = degree as f64;
    (x * cardinal_bspline(degree - 1, x) + (p + 1.0 - x) * cardinal_bspline(degree - 1, x - 1.0)) / p
}

/// Samples a closed uniform B-spline (all weights 1) whose control polygon
/// wraps periodically. Samples are reoriented counterclockwise; normals come
/// from the rotated central-difference tangent, and each point carries half
/// the distance to each neighbor.
///
/// Self-intersections are not detected.
pub fn sample_closed_bspline(control: &[[f64; 2]], degree: usize, samples: usize) -> Result<BoundaryPointCloud> {
    let m = control.len();
    if degree == 0 || m < degree + 1 {
        return Err(Error::Config(format!(
            "closed B-spline of degree {degree} needs at least {} control points, got {m}",
            degree + 1
        )));
    }
    if samples < 8 {
        return Err(Error::Config(format!("need at least 8 samples, got {samples}")));
    }
    let mut pts: Vec<[f64; 2]> = (0..samples)
        .map(|i| {
            let u = m as f64 * i as f64 / samples as f64;
            let mut p = [0.0; 2];
            // control k contributes N(u - k + shift) with periodic wrap
            let base = u.floor() as i64;
            for off in 0..=degree as i64 {
                let k = base - off;
                let w = cardinal_bspline(degree, u - k as f64);
                let c = control[k.rem_euclid(m as i64) as usize];
                p[0] += w * c[0];
                p[1] += w * c[1];
            }
            p
        })
        .collect();

    let signed_area: f64 = (0..samples)
        .map(|i| {
            let a = pts[i];
            let b = pts[(i + 1) % samples];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        * 0.5;
    if signed_area < 0.0 {
        pts.reverse();
    }

    let n = samples;
    let mut points = Vec::with_capacity(2 * n);
    let mut normals = Vec::with_capacity(2 * n);
    let mut areas = Vec::with_capacity(n);
    for i in 0..n {
        let prev = pts[(i + n - 1) % n];
        let next = pts[(i + 1) % n];
        let cur = pts[i];
        let t = [next[0] - prev[0], next[1] - prev[1]];
        let len = t[0].hypot(t[1]);
        if len == 0.0 {
            return Err(Error::Domain(format!("degenerate tangent at sample {i}")));
        }
        points.extend(cur);
        normals.extend([t[1] / len, -t[0] / len]);
        let d_prev = (cur[0] - prev[0]).hypot(cur[1] - prev[1]);
        let d_next = (next[0] - cur[0]).hypot(next[1] - cur[1]);
        areas.push(0.5 * (d_prev + d_next));
    }
    BoundaryPointCloud::new(2, points, normals, areas)
}

/// Writes a cloud in the plain-text format with full round-trip precision.
pub fn write_cloud(cloud: &BoundaryPointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    if cloud.dim() == 2 {
        s.push_str("# x y nx ny a\n");
    } else {
        s.push_str("# x y z nx ny nz a\n");
    }
    for i in 0..cloud.len() {
        let mut cols: Vec<String> = cloud.point(i).iter().map(|v| v.to_string()).collect();
        cols.extend(cloud.normal(i).iter().map(|v| v.to_string()));
        cols.push(cloud.area(i).to_string());
        let _ = writeln!(s, "{}", cols.join(" "));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<BoundaryPointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cloud(&text)
}

/// Parses the plain-text cloud format; the dimension is inferred from the
/// column count of the first data row.
pub fn parse_cloud(text: &str) -> Result<BoundaryPointCloud> {
    let mut dim = 0;
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut areas = Vec::new();
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("invalid number {t:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if dim == 0 {
            dim = match cols.len() {
                5 => 2,
                7 => 3,
                k => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("expected 5 (2D) or 7 (3D) columns, found {k}"),
                    })
                }
            };
        } else if cols.len() != 2 * dim + 1 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {} columns, found {}", 2 * dim + 1, cols.len()),
            });
        }
        points.extend_from_slice(&cols[..dim]);
        normals.extend_from_slice(&cols[dim..2 * dim]);
        areas.push(cols[2 * dim]);
    }
    if areas.is_empty() {
        return Err(Error::EmptyCloud);
    }
    BoundaryPointCloud::new(dim, points, normals, areas)
}
