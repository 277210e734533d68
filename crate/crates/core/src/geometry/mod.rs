//! Point clouds and the distances between them.
//!
//! Every metric here is a pure function. Nearest-neighbour ties resolve to the
//! lowest index so results never depend on anything but the inputs.

mod emd;

pub use emd::{
    emd_approx, emd_approx_var, emd_approx_with_grad, emd_exact, solve_assignment, Assignment,
    EmdApprox, SinkhornSettings, DEFAULT_EMD_EPSILON, EMD_EXACT_LIMIT,
};

use crate::autograd::{Array, Var};
use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// An ordered list of at least one finite 3-D point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud is empty"));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|x| !x.is_finite())) {
            return Err(Error::invalid(format!("point {i} is not finite")));
        }
        Ok(Self { points })
    }

    /// Builds a cloud from an N×3 matrix.
    pub fn from_array(a: &Array) -> Result<Self> {
        if a.ncols() != 3 {
            return Err(Error::invalid(format!(
                "expected N×3 coordinates, got {:?}",
                a.dim()
            )));
        }
        Self::new(a.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect())
    }

    pub fn to_array(&self) -> Array {
        Array::from_shape_fn((self.points.len(), 3), |(i, j)| self.points[i][j])
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.points[i]).collect())
    }

    pub fn centroid(&self) -> Point {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|x| x / n)
    }

    /// Largest distance from the origin.
    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(|p| norm(*p)).fold(0.0, f64::max)
    }

    /// Rounds every coordinate through `f32`.
    pub fn quantized_f32(&self) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| p.map(|x| x as f32 as f64))
                .collect(),
        }
    }
}

pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

pub fn sq_dist(a: Point, b: Point) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

/// Nearest point of `to` for each point of `from`, with its squared distance.
///
/// Exact, with ties going to the lowest index. Larger inputs use a sweep
/// along x that skips points whose x gap alone exceeds the best distance.
pub fn nearest_neighbors(from: &[Point], to: &[Point]) -> Vec<(usize, f64)> {
    if from.len() * to.len() <= 4096 {
        return from.iter().map(|&p| nearest_brute(p, to)).collect();
    }
    let mut order: Vec<usize> = (0..to.len()).collect();
    order.sort_by(|&a, &b| to[a][0].total_cmp(&to[b][0]).then(a.cmp(&b)));
    let xs: Vec<f64> = order.iter().map(|&i| to[i][0]).collect();
    from.iter()
        .map(|&p| {
            let start = xs.partition_point(|&x| x < p[0]);
            let mut best = (usize::MAX, f64::INFINITY);
            let visit = |k: usize, best: &mut (usize, f64)| {
                let dx = xs[k] - p[0];
                if dx * dx > best.1 {
                    return false;
                }
                let j = order[k];
                let d = sq_dist(p, to[j]);
                if d < best.1 || (d == best.1 && j < best.0) {
                    *best = (j, d);
                }
                true
            };
            for k in start..xs.len() {
                if !visit(k, &mut best) {
                    break;
                }
            }
            for k in (0..start).rev() {
                if !visit(k, &mut best) {
                    break;
                }
            }
            best
        })
        .collect()
}

fn nearest_brute(p: Point, to: &[Point]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, &q) in to.iter().enumerate() {
        let d = sq_dist(p, q);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn rows_as_points(a: &Array) -> Vec<Point> {
    a.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect()
}

/// Sum of squared nearest-neighbour distances in both directions.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    let ab: f64 = nearest_neighbors(&a.points, &b.points).iter().map(|x| x.1).sum();
    let ba: f64 = nearest_neighbors(&b.points, &a.points).iter().map(|x| x.1).sum();
    ab + ba
}

/// Chamfer distance between two N×3 / M×3 variables, differentiable in both.
pub fn chamfer_var<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    let pa = rows_as_points(&a.value());
    let pb = rows_as_points(&b.value());
    let ab: Vec<usize> = nearest_neighbors(&pa, &pb).iter().map(|x| x.0).collect();
    let ba: Vec<usize> = nearest_neighbors(&pb, &pa).iter().map(|x| x.0).collect();
    let forward = (a - b.gather_rows(&ab)).square().sum();
    let backward = (b - a.gather_rows(&ba)).square().sum();
    forward + backward
}

/// One non-negative error per predicted point.
#[derive(Debug, Clone, PartialEq)]
pub struct PerPointError {
    pub errors: Vec<f64>,
}

impl PerPointError {
    pub fn max(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.errors.iter().sum::<f64>() / self.errors.len() as f64
    }

    /// Nearest-rank percentile, `q` in `[0, 1]`.
    pub fn percentile(&self, q: f64) -> f64 {
        let mut sorted = self.errors.clone();
        sorted.sort_by(f64::total_cmp);
        let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        sorted[rank - 1]
    }
}

/// Squared distance from each predicted point to its nearest ground-truth point.
pub fn pc_to_pc_error(pred: &PointCloud, gt: &PointCloud) -> PerPointError {
    PerPointError {
        errors: nearest_neighbors(&pred.points, &gt.points)
            .into_iter()
            .map(|x| x.1)
            .collect(),
    }
}

/// A cloud centred at the origin and scaled to unit maximum radius.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub cloud: PointCloud,
    pub centroid: Point,
    pub scale: f64,
    /// All points coincided; the cloud is only centred and `scale` is 1.
    pub degenerate: bool,
}

impl Normalized {
    /// Maps a normalized point back into the original frame.
    pub fn denormalize(&self, p: Point) -> Point {
        [
            p[0] * self.scale + self.centroid[0],
            p[1] * self.scale + self.centroid[1],
            p[2] * self.scale + self.centroid[2],
        ]
    }
}

pub fn normalize(a: &PointCloud) -> Normalized {
    let centroid = a.centroid();
    let centered: Vec<Point> = a.points.iter().map(|&p| sub(p, centroid)).collect();
    let radius = centered.iter().map(|&p| norm(p)).fold(0.0, f64::max);
    let degenerate = radius <= f64::EPSILON;
    let scale = if degenerate { 1.0 } else { radius };
    Normalized {
        cloud: PointCloud {
            points: centered.into_iter().map(|p| p.map(|x| x / scale)).collect(),
        },
        centroid,
        scale,
        degenerate,
    }
}
