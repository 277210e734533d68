//! Downsampling and grouping: farthest point sampling, ball query and the
//! set-abstraction layer built from them.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::autograd::{Array, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{sq_dist, Point, PointCloud};
use crate::nn::{Bound, Mlp, ParamStore, SeededRng};

/// Points with one feature row each. `features` may have zero columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturedCloud {
    points: Array,
    features: Array,
}

impl FeaturedCloud {
    pub fn new(points: Array, features: Array) -> Result<Self> {
        if points.ncols() != 3 {
            return Err(Error::invalid(format!(
                "expected M×3 points, got {:?}",
                points.dim()
            )));
        }
        if points.nrows() == 0 {
            return Err(Error::invalid("featured cloud is empty"));
        }
        if features.nrows() != points.nrows() {
            return Err(Error::invalid(format!(
                "{} points but {} feature rows",
                points.nrows(),
                features.nrows()
            )));
        }
        if points.iter().chain(features.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("featured cloud".into()));
        }
        Ok(Self { points, features })
    }

    /// Coordinates only.
    pub fn from_cloud(cloud: &PointCloud) -> Self {
        Self {
            points: cloud.to_array(),
            features: Array::zeros((cloud.len(), 0)),
        }
    }

    pub fn points(&self) -> &Array {
        &self.points
    }

    pub fn features(&self) -> &Array {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.features.ncols()
    }

    pub fn cloud(&self) -> PointCloud {
        PointCloud::from_array(&self.points).expect("validated on construction")
    }
}

/// Parameters of one set-abstraction level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingSpec {
    pub npoint: usize,
    pub radius: f64,
    pub kmax: usize,
    /// Output widths of the shared per-point map, last entry is the level's width.
    pub mlp_widths: Vec<usize>,
    /// Pool every point into a single group centred on the origin.
    pub group_all: bool,
}

impl GroupingSpec {
    pub fn new(npoint: usize, radius: f64, kmax: usize, mlp_widths: Vec<usize>) -> Self {
        Self {
            npoint,
            radius,
            kmax,
            mlp_widths,
            group_all: false,
        }
    }

    /// A level that reduces the whole cloud to one feature vector.
    pub fn global(mlp_widths: Vec<usize>) -> Self {
        Self {
            npoint: 1,
            radius: f64::INFINITY,
            kmax: usize::MAX,
            mlp_widths,
            group_all: true,
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.npoint == 0 || self.npoint > m {
            return Err(Error::invalid(format!(
                "npoint {} outside 1..={m}",
                self.npoint
            )));
        }
        if !(self.radius > 0.0) {
            return Err(Error::invalid("radius must be positive"));
        }
        if self.kmax == 0 {
            return Err(Error::invalid("kmax must be at least 1"));
        }
        if self.mlp_widths.is_empty() {
            return Err(Error::invalid("mlp_widths is empty"));
        }
        Ok(())
    }

    pub fn out_width(&self) -> usize {
        *self.mlp_widths.last().expect("validated")
    }
}

/// Greedy max-min sampling starting from `seed_index`.
///
/// Each new index maximises the distance to the points already chosen; ties
/// go to the lowest index.
pub fn farthest_point_sample(cloud: &PointCloud, m: usize, seed_index: usize) -> Result<Vec<usize>> {
    fps_points(cloud.points(), m, seed_index)
}

fn fps_points(pts: &[Point], m: usize, seed_index: usize) -> Result<Vec<usize>> {
    let n = pts.len();
    if m == 0 || m > n {
        return Err(Error::invalid(format!("cannot sample {m} of {n} points")));
    }
    if seed_index >= n {
        return Err(Error::invalid(format!(
            "seed index {seed_index} out of range {n}"
        )));
    }
    let mut chosen = Vec::with_capacity(m);
    let mut dist = vec![f64::INFINITY; n];
    let mut next = seed_index;
    for _ in 0..m {
        chosen.push(next);
        let c = pts[next];
        dist[next] = -1.0;
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for (i, p) in pts.iter().enumerate() {
            if dist[i] < 0.0 {
                continue;
            }
            let d = sq_dist(*p, c);
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best.1 {
                best = (i, dist[i]);
            }
        }
        next = best.0;
    }
    Ok(chosen)
}

/// Index of the point farthest from the centroid, lowest index on ties.
///
/// Used as an FPS seed that does not depend on point order.
pub fn farthest_from_centroid(cloud: &PointCloud) -> usize {
    let c = cloud.centroid();
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &p) in cloud.points().iter().enumerate() {
        let d = sq_dist(p, c);
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Neighbourhoods of each center: the (at most `kmax`) nearest cloud points
/// within `radius`, nearest first.
///
/// A center with no point in range gets its single nearest point. Every
/// group is padded to exactly `kmax` entries by repeating its first member.
pub fn ball_query(centers: &PointCloud, cloud: &PointCloud, spec: &GroupingSpec) -> Vec<Vec<usize>> {
    ball_query_points(centers.points(), cloud.points(), spec.radius, spec.kmax)
}

fn ball_query_points(centers: &[Point], pts: &[Point], radius: f64, kmax: usize) -> Vec<Vec<usize>> {
    let r2 = radius * radius;
    let width = if kmax == usize::MAX { pts.len() } else { kmax };
    centers
        .iter()
        .map(|&c| {
            let mut inside: Vec<(f64, usize)> = pts
                .iter()
                .enumerate()
                .map(|(i, &p)| (sq_dist(p, c), i))
                .filter(|&(d, _)| d <= r2)
                .collect();
            if inside.is_empty() {
                let nearest = pts
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| (sq_dist(p, c), i))
                    .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)))
                    .expect("cloud is nonempty");
                inside.push(nearest);
            }
            inside.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
            let mut group: Vec<usize> = inside.iter().take(width).map(|x| x.1).collect();
            let first = group[0];
            group.resize(width, first);
            group
        })
        .collect()
}

/// One set-abstraction level: sample centers, group neighbours, apply the
/// shared per-point map to relative coordinates plus features, max-pool.
#[derive(Debug, Clone)]
pub struct SetAbstraction {
    pub spec: GroupingSpec,
    pub mlp: Mlp,
    pub in_features: usize,
}

/// Differentiable output of a [`SetAbstraction`].
pub struct SaOutput<'t> {
    pub points: Var<'t>,
    pub features: Var<'t>,
    /// Indices of the sampled centers in the input.
    pub centers: Vec<usize>,
}

impl SetAbstraction {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeededRng,
        name: &str,
        spec: GroupingSpec,
        in_features: usize,
    ) -> Self {
        let mut widths = vec![3 + in_features];
        widths.extend_from_slice(&spec.mlp_widths);
        let mlp = Mlp::new(store, rng, name, &widths, true);
        Self {
            spec,
            mlp,
            in_features,
        }
    }

    /// Runs the level on tape variables. Grouping is decided on the current
    /// values; gradients flow through coordinates, features and weights.
    pub fn forward<'t>(
        &self,
        params: &Bound<'t>,
        points: Var<'t>,
        features: Option<Var<'t>>,
        seed_index: usize,
    ) -> Result<SaOutput<'t>> {
        let (m, cols) = points.shape();
        if cols != 3 {
            return Err(Error::invalid(format!("expected M×3 points, got {m}×{cols}")));
        }
        let width = features.map_or(0, |f| f.shape().1);
        if width != self.in_features || features.is_some_and(|f| f.shape().0 != m) {
            return Err(Error::invalid(format!(
                "set abstraction expects {} feature columns over {m} rows",
                self.in_features
            )));
        }
        self.spec.validate(m)?;
        let value = points.value();
        let pts: Vec<Point> = value.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect();

        if self.spec.group_all {
            let all: Vec<usize> = (0..m).collect();
            let origin = points.tape().zeros(1, 3);
            let features = group_and_pool(points, features, origin, &[all], &self.mlp, params);
            return Ok(SaOutput {
                points: origin,
                features,
                centers: Vec::new(),
            });
        }

        let centers = fps_points(&pts, self.spec.npoint, seed_index)?;
        let center_pts: Vec<Point> = centers.iter().map(|&i| pts[i]).collect();
        let groups = ball_query_points(&center_pts, &pts, self.spec.radius, self.spec.kmax);
        let new_points = points.gather_rows(&centers);
        let features = group_and_pool(points, features, new_points, &groups, &self.mlp, params);
        Ok(SaOutput {
            points: new_points,
            features,
            centers,
        })
    }
}

/// Applies `mlp` to `[p_j − c_g, f_j]` for every member `j` of group `g` and
/// takes the coordinate-wise max within each group.
///
/// All groups must have the same length.
pub fn group_and_pool<'t>(
    points: Var<'t>,
    features: Option<Var<'t>>,
    centers: Var<'t>,
    groups: &[Vec<usize>],
    mlp: &Mlp,
    params: &Bound<'t>,
) -> Var<'t> {
    let k = groups[0].len();
    assert!(groups.iter().all(|g| g.len() == k), "ragged groups");
    let flat: Vec<usize> = groups.iter().flatten().copied().collect();
    let owner: Vec<usize> = (0..groups.len()).flat_map(|g| std::iter::repeat_n(g, k)).collect();
    let rel = points.gather_rows(&flat) - centers.gather_rows(&owner);
    let input = match features {
        Some(f) => Var::concat_cols(&[rel, f.gather_rows(&flat)]),
        None => rel,
    };
    mlp.forward(params, input).max_groups(k)
}

/// Inference-only set abstraction on a [`FeaturedCloud`], seeded at `seed_index`.
pub fn set_abstraction(
    input: &FeaturedCloud,
    layer: &SetAbstraction,
    store: &ParamStore,
    seed_index: usize,
) -> Result<FeaturedCloud> {
    let tape = Tape::new();
    let params = store.bind(&tape);
    let points = tape.constant(input.points.clone());
    let features = (input.width() > 0).then(|| tape.constant(input.features.clone()));
    let out = layer.forward(&params, points, features, seed_index)?;
    FeaturedCloud::new((*out.points.value()).clone(), (*out.features.value()).clone())
}
