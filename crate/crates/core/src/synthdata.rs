//! Synthetic (slice image, partial cloud, full cloud) samples and their
//! on-disk layout.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::Array;
use crate::container::Container;
use crate::error::{Error, Result};
use crate::geometry::{normalize, Point, PointCloud};
use crate::nn::SeededRng;
use crate::predictor::{GENERATED_POINTS, IMAGE_HEIGHT, IMAGE_WIDTH};

/// Slab half-thickness as a fraction of the shape's extent along the axis.
pub const SLAB_FRACTION: f64 = 0.05;
/// Distance between neighbouring slices in a stack, in normalized units.
pub const SLICE_SPACING: f64 = 0.08;
/// Half-width of the square image frame in normalized units.
const FRAME: f64 = 1.05;
const SPLAT_RADIUS: f64 = 1.5;

/// Ellipsoid semi-axes plus low-order spherical-harmonic amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeParams {
    pub axes: [f64; 3],
    /// One amplitude per entry of [`harmonics`].
    pub amplitudes: Vec<f64>,
}

const HARMONICS: usize = 12;

/// Real spherical harmonics of degree 2 and 3 (up to normalization) at a
/// unit direction.
pub fn harmonics(u: Point) -> [f64; HARMONICS] {
    let [x, y, z] = u;
    [
        x * y,
        y * z,
        x * z,
        x * x - y * y,
        3.0 * z * z - 1.0,
        x * (x * x - 3.0 * y * y),
        y * (3.0 * x * x - y * y),
        z * (x * x - y * y),
        x * y * z,
        x * (5.0 * z * z - 1.0),
        y * (5.0 * z * z - 1.0),
        z * (5.0 * z * z - 3.0),
    ]
}

impl ShapeParams {
    /// Brain-like proportions: longest along y, flattest along z.
    pub fn random(seed: u64) -> Self {
        let mut rng = SeededRng::seed_from_u64(seed ^ 0x5eed_5ba9e);
        let base = [0.85, 1.0, 0.75];
        let axes = base.map(|a| a * rng.random_range(0.9..1.1));
        let amplitudes = (0..HARMONICS).map(|_| rng.random_range(-0.06..0.06)).collect();
        Self { axes, amplitudes }
    }

    /// Surface point in direction `u` (unit length).
    pub fn surface(&self, u: Point) -> Point {
        let bump: f64 = harmonics(u).iter().zip(&self.amplitudes).map(|(h, a)| h * a).sum();
        let r = 1.0 + bump;
        [self.axes[0] * u[0] * r, self.axes[1] * u[1] * r, self.axes[2] * u[2] * r]
    }
}

/// 2048 raw surface points of `params`, directions drawn from `seed`.
pub fn sample_surface(params: &ShapeParams, seed: u64) -> PointCloud {
    let mut rng = SeededRng::seed_from_u64(seed);
    let points = (0..GENERATED_POINTS)
        .map(|_| {
            let v: Point = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            let n = crate::geometry::norm(v).max(f64::MIN_POSITIVE);
            params.surface(v.map(|x| x / n))
        })
        .collect();
    PointCloud::new(points).expect("finite surface points")
}

/// [`sample_surface`], normalized and rounded through f32.
pub fn make_shape_with(params: &ShapeParams, seed: u64) -> PointCloud {
    normalize(&sample_surface(params, seed)).cloud.quantized_f32()
}

pub fn make_shape(seed: u64) -> PointCloud {
    make_shape_with(&ShapeParams::random(seed), seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OcclusionMode {
    /// Nothing is removed.
    Disabled,
    /// Everything beyond a plane with random normal.
    HalfSpaceCut,
    /// A ball around a random surface point.
    SphereCut,
    /// A square prism along the slice axis.
    RectMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionSpec {
    pub mode: OcclusionMode,
    /// Target removed fraction.
    pub fraction: f64,
    pub seed: u64,
}

impl OcclusionSpec {
    pub fn none() -> Self {
        Self {
            mode: OcclusionMode::Disabled,
            fraction: 0.0,
            seed: 0,
        }
    }

    /// Mode and fraction in [0.2, 0.4] drawn from `seed`.
    pub fn random(seed: u64) -> Self {
        let mut rng = SeededRng::seed_from_u64(seed ^ 0x0cc1_0de5);
        let mode = match rng.random_range(0..3) {
            0 => OcclusionMode::HalfSpaceCut,
            1 => OcclusionMode::SphereCut,
            _ => OcclusionMode::RectMask,
        };
        Self {
            mode,
            fraction: rng.random_range(0.2..=0.4),
            seed,
        }
    }
}

fn random_unit(rng: &mut SeededRng) -> Point {
    loop {
        let v: Point = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = crate::geometry::norm(v);
        if n > 1e-9 {
            return v.map(|x| x / n);
        }
    }
}

/// Visibility mask that hides the `k` points with the largest `score`
/// (ties broken towards the lower index).
fn hide_top(score: &[f64], k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..score.len()).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    let mut mask = vec![true; score.len()];
    for &i in &order[..k] {
        mask[i] = false;
    }
    mask
}

/// Points strictly beyond the plane `normal·p > offset` are hidden.
pub fn cut_half_space(gt: &PointCloud, normal: Point, offset: f64) -> Vec<bool> {
    gt.points()
        .iter()
        .map(|&p| crate::geometry::dot(p, normal) <= offset)
        .collect()
}

/// Removes `round(fraction·N)` points of `gt` with the region shape of
/// `occ.mode`, positioned from `occ.seed`.
pub fn make_occlusion(gt: &PointCloud, occ: &OcclusionSpec) -> Result<(PointCloud, Vec<bool>)> {
    if !(0.0..1.0).contains(&occ.fraction) {
        return Err(Error::invalid(format!(
            "occlusion fraction {} outside [0, 1)",
            occ.fraction
        )));
    }
    let n = gt.len();
    let k = (occ.fraction * n as f64).round() as usize;
    let mut rng = SeededRng::seed_from_u64(occ.seed);
    let pts = gt.points();
    let mask = match occ.mode {
        OcclusionMode::Disabled => vec![true; n],
        _ if k == 0 => vec![true; n],
        OcclusionMode::HalfSpaceCut => {
            let d = random_unit(&mut rng);
            let score: Vec<f64> = pts.iter().map(|&p| crate::geometry::dot(p, d)).collect();
            hide_top(&score, k)
        }
        OcclusionMode::SphereCut => {
            let c = pts[rng.random_range(0..n)];
            let score: Vec<f64> = pts.iter().map(|&p| -crate::geometry::sq_dist(p, c)).collect();
            hide_top(&score, k)
        }
        OcclusionMode::RectMask => {
            let c = pts[rng.random_range(0..n)];
            // Square in the slice plane, extended through every slice.
            let score: Vec<f64> = pts
                .iter()
                .map(|p| -(p[0] - c[0]).abs().max((p[1] - c[1]).abs()))
                .collect();
            hide_top(&score, k)
        }
    };
    let visible: Vec<Point> = pts.iter().zip(&mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect();
    Ok((PointCloud::new(visible)?, mask))
}

/// Slice plane `p[axis] = offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicePlane {
    pub axis: usize,
    pub offset: f64,
}

impl SlicePlane {
    /// Axial plane through the origin.
    pub fn axial() -> Self {
        Self { axis: 2, offset: 0.0 }
    }

    /// `count` axial planes centred on the origin, [`SLICE_SPACING`] apart.
    pub fn stack(count: usize) -> Vec<Self> {
        (0..count)
            .map(|i| Self {
                axis: 2,
                offset: (i as f64 - (count as f64 - 1.0) / 2.0) * SLICE_SPACING,
            })
            .collect()
    }

    /// In-plane axes: image rows follow the first, columns the second.
    fn in_plane(&self) -> (usize, usize) {
        match self.axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        }
    }
}

fn to_pixel(x: f64, size: usize) -> f64 {
    (x + FRAME) / (2.0 * FRAME) * (size as f64 - 1.0)
}

/// Filled cross-section of the slab around `plane`, 91×109, in [0, 1].
///
/// Slab points are ordered by angle around their mean and the resulting
/// polygon is filled, then each point is splatted so thin sections stay
/// visible. Intensity falls off from 1 at the section centre to 0.5 at its
/// rim. A pixel whose nearest slab point is hidden by `visible` is zero.
pub fn render_slice(gt: &PointCloud, visible: &[bool], plane: SlicePlane) -> Result<Array> {
    if visible.len() != gt.len() {
        return Err(Error::invalid("visibility mask does not match the cloud"));
    }
    if plane.axis > 2 {
        return Err(Error::invalid(format!("axis {} out of range", plane.axis)));
    }
    let pts = gt.points();
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p[plane.axis]), hi.max(p[plane.axis]))
    });
    let half = SLAB_FRACTION * (hi - lo) / 2.0;
    let (u, v) = plane.in_plane();
    let slab: Vec<(f64, f64, bool)> = pts
        .iter()
        .zip(visible)
        .filter(|(p, _)| (p[plane.axis] - plane.offset).abs() <= half)
        .map(|(p, &m)| (to_pixel(p[u], IMAGE_HEIGHT), to_pixel(p[v], IMAGE_WIDTH), m))
        .collect();
    if slab.len() < 3 {
        return Err(Error::invalid(format!(
            "slice at {} on axis {} meets {} points; at least 3 are needed",
            plane.offset,
            plane.axis,
            slab.len()
        )));
    }
    let m = slab.len() as f64;
    let (cr, cc) = slab.iter().fold((0.0, 0.0), |(a, b), s| (a + s.0 / m, b + s.1 / m));
    let mut ring: Vec<(f64, f64)> = slab.iter().map(|s| (s.0, s.1)).collect();
    ring.sort_by(|a, b| {
        let ta = (a.1 - cc).atan2(a.0 - cr);
        let tb = (b.1 - cc).atan2(b.0 - cr);
        ta.total_cmp(&tb)
    });
    let rim = ring
        .iter()
        .map(|&(r, c)| ((r - cr).powi(2) + (c - cc).powi(2)).sqrt())
        .fold(0.0, f64::max)
        .max(1.0);

    let mut image = Array::zeros((IMAGE_HEIGHT, IMAGE_WIDTH));
    for i in 0..IMAGE_HEIGHT {
        for j in 0..IMAGE_WIDTH {
            let (y, x) = (i as f64, j as f64);
            let nearest = slab
                .iter()
                .map(|s| ((s.0 - y).powi(2) + (s.1 - x).powi(2), s.2))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .expect("slab not empty");
            let inside = nearest.0 <= SPLAT_RADIUS * SPLAT_RADIUS || point_in_polygon(&ring, y, x);
            if inside && nearest.1 {
                let d = ((y - cr).powi(2) + (x - cc).powi(2)).sqrt() / rim;
                image[[i, j]] = (1.0 - 0.5 * d.min(1.0)) as f32 as f64;
            }
        }
    }
    Ok(image)
}

/// Even-odd rule.
fn point_in_polygon(poly: &[(f64, f64)], y: f64, x: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (yi, xi) = poly[i];
        let (yj, xj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One tenth of seeds, chosen by hash, go to the test split.
pub fn split_of(seed: u64) -> Split {
    let h = Sha256::digest(seed.to_le_bytes());
    if h[0] % 10 == 0 {
        Split::Test
    } else {
        Split::Train
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub id: String,
    pub seed: u64,
    /// Stack of slices, centre slice in the middle.
    pub images: Vec<Array>,
    pub gt: PointCloud,
    pub partial: PointCloud,
    pub visible: Vec<bool>,
    pub occ: OcclusionSpec,
    pub split: Split,
}

impl SyntheticSample {
    /// The centre slice.
    pub fn image(&self) -> &Array {
        &self.images[self.images.len() / 2]
    }

    /// The `k` slices closest to the centre; `k` must be odd and at most
    /// the stack size.
    pub fn centered_slices(&self, k: usize) -> Result<&[Array]> {
        let n = self.images.len();
        if k == 0 || k > n || k % 2 == 0 {
            return Err(Error::invalid(format!(
                "cannot take {k} centred slices from a stack of {n}"
            )));
        }
        let start = n / 2 - k / 2;
        Ok(&self.images[start..start + k])
    }
}

pub fn sample_id(seed: u64) -> String {
    format!("s{seed:06}")
}

/// Builds the sample for `seed` with a stack of `slices` axial images.
pub fn generate_sample(seed: u64, slices: usize) -> Result<SyntheticSample> {
    if slices == 0 {
        return Err(Error::invalid("at least one slice is required"));
    }
    let gt = make_shape(seed);
    let occ = OcclusionSpec::random(seed);
    let (partial, visible) = make_occlusion(&gt, &occ)?;
    let images = SlicePlane::stack(slices)
        .into_iter()
        .map(|p| render_slice(&gt, &visible, p))
        .collect::<Result<_>>()?;
    Ok(SyntheticSample {
        id: sample_id(seed),
        seed,
        images,
        gt,
        partial,
        visible,
        occ,
        split: split_of(seed),
    })
}

/// Samples for seeds `first_seed..first_seed + count`.
pub fn generate_dataset(first_seed: u64, count: usize, slices: usize) -> Result<Vec<SyntheticSample>> {
    (0..count as u64).map(|i| generate_sample(first_seed + i, slices)).collect()
}

pub const MANIFEST: &str = "manifest.jsonl";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    seed: u64,
    occlusion: OcclusionSpec,
    split: Split,
    slices: usize,
}

fn sample_path(dir: &Path, id: &str) -> std::path::PathBuf {
    dir.join(format!("{id}.hspn"))
}

/// One container per sample plus a JSON-lines manifest.
pub fn write_dataset(samples: &[SyntheticSample], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST);
    let mut manifest = String::new();
    for s in samples {
        let mut c = Container::new();
        c.insert_f32("gt", &s.gt.to_array());
        c.insert_f32("partial", &s.partial.to_array());
        c.insert_bytes("visible", &s.visible.iter().map(|&v| v as u8).collect::<Vec<_>>());
        for (i, img) in s.images.iter().enumerate() {
            c.insert_f32(format!("image/{i:02}"), img);
        }
        c.write(&sample_path(dir, &s.id))?;
        let row = ManifestRow {
            id: s.id.clone(),
            seed: s.seed,
            occlusion: s.occ,
            split: s.split,
            slices: s.images.len(),
        };
        manifest.push_str(&serde_json::to_string(&row).expect("row serializes"));
        manifest.push('\n');
    }
    let mut f = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    f.write_all(manifest.as_bytes()).map_err(|e| Error::io(&manifest_path, e))
}

pub fn read_dataset(dir: &Path) -> Result<Vec<SyntheticSample>> {
    let manifest_path = dir.join(MANIFEST);
    let f = fs::File::open(&manifest_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(format!("{}", manifest_path.display())),
        _ => Error::io(&manifest_path, e),
    })?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&manifest_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: manifest_path.clone(),
            reason: format!("line {}: {e}", n + 1),
        })?;
        out.push(read_sample(dir, row)?);
    }
    Ok(out)
}

fn read_sample(dir: &Path, row: ManifestRow) -> Result<SyntheticSample> {
    let path = sample_path(dir, &row.id);
    if !path.exists() {
        return Err(Error::NotFound(format!("sample {} ({})", row.id, path.display())));
    }
    let c = Container::read(&path)?;
    let bad = |reason: String| Error::Format {
        path: path.clone(),
        reason,
    };
    let gt = PointCloud::from_array(&c.get_matrix("gt")?)?;
    let partial = PointCloud::from_array(&c.get_matrix("partial")?)?;
    let visible: Vec<bool> = c
        .get_bytes("visible")?
        .into_iter()
        .map(|b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(bad(format!("visibility byte {other}"))),
        })
        .collect::<Result<_>>()?;
    if visible.len() != gt.len() || visible.iter().filter(|&&v| v).count() != partial.len() {
        return Err(bad("visibility mask disagrees with the clouds".into()));
    }
    let images = (0..row.slices)
        .map(|i| c.get_matrix(&format!("image/{i:02}")))
        .collect::<Result<Vec<_>>>()?;
    if images.iter().any(|im| im.dim() != (IMAGE_HEIGHT, IMAGE_WIDTH)) {
        return Err(bad("image has the wrong size".into()));
    }
    Ok(SyntheticSample {
        id: row.id,
        seed: row.seed,
        images,
        gt,
        partial,
        visible,
        occ: row.occlusion,
        split: row.split,
    })
}
