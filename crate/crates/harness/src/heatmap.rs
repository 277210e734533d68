//! Per-vertex error heatmaps as ASCII PLY with a JSON sidecar.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hspn_core::geometry::{pc_to_pc_error, Point, PointCloud};
use hspn_core::{Error, Result};

/// Errors are reported multiplied by this factor's inverse, as in the
/// published heatmaps.
pub const ERROR_SCALE: f64 = 1e-4;

pub const ZERO_COLOR: [u8; 3] = [0, 0, 255];
pub const TOP_COLOR: [u8; 3] = [255, 0, 0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMeta {
    pub vertices: usize,
    /// Error mapped to the top of the ramp.
    pub ramp_max: f64,
    pub max_error: f64,
    pub mean_error: f64,
    /// Multiply a raw error by `1 / scale` to get the plotted unit.
    pub scale: f64,
    pub ramp: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredVertex {
    pub point: Point,
    pub color: [u8; 3],
}

/// Linear blue→red ramp over `[0, top]`; values above `top` saturate.
pub fn ramp_color(error: f64, top: f64) -> [u8; 3] {
    let t = if top > 0.0 { (error / top).clamp(0.0, 1.0) } else { 0.0 };
    let r = (255.0 * t).round() as u8;
    [r, 0, 255 - r]
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Colors each predicted vertex by its PC-to-PC error against `gt` and
/// writes `path` plus a `.json` sidecar.
pub fn export_heatmap(pred: &PointCloud, gt: &PointCloud, path: &Path) -> Result<HeatmapMeta> {
    let errors = pc_to_pc_error(pred, gt);
    let top = errors.percentile(0.95);
    let mut ply = String::new();
    let _ = write!(
        ply,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        pred.len()
    );
    for (p, &e) in pred.points().iter().zip(&errors.errors) {
        let [r, g, b] = ramp_color(e, top);
        let _ = writeln!(ply, "{} {} {} {r} {g} {b}", p[0], p[1], p[2]);
    }
    std::fs::write(path, ply).map_err(|e| Error::io(path, e))?;
    let meta = HeatmapMeta {
        vertices: pred.len(),
        ramp_max: top,
        max_error: errors.max(),
        mean_error: errors.mean(),
        scale: ERROR_SCALE,
        ramp: "blue-red linear over [0, p95]".into(),
    };
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
    Ok(meta)
}

pub fn read_meta(path: &Path) -> Result<HeatmapMeta> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: side,
        reason: e.to_string(),
    })
}

/// Reads the vertices of an ASCII PLY written by [`export_heatmap`].
pub fn parse_ply(path: &Path) -> Result<Vec<ColoredVertex>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    if lines.next() != Some("ply") {
        return Err(bad("missing ply magic".into()));
    }
    let mut count = None;
    for line in lines.by_ref() {
        if line == "end_header" {
            break;
        }
        if let Some(n) = line.strip_prefix("element vertex ") {
            count = Some(n.trim().parse::<usize>().map_err(|_| bad(format!("bad vertex count {n:?}")))?);
        }
    }
    let count = count.ok_or_else(|| bad("no vertex element".into()))?;
    let mut out = Vec::with_capacity(count);
    for (i, line) in lines.take(count).enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad(format!("vertex {i}: expected 6 fields")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("vertex {i}: bad number {s:?}")));
        let byte = |s: &str| s.parse::<u8>().map_err(|_| bad(format!("vertex {i}: bad color {s:?}")));
        out.push(ColoredVertex {
            point: [num(f[0])?, num(f[1])?, num(f[2])?],
            color: [byte(f[3])?, byte(f[4])?, byte(f[5])?],
        });
    }
    if out.len() != count {
        return Err(bad(format!("expected {count} vertices, found {}", out.len())));
    }
    Ok(out)
}
