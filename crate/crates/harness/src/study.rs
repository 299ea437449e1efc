//! Workspace comparison runs: angle maps to CSV, coverage to JSON and a
//! top-down heatmap to PNG.

use crate::HarnessError;
use endonav::workspace::{parse_obj, parse_stl, run_study_on, AngleMap, InsertionSite, StudyConfig, StudyResult, TriMesh};
use nalgebra::{Point3, Rotation3};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    #[serde(default)]
    pub study: StudyConfig,
    /// Trocar position for meshes other than the built-in dome, mm.
    #[serde(default)]
    pub site: Option<[f64; 3]>,
    /// Coverage region: triangles with centroids above this height, mm.
    #[serde(default)]
    pub region_z_min: Option<f64>,
}

impl StudyFile {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

/// Loads `dome` (the built-in dome) or an `.stl` / `.obj` file.
pub fn load_mesh(name: &str, study: &StudyConfig) -> Result<TriMesh, HarnessError> {
    if name == "dome" {
        return Ok(study.mesh()?);
    }
    let text = fs::read_to_string(name).map_err(|e| HarnessError::Config(format!("{name}: {e}")))?;
    let lower = name.to_ascii_lowercase();
    Ok(if lower.ends_with(".obj") { parse_obj(&text)? } else { parse_stl(&text)? })
}

pub fn run(mesh: &TriMesh, file: &StudyFile, builtin_dome: bool) -> Result<StudyResult, HarnessError> {
    let cfg = &file.study;
    let site = match (file.site, builtin_dome) {
        (Some(p), _) => InsertionSite {
            point: Point3::new(p[0], p[1], p[2]),
            frame: Rotation3::identity(),
        },
        (None, true) => cfg.site(),
        (None, false) => return Err(HarnessError::Config("`site` is required for a mesh file".into())),
    };
    let z_min = file.region_z_min.unwrap_or(cfg.anterior_fraction * cfg.dome[2]);
    Ok(run_study_on(mesh, &site, z_min, cfg)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct CoverageOut<'a> {
    thresholds_deg: Vec<f64>,
    rigid: &'a [f64],
    flexible: &'a [f64],
    rigid_poses: usize,
    flexible_poses: usize,
    triangles: usize,
}

pub fn write_outputs(dir: &Path, mesh: &TriMesh, cfg: &StudyConfig, r: &StudyResult) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("angles.csv"))?;
    w.write_record(["triangle", "rigid_alpha_deg", "rigid_d", "flexible_alpha_deg", "flexible_d"])?;
    let cell = |m: &AngleMap, i: usize| match m.best[i] {
        Some(h) => (h.alpha.to_degrees().to_string(), h.d.to_string()),
        None => (String::new(), String::new()),
    };
    for i in 0..mesh.len() {
        let (ra, rd) = cell(&r.rigid, i);
        let (fa, fd) = cell(&r.flexible, i);
        w.write_record([i.to_string(), ra, rd, fa, fd])?;
    }
    w.flush()?;
    let cov = CoverageOut {
        thresholds_deg: cfg.thresholds.iter().map(|t| t.to_degrees()).collect(),
        rigid: &r.rigid_coverage,
        flexible: &r.flexible_coverage,
        rigid_poses: r.rigid_poses,
        flexible_poses: r.flexible_poses,
        triangles: mesh.len(),
    };
    fs::write(dir.join("coverage.json"), serde_json::to_string_pretty(&cov)? + "\n")?;
    let img = heatmap(mesh, &[&r.rigid, &r.flexible], 256);
    img.save(dir.join("heatmap.png"))
        .map_err(|e| HarnessError::Image(e.to_string()))
}

/// Top-down view per map, side by side. Brightness grows with the angle;
/// unreached triangles are dark gray and background black.
pub fn heatmap(mesh: &TriMesh, maps: &[&AngleMap], size: u32) -> image::GrayImage {
    let mut img = image::GrayImage::new(size * maps.len() as u32, size);
    if mesh.is_empty() {
        return img;
    }
    let (lo, hi) = mesh.bounds();
    let span = (hi.x - lo.x).max(hi.y - lo.y).max(1e-9);
    let s = (size - 1) as f64 / span;
    let mut order: Vec<usize> = (0..mesh.len()).collect();
    // draw upward: higher surfaces cover lower ones
    order.sort_by(|&a, &b| mesh.centroid(a).z.total_cmp(&mesh.centroid(b).z));
    for (panel, map) in maps.iter().enumerate() {
        let x_off = panel as f64 * size as f64;
        for &t in &order {
            let value = match map.best.get(t).copied().flatten() {
                Some(h) => 64 + (191.0 * (h.alpha / std::f64::consts::FRAC_PI_2).clamp(0.0, 1.0)) as u8,
                None => 32,
            };
            let c = mesh.corners(t).map(|p| ((p.x - lo.x) * s + x_off, (p.y - lo.y) * s));
            fill_triangle(&mut img, c, value, x_off, size as f64);
        }
    }
    img
}

fn fill_triangle(img: &mut image::GrayImage, c: [(f64, f64); 3], value: u8, x_min: f64, width: f64) {
    let edge = |a: (f64, f64), b: (f64, f64), p: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    let area = edge(c[0], c[1], c[2]);
    if area.abs() < 1e-12 {
        return;
    }
    let x0 = c.iter().map(|p| p.0).fold(f64::MAX, f64::min).floor().max(x_min) as u32;
    let x1 = c.iter().map(|p| p.0).fold(f64::MIN, f64::max).ceil().min(x_min + width - 1.0) as u32;
    let y0 = c.iter().map(|p| p.1).fold(f64::MAX, f64::min).floor().max(0.0) as u32;
    let y1 = c.iter().map(|p| p.1).fold(f64::MIN, f64::max).ceil().min(img.height() as f64 - 1.0) as u32;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let w = [edge(c[1], c[2], p), edge(c[2], c[0], p), edge(c[0], c[1], p)];
            if w.iter().all(|v| v * area >= 0.0) {
                // image rows grow downward; flip so +y is up
                img.put_pixel(x, img.height() - 1 - y, image::Luma([value]));
            }
        }
    }
}
