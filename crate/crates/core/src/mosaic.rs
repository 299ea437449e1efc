//! Incremental image mosaic in the anchor frame's pixel coordinates.
//!
//! Every registered frame keeps its frame-to-mosaic homography and the field
//! counters at capture. Only keyframes (frames that would paint enough new
//! canvas) are composited and keep their pixels, so every painted mosaic
//! pixel can be traced back to a stored source image.

use crate::geometry::{apply_homography, normalize_homography};
use crate::scene::Frame;
use crate::vision::{HomographyEstimate, MaskParams};
use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MosaicError {
    #[error("inter-frame homography is invalid; frame skipped")]
    InvalidHomography,
    #[error("mosaic point ({x:.1}, {y:.1}) is not painted")]
    UnpaintedRegion { x: f64, y: f64 },
    #[error("mosaic holds no frames")]
    EmptyMosaic,
    #[error("frame {0} is not registered")]
    UnknownFrame(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compositing {
    FirstWrite,
    LastWrite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MosaicConfig {
    pub compositing: Compositing,
    /// A frame becomes a keyframe when at least this fraction of it lands on
    /// unpainted canvas. Zero makes every frame that adds a pixel a keyframe.
    pub keyframe_min_new_fraction: f64,
    pub initial_canvas: usize,
    pub mask: MaskParams,
    /// Neighbours blended by [`MosaicState::interpolate_field`].
    pub field_neighbors: usize,
}

impl Default for MosaicConfig {
    fn default() -> Self {
        Self {
            compositing: Compositing::FirstWrite,
            keyframe_min_new_fraction: 0.08,
            initial_canvas: 1024,
            mask: MaskParams::default(),
            field_neighbors: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MosaicFrame {
    pub frame_id: u64,
    pub h_to_mosaic: Matrix3<f64>,
    pub h_from_mosaic: Matrix3<f64>,
    pub alpha: f64,
    pub beta: f64,
    /// Image center expressed in mosaic coordinates.
    pub center: Vector2<f64>,
    /// Source pixels, kept for keyframes only.
    pub image: Option<Frame>,
}

impl MosaicFrame {
    pub fn is_keyframe(&self) -> bool {
        self.image.is_some()
    }
}

fn corners(w: usize, h: usize) -> [Vector2<f64>; 4] {
    let (w, h) = (w as f64, h as f64);
    [
        Vector2::new(-0.5, -0.5),
        Vector2::new(w - 0.5, -0.5),
        Vector2::new(w - 0.5, h - 0.5),
        Vector2::new(-0.5, h - 0.5),
    ]
}

/// Signed area of a quadrilateral given in order.
fn quad_area(q: &[Vector2<f64>; 4]) -> f64 {
    (0..4).map(|i| q[i].perp(&q[(i + 1) % 4])).sum::<f64>() / 2.0
}

/// Frame-to-frame motion a camera can make in one tick: the image moves by
/// less than its own size and keeps its orientation and roughly its scale.
fn plausible_step(h: &Matrix3<f64>, w: usize, hgt: usize) -> bool {
    let c = corners(w, hgt);
    let Some(m) = c.iter().map(|p| apply_homography(h, p)).collect::<Option<Vec<_>>>() else { return false };
    let m = [m[0], m[1], m[2], m[3]];
    let ratio = quad_area(&m) / quad_area(&c);
    let shift = c.iter().zip(&m).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    (0.5..=2.0).contains(&ratio) && shift < w.max(hgt) as f64
}

/// Whether mapped corners lie on the visible side of the frame's horizon.
fn corners_in_front(h_from_mosaic: &Matrix3<f64>, mapped: &[Vector2<f64>]) -> bool {
    mapped
        .iter()
        .all(|m| (h_from_mosaic * Vector3::new(m.x, m.y, 1.0)).z > 0.0)
}

/// Grayscale canvas; canvas pixel `(i, j)` sits at mosaic `(i − ox, j − oy)`.
#[derive(Debug, Clone)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub origin: (i64, i64),
    pub pixels: Vec<u8>,
    /// Index+1 of the frame that painted each pixel, 0 if unpainted.
    pub source: Vec<u32>,
}

impl Canvas {
    fn new(width: usize, height: usize, origin: (i64, i64)) -> Self {
        Self {
            width,
            height,
            origin,
            pixels: vec![0; width * height],
            source: vec![0; width * height],
        }
    }

    /// Canvas index of a mosaic point, if inside.
    pub fn index(&self, m: &Vector2<f64>) -> Option<usize> {
        let i = m.x.round() as i64 + self.origin.0;
        let j = m.y.round() as i64 + self.origin.1;
        (i >= 0 && j >= 0 && (i as usize) < self.width && (j as usize) < self.height)
            .then(|| j as usize * self.width + i as usize)
    }

    /// Mosaic-coordinate bounds `[x0, y0, x1, y1]` of the painted pixels.
    pub fn painted_bounds(&self) -> Option<[i64; 4]> {
        let mut b: Option<[i64; 4]> = None;
        for j in 0..self.height {
            for i in 0..self.width {
                if self.source[j * self.width + i] != 0 {
                    let (x, y) = (i as i64 - self.origin.0, j as i64 - self.origin.1);
                    b = Some(match b {
                        None => [x, y, x, y],
                        Some(c) => [c[0].min(x), c[1].min(y), c[2].max(x), c[3].max(y)],
                    });
                }
            }
        }
        b
    }

    /// Grows (by doubling) until mosaic rectangle `[x0, y0]..[x1, y1]` fits.
    fn ensure(&mut self, x0: i64, y0: i64, x1: i64, y1: i64) {
        let mut left = -self.origin.0;
        let mut top = -self.origin.1;
        let mut w = self.width as i64;
        let mut h = self.height as i64;
        while x0 < left || x1 >= left + w {
            if x0 < left {
                left -= w;
            }
            w *= 2;
        }
        while y0 < top || y1 >= top + h {
            if y0 < top {
                top -= h;
            }
            h *= 2;
        }
        if w == self.width as i64 && h == self.height as i64 && left == -self.origin.0 && top == -self.origin.1 {
            return;
        }
        let mut grown = Canvas::new(w as usize, h as usize, (-left, -top));
        let dx = (grown.origin.0 - self.origin.0) as usize;
        let dy = (grown.origin.1 - self.origin.1) as usize;
        for j in 0..self.height {
            let src = j * self.width;
            let dst = (j + dy) * grown.width + dx;
            grown.pixels[dst..dst + self.width].copy_from_slice(&self.pixels[src..src + self.width]);
            grown.source[dst..dst + self.width].copy_from_slice(&self.source[src..src + self.width]);
        }
        *self = grown;
    }
}

#[derive(Debug, Clone)]
pub struct MosaicState {
    pub config: MosaicConfig,
    pub frames: Vec<MosaicFrame>,
    pub canvas: Canvas,
    pub anchor_frame_id: Option<u64>,
    /// Frames skipped because their homography was invalid.
    pub gaps: u64,
    index: HashMap<u64, usize>,
}

impl MosaicState {
    pub fn new(config: MosaicConfig) -> Self {
        let n = config.initial_canvas.max(16);
        Self {
            canvas: Canvas::new(n, n, (0, 0)),
            config,
            frames: Vec::new(),
            anchor_frame_id: None,
            gaps: 0,
            index: HashMap::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn last(&self) -> Option<&MosaicFrame> {
        self.frames.last()
    }

    pub fn frame(&self, frame_id: u64) -> Option<&MosaicFrame> {
        self.index.get(&frame_id).map(|&i| &self.frames[i])
    }

    pub fn keyframes(&self) -> impl Iterator<Item = &MosaicFrame> {
        self.frames.iter().filter(|f| f.is_keyframe())
    }

    /// Registers `frame`. `h_cur_prev` maps the last registered frame onto
    /// this one; it is ignored for the first (anchor) frame.
    pub fn add_frame(
        &mut self,
        frame: &Frame,
        h_cur_prev: Option<&HomographyEstimate>,
        alpha: f64,
        beta: f64,
    ) -> Result<(), MosaicError> {
        let h_to_mosaic = match self.frames.last() {
            None => {
                let n = self.canvas.width as i64;
                let origin = ((n - frame.width as i64) / 2, (n - frame.height as i64) / 2);
                self.canvas = Canvas::new(self.canvas.width, self.canvas.height, origin);
                self.anchor_frame_id = Some(frame.frame_id);
                Matrix3::identity()
            }
            Some(prev) => {
                let Some(est) = h_cur_prev.filter(|e| e.valid && plausible_step(&e.h, frame.width, frame.height)) else {
                    self.gaps += 1;
                    return Err(MosaicError::InvalidHomography);
                };
                let inv = est.h.try_inverse().ok_or_else(|| {
                    self.gaps += 1;
                    MosaicError::InvalidHomography
                })?;
                normalize_homography(&(prev.h_to_mosaic * inv)).ok_or_else(|| {
                    self.gaps += 1;
                    MosaicError::InvalidHomography
                })?
            }
        };
        self.insert(frame, h_to_mosaic, alpha, beta)
    }

    /// Registers `frame` with a known frame-to-mosaic homography.
    pub fn insert(&mut self, frame: &Frame, h_to_mosaic: Matrix3<f64>, alpha: f64, beta: f64) -> Result<(), MosaicError> {
        let h_from_mosaic = h_to_mosaic.try_inverse().ok_or(MosaicError::InvalidHomography)?;
        let c = Vector2::new((frame.width as f64 - 1.0) / 2.0, (frame.height as f64 - 1.0) / 2.0);
        let center = apply_homography(&h_to_mosaic, &c).ok_or(MosaicError::InvalidHomography)?;
        if self.anchor_frame_id.is_none() {
            self.anchor_frame_id = Some(frame.frame_id);
        }
        let idx = self.frames.len();
        let keyframe = self.is_new_enough(frame, &h_to_mosaic);
        self.frames.push(MosaicFrame {
            frame_id: frame.frame_id,
            h_to_mosaic,
            h_from_mosaic,
            alpha,
            beta,
            center,
            image: keyframe.then(|| frame.clone()),
        });
        self.index.insert(frame.frame_id, idx);
        if keyframe {
            self.paint(idx);
        }
        Ok(())
    }

    fn is_new_enough(&self, frame: &Frame, h: &Matrix3<f64>) -> bool {
        if self.frames.is_empty() {
            return true;
        }
        let step = 8usize;
        let (mut total, mut fresh) = (0usize, 0usize);
        for y in (step / 2..frame.height).step_by(step) {
            for x in (step / 2..frame.width).step_by(step) {
                total += 1;
                let Some(m) = apply_homography(h, &Vector2::new(x as f64, y as f64)) else { continue };
                match self.canvas.index(&m) {
                    Some(i) if self.canvas.source[i] != 0 => {}
                    _ => fresh += 1,
                }
            }
        }
        let min = self.config.keyframe_min_new_fraction;
        if min <= 0.0 {
            // any unpainted pixel qualifies; confirm with the exact footprint
            return fresh > 0 || self.footprint_has_unpainted(frame, h);
        }
        total > 0 && fresh as f64 / total as f64 >= min
    }

    fn footprint_has_unpainted(&self, frame: &Frame, h: &Matrix3<f64>) -> bool {
        for y in 0..frame.height {
            for x in 0..frame.width {
                let Some(m) = apply_homography(h, &Vector2::new(x as f64, y as f64)) else { continue };
                match self.canvas.index(&m) {
                    Some(i) if self.canvas.source[i] != 0 => {}
                    _ => return true,
                }
            }
        }
        false
    }

    fn paint(&mut self, idx: usize) {
        let f = &self.frames[idx];
        let Some(img) = f.image.as_ref() else { return };
        let (w, h) = (img.width as f64, img.height as f64);
        let corners = [
            Vector2::new(-0.5, -0.5),
            Vector2::new(w - 0.5, -0.5),
            Vector2::new(-0.5, h - 0.5),
            Vector2::new(w - 0.5, h - 0.5),
        ];
        // oblique views far from the anchor stretch without bound; paint only
        // near the mapped center
        let reach = 2.0 * w.max(h);
        let (cx, cy) = (f.center.x, f.center.y);
        let mut b = [cx - reach, cy - reach, cx + reach, cy + reach];
        let mapped: Vec<_> = corners.iter().filter_map(|c| apply_homography(&f.h_to_mosaic, c)).collect();
        if mapped.len() == 4 && corners_in_front(&f.h_from_mosaic, &mapped) {
            b[0] = b[0].max(mapped.iter().map(|p| p.x).fold(f64::INFINITY, f64::min));
            b[1] = b[1].max(mapped.iter().map(|p| p.y).fold(f64::INFINITY, f64::min));
            b[2] = b[2].min(mapped.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max));
            b[3] = b[3].min(mapped.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max));
        }
        let (x0, y0) = (b[0].floor() as i64, b[1].floor() as i64);
        let (x1, y1) = (b[2].ceil() as i64, b[3].ceil() as i64);
        self.canvas.ensure(x0, y0, x1, y1);

        let f = &self.frames[idx];
        let img = f.image.as_ref().expect("keyframe image");
        let inv = f.h_from_mosaic;
        let mask = self.config.mask;
        let last_write = self.config.compositing == Compositing::LastWrite;
        let tag = idx as u32 + 1;
        let canvas = &mut self.canvas;
        for my in y0..=y1 {
            for mx in x0..=x1 {
                let ci = ((my + canvas.origin.1) as usize) * canvas.width + (mx + canvas.origin.0) as usize;
                if !last_write && canvas.source[ci] != 0 {
                    continue;
                }
                let q = inv * Vector3::new(mx as f64, my as f64, 1.0);
                if q.z < 1e-12 {
                    continue;
                }
                let (u, v) = (q.x / q.z, q.y / q.z);
                let (ui, vi) = (u.round(), v.round());
                if ui < 0.0 || vi < 0.0 || ui > w - 1.0 || vi > h - 1.0 {
                    continue;
                }
                let value = img.get(ui as usize, vi as usize);
                if value < mask.low_thresh || value > mask.high_thresh {
                    continue;
                }
                canvas.pixels[ci] = value;
                canvas.source[ci] = tag;
            }
        }
    }

    /// Source frame and its pixel for a painted mosaic point.
    pub fn mosaic_to_source(&self, target: &Vector2<f64>) -> Result<(u64, Vector2<f64>), MosaicError> {
        let unpainted = MosaicError::UnpaintedRegion { x: target.x, y: target.y };
        let i = self.canvas.index(target).ok_or(unpainted.clone())?;
        let tag = self.canvas.source[i];
        if tag == 0 {
            return Err(unpainted);
        }
        let f = &self.frames[tag as usize - 1];
        let p = apply_homography(&f.h_from_mosaic, target).ok_or(unpainted)?;
        Ok((f.frame_id, p))
    }

    /// Homography carrying pixels of frame `from` onto frame `to`.
    pub fn frame_to_frame(&self, from: u64, to: u64) -> Result<Matrix3<f64>, MosaicError> {
        let a = self.frame(from).ok_or(MosaicError::UnknownFrame(from))?;
        let b = self.frame(to).ok_or(MosaicError::UnknownFrame(to))?;
        normalize_homography(&(b.h_from_mosaic * a.h_to_mosaic)).ok_or(MosaicError::InvalidHomography)
    }

    /// Field counters `(α̂, β̂)` blended from the nearest frame centers.
    pub fn interpolate_field(&self, target: &Vector2<f64>) -> Result<(f64, f64), MosaicError> {
        if self.frames.is_empty() {
            return Err(MosaicError::EmptyMosaic);
        }
        let mut by_dist: Vec<(f64, &MosaicFrame)> = self.frames.iter().map(|f| ((f.center - target).norm(), f)).collect();
        by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.frame_id.cmp(&b.1.frame_id)));
        let nearest = by_dist[0].1;
        if by_dist[0].0 < 1e-9 {
            return Ok((nearest.alpha, nearest.beta));
        }
        let k = self.config.field_neighbors.max(1).min(by_dist.len());
        let neighbors = &by_dist[..k];
        let blend = |get: fn(&MosaicFrame) -> f64| {
            let (mut s, mut c) = (0.0, 0.0);
            for (d, f) in neighbors {
                let w = 1.0 / d;
                s += w * get(f).sin();
                c += w * get(f).cos();
            }
            let mean = s.atan2(c);
            // unwrap next to the nearest neighbour's counter value
            let r = get(nearest);
            r + crate::geometry::wrap_angle(mean - r)
        };
        Ok((blend(|f| f.alpha), blend(|f| f.beta)))
    }
}
