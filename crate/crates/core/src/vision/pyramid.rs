//! Float image planes, validity masks and Gaussian-free box pyramids.

use crate::scene::Frame;

#[derive(Debug, Clone)]
pub(crate) struct Plane {
    pub w: usize,
    pub h: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn from_frame(frame: &Frame) -> Self {
        Self {
            w: frame.width,
            h: frame.height,
            data: frame.pixels.iter().map(|&p| p as f32).collect(),
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.w + x]
    }

    /// Bilinear sample; caller guarantees `0 <= x < w-1`, `0 <= y < h-1`.
    #[inline]
    pub fn bilinear_unchecked(&self, x: f32, y: f32) -> f32 {
        let i = x as usize;
        let j = y as usize;
        let ax = x - i as f32;
        let ay = y - j as f32;
        let row = j * self.w + i;
        let p00 = self.data[row];
        let p10 = self.data[row + 1];
        let p01 = self.data[row + self.w];
        let p11 = self.data[row + self.w + 1];
        let top = p00 + ax * (p10 - p00);
        let bot = p01 + ax * (p11 - p01);
        top + ay * (bot - top)
    }

    #[inline]
    pub fn inside(&self, x: f32, y: f32, border: f32) -> bool {
        x >= border && y >= border && x < self.w as f32 - 1.0 - border && y < self.h as f32 - 1.0 - border
    }

    fn downsample(&self) -> Self {
        let w = self.w / 2;
        let h = self.h / 2;
        let mut data = vec![0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = (2 * x, 2 * y);
                data[y * w + x] = 0.25
                    * (self.at(sx, sy) + self.at(sx + 1, sy) + self.at(sx, sy + 1) + self.at(sx + 1, sy + 1));
            }
        }
        Self { w, h, data }
    }

    /// Central-difference gradients (zero on the border).
    pub fn gradients(&self) -> (Plane, Plane) {
        let mut gx = vec![0f32; self.w * self.h];
        let mut gy = vec![0f32; self.w * self.h];
        for y in 1..self.h.saturating_sub(1) {
            for x in 1..self.w.saturating_sub(1) {
                let i = y * self.w + x;
                gx[i] = 0.5 * (self.data[i + 1] - self.data[i - 1]);
                gy[i] = 0.5 * (self.data[i + self.w] - self.data[i - self.w]);
            }
        }
        (
            Plane { w: self.w, h: self.h, data: gx },
            Plane { w: self.w, h: self.h, data: gy },
        )
    }
}

/// Summed-area table over a per-pixel `u32` count, for O(1) window queries.
#[derive(Debug, Clone)]
pub(crate) struct Integral {
    w: usize,
    sums: Vec<u32>,
}

impl Integral {
    pub fn new(w: usize, h: usize, f: impl Fn(usize, usize) -> u32) -> Self {
        let mut sums = vec![0u32; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += f(x, y);
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        Self { w, sums }
    }

    /// Sum over the inclusive rectangle `[x0, x1] × [y0, y1]`.
    #[inline]
    pub fn sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> u32 {
        let s = self.w + 1;
        self.sums[(y1 + 1) * s + x1 + 1] + self.sums[y0 * s + x0] - self.sums[y0 * s + x1 + 1] - self.sums[(y1 + 1) * s + x0]
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Level {
    pub img: Plane,
    /// Count of invalid (masked) pixels, integrated.
    pub invalid: Integral,
}

impl Level {
    /// True if every pixel in the square window around `(x, y)` is valid.
    pub fn window_valid(&self, x: f32, y: f32, radius: usize) -> bool {
        let r = radius as f32 + 1.0;
        if !self.img.inside(x - r, y - r, 0.0) || !self.img.inside(x + r, y + r, 0.0) {
            return false;
        }
        let x0 = (x - r).floor() as usize;
        let y0 = (y - r).floor() as usize;
        let x1 = (x + r).ceil() as usize;
        let y1 = (y + r).ceil() as usize;
        self.invalid.sum(x0, y0, x1.min(self.img.w - 1), y1.min(self.img.h - 1)) == 0
    }
}

/// Image pyramid with per-level validity, built once per frame.
#[derive(Debug, Clone)]
pub struct PreparedFrame {
    pub(crate) levels: Vec<Level>,
    pub width: usize,
    pub height: usize,
    pub frame_id: u64,
    /// Fraction of level-0 pixels passing the mask.
    pub valid_fraction: f64,
}

impl PreparedFrame {
    pub fn new(frame: &Frame, mask: &[bool], levels: usize) -> Self {
        let mut out = Vec::with_capacity(levels);
        let base = Plane::from_frame(frame);
        let mut valid: Vec<bool> = mask.to_vec();
        let valid_fraction = if valid.is_empty() {
            0.0
        } else {
            valid.iter().filter(|&&v| v).count() as f64 / valid.len() as f64
        };
        let mut img = base;
        for l in 0..levels {
            let (w, h) = (img.w, img.h);
            let v = valid.clone();
            out.push(Level {
                invalid: Integral::new(w, h, |x, y| (!v[y * w + x]) as u32),
                img: img.clone(),
            });
            if l + 1 == levels || w < 16 || h < 16 {
                break;
            }
            let next = img.downsample();
            let (nw, nh) = (next.w, next.h);
            let mut nv = vec![false; nw * nh];
            for y in 0..nh {
                for x in 0..nw {
                    let (sx, sy) = (2 * x, 2 * y);
                    nv[y * nw + x] = valid[sy * w + sx]
                        && valid[sy * w + sx + 1]
                        && valid[(sy + 1) * w + sx]
                        && valid[(sy + 1) * w + sx + 1];
                }
            }
            img = next;
            valid = nv;
        }
        Self {
            levels: out,
            width: frame.width,
            height: frame.height,
            frame_id: frame.frame_id,
            valid_fraction,
        }
    }
}
