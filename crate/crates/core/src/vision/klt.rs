//! Shi-Tomasi corner selection and pyramidal Lucas-Kanade point tracking.

use super::pyramid::{Integral, Level, PreparedFrame};
use nalgebra::{Matrix2, Vector2};

#[derive(Debug, Clone, Copy)]
pub(crate) struct KltParams {
    pub window_radius: usize,
    pub grid_cell: usize,
    pub min_eigen: f32,
    pub relative_eigen: f32,
    pub max_iters: usize,
    pub max_residual: f32,
}

impl Default for KltParams {
    fn default() -> Self {
        Self {
            window_radius: 6,
            grid_cell: 24,
            min_eigen: 40.0,
            relative_eigen: 0.01,
            max_iters: 12,
            max_residual: 10.0,
        }
    }
}

/// One corner per grid cell with the strongest minimum eigenvalue. Scored on
/// the half-resolution level and returned in level-0 pixels.
pub(crate) fn detect(frame: &PreparedFrame, p: &KltParams) -> Vec<Vector2<f64>> {
    let li = if frame.levels.len() > 1 { 1 } else { 0 };
    let f = (1usize << li) as f64;
    let level = &frame.levels[li];
    let base = &frame.levels[0];
    let img = &level.img;
    let (w, h) = (img.w, img.h);
    let (gx, gy) = img.gradients();
    let r = 3usize;
    let scale = 16.0f64;
    let qx = |f: f32| (f as f64 * f as f64 * scale) as u64;
    // structure tensor window sums via integral images (fixed-point, u64)
    let sxx = Integral64::new(w, h, |x, y| qx(gx.at(x, y)));
    let syy = Integral64::new(w, h, |x, y| qx(gy.at(x, y)));
    let sxy_pos = Integral64::new(w, h, |x, y| {
        let v = gx.at(x, y) * gy.at(x, y);
        if v > 0.0 { (v as f64 * scale) as u64 } else { 0 }
    });
    let sxy_neg = Integral64::new(w, h, |x, y| {
        let v = gx.at(x, y) * gy.at(x, y);
        if v < 0.0 { (-v as f64 * scale) as u64 } else { 0 }
    });
    let border = (p.window_radius + 2).div_ceil(1 << li) + r;
    if w <= 2 * border || h <= 2 * border {
        return Vec::new();
    }
    let mut response = vec![0f32; w * h];
    let mut global_max = 0f32;
    for y in border..h - border {
        for x in border..w - border {
            let (x0, y0, x1, y1) = (x - r, y - r, x + r, y + r);
            let a = sxx.sum(x0, y0, x1, y1) as f64 / scale;
            let c = syy.sum(x0, y0, x1, y1) as f64 / scale;
            let b = (sxy_pos.sum(x0, y0, x1, y1) as f64 - sxy_neg.sum(x0, y0, x1, y1) as f64) / scale;
            let lmin = 0.5 * ((a + c) - ((a - c).powi(2) + 4.0 * b * b).sqrt());
            let v = lmin as f32;
            response[y * w + x] = v;
            global_max = global_max.max(v);
        }
    }
    let thresh = p.min_eigen.max(global_max * p.relative_eigen);
    let cell = (p.grid_cell >> li).max(1);
    let mut out = Vec::new();
    let mut cy = border;
    while cy < h - border {
        let mut cx = border;
        while cx < w - border {
            let mut best: Option<(f32, usize, usize)> = None;
            for y in cy..(cy + cell).min(h - border) {
                for x in cx..(cx + cell).min(w - border) {
                    let v = response[y * w + x];
                    if v >= thresh && best.map_or(true, |(b, _, _)| v > b) {
                        best = Some((v, x, y));
                    }
                }
            }
            if let Some((_, x, y)) = best {
                let q = Vector2::new(f * x as f64 + 0.5 * (f - 1.0), f * y as f64 + 0.5 * (f - 1.0));
                if base.window_valid(q.x as f32, q.y as f32, p.window_radius + 1) {
                    out.push(q);
                }
            }
            cx += cell;
        }
        cy += cell;
    }
    out
}

struct Integral64 {
    w: usize,
    sums: Vec<u64>,
}

impl Integral64 {
    fn new(w: usize, h: usize, f: impl Fn(usize, usize) -> u64) -> Self {
        let mut sums = vec![0u64; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0u64;
            for x in 0..w {
                row += f(x, y);
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        Self { w, sums }
    }

    fn sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> u64 {
        let s = self.w + 1;
        self.sums[(y1 + 1) * s + x1 + 1] + self.sums[y0 * s + x0] - self.sums[y0 * s + x1 + 1] - self.sums[(y1 + 1) * s + x0]
    }
}

/// Tracks `p` from `prev` into `cur`, starting from `guess` with local warp `a`
/// (the linearized prior homography; identity when no prior is known).
pub(crate) fn track(
    prev: &PreparedFrame,
    cur: &PreparedFrame,
    p: Vector2<f64>,
    guess: Vector2<f64>,
    a: Matrix2<f64>,
    params: &KltParams,
) -> Option<Vector2<f64>> {
    let levels = prev.levels.len().min(cur.levels.len());
    let rad = params.window_radius as i32;
    let n = ((2 * rad + 1) * (2 * rad + 1)) as usize;
    let mut tmpl = vec![0f32; n];
    let mut tgx = vec![0f32; n];
    let mut tgy = vec![0f32; n];
    let af = [a[(0, 0)] as f32, a[(0, 1)] as f32, a[(1, 0)] as f32, a[(1, 1)] as f32];
    let mut q = guess / (1u32 << (levels - 1)) as f64;
    for l in (0..levels).rev() {
        let s = 1.0 / (1u32 << l) as f64;
        let pl = p * s;
        let tl: &Level = &prev.levels[l];
        let cl: &Level = &cur.levels[l];
        let (px, py) = (pl.x as f32, pl.y as f32);
        let border = rad as f32 + 1.5;
        if !tl.img.inside(px, py, border) {
            // window does not fit at this scale; refine on finer levels only
            if l == 0 {
                return None;
            }
            q *= 2.0;
            continue;
        }
        // template, gradients and Hessian
        let mut hxx = 0f32;
        let mut hxy = 0f32;
        let mut hyy = 0f32;
        let mut i = 0;
        for dy in -rad..=rad {
            for dx in -rad..=rad {
                let x = px + dx as f32;
                let y = py + dy as f32;
                let v = tl.img.bilinear_unchecked(x, y);
                let gx = 0.5 * (tl.img.bilinear_unchecked(x + 1.0, y) - tl.img.bilinear_unchecked(x - 1.0, y));
                let gy = 0.5 * (tl.img.bilinear_unchecked(x, y + 1.0) - tl.img.bilinear_unchecked(x, y - 1.0));
                tmpl[i] = v;
                tgx[i] = gx;
                tgy[i] = gy;
                hxx += gx * gx;
                hxy += gx * gy;
                hyy += gy * gy;
                i += 1;
            }
        }
        let det = hxx * hyy - hxy * hxy;
        if det.abs() < 1e-3 {
            return None;
        }
        let inv = [hyy / det, -hxy / det, -hxy / det, hxx / det];
        let reach = border * (af[0].abs() + af[1].abs() + af[2].abs() + af[3].abs()).max(1.0);
        for _ in 0..params.max_iters {
            let (qx, qy) = (q.x as f32, q.y as f32);
            if !cl.img.inside(qx, qy, reach) {
                if l == 0 {
                    return None;
                }
                break;
            }
            let mut bx = 0f32;
            let mut by = 0f32;
            let mut i = 0;
            for dy in -rad..=rad {
                for dx in -rad..=rad {
                    let (fx, fy) = (dx as f32, dy as f32);
                    let x = qx + af[0] * fx + af[1] * fy;
                    let y = qy + af[2] * fx + af[3] * fy;
                    let e = cl.img.bilinear_unchecked(x, y) - tmpl[i];
                    bx += tgx[i] * e;
                    by += tgy[i] * e;
                    i += 1;
                }
            }
            let dx = inv[0] * bx + inv[1] * by;
            let dy = inv[2] * bx + inv[3] * by;
            let step = a * Vector2::new(dx as f64, dy as f64);
            q -= step;
            if step.norm_squared() < 1e-4 {
                break;
            }
        }
        if l > 0 {
            q *= 2.0;
        }
    }
    // final residual and mask check on level 0
    let cl = &cur.levels[0];
    let (qx, qy) = (q.x as f32, q.y as f32);
    let reach = (rad as f32 + 1.5) * (af[0].abs() + af[1].abs() + af[2].abs() + af[3].abs()).max(1.0);
    if !cl.img.inside(qx, qy, reach) || !cl.window_valid(qx, qy, (reach.ceil() as usize).max(1)) {
        return None;
    }
    let mut sad = 0f32;
    let mut i = 0;
    for dy in -rad..=rad {
        for dx in -rad..=rad {
            let (fx, fy) = (dx as f32, dy as f32);
            let x = qx + af[0] * fx + af[1] * fy;
            let y = qy + af[2] * fx + af[3] * fy;
            sad += (cl.img.bilinear_unchecked(x, y) - tmpl[i]).abs();
            i += 1;
        }
    }
    (sad / n as f32 <= params.max_residual).then_some(q)
}

/// Global translational Lucas-Kanade over all valid pixels, coarse to fine.
/// Returns the shift `d` with `cur(x + d) ≈ prev(x)` and the fraction of
/// textured pixels that agree after alignment.
pub(crate) fn dense_translation(
    prev: &PreparedFrame,
    cur: &PreparedFrame,
    guess: Vector2<f64>,
    max_residual: f32,
) -> Option<(Vector2<f64>, usize, usize)> {
    let levels = prev.levels.len().min(cur.levels.len());
    let mut d = guess / (1u32 << (levels - 1)) as f64;
    let min_grad = 2.0f32;
    for l in (0..levels).rev() {
        let tl = &prev.levels[l];
        let cl = &cur.levels[l];
        let (gx, gy) = tl.img.gradients();
        let valid_t = valid_map(tl);
        let valid_c = valid_map(cl);
        let (w, h) = (tl.img.w, tl.img.h);
        for _ in 0..15 {
            let mut hm = Matrix2::<f64>::zeros();
            let mut b = Vector2::<f64>::zeros();
            let (ddx, ddy) = (d.x as f32, d.y as f32);
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    let i = y * w + x;
                    if !valid_t[i] {
                        continue;
                    }
                    let (gxv, gyv) = (gx.data[i], gy.data[i]);
                    if gxv.abs() + gyv.abs() < min_grad {
                        continue;
                    }
                    let (cx, cy) = (x as f32 + ddx, y as f32 + ddy);
                    if !cl.img.inside(cx, cy, 0.0) || !valid_c[(cy as usize) * w + cx as usize] {
                        continue;
                    }
                    let e = (cl.img.bilinear_unchecked(cx, cy) - tl.img.data[i]) as f64;
                    let (g0, g1) = (gxv as f64, gyv as f64);
                    hm[(0, 0)] += g0 * g0;
                    hm[(0, 1)] += g0 * g1;
                    hm[(1, 1)] += g1 * g1;
                    b.x += g0 * e;
                    b.y += g1 * e;
                }
            }
            hm[(1, 0)] = hm[(0, 1)];
            if hm.determinant().abs() < 1e-6 * (hm.trace().powi(2)).max(1e-12) || hm.trace() < 1.0 {
                return None;
            }
            let step = hm.try_inverse()? * b;
            d -= step;
            if step.norm() < 0.005 {
                break;
            }
        }
        if l > 0 {
            d *= 2.0;
        }
    }
    // agreement count on level 0
    let tl = &prev.levels[0];
    let cl = &cur.levels[0];
    let (gx, gy) = tl.img.gradients();
    let valid_t = valid_map(tl);
    let (w, h) = (tl.img.w, tl.img.h);
    let (mut textured, mut agree) = (0usize, 0usize);
    let (ddx, ddy) = (d.x as f32, d.y as f32);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            if !valid_t[i] || gx.data[i].abs() + gy.data[i].abs() < min_grad {
                continue;
            }
            let (cx, cy) = (x as f32 + ddx, y as f32 + ddy);
            if !cl.img.inside(cx, cy, 0.0) {
                continue;
            }
            textured += 1;
            if (cl.img.bilinear_unchecked(cx, cy) - tl.img.data[i]).abs() <= max_residual {
                agree += 1;
            }
        }
    }
    Some((d, agree, textured))
}

fn valid_map(level: &Level) -> Vec<bool> {
    let (w, h) = (level.img.w, level.img.h);
    let inv: &Integral = &level.invalid;
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = inv.sum(x, y, x, y) == 0;
        }
    }
    out
}
