use super::mesh::TriMesh;
use nalgebra::{Point3, Vector3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    /// Unit direction.
    pub dir: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub triangle: usize,
    pub t: f64,
}

/// Hits closer than this are treated as the ray's own start surface.
pub const T_MIN: f64 = 1e-6;

/// Möller–Trumbore ray/triangle intersection, two-sided.
pub fn intersect(ray: &Ray, [a, b, c]: &[Point3<f64>; 3]) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = ray.dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > T_MIN).then_some(t)
}

fn better(hit: Hit, best: Option<Hit>) -> bool {
    match best {
        None => true,
        Some(b) => hit.t < b.t || (hit.t == b.t && hit.triangle < b.triangle),
    }
}

/// Nearest hit within `t_max` by testing every triangle.
pub fn cast_brute(mesh: &TriMesh, ray: &Ray, t_max: f64) -> Option<Hit> {
    let mut best = None;
    for i in 0..mesh.len() {
        if let Some(t) = intersect(ray, &mesh.corners(i)) {
            let hit = Hit { triangle: i, t };
            if t <= t_max && better(hit, best) {
                best = Some(hit);
            }
        }
    }
    best
}

/// Uniform grid over the mesh bounds; each cell lists the triangles whose
/// bounding boxes overlap it.
#[derive(Debug, Clone)]
pub struct Grid {
    lo: Point3<f64>,
    cell: Vector3<f64>,
    dims: [usize; 3],
    cells: Vec<Vec<u32>>,
}

impl Grid {
    pub fn new(mesh: &TriMesh) -> Self {
        let (mut lo, mut hi) = mesh.bounds();
        let pad = Vector3::repeat(1e-6 * (hi - lo).norm().max(1.0));
        lo -= pad;
        hi += pad;
        let ext = hi - lo;
        // about two triangles per cell
        let target = (mesh.len() as f64 / 2.0).max(1.0);
        let vol = ext.x * ext.y * ext.z;
        let side = if vol > 0.0 { (vol / target).cbrt() } else { ext.max() / target.cbrt() };
        let dims = [0, 1, 2].map(|k| ((ext[k] / side).ceil() as usize).clamp(1, 128));
        let cell = Vector3::new(ext.x / dims[0] as f64, ext.y / dims[1] as f64, ext.z / dims[2] as f64);
        let mut grid = Self {
            lo,
            cell,
            dims,
            cells: vec![Vec::new(); dims[0] * dims[1] * dims[2]],
        };
        for i in 0..mesh.len() {
            let [a, b, c] = mesh.corners(i);
            let tlo = a.inf(&b).inf(&c);
            let thi = a.sup(&b).sup(&c);
            let c0 = grid.cell_of(&tlo);
            let c1 = grid.cell_of(&thi);
            for z in c0[2]..=c1[2] {
                for y in c0[1]..=c1[1] {
                    for x in c0[0]..=c1[0] {
                        let k = grid.index([x, y, z]);
                        grid.cells[k].push(i as u32);
                    }
                }
            }
        }
        grid
    }

    fn cell_of(&self, p: &Point3<f64>) -> [usize; 3] {
        [0, 1, 2].map(|k| (((p[k] - self.lo[k]) / self.cell[k]).floor().max(0.0) as usize).min(self.dims[k] - 1))
    }

    fn index(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    /// Nearest hit within `t_max`, walking the grid cells the ray crosses.
    /// Agrees with [`cast_brute`] including the tie-break on triangle index.
    pub fn cast(&self, mesh: &TriMesh, ray: &Ray, t_max: f64) -> Option<Hit> {
        let hi = self.lo + Vector3::new(
            self.cell.x * self.dims[0] as f64,
            self.cell.y * self.dims[1] as f64,
            self.cell.z * self.dims[2] as f64,
        );
        // clip the ray to the grid box
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for k in 0..3 {
            let d = ray.dir[k];
            if d.abs() < 1e-300 {
                if ray.origin[k] < self.lo[k] || ray.origin[k] > hi[k] {
                    return None;
                }
            } else {
                let a = (self.lo[k] - ray.origin[k]) / d;
                let b = (hi[k] - ray.origin[k]) / d;
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
        }
        if t0 > t1 {
            return None;
        }
        let start = ray.origin + ray.dir * t0;
        let mut c = self.cell_of(&start);
        let mut step = [0i64; 3];
        let mut t_next = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for k in 0..3 {
            let d = ray.dir[k];
            if d > 0.0 {
                step[k] = 1;
                t_next[k] = (self.lo[k] + (c[k] + 1) as f64 * self.cell[k] - ray.origin[k]) / d;
                t_delta[k] = self.cell[k] / d;
            } else if d < 0.0 {
                step[k] = -1;
                t_next[k] = (self.lo[k] + c[k] as f64 * self.cell[k] - ray.origin[k]) / d;
                t_delta[k] = -self.cell[k] / d;
            }
        }
        let mut best: Option<Hit> = None;
        loop {
            for &i in &self.cells[self.index(c)] {
                let i = i as usize;
                if let Some(t) = intersect(ray, &mesh.corners(i)) {
                    let hit = Hit { triangle: i, t };
                    if t <= t_max && better(hit, best) {
                        best = Some(hit);
                    }
                }
            }
            let k = if t_next[0] <= t_next[1] && t_next[0] <= t_next[2] {
                0
            } else if t_next[1] <= t_next[2] {
                1
            } else {
                2
            };
            let exit = t_next[k];
            // a hit inside the current cell cannot be beaten further along,
            // up to ties at the boundary which the next cell resolves
            if let Some(b) = best {
                if b.t < exit {
                    return best;
                }
            }
            if exit > t1 {
                return best;
            }
            let n = c[k] as i64 + step[k];
            if n < 0 || n >= self.dims[k] as i64 {
                return best;
            }
            c[k] = n as usize;
            t_next[k] += t_delta[k];
        }
    }
}

/// Whether `p` lies inside a closed mesh, by ray parity along a fixed
/// direction chosen to avoid axis-aligned edges.
pub fn inside(mesh: &TriMesh, grid: &Grid, p: &Point3<f64>) -> bool {
    let dir = Vector3::new(0.5773, 0.5774, 0.5775).normalize();
    let mut ray = Ray { origin: *p, dir };
    let mut count = 0;
    let mut travelled = 0.0;
    while let Some(h) = grid.cast(mesh, &ray, f64::INFINITY) {
        count += 1;
        travelled += h.t;
        ray.origin = *p + dir * (travelled + 1e-7);
        travelled += 1e-7;
        if count > mesh.len() {
            break;
        }
    }
    count % 2 == 1
}
