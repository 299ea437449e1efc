use super::WorkspaceError;
use nalgebra::{Point3, Vector3};
use std::collections::HashMap;

/// Triangles below this area (mm²) are degenerate.
pub const MIN_AREA: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    /// Unit normal per triangle, following the vertex winding.
    pub normals: Vec<Vector3<f64>>,
    pub areas: Vec<f64>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self, WorkspaceError> {
        let mut normals = Vec::with_capacity(triangles.len());
        let mut areas = Vec::with_capacity(triangles.len());
        for (i, t) in triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= vertices.len()) {
                return Err(WorkspaceError::IndexOutOfRange { triangle: i });
            }
            let cross = (vertices[t[1]] - vertices[t[0]]).cross(&(vertices[t[2]] - vertices[t[0]]));
            let area = 0.5 * cross.norm();
            if !(area > MIN_AREA) {
                return Err(WorkspaceError::DegenerateTriangle { triangle: i });
            }
            normals.push(cross / (2.0 * area));
            areas.push(area);
        }
        if vertices.iter().any(|v| !v.coords.iter().all(|c| c.is_finite())) {
            return Err(WorkspaceError::NonFiniteVertex);
        }
        Ok(Self {
            vertices,
            triangles,
            normals,
            areas,
        })
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, i: usize) -> [Point3<f64>; 3] {
        let t = self.triangles[i];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn centroid(&self, i: usize) -> Point3<f64> {
        let [a, b, c] = self.corners(i);
        Point3::from((a.coords + b.coords + c.coords) / 3.0)
    }

    /// Axis-aligned bounds of all vertices.
    pub fn bounds(&self) -> (Point3<f64>, Point3<f64>) {
        let mut lo = Point3::from(Vector3::repeat(f64::INFINITY));
        let mut hi = Point3::from(Vector3::repeat(f64::NEG_INFINITY));
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Triangles sharing at least one vertex with each triangle.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut by_vertex: Vec<Vec<usize>> = vec![Vec::new(); self.vertices.len()];
        for (i, t) in self.triangles.iter().enumerate() {
            for &v in t {
                by_vertex[v].push(i);
            }
        }
        self.triangles
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut n: Vec<usize> = t.iter().flat_map(|&v| by_vertex[v].iter().copied()).filter(|&j| j != i).collect();
                n.sort_unstable();
                n.dedup();
                n
            })
            .collect()
    }

    /// Closed half-ellipsoid with semi-axes `a`, `b` (base plane) and `c`
    /// (height), apex at `+z` and a flat floor at `z = 0`.
    pub fn dome(a: f64, b: f64, c: f64, azimuth_steps: usize, elevation_steps: usize) -> Result<Self, WorkspaceError> {
        let nu = azimuth_steps.max(3);
        let nv = elevation_steps.max(1);
        let mut vertices = Vec::new();
        for j in 0..nv {
            let el = std::f64::consts::FRAC_PI_2 * j as f64 / nv as f64;
            for i in 0..nu {
                let az = std::f64::consts::TAU * i as f64 / nu as f64;
                vertices.push(Point3::new(a * el.cos() * az.cos(), b * el.cos() * az.sin(), c * el.sin()));
            }
        }
        let apex = vertices.len();
        vertices.push(Point3::new(0.0, 0.0, c));
        let floor = vertices.len();
        vertices.push(Point3::origin());
        let idx = |j: usize, i: usize| j * nu + i % nu;
        let mut triangles = Vec::new();
        for j in 0..nv - 1 {
            for i in 0..nu {
                triangles.push([idx(j, i), idx(j, i + 1), idx(j + 1, i + 1)]);
                triangles.push([idx(j, i), idx(j + 1, i + 1), idx(j + 1, i)]);
            }
        }
        for i in 0..nu {
            triangles.push([idx(nv - 1, i), idx(nv - 1, i + 1), apex]);
            triangles.push([idx(0, i + 1), idx(0, i), floor]);
        }
        Self::new(vertices, triangles)
    }
}

fn parse_f64(tok: Option<&str>, line: usize) -> Result<f64, WorkspaceError> {
    let t = tok.ok_or_else(|| WorkspaceError::Parse {
        line,
        message: "missing coordinate".into(),
    })?;
    let v: f64 = t.parse().map_err(|_| WorkspaceError::Parse {
        line,
        message: format!("bad number {t:?}"),
    })?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(WorkspaceError::Parse {
            line,
            message: format!("non-finite number {t:?}"),
        })
    }
}

/// Builds a mesh from triangle soup, merging bit-identical vertices and
/// dropping degenerate facets.
fn from_soup(soup: Vec<[Point3<f64>; 3]>) -> Result<TriMesh, WorkspaceError> {
    let mut index: HashMap<[u64; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for tri in soup {
        let cross = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
        if !(0.5 * cross.norm() > MIN_AREA) {
            continue;
        }
        let mut t = [0; 3];
        for (k, p) in tri.iter().enumerate() {
            let key = [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()];
            t[k] = *index.entry(key).or_insert_with(|| {
                vertices.push(*p);
                vertices.len() - 1
            });
        }
        triangles.push(t);
    }
    if triangles.is_empty() {
        return Err(WorkspaceError::EmptyMesh);
    }
    TriMesh::new(vertices, triangles)
}

/// ASCII STL. Facet normals in the file are ignored and recomputed.
pub fn parse_stl(text: &str) -> Result<TriMesh, WorkspaceError> {
    let mut soup = Vec::new();
    let mut pending: Vec<Point3<f64>> = Vec::new();
    let mut saw_solid = false;
    let mut in_loop = false;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let mut tok = raw.split_whitespace();
        let Some(key) = tok.next() else { continue };
        match key {
            "solid" => saw_solid = true,
            "facet" | "endsolid" => {}
            "outer" => {
                in_loop = true;
                pending.clear();
            }
            "vertex" => {
                if !in_loop {
                    return Err(WorkspaceError::Parse {
                        line,
                        message: "vertex outside loop".into(),
                    });
                }
                let p = Point3::new(parse_f64(tok.next(), line)?, parse_f64(tok.next(), line)?, parse_f64(tok.next(), line)?);
                pending.push(p);
            }
            "endloop" => {
                if pending.len() != 3 {
                    return Err(WorkspaceError::Parse {
                        line,
                        message: format!("facet with {} vertices", pending.len()),
                    });
                }
                soup.push([pending[0], pending[1], pending[2]]);
                in_loop = false;
            }
            "endfacet" => {}
            other => {
                return Err(WorkspaceError::Parse {
                    line,
                    message: format!("unexpected keyword {other:?}"),
                })
            }
        }
    }
    if !saw_solid {
        return Err(WorkspaceError::Parse {
            line: 1,
            message: "missing solid header".into(),
        });
    }
    from_soup(soup)
}

/// Wavefront OBJ: `v` and `f` records; polygons are fan-triangulated and
/// everything else is ignored.
pub fn parse_obj(text: &str) -> Result<TriMesh, WorkspaceError> {
    let mut positions: Vec<Point3<f64>> = Vec::new();
    let mut soup = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let mut tok = raw.split_whitespace();
        match tok.next() {
            Some("v") => {
                positions.push(Point3::new(parse_f64(tok.next(), line)?, parse_f64(tok.next(), line)?, parse_f64(tok.next(), line)?));
            }
            Some("f") => {
                let mut face = Vec::new();
                for t in tok {
                    let first = t.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|_| WorkspaceError::Parse {
                        line,
                        message: format!("bad index {t:?}"),
                    })?;
                    let len = positions.len() as i64;
                    let resolved = if i > 0 { i - 1 } else { len + i };
                    if i == 0 || resolved < 0 || resolved >= len {
                        return Err(WorkspaceError::Parse {
                            line,
                            message: format!("index {i} out of range"),
                        });
                    }
                    face.push(positions[resolved as usize]);
                }
                if face.len() < 3 {
                    return Err(WorkspaceError::Parse {
                        line,
                        message: "face with fewer than 3 vertices".into(),
                    });
                }
                for k in 1..face.len() - 1 {
                    soup.push([face[0], face[k], face[k + 1]]);
                }
            }
            _ => {}
        }
    }
    from_soup(soup)
}
