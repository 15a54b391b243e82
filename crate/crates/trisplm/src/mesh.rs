//! Triangulations of planar domains: loading, validation, uniform refinement,
//! point location and quality metrics.
//!
//! A [`Triangulation`] is conforming: two triangles intersect in nothing, a
//! shared vertex, or a full shared edge. All triangles are stored
//! counter-clockwise; the constructor normalizes orientation and rejects
//! anything degenerate or non-conforming.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

/// Barycentric slack used to decide whether a point lies inside a triangle.
pub const INSIDE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("triangle {tri} references vertex {index}, but only {count} vertices exist")]
    IndexOutOfRange { tri: usize, index: usize, count: usize },
    #[error("triangle {tri} is degenerate (zero signed area)")]
    Degenerate { tri: usize },
    #[error("vertices {a} and {b} have identical coordinates")]
    DuplicateVertex { a: usize, b: usize },
    #[error("edge ({a}, {b}) belongs to more than two triangles")]
    EdgeOveruse { a: usize, b: usize },
    #[error(
        "triangles {first} and {second} intersect improperly (not a shared vertex or full edge)"
    )]
    NonConforming { first: usize, second: usize },
    #[error("mesh has no triangles")]
    Empty,
}

/// Barycentric coordinates of a point with respect to one triangle.
#[derive(Debug, Clone, Copy)]
pub struct BaryCoord {
    /// Weights ordered like the triangle's stored vertices; they sum to 1.
    pub weights: [f64; 3],
    /// Index of the containing triangle.
    pub triangle: usize,
}

/// Size and shape summary of a triangulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshQuality {
    /// Longest edge over all triangles.
    pub mesh_size: f64,
    /// max over triangles of (longest edge / incircle radius); 2*sqrt(3) for
    /// an equilateral triangle.
    pub shape_param: f64,
    pub triangle_count: usize,
}

/// An interior edge together with the two triangles incident to it.
#[derive(Debug, Clone, Copy)]
pub struct InteriorEdge {
    /// Endpoint vertex indices with `v[0] < v[1]`.
    pub vertices: [usize; 2],
    pub triangles: [usize; 2],
}

#[derive(Debug, Clone)]
pub struct Triangulation {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    /// (lo, hi) vertex pair -> incident triangle indices (1 or 2).
    edges: BTreeMap<(usize, usize), Vec<usize>>,
}

impl Triangulation {
    /// Build and validate a triangulation. Triangle orientation is
    /// normalized to counter-clockwise.
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        if triangles.is_empty() {
            return Err(MeshError::Empty);
        }
        let count = vertices.len();
        let mut tris = triangles;
        for (t, tri) in tris.iter_mut().enumerate() {
            for &v in tri.iter() {
                if v >= count {
                    return Err(MeshError::IndexOutOfRange { tri: t, index: v, count });
                }
            }
            let area2 = signed_area2(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            let scale = longest_edge(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if area2.abs() <= 1e-14 * scale * scale {
                return Err(MeshError::Degenerate { tri: t });
            }
            if area2 < 0.0 {
                tri.swap(1, 2);
            }
        }

        // Duplicate coordinates break edge identification.
        let mut order: Vec<usize> = (0..count).collect();
        order.sort_by(|&a, &b| {
            (vertices[a].x, vertices[a].y).partial_cmp(&(vertices[b].x, vertices[b].y)).unwrap()
        });
        for w in order.windows(2) {
            if vertices[w[0]] == vertices[w[1]] {
                let (a, b) = (w[0].min(w[1]), w[0].max(w[1]));
                return Err(MeshError::DuplicateVertex { a, b });
            }
        }

        let mut edges: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (t, tri) in tris.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let owners = edges.entry(key).or_default();
                owners.push(t);
                if owners.len() > 2 {
                    return Err(MeshError::EdgeOveruse { a: key.0, b: key.1 });
                }
            }
        }
        // CCW triangles on both sides traverse a shared edge in opposite
        // directions; same direction means they overlap.
        for (&(a, b), owners) in &edges {
            if owners.len() == 2 {
                let d0 = edge_direction(&tris[owners[0]], a, b);
                let d1 = edge_direction(&tris[owners[1]], a, b);
                if d0 == d1 {
                    return Err(MeshError::NonConforming { first: owners[0], second: owners[1] });
                }
            }
        }

        let mesh = Triangulation { vertices, triangles: tris, edges };
        mesh.check_pairwise()?;
        Ok(mesh)
    }

    /// Pairwise conformity: a vertex of one triangle inside another (interior
    /// or on an edge, without being a shared vertex), or a proper edge
    /// crossing, is a violation. Bounding boxes prune the quadratic scan.
    fn check_pairwise(&self) -> Result<(), MeshError> {
        let boxes: Vec<[f64; 4]> = (0..self.triangles.len())
            .map(|t| {
                let [p, q, r] = self.triangle_points(t);
                [
                    p.x.min(q.x).min(r.x),
                    p.x.max(q.x).max(r.x),
                    p.y.min(q.y).min(r.y),
                    p.y.max(q.y).max(r.y),
                ]
            })
            .collect();
        let n = self.triangles.len();
        for s in 0..n {
            for t in (s + 1)..n {
                let (a, b) = (&boxes[s], &boxes[t]);
                let tol = 1e-12 * (a[1] - a[0] + a[3] - a[2] + b[1] - b[0] + b[3] - b[2]);
                if a[1] < b[0] - tol || b[1] < a[0] - tol || a[3] < b[2] - tol || b[3] < a[2] - tol
                {
                    continue;
                }
                self.check_pair(s, t)?;
            }
        }
        Ok(())
    }

    fn check_pair(&self, s: usize, t: usize) -> Result<(), MeshError> {
        let ts = self.triangles[s];
        let tt = self.triangles[t];
        let shared: Vec<usize> = ts.iter().copied().filter(|v| tt.contains(v)).collect();
        if shared.len() == 3 {
            return Err(MeshError::NonConforming { first: s, second: t });
        }
        // Vertex of one triangle inside (or on the boundary of) the other.
        for (from, into) in [(ts, t), (tt, s)] {
            for &v in from.iter() {
                if shared.contains(&v) {
                    continue;
                }
                let w = self.barycentric_in(into, self.vertices[v]);
                if w.iter().all(|&c| c >= -1e-12) {
                    return Err(MeshError::NonConforming { first: s, second: t });
                }
            }
        }
        // Proper crossing between edges that share no endpoint.
        for i in 0..3 {
            let (a1, a2) = (ts[i], ts[(i + 1) % 3]);
            for j in 0..3 {
                let (b1, b2) = (tt[j], tt[(j + 1) % 3]);
                if a1 == b1 || a1 == b2 || a2 == b1 || a2 == b2 {
                    continue;
                }
                if segments_cross(
                    self.vertices[a1],
                    self.vertices[a2],
                    self.vertices[b1],
                    self.vertices[b2],
                ) {
                    return Err(MeshError::NonConforming { first: s, second: t });
                }
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        0.5 * signed_area2(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangle_count()).map(|t| self.area(t)).sum()
    }

    pub fn boundary_edge_count(&self) -> usize {
        self.edges.values().filter(|owners| owners.len() == 1).count()
    }

    pub fn interior_edges(&self) -> Vec<InteriorEdge> {
        self.edges
            .iter()
            .filter(|(_, owners)| owners.len() == 2)
            .map(|(&(a, b), owners)| InteriorEdge {
                vertices: [a, b],
                triangles: [owners[0], owners[1]],
            })
            .collect()
    }

    /// Barycentric coordinates of `p` with respect to triangle `t`,
    /// ordered like the stored vertex triple.
    pub fn barycentric_in(&self, t: usize, p: Point) -> [f64; 3] {
        let [v1, v2, v3] = self.triangle_points(t);
        let det = (v2.y - v3.y) * (v1.x - v3.x) + (v3.x - v2.x) * (v1.y - v3.y);
        let b1 = ((v2.y - v3.y) * (p.x - v3.x) + (v3.x - v2.x) * (p.y - v3.y)) / det;
        let b2 = ((v3.y - v1.y) * (p.x - v3.x) + (v1.x - v3.x) * (p.y - v3.y)) / det;
        [b1, b2, 1.0 - b1 - b2]
    }

    /// Locate a point by brute-force barycentric test. Points on shared
    /// edges or vertices are assigned to the lowest-index containing
    /// triangle; `None` means the point is outside the mesh.
    pub fn locate(&self, p: Point) -> Option<BaryCoord> {
        for t in 0..self.triangles.len() {
            let weights = self.barycentric_in(t, p);
            if weights.iter().all(|&w| w >= -INSIDE_TOL) {
                return Some(BaryCoord { weights, triangle: t });
            }
        }
        None
    }

    /// Uniform refinement: each triangle is split into four at its edge
    /// midpoints. Output is conforming and the mesh size halves.
    pub fn refine(&self) -> Triangulation {
        let mut vertices = self.vertices.clone();
        let mut midpoint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Point>| {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let pa = vertices[a];
                let pb = vertices[b];
                vertices.push(Point::new(0.5 * (pa.x + pb.x), 0.5 * (pa.y + pb.y)));
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for &[a, b, c] in &self.triangles {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            triangles.push([a, ab, ca]);
            triangles.push([ab, b, bc]);
            triangles.push([ca, bc, c]);
            triangles.push([ab, bc, ca]);
        }
        Triangulation::new(vertices, triangles)
            .expect("midpoint refinement of a valid mesh stays valid")
    }

    pub fn quality(&self) -> Result<MeshQuality, MeshError> {
        let mut mesh_size: f64 = 0.0;
        let mut shape_param: f64 = 0.0;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangle_points(t);
            let longest = longest_edge(a, b, c);
            let area = 0.5 * signed_area2(a, b, c);
            let perimeter = a.dist(b) + b.dist(c) + c.dist(a);
            let incircle = 2.0 * area / perimeter;
            if !(incircle > 0.0) {
                return Err(MeshError::Degenerate { tri: t });
            }
            mesh_size = mesh_size.max(longest);
            shape_param = shape_param.max(longest / incircle);
        }
        Ok(MeshQuality { mesh_size, shape_param, triangle_count: self.triangles.len() })
    }

    /// Parse the plain-text mesh format: a "V T" count line, V vertex lines
    /// "x y", then T triangle lines "i j k" (0-based).
    pub fn parse(text: &str) -> Result<Self, MeshError> {
        let mut lines =
            text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        let (line, header) =
            lines.next().ok_or(MeshError::Parse { line: 1, msg: "empty file".into() })?;
        let mut counts = header.split_whitespace();
        let nv: usize = parse_field(counts.next(), line, "vertex count")?;
        let nt: usize = parse_field(counts.next(), line, "triangle count")?;

        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (line, l) = lines
                .next()
                .ok_or(MeshError::Parse { line: 0, msg: format!("expected {nv} vertex lines") })?;
            let mut it = l.split_whitespace();
            let x: f64 = parse_field(it.next(), line, "x coordinate")?;
            let y: f64 = parse_field(it.next(), line, "y coordinate")?;
            vertices.push(Point::new(x, y));
        }
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (line, l) = lines.next().ok_or(MeshError::Parse {
                line: 0,
                msg: format!("expected {nt} triangle lines"),
            })?;
            let mut it = l.split_whitespace();
            let i: usize = parse_field(it.next(), line, "vertex index")?;
            let j: usize = parse_field(it.next(), line, "vertex index")?;
            let k: usize = parse_field(it.next(), line, "vertex index")?;
            triangles.push([i, j, k]);
        }
        Triangulation::new(vertices, triangles)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MeshError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.vertices.len(), self.triangles.len());
        for v in &self.vertices {
            let _ = writeln!(out, "{} {}", v.x, v.y);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "{} {} {}", t[0], t[1], t[2]);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MeshError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn parse_field<T: std::str::FromStr>(
    field: Option<&str>,
    line: usize,
    what: &str,
) -> Result<T, MeshError> {
    field
        .ok_or_else(|| MeshError::Parse { line, msg: format!("missing {what}") })?
        .parse()
        .map_err(|_| MeshError::Parse { line, msg: format!("invalid {what}") })
}

/// Twice the signed area of (a, b, c); positive for counter-clockwise.
pub fn signed_area2(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y)
}

fn longest_edge(a: Point, b: Point, c: Point) -> f64 {
    a.dist(b).max(b.dist(c)).max(c.dist(a))
}

/// Whether triangle `tri` traverses edge (a, b) in the order a -> b.
fn edge_direction(tri: &[usize; 3], a: usize, b: usize) -> bool {
    for k in 0..3 {
        if tri[k] == a && tri[(k + 1) % 3] == b {
            return true;
        }
        if tri[k] == b && tri[(k + 1) % 3] == a {
            return false;
        }
    }
    unreachable!("edge not part of triangle")
}

/// Proper crossing of open segments (p1, p2) and (q1, q2).
fn segments_cross(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = signed_area2(q1, q2, p1);
    let d2 = signed_area2(q1, q2, p2);
    let d3 = signed_area2(p1, p2, q1);
    let d4 = signed_area2(p1, p2, q2);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Convenience fixture: the unit square split into two triangles along the
/// main diagonal.
pub fn unit_square_two_triangles() -> Triangulation {
    Triangulation::new(
        vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .unwrap()
}
