//! Triangulations of the unit square with globally oriented edges.
//!
//! Every edge stores an orientation (tail, head); its unit normal is the
//! tangent tail→head rotated 90° clockwise. Structured meshes orient each edge
//! from the lower to the higher vertex index, and refinement children inherit
//! the orientation of their parent edge.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    /// Local edge k of a triangle is opposite its local vertex k.
    tri_edges: Vec<[usize; 3]>,
    /// σ(T, E) = +1 when the global normal of E points out of T.
    tri_signs: Vec<[f64; 3]>,
    edge_tris: Vec<Vec<usize>>,
    boundary_edge: Vec<bool>,
    boundary_vertex: Vec<bool>,
}

/// Parent/child bookkeeping produced by one red refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementMap {
    /// Children 0..3 are the corner triangles at local vertices 0..3, child 3 the center.
    pub child_triangles: Vec<[usize; 4]>,
    /// Children of a coarse edge in tail→head order.
    pub child_edges: Vec<[usize; 2]>,
    /// Fine edges strictly inside a coarse triangle; entry k is parallel to local edge k.
    pub interior_edges: Vec<[usize; 3]>,
    pub vertex_embedding: Vec<usize>,
}

impl RefinementMap {
    /// Parent coarse triangle of every fine triangle.
    pub fn parent_triangles(&self) -> Vec<usize> {
        let mut parent = vec![0; self.child_triangles.len() * 4];
        for (t, kids) in self.child_triangles.iter().enumerate() {
            for &c in kids {
                parent[c] = t;
            }
        }
        parent
    }
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

fn key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl TriangleMesh {
    /// Builds a mesh from vertices, counterclockwise triangles and the oriented
    /// edge list. Every triangle side must appear in `edges` exactly once.
    pub fn from_parts(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        edges: Vec<[usize; 2]>,
    ) -> Result<Self> {
        let lookup: HashMap<(usize, usize), usize> = edges
            .iter()
            .enumerate()
            .map(|(i, e)| (key(e[0], e[1]), i))
            .collect();
        if lookup.len() != edges.len() {
            return Err(Error::InvalidArgument("duplicate edge".into()));
        }
        let mut tri_edges = Vec::with_capacity(triangles.len());
        let mut tri_signs = Vec::with_capacity(triangles.len());
        let mut edge_tris = vec![Vec::with_capacity(2); edges.len()];
        for (t, tri) in triangles.iter().enumerate() {
            let mut ids = [0; 3];
            let mut signs = [0.0; 3];
            for k in 0..3 {
                let a = tri[(k + 1) % 3];
                let b = tri[(k + 2) % 3];
                let e = *lookup.get(&key(a, b)).ok_or_else(|| {
                    Error::InvalidArgument(format!("triangle {t} side ({a},{b}) has no edge"))
                })?;
                ids[k] = e;
                signs[k] = if edges[e] == [a, b] { 1.0 } else { -1.0 };
                edge_tris[e].push(t);
            }
            tri_edges.push(ids);
            tri_signs.push(signs);
        }
        let boundary_edge: Vec<bool> = edge_tris.iter().map(|ts| ts.len() == 1).collect();
        let mut boundary_vertex = vec![false; vertices.len()];
        for (e, &b) in edges.iter().zip(&boundary_edge) {
            if b {
                boundary_vertex[e[0]] = true;
                boundary_vertex[e[1]] = true;
            }
        }
        Ok(Self {
            vertices,
            triangles,
            edges,
            tri_edges,
            tri_signs,
            edge_tris,
            boundary_edge,
            boundary_vertex,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_edges(&self, t: usize) -> [usize; 3] {
        self.tri_edges[t]
    }

    pub fn triangle_signs(&self, t: usize) -> [f64; 3] {
        self.tri_signs[t]
    }

    /// Triangles adjacent to an edge (one for boundary edges, two otherwise).
    pub fn edge_triangles(&self, e: usize) -> &[usize] {
        &self.edge_tris[e]
    }

    pub fn is_boundary_edge(&self, e: usize) -> bool {
        self.boundary_edge[e]
    }

    pub fn boundary_edge_flags(&self) -> &[bool] {
        &self.boundary_edge
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    pub fn interior_vertices(&self) -> Vec<usize> {
        (0..self.vertices.len())
            .filter(|&v| !self.boundary_vertex[v])
            .collect()
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        signed_area(a, b, c)
    }

    pub fn areas(&self) -> Vec<f64> {
        (0..self.triangles.len()).map(|t| self.area(t)).collect()
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangle_points(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e];
        let (p, q) = (self.vertices[a], self.vertices[b]);
        (q[0] - p[0]).hypot(q[1] - p[1])
    }

    pub fn edge_midpoint(&self, e: usize) -> Point {
        let [a, b] = self.edges[e];
        let (p, q) = (self.vertices[a], self.vertices[b]);
        [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]
    }

    /// Unit global normal of an edge.
    pub fn edge_normal(&self, e: usize) -> Point {
        let [a, b] = self.edges[e];
        let (p, q) = (self.vertices[a], self.vertices[b]);
        let len = self.edge_length(e);
        let t = [(q[0] - p[0]) / len, (q[1] - p[1]) / len];
        [t[1], -t[0]]
    }

    /// Longest edge length.
    pub fn mesh_size(&self) -> f64 {
        (0..self.edges.len())
            .map(|e| self.edge_length(e))
            .fold(0.0, f64::max)
    }

    /// Triangles containing each vertex.
    pub fn vertex_triangles(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                out[v].push(t);
            }
        }
        out
    }

    /// Edges incident to each vertex.
    pub fn vertex_edges(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.vertices.len()];
        for (e, &[a, b]) in self.edges.iter().enumerate() {
            out[a].push(e);
            out[b].push(e);
        }
        out
    }

    /// Barycentric coordinates of `p` with respect to triangle `t`.
    pub fn barycentric(&self, t: usize, p: Point) -> [f64; 3] {
        let [a, b, c] = self.triangle_points(t);
        let area = signed_area(a, b, c);
        [
            signed_area(p, b, c) / area,
            signed_area(a, p, c) / area,
            signed_area(a, b, p) / area,
        ]
    }

    /// Checks the structural invariants: positive areas, Euler relation for a
    /// simply connected domain, two-sided interior edges with opposite
    /// incidence signs, and the outward-normal meaning of σ.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        for t in 0..self.triangles.len() {
            if self.area(t) <= 0.0 {
                return bad(format!("triangle {t} has non-positive area"));
            }
        }
        let euler =
            self.vertices.len() as i64 - self.edges.len() as i64 + self.triangles.len() as i64;
        if euler != 1 {
            return bad(format!("Euler characteristic {euler} != 1"));
        }
        for (e, tris) in self.edge_tris.iter().enumerate() {
            match tris.as_slice() {
                [_] => {}
                [t1, t2] => {
                    let s1 = self.sign_of(*t1, e);
                    let s2 = self.sign_of(*t2, e);
                    if s1 + s2 != 0.0 {
                        return bad(format!("edge {e} has equal signs in both triangles"));
                    }
                }
                _ => return bad(format!("edge {e} touches {} triangles", tris.len())),
            }
        }
        for t in 0..self.triangles.len() {
            let c = self.centroid(t);
            for k in 0..3 {
                let e = self.tri_edges[t][k];
                let m = self.edge_midpoint(e);
                let n = self.edge_normal(e);
                let outward = (m[0] - c[0]) * n[0] + (m[1] - c[1]) * n[1] > 0.0;
                if outward != (self.tri_signs[t][k] > 0.0) {
                    return bad(format!(
                        "sign of edge {e} in triangle {t} disagrees with geometry"
                    ));
                }
            }
        }
        Ok(())
    }

    /// σ(T, E), or 0 if E is not a side of T.
    pub fn sign_of(&self, t: usize, e: usize) -> f64 {
        (0..3)
            .find(|&k| self.tri_edges[t][k] == e)
            .map_or(0.0, |k| self.tri_signs[t][k])
    }

    /// Plain-text dump: header `V E T`, then vertex coordinates, edge pairs and
    /// triangle triples, one per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} {} {}",
            self.vertices.len(),
            self.edges.len(),
            self.triangles.len()
        );
        for v in &self.vertices {
            let _ = writeln!(s, "{:.17e} {:.17e}", v[0], v[1]);
        }
        for e in &self.edges {
            let _ = writeln!(s, "{} {}", e[0], e[1]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        s
    }
}

/// Structured n×n mesh of the unit square; every square is cut along its
/// lower-left to upper-right diagonal. Triangles 2c and 2c+1 belong to square
/// c = j·n + i.
pub fn build_square_mesh(n: usize) -> TriangleMesh {
    assert!(n >= 1, "grid resolution must be positive");
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let vertices: Vec<Point> = (0..=n)
        .flat_map(|j| (0..=n).map(move |i| [i as f64 / n as f64, j as f64 / n as f64]))
        .collect();
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    let mut seen = HashMap::new();
    let mut edges = Vec::new();
    for tri in &triangles {
        for k in 0..3 {
            let (a, b) = key(tri[(k + 1) % 3], tri[(k + 2) % 3]);
            seen.entry((a, b)).or_insert_with(|| {
                edges.push([a, b]);
                edges.len() - 1
            });
        }
    }
    TriangleMesh::from_parts(vertices, triangles, edges).expect("structured mesh is valid")
}

/// Red refinement: every triangle is split into four by joining edge midpoints.
pub fn uniform_refine(mesh: &TriangleMesh) -> (TriangleMesh, RefinementMap) {
    let nv = mesh.num_vertices();
    let ne = mesh.num_edges();
    let nt = mesh.num_triangles();

    let mut vertices = mesh.vertices.clone();
    vertices.extend((0..ne).map(|e| mesh.edge_midpoint(e)));

    let mut edges = Vec::with_capacity(2 * ne + 3 * nt);
    let mut child_edges = Vec::with_capacity(ne);
    for (e, &[a, b]) in mesh.edges.iter().enumerate() {
        let m = nv + e;
        child_edges.push([edges.len(), edges.len() + 1]);
        edges.push([a, m]);
        edges.push([m, b]);
    }

    let mut triangles = Vec::with_capacity(4 * nt);
    let mut child_triangles = Vec::with_capacity(nt);
    let mut interior_edges = Vec::with_capacity(nt);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let m = mesh.tri_edges[t].map(|e| nv + e);
        let base = triangles.len();
        for k in 0..3 {
            triangles.push([tri[k], m[(k + 2) % 3], m[(k + 1) % 3]]);
        }
        triangles.push([m[0], m[1], m[2]]);
        child_triangles.push([base, base + 1, base + 2, base + 3]);

        let mut inner = [0; 3];
        for (k, slot) in inner.iter_mut().enumerate() {
            let (a, b) = key(m[(k + 1) % 3], m[(k + 2) % 3]);
            *slot = edges.len();
            edges.push([a, b]);
        }
        interior_edges.push(inner);
    }

    let fine = TriangleMesh::from_parts(vertices, triangles, edges)
        .expect("refinement of a valid mesh is valid");
    let map = RefinementMap {
        child_triangles,
        child_edges,
        interior_edges,
        vertex_embedding: (0..nv).collect(),
    };
    (fine, map)
}

/// Randomly displaces interior vertices by up to `magnitude · h` in each
/// coordinate, where h is the shortest edge of the input mesh. A draw that
/// would invert or flatten an incident triangle is rejected and redrawn.
pub fn distort_mesh(mesh: &TriangleMesh, magnitude: f64, seed: u64) -> Result<TriangleMesh> {
    if !(0.0..0.5).contains(&magnitude) {
        return Err(Error::InvalidArgument(format!(
            "distortion magnitude {magnitude} outside [0, 0.5)"
        )));
    }
    const MAX_REDRAWS: usize = 1000;
    let h = (0..mesh.num_edges())
        .map(|e| mesh.edge_length(e))
        .fold(f64::INFINITY, f64::min);
    let delta = magnitude * h;
    let mut out = mesh.clone();
    if delta == 0.0 {
        return Ok(out);
    }
    let min_area = 1e-3 * h * h;
    let incident = mesh.vertex_triangles();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in mesh.interior_vertices() {
        let origin = mesh.vertices[v];
        let mut accepted = false;
        for _ in 0..MAX_REDRAWS {
            let dx: f64 = rng.gen_range(-delta..=delta);
            let dy: f64 = rng.gen_range(-delta..=delta);
            out.vertices[v] = [origin[0] + dx, origin[1] + dy];
            if incident[v].iter().all(|&t| out.area(t) > min_area) {
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::DistortionFailed {
                vertex: v,
                attempts: MAX_REDRAWS,
            });
        }
    }
    Ok(out)
}
