//! Closed triangle meshes and their topological checks.

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Triangles with area below this fraction of the squared bounding-box
/// diagonal are rejected as degenerate.
pub const DEGENERATE_AREA_RATIO: f64 = 1e-12;

/// A closed, consistently oriented, genus-zero triangle mesh.
///
/// Construct through [`TriMesh::new`] to get every invariant checked, or
/// [`TriMesh::new_unchecked`] when the caller produced the connectivity itself
/// and will call [`TriMesh::validate`] later.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    /// Optional per-vertex scalar tags (e.g. shell index).
    pub tags: Option<Vec<f64>>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Self::new_unchecked(vertices, triangles);
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn new_unchecked(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Self {
        Self {
            vertices,
            triangles,
            tags: None,
        }
    }

    pub fn with_tags(mut self, tags: Vec<f64>) -> Self {
        assert_eq!(tags.len(), self.vertices.len());
        self.tags = Some(tags);
        self
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Checks index bounds, closed 2-manifold structure, orientation,
    /// connectivity, Euler characteristic and triangle non-degeneracy.
    pub fn validate(&self) -> Result<()> {
        self.validate_topology()?;
        self.validate_geometry()
    }

    pub fn validate_topology(&self) -> Result<()> {
        if self.triangles.is_empty() {
            return Err(Error::Topology("mesh has no triangles".into()));
        }
        let nv = self.vertices.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= nv) {
                return Err(Error::Topology(format!(
                    "triangle {t} references a vertex out of range ({nv} vertices)"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::Topology(format!("triangle {t} repeats a vertex")));
            }
        }

        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let e = (tri[k], tri[(k + 1) % 3]);
                if directed.insert(e, t).is_some() {
                    return Err(Error::Topology(format!(
                        "edge ({}, {}) is used twice with the same orientation \
                         (non-manifold or inconsistently oriented)",
                        e.0, e.1
                    )));
                }
            }
        }
        for &(a, b) in directed.keys() {
            if !directed.contains_key(&(b, a)) {
                return Err(Error::Topology(format!(
                    "edge ({a}, {b}) is bounded by a single triangle (open boundary)"
                )));
            }
        }

        let mut used = vec![false; nv];
        for tri in &self.triangles {
            for &i in tri {
                used[i] = true;
            }
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(Error::Topology(format!("vertex {v} is not referenced")));
        }

        // Each vertex star must be a single fan.
        let mut out_edges: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                out_edges
                    .entry(tri[k])
                    .or_default()
                    .push((tri[(k + 1) % 3], tri[(k + 2) % 3]));
            }
        }
        for (&v, fan) in &out_edges {
            let next: HashMap<usize, usize> = fan.iter().copied().collect();
            let start = fan[0].0;
            let mut cur = start;
            let mut steps = 0;
            loop {
                cur = next[&cur];
                steps += 1;
                if cur == start || steps > fan.len() {
                    break;
                }
            }
            if steps != fan.len() {
                return Err(Error::Topology(format!(
                    "vertex {v} has a non-manifold neighbourhood"
                )));
            }
        }

        let components = self.connected_components();
        if components > 1 {
            return Err(Error::Topology(format!(
                "mesh has {components} connected components"
            )));
        }
        let chi = self.euler_characteristic();
        if chi != 2 {
            return Err(Error::Topology(format!(
                "genus != 0 (Euler characteristic V - E + F = {chi})"
            )));
        }
        Ok(())
    }

    pub fn validate_geometry(&self) -> Result<()> {
        if let Some(v) = self.vertices.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::DegenerateGeometry(format!("vertex {v} is not finite")));
        }
        let diag = self.bbox_diagonal();
        let min_area = DEGENERATE_AREA_RATIO * diag * diag;
        for t in 0..self.triangles.len() {
            let area = self.triangle_area(t);
            if !(area > min_area) {
                return Err(Error::DegenerateGeometry(format!(
                    "triangle {t} has area {area:e} (threshold {min_area:e})"
                )));
            }
        }
        Ok(())
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.num_edges() as i64 + self.triangles.len() as i64
    }

    pub fn num_edges(&self) -> usize {
        self.edges().len()
    }

    /// Undirected edges as `(min, max)` pairs, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| ordered(t[k], t[(k + 1) % 3])))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// For every undirected edge, the triangles that contain it.
    pub fn edge_triangles(&self) -> HashMap<(usize, usize), Vec<usize>> {
        let mut map: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                map.entry(ordered(tri[k], tri[(k + 1) % 3])).or_default().push(t);
            }
        }
        map
    }

    /// Sorted vertex neighbour lists.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs = vec![Vec::new(); self.vertices.len()];
        for tri in &self.triangles {
            for k in 0..3 {
                nbrs[tri[k]].push(tri[(k + 1) % 3]);
                nbrs[tri[k]].push(tri[(k + 2) % 3]);
            }
        }
        for n in &mut nbrs {
            n.sort_unstable();
            n.dedup();
        }
        nbrs
    }

    /// Triangles incident to each vertex.
    pub fn vertex_triangles(&self) -> Vec<Vec<usize>> {
        let mut vt = vec![Vec::new(); self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                vt[v].push(t);
            }
        }
        vt
    }

    /// For each triangle, the triangle across each edge `k` (edge `k` runs
    /// from corner `k` to corner `k + 1`). `usize::MAX` marks a boundary edge.
    pub fn triangle_adjacency(&self) -> Vec<[usize; 3]> {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::with_capacity(self.triangles.len() * 3);
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                directed.insert((tri[k], tri[(k + 1) % 3]), t);
            }
        }
        self.triangles
            .iter()
            .map(|tri| {
                let mut adj = [usize::MAX; 3];
                for k in 0..3 {
                    if let Some(&o) = directed.get(&(tri[(k + 1) % 3], tri[k])) {
                        adj[k] = o;
                    }
                }
                adj
            })
            .collect()
    }

    pub fn connected_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for tri in &self.triangles {
            for k in 1..3 {
                let a = find(&mut parent, tri[0]);
                let b = find(&mut parent, tri[k]);
                if a != b {
                    parent[a] = b;
                }
            }
        }
        let mut roots: Vec<usize> = self
            .triangles
            .iter()
            .map(|t| find(&mut parent, t[0]))
            .collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn triangle_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn triangle_centroid(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        (a + b + c) / 3.0
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Enclosed volume by the divergence theorem (positive for outward orientation).
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|&[a, b, c]| {
                self.vertices[a].dot(&self.vertices[b].cross(&self.vertices[c])) / 6.0
            })
            .sum()
    }

    pub fn bbox(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.vertices {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bbox();
        (hi - lo).norm()
    }

    /// Area-weighted vertex normals.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut normals = vec![Vec3::zeros(); self.vertices.len()];
        for &[a, b, c] in &self.triangles {
            let n = (self.vertices[b] - self.vertices[a]).cross(&(self.vertices[c] - self.vertices[a]));
            normals[a] += n;
            normals[b] += n;
            normals[c] += n;
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        normals
    }

    /// Applies `p -> scale * p + offset` to every vertex.
    pub fn transformed(&self, scale: f64, offset: Vec3) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|p| p * scale + offset).collect(),
            triangles: self.triangles.clone(),
            tags: self.tags.clone(),
        }
    }

    /// Flips the orientation of every triangle.
    pub fn reversed(&self) -> TriMesh {
        TriMesh {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().map(|&[a, b, c]| [a, c, b]).collect(),
            tags: self.tags.clone(),
        }
    }
}

#[inline]
pub(crate) fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}
