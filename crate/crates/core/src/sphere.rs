//! Triangulations with vertices on the unit sphere: the common currency of
//! the conformal map, the area flow and the inverse interpolation.

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};

/// A shell mapped vertex-by-vertex onto the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereMap {
    pub source: TriMesh,
    pub positions: Vec<Vec3>,
    /// Triangle whose image contains the north pole.
    pub puncture: usize,
}

impl SphereMap {
    pub fn new(source: TriMesh, positions: Vec<Vec3>, puncture: usize) -> Self {
        assert_eq!(source.num_vertices(), positions.len());
        Self {
            source,
            positions,
            puncture,
        }
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        self.source.triangles[t].map(|v| self.positions[v])
    }

    /// Signed solid angle of every image triangle.
    pub fn solid_angles(&self) -> Vec<f64> {
        solid_angles(&self.positions, &self.source.triangles)
    }

    pub fn total_area(&self) -> f64 {
        self.solid_angles().iter().sum()
    }

    pub fn flipped_triangles(&self) -> Vec<usize> {
        flipped_triangles(&self.positions, &self.source.triangles)
    }

    pub fn is_injective(&self) -> bool {
        self.flipped_triangles().is_empty()
    }

    pub fn max_norm_error(&self) -> f64 {
        self.positions
            .iter()
            .map(|p| (p.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn with_positions(&self, positions: Vec<Vec3>) -> Self {
        Self::new(self.source.clone(), positions, self.puncture)
    }
}

/// Rotation `R` minimizing the weighted sum of `|R from_i - to_i|^2`.
pub fn best_rotation(from: &[Vec3], to: &[Vec3], weights: &[f64]) -> Matrix3<f64> {
    let mut h = Matrix3::zeros();
    for ((f, t), w) in from.iter().zip(to).zip(weights) {
        h += t * f.transpose() * *w;
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut fix = Matrix3::identity();
        fix[(2, 2)] = -1.0;
        r = u * fix * vt;
    }
    r
}

/// Signed solid angle of the spherical triangle `(a, b, c)` (unit vectors),
/// positive when the corners run counter-clockwise seen from outside.
pub fn solid_angle(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let det = a.dot(&b.cross(c));
    let den = 1.0 + a.dot(b) + b.dot(c) + c.dot(a);
    2.0 * det.atan2(den)
}

pub fn solid_angles(positions: &[Vec3], triangles: &[[usize; 3]]) -> Vec<f64> {
    triangles
        .iter()
        .map(|t| solid_angle(&positions[t[0]], &positions[t[1]], &positions[t[2]]))
        .collect()
}

/// Triangles whose signed solid angle is not positive.
pub fn flipped_triangles(positions: &[Vec3], triangles: &[[usize; 3]]) -> Vec<usize> {
    solid_angles(positions, triangles)
        .iter()
        .enumerate()
        .filter(|(_, &a)| !(a > 0.0))
        .map(|(t, _)| t)
        .collect()
}

/// Point location on a spherical triangulation, by walking across edges with
/// a brute-force scan as the fallback.
pub struct SphereLocator<'a> {
    positions: &'a [Vec3],
    triangles: &'a [[usize; 3]],
    adjacency: Vec<[usize; 3]>,
    max_walk: usize,
}

/// Containing triangle and barycentric weights of a located point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub triangle: usize,
    pub bary: [f64; 3],
}

const INSIDE_TOL: f64 = 1e-12;

impl<'a> SphereLocator<'a> {
    pub fn new(mesh: &'a TriMesh, positions: &'a [Vec3]) -> Self {
        assert_eq!(mesh.num_vertices(), positions.len());
        let n = mesh.num_triangles();
        Self {
            positions,
            triangles: &mesh.triangles,
            adjacency: mesh.triangle_adjacency(),
            max_walk: 64 + 8 * ((n as f64).sqrt() as usize),
        }
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Edge-plane determinants of `q` against triangle `t`.
    fn edge_dets(&self, t: usize, q: &Vec3) -> [f64; 3] {
        let tri = self.triangles[t];
        let p = tri.map(|v| self.positions[v]);
        [
            p[0].dot(&p[1].cross(q)),
            p[1].dot(&p[2].cross(q)),
            p[2].dot(&p[0].cross(q)),
        ]
    }

    fn contains(&self, t: usize, q: &Vec3) -> bool {
        let p = self.triangles[t].map(|v| self.positions[v]);
        let scale = (p[0] - p[1]).norm() + (p[1] - p[2]).norm() + (p[2] - p[0]).norm();
        let tol = -INSIDE_TOL * scale * q.norm();
        self.edge_dets(t, q).iter().all(|&d| d >= tol) && q.dot(&(p[0] + p[1] + p[2])) > 0.0
    }

    /// Barycentric weights of the central projection of `q` onto the plane of `t`.
    pub fn barycentric(&self, t: usize, q: &Vec3) -> [f64; 3] {
        let d = self.edge_dets(t, q);
        // d[1] is the weight of corner 0, etc.
        let w = [d[1].max(0.0), d[2].max(0.0), d[0].max(0.0)];
        let s = w[0] + w[1] + w[2];
        if s > 0.0 {
            [w[0] / s, w[1] / s, w[2] / s]
        } else {
            [1.0 / 3.0; 3]
        }
    }

    /// Walks from `start` towards `q`; `None` if the walk does not settle.
    pub fn walk(&self, q: &Vec3, start: usize) -> Option<Location> {
        let mut t = start.min(self.triangles.len() - 1);
        let mut prev = usize::MAX;
        for _ in 0..self.max_walk {
            let d = self.edge_dets(t, q);
            let p = self.triangles[t].map(|v| self.positions[v]);
            let scale = (p[0] - p[1]).norm() + (p[1] - p[2]).norm() + (p[2] - p[0]).norm();
            let tol = -INSIDE_TOL * scale * q.norm();
            let mut best = None;
            let mut worst = tol;
            for (k, &dk) in d.iter().enumerate() {
                let nb = self.adjacency[t][k];
                if dk < worst && nb != prev {
                    worst = dk;
                    best = Some(nb);
                }
            }
            match best {
                // Either inside, or only the edge back is violated and the walk cycles.
                None => {
                    return self.contains(t, q).then(|| Location {
                        triangle: t,
                        bary: self.barycentric(t, q),
                    });
                }
                Some(nb) if nb == usize::MAX => return None,
                Some(nb) => {
                    prev = t;
                    t = nb;
                }
            }
        }
        None
    }

    /// Scans every triangle; picks the one with the largest minimum edge determinant.
    pub fn brute_force(&self, q: &Vec3) -> Option<Location> {
        let mut best: Option<(usize, f64)> = None;
        for t in 0..self.triangles.len() {
            if !self.contains(t, q) {
                continue;
            }
            let m = self.edge_dets(t, q).into_iter().fold(f64::INFINITY, f64::min);
            if best.map_or(true, |(_, bm)| m > bm) {
                best = Some((t, m));
            }
        }
        best.map(|(t, _)| Location {
            triangle: t,
            bary: self.barycentric(t, q),
        })
    }

    pub fn locate(&self, q: &Vec3, start: usize, query: usize) -> Result<Location> {
        self.walk(q, start)
            .or_else(|| self.brute_force(q))
            .ok_or(Error::LocationFailure { query })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use std::f64::consts::PI;

    fn unit_sphere_map(mesh: &TriMesh) -> Vec<Vec3> {
        mesh.vertices.iter().map(|p| p.normalize()).collect()
    }

    #[test]
    fn octant_solid_angle() {
        let a = Vec3::x();
        let b = Vec3::y();
        let c = Vec3::z();
        assert!((solid_angle(&a, &b, &c) - PI / 2.0).abs() < 1e-15);
        assert!((solid_angle(&a, &c, &b) + PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn icosphere_tiles_the_sphere() {
        let mesh = shapes::icosphere(3);
        let pos = unit_sphere_map(&mesh);
        let total: f64 = solid_angles(&pos, &mesh.triangles).iter().sum();
        assert!((total - 4.0 * PI).abs() < 1e-10);
        assert!(flipped_triangles(&pos, &mesh.triangles).is_empty());
    }

    #[test]
    fn walk_and_vertex_queries() {
        let mesh = shapes::icosphere(2);
        let pos = unit_sphere_map(&mesh);
        let loc = SphereLocator::new(&mesh, &pos);
        for v in 0..pos.len() {
            let l = loc.locate(&pos[v], 0, v).unwrap();
            let tri = mesh.triangles[l.triangle];
            let k = tri.iter().position(|&x| x == v).expect("vertex in its triangle");
            assert!((l.bary[k] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn centroid_query_finds_its_triangle() {
        let mesh = shapes::icosphere(3);
        let pos = unit_sphere_map(&mesh);
        let loc = SphereLocator::new(&mesh, &pos);
        for t in (0..mesh.num_triangles()).step_by(37) {
            let c = (pos[mesh.triangles[t][0]] + pos[mesh.triangles[t][1]] + pos[mesh.triangles[t][2]]).normalize();
            let l = loc.walk(&c, 0).unwrap();
            assert_eq!(l.triangle, t);
            for b in l.bary {
                assert!((b - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }
}
