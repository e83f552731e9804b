//! Synthetic closed surfaces used by the tests, the acceptance suite and the
//! `hexcube shape` helper command.

use std::collections::HashMap;

use crate::cube::box_surface;
use crate::mesh::{TriMesh, Vec3};

/// Regular octahedron with vertices on the unit axes.
/// Vertex order: +x, -x, +y, -y, +z, -z.
pub fn octahedron() -> TriMesh {
    let v = vec![
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(-1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, -1.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
        Vec3::new(0.0, 0.0, -1.0),
    ];
    let t = vec![
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
    ];
    TriMesh::new_unchecked(v, t)
}

pub fn icosahedron() -> TriMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ];
    let v = raw
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
        .collect();
    let t = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    TriMesh::new_unchecked(v, t)
}

/// One 1-to-4 midpoint subdivision; new vertices are appended after the old ones.
pub fn subdivide(mesh: &TriMesh) -> TriMesh {
    let mut vertices = mesh.vertices.clone();
    let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
    let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3>| {
        let key = (a.min(b), a.max(b));
        *mid.entry(key).or_insert_with(|| {
            vertices.push((vertices[a] + vertices[b]) * 0.5);
            vertices.len() - 1
        })
    };
    let mut triangles = Vec::with_capacity(mesh.triangles.len() * 4);
    for &[a, b, c] in &mesh.triangles {
        let ab = midpoint(a, b, &mut vertices);
        let bc = midpoint(b, c, &mut vertices);
        let ca = midpoint(c, a, &mut vertices);
        triangles.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
    }
    TriMesh::new_unchecked(vertices, triangles)
}

/// Unit icosphere after `levels` subdivisions (vertices re-projected to the sphere).
pub fn icosphere(levels: usize) -> TriMesh {
    let mut m = icosahedron();
    for _ in 0..levels {
        m = subdivide(&m);
        for p in &mut m.vertices {
            *p = p.normalize();
        }
    }
    m
}

/// Axis-aligned ellipsoid with semi-axes `(a, b, c)` centred at the origin.
pub fn ellipsoid(a: f64, b: f64, c: f64, levels: usize) -> TriMesh {
    let mut m = icosphere(levels);
    for p in &mut m.vertices {
        *p = Vec3::new(p.x * a, p.y * b, p.z * c);
    }
    m
}

/// Star-shaped surface given by a radial function over unit directions.
pub fn radial_surface(levels: usize, radius: impl Fn(&Vec3) -> f64) -> TriMesh {
    let mut m = icosphere(levels);
    for p in &mut m.vertices {
        *p *= radius(p);
    }
    m
}

/// Two balls of radius `r` centred at `(+-d/2, 0, 0)`, fused with a smooth
/// maximum of their radial functions so the waist has no crease.
pub fn peanut(r: f64, d: f64, levels: usize) -> TriMesh {
    assert!(d / 2.0 < r, "ball centres must lie inside both balls");
    let exit = |u: &Vec3, cx: f64| {
        let uc = u.x * cx;
        uc + (uc * uc - cx * cx + r * r).sqrt()
    };
    let p = 6.0;
    radial_surface(levels, |u| {
        let r1 = exit(u, d / 2.0);
        let r2 = exit(u, -d / 2.0);
        (r1.powf(p) + r2.powf(p)).powf(1.0 / p) * 0.5f64.powf(1.0 / p)
    })
}

/// Surface of the box `[lo, hi]` with `n` quads per edge, two triangles per quad.
pub fn box_mesh(lo: Vec3, hi: Vec3, n: usize) -> TriMesh {
    let m = n + 1;
    let (ids, tris) = box_surface([0; 3], [n; 3], m);
    let vertices = ids
        .iter()
        .map(|&g| {
            let (i, j, k) = (g % m, (g / m) % m, g / (m * m));
            let t = Vec3::new(i as f64, j as f64, k as f64) / n as f64;
            lo + (hi - lo).component_mul(&t)
        })
        .collect();
    TriMesh::new_unchecked(vertices, tris)
}

/// Torus around the z axis; genus one, used to exercise the topology guard.
pub fn torus(major: f64, minor: f64, nu: usize, nv: usize) -> TriMesh {
    let mut v = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = i as f64 / nu as f64 * std::f64::consts::TAU;
        for j in 0..nv {
            let w = j as f64 / nv as f64 * std::f64::consts::TAU;
            let r = major + minor * w.cos();
            v.push(Vec3::new(r * u.cos(), r * u.sin(), minor * w.sin()));
        }
    }
    let id = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut t = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            t.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            t.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    TriMesh::new_unchecked(v, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts_follow_subdivision_recurrence() {
        // V_{n+1} = V_n + E_n, F_{n+1} = 4 F_n, E_n = 3 F_n / 2.
        let (mut v, mut f) = (12usize, 20usize);
        for level in 0..=3 {
            let m = icosphere(level);
            assert_eq!(m.num_vertices(), v);
            assert_eq!(m.num_triangles(), f);
            let e = 3 * f / 2;
            v += e;
            f *= 4;
        }
        let m = icosphere(3);
        assert_eq!((m.num_vertices(), m.num_triangles()), (642, 1280));
        m.validate().unwrap();
    }

    #[test]
    fn generated_shapes_are_valid_and_outward() {
        for m in [
            octahedron(),
            icosahedron(),
            ellipsoid(2.0, 1.0, 1.0, 3),
            peanut(1.0, 1.2, 3),
            box_mesh(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0), 4),
        ] {
            m.validate().unwrap();
            assert!(m.signed_volume() > 0.0);
        }
        let b = box_mesh(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0), 4);
        assert!((b.signed_volume() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn peanut_has_a_waist() {
        let m = peanut(1.0, 1.2, 4);
        let (lo, hi) = m.bbox();
        assert!(hi.x - lo.x > 2.4);
        let waist = m
            .vertices
            .iter()
            .filter(|p| p.x.abs() < 0.05)
            .map(|p| (p.y * p.y + p.z * p.z).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(waist < 0.9, "waist radius {waist}");
    }
}
