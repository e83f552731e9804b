//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use hexcube::area_flow::vertex_gradients;
use hexcube::hex::HexCorners;
use hexcube::mesh::Vec3;
use hexcube::shapes;
use hexcube::TriMesh;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Generalized winding number of a closed triangle mesh around `q`.
pub fn winding_number(mesh: &TriMesh, q: &Vec3) -> f64 {
    let mut total = 0.0;
    for t in &mesh.triangles {
        let a = mesh.vertices[t[0]] - q;
        let b = mesh.vertices[t[1]] - q;
        let c = mesh.vertices[t[2]] - q;
        let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
        let num = a.dot(&b.cross(&c));
        let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
        total += 2.0 * num.atan2(den);
    }
    total / (4.0 * std::f64::consts::PI)
}

const CORNERS: [[f64; 3]; 8] = [
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [1.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 0.0, 1.0],
    [1.0, 1.0, 1.0],
    [0.0, 1.0, 1.0],
];

/// Trilinear point and partial derivatives, written out independently.
pub fn eval(c: &HexCorners, x: [f64; 3]) -> (Vec3, [Vec3; 3]) {
    let mut p = Vec3::zeros();
    let mut d = [Vec3::zeros(); 3];
    for (k, b) in CORNERS.iter().enumerate() {
        let w: Vec<f64> = (0..3).map(|a| if b[a] == 1.0 { x[a] } else { 1.0 - x[a] }).collect();
        let s: Vec<f64> = (0..3).map(|a| if b[a] == 1.0 { 1.0 } else { -1.0 }).collect();
        p += c[k] * (w[0] * w[1] * w[2]);
        d[0] += c[k] * (s[0] * w[1] * w[2]);
        d[1] += c[k] * (w[0] * s[1] * w[2]);
        d[2] += c[k] * (w[0] * w[1] * s[2]);
    }
    (p, d)
}

/// Volume as a third of the flux of `x` through the six bilinear faces,
/// integrated with a 3-point Gauss rule, which is exact for these integrands.
pub fn divergence_volume(c: &HexCorners) -> f64 {
    let g = [(0.5 - 0.15f64.sqrt(), 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + 0.15f64.sqrt(), 5.0 / 18.0)];
    let mut flux = 0.0;
    for axis in 0..3 {
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        for (side, sign) in [(0.0, -1.0), (1.0, 1.0)] {
            for &(s, ws) in &g {
                for &(t, wt) in &g {
                    let mut x = [0.0; 3];
                    x[axis] = side;
                    x[a] = s;
                    x[b] = t;
                    let (p, d) = eval(c, x);
                    flux += sign * ws * wt * p.dot(&d[a].cross(&d[b]));
                }
            }
        }
    }
    flux / 3.0
}

pub fn perturbed_hex(rng: &mut ChaCha8Rng, amount: f64) -> HexCorners {
    CORNERS.map(|b| {
        Vec3::new(
            b[0] + rng.gen_range(-amount..amount),
            b[1] + rng.gen_range(-amount..amount),
            b[2] + rng.gen_range(-amount..amount),
        )
    })
}

/// Unit icosphere with its vertices jittered along the sphere.
pub fn jittered_sphere(rng: &mut ChaCha8Rng, levels: usize) -> (TriMesh, Vec<Vec3>) {
    let mesh = shapes::icosphere(levels);
    let edge = (mesh.vertices[mesh.triangles[0][0]] - mesh.vertices[mesh.triangles[0][1]]).norm();
    let pos = mesh
        .vertices
        .iter()
        .map(|p| {
            let d = Vec3::new(rng.gen(), rng.gen(), rng.gen()) - Vec3::repeat(0.5);
            (p + d * 0.3 * edge).normalize()
        })
        .collect();
    (mesh, pos)
}

pub fn random_direction(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if v.norm() > 1e-3 && v.norm() <= 1.0 {
            return v.normalize();
        }
    }
}

/// Relative RMS gap between the discrete vertex gradient of a smooth
/// function on an icosphere and central differences of its ambient
/// extension, projected onto the tangent plane.
pub fn sphere_gradient_rms(levels: usize) -> f64 {
    let mesh = shapes::icosphere(levels);
    let f = |p: &Vec3| p.x * p.x + p.y * p.z + (2.0 * p.z).sin();
    let values: Vec<f64> = mesh.vertices.iter().map(f).collect();
    let grads = vertex_gradients(&mesh.vertices, &mesh.triangles, &values);
    let step = 1e-5;
    let mut err = 0.0;
    let mut norm = 0.0;
    for (p, g) in mesh.vertices.iter().zip(&grads) {
        let mut fd = Vec3::zeros();
        for a in 0..3 {
            let mut e = Vec3::zeros();
            e[a] = step;
            fd[a] = (f(&(p + e)) - f(&(p - e))) / (2.0 * step);
        }
        let n = p.normalize();
        let tangential = fd - n * fd.dot(&n);
        err += (g - tangential).norm_squared();
        norm += tangential.norm_squared();
    }
    (err / norm).sqrt()
}
