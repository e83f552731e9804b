//! Conformal map of a closed genus-zero shell onto the unit sphere: a
//! cotangent Laplace solve with a pole at a punctured triangle, followed by
//! inverse stereographic projection.

use nalgebra::{Matrix3, Vector2};

use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, norm, CgOptions, CsrMatrix};
use crate::mesh::{TriMesh, Vec3};
use crate::sphere::{solid_angles, SphereMap};

const MAX_COT: f64 = 1e8;
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

/// The linear systems `D x = a` and `D y = b`.
#[derive(Debug, Clone)]
pub struct CotangentSystem {
    pub d: CsrMatrix,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Corners `A, B, C` of the punctured triangle.
    pub corners: [usize; 3],
    pub puncture: usize,
}

/// Triangle closest to `hint` by centroid distance, or the triangle with the
/// highest centroid when there is no hint. Ties go to the lowest index.
pub fn select_puncture_triangle(mesh: &TriMesh, hint: Option<Vec3>) -> usize {
    let mut best = 0;
    let mut best_score = f64::INFINITY;
    for t in 0..mesh.num_triangles() {
        let c = mesh.triangle_centroid(t);
        let score = match hint {
            Some(h) => (c - h).norm_squared(),
            None => -c.z,
        };
        if score < best_score {
            best = t;
            best_score = score;
        }
    }
    best
}

/// Cotangent of the angle at `r` in the triangle `(p, q, r)`.
fn cot_at(p: &Vec3, q: &Vec3, r: &Vec3) -> Result<f64> {
    let u = p - r;
    let v = q - r;
    let cross = u.cross(&v).norm();
    let cot = u.dot(&v) / cross;
    if !(cot.abs() <= MAX_COT) {
        return Err(Error::NumericalDegeneracy(format!(
            "cotangent {cot:e} from a near-zero angle"
        )));
    }
    Ok(cot)
}

/// Cotangent-weight matrix over the full mesh with rows summing to zero.
pub fn cotangent_matrix(positions: &[Vec3], triangles: &[[usize; 3]]) -> Result<CsrMatrix> {
    let n = positions.len();
    let mut offdiag: Vec<(usize, usize, f64)> = Vec::with_capacity(6 * triangles.len());
    for tri in triangles {
        for k in 0..3 {
            let (p, q, r) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
            let w = -0.5 * cot_at(&positions[p], &positions[q], &positions[r])?;
            offdiag.push((p, q, w));
            offdiag.push((q, p, w));
        }
    }
    // Sum off-diagonals first so each row's diagonal is the exact negated sum.
    let off = CsrMatrix::from_triplets(n, offdiag);
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(off.nnz() + n);
    for i in 0..n {
        let mut s = 0.0;
        for (j, v) in off.row(i) {
            triplets.push((i, j, v));
            s += v;
        }
        triplets.push((i, i, -s));
    }
    Ok(CsrMatrix::from_triplets(n, triplets))
}

pub fn build_cotangent_system(mesh: &TriMesh, puncture: usize) -> Result<CotangentSystem> {
    let n = mesh.num_vertices();
    if n <= 4 {
        return Err(Error::Topology(format!("shell has only {n} vertices")));
    }
    let d = cotangent_matrix(&mesh.vertices, &mesh.triangles)?;
    let [ia, ib, ic] = mesh.triangles[puncture];
    let (pa, pb, pc) = (mesh.vertices[ia], mesh.vertices[ib], mesh.vertices[ic]);
    let ab = pb - pa;
    let theta = ab.dot(&(pc - pa)) / ab.norm_squared();
    let e = pa + ab * theta;
    let lab = ab.norm();
    let lce = (pc - e).norm();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    a[ia] = -1.0 / lab;
    a[ib] = 1.0 / lab;
    b[ia] = (1.0 - theta) / lce;
    b[ib] = theta / lce;
    b[ic] = -1.0 / lce;
    Ok(CotangentSystem {
        d,
        a,
        b,
        corners: [ia, ib, ic],
        puncture,
    })
}

/// Relative residual `||D x - rhs|| / ||rhs||` (absolute when `rhs = 0`).
pub fn relative_residual(d: &CsrMatrix, x: &[f64], rhs: &[f64]) -> f64 {
    let r: Vec<f64> = d.mul_vec(x).iter().zip(rhs).map(|(a, b)| a - b).collect();
    let scale = norm(rhs);
    if scale > 0.0 {
        norm(&r) / scale
    } else {
        norm(&r)
    }
}

/// Solves `D u = rhs` with corner `C` pinned to zero.
fn solve_pinned(sys: &CotangentSystem, rhs: &[f64]) -> Result<Vec<f64>> {
    let pin = sys.corners[2];
    let reduced = sys.d.without(pin);
    let r: Vec<f64> = rhs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != pin)
        .map(|(_, &v)| v)
        .collect();
    let opts = CgOptions {
        tolerance: 1e-10,
        max_iterations: 50 * sys.d.n + 1000,
        project_constant: false,
    };
    let (x, stats) = conjugate_gradient(&reduced, &r, &opts)?;
    let mut full = Vec::with_capacity(sys.d.n);
    full.extend_from_slice(&x[..pin]);
    full.push(0.0);
    full.extend_from_slice(&x[pin..]);
    let res = relative_residual(&sys.d, &full, rhs);
    if !(res <= RESIDUAL_TOLERANCE) {
        return Err(Error::SolverFailure {
            residual: res,
            iterations: stats.iterations,
        });
    }
    Ok(full)
}

/// Planar coordinates `(x_P, y_P)` of every vertex.
pub fn solve_planar_coordinates(sys: &CotangentSystem) -> Result<Vec<Vector2<f64>>> {
    let x = solve_pinned(sys, &sys.a)?;
    let y = solve_pinned(sys, &sys.b)?;
    Ok(x.into_iter().zip(y).map(|(x, y)| Vector2::new(x, y)).collect())
}

pub fn inverse_stereographic_point(p: &Vector2<f64>) -> Vec3 {
    let r2 = p.norm_squared();
    if !r2.is_finite() {
        return Vec3::z();
    }
    let s = 1.0 + r2;
    Vec3::new(2.0 * p.x / s, 2.0 * p.y / s, 2.0 * r2 / s - 1.0).normalize()
}

pub fn inverse_stereographic(planar: &[Vector2<f64>]) -> Vec<Vec3> {
    planar.iter().map(inverse_stereographic_point).collect()
}

/// Translation and scale of the plane (Möbius maps fixing the north pole)
/// chosen so the `weights`-weighted centroid of the sphere image sits at the
/// origin. Returns the normalized planar coordinates.
pub fn center_planar(planar: &[Vector2<f64>], weights: &[f64]) -> Vec<Vector2<f64>> {
    let total: f64 = weights.iter().sum();
    let apply = |params: &[f64; 3]| -> Vec<Vector2<f64>> {
        let c = Vector2::new(params[0], params[1]);
        let s = params[2].exp();
        planar.iter().map(|p| (p - c) * s).collect()
    };
    let residual = |params: &[f64; 3]| -> Vec3 {
        apply(params)
            .iter()
            .zip(weights)
            .map(|(p, w)| inverse_stereographic_point(p) * *w)
            .sum::<Vec3>()
            / total
    };

    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let cx = median(planar.iter().map(|p| p.x).collect());
    let cy = median(planar.iter().map(|p| p.y).collect());
    let rad = median(planar.iter().map(|p| (p - Vector2::new(cx, cy)).norm()).collect());
    let mut params = [cx, cy, -(rad.max(f64::MIN_POSITIVE)).ln()];
    let mut f = residual(&params);

    for _ in 0..100 {
        if f.norm() < 1e-12 {
            break;
        }
        // Finite-difference Jacobian, step relative to the current scale.
        let scale = (-params[2]).exp();
        let steps = [1e-7 * scale, 1e-7 * scale, 1e-7];
        let mut jac = Matrix3::zeros();
        for k in 0..3 {
            let mut q = params;
            q[k] += steps[k];
            let fk = residual(&q);
            jac.set_column(k, &((fk - f) / steps[k]));
        }
        let Some(delta) = jac.lu().solve(&(-f)) else {
            break;
        };
        let mut lambda = 1.0;
        let mut improved = false;
        while lambda > 1e-4 {
            let q = [
                params[0] + lambda * delta[0],
                params[1] + lambda * delta[1],
                params[2] + lambda * delta[2],
            ];
            let fq = residual(&q);
            if fq.norm() < f.norm() {
                params = q;
                f = fq;
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    apply(&params)
}

/// Source-area weight of each vertex (a third of its incident triangle areas).
pub fn vertex_areas(mesh: &TriMesh) -> Vec<f64> {
    let mut w = vec![0.0; mesh.num_vertices()];
    for t in 0..mesh.num_triangles() {
        let a = mesh.triangle_area(t) / 3.0;
        for v in mesh.triangles[t] {
            w[v] += a;
        }
    }
    w
}

/// Full conformal map of `mesh` to the sphere, punctured at the triangle
/// nearest `hint`. The puncture's image surrounds the north pole.
pub fn conformal_to_sphere(mesh: &TriMesh, hint: Option<Vec3>) -> Result<SphereMap> {
    let puncture = select_puncture_triangle(mesh, hint);
    let sys = build_cotangent_system(mesh, puncture)?;
    let mut planar = solve_planar_coordinates(&sys)?;
    planar = center_planar(&planar, &vertex_areas(mesh));
    let mut positions = inverse_stereographic(&planar);
    if solid_angles(&positions, &mesh.triangles).iter().sum::<f64>() < 0.0 {
        for p in &mut positions {
            p.y = -p.y;
        }
    }
    let map = SphereMap::new(mesh.clone(), positions, puncture);
    let flipped = map.flipped_triangles();
    if !flipped.is_empty() {
        return Err(Error::FlipDetected(format!(
            "conformal map flips {} triangle(s), first {}",
            flipped.len(),
            flipped[0]
        )));
    }
    Ok(map)
}

/// Point across the area centroid from triangle `t`.
pub fn opposite_point(mesh: &TriMesh, t: usize) -> Vec3 {
    let w = vertex_areas(mesh);
    let total: f64 = w.iter().sum();
    let centroid = mesh.vertices.iter().zip(&w).map(|(p, w)| p * *w).sum::<Vec3>() / total;
    centroid * 2.0 - mesh.triangle_centroid(t)
}

/// Combines two sphere maps of one mesh, each least accurate near its own
/// puncture: `second` takes over smoothly around the image of `first`'s
/// puncture. Returns `first` unchanged if the blend would flip a triangle.
pub fn blend_punctured_maps(first: &SphereMap, second: &SphereMap) -> SphereMap {
    let pole = first.corners(first.puncture).iter().sum::<Vec3>().normalize();
    let smoothstep = |x: f64| {
        let t = x.clamp(0.0, 1.0);
        t * t * (3.0 - 2.0 * t)
    };
    let positions = first
        .positions
        .iter()
        .zip(&second.positions)
        .map(|(a, b)| {
            let s = smoothstep(a.dot(&pole) + 0.5);
            (a * (1.0 - s) + b * s).normalize()
        })
        .collect();
    let blended = first.with_positions(positions);
    if blended.flipped_triangles().is_empty() {
        blended
    } else {
        first.clone()
    }
}
