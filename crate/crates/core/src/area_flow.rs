//! Moser flow on the sphere: moves the vertices of a sphere map so that every
//! spherical triangle ends up with area proportional to its source triangle.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::conformal::{cotangent_matrix, relative_residual, vertex_areas};
use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, CgOptions};
use crate::mesh::{TriMesh, Vec3};
use crate::sphere::{best_rotation, flipped_triangles, solid_angles, SphereLocator, SphereMap};

pub const DEFAULT_STEPS: usize = 20;
const MAX_RETRIES: usize = 3;
const MIN_IMAGE_AREA: f64 = 1e-14;

/// Area density of the source surface pulled back to the sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereDensity {
    pub per_triangle: Vec<f64>,
    /// Spherical-area weighted average of the incident triangle values.
    pub per_vertex: Vec<f64>,
    /// Factor applied to the raw area ratios to reach a total of `4 pi`.
    pub scale: f64,
}

impl SphereDensity {
    /// Builds a density from per-triangle values on `map` without rescaling.
    pub fn from_triangles(map: &SphereMap, per_triangle: Vec<f64>) -> Self {
        let areas = map.solid_angles();
        let n = map.positions.len();
        let mut num = vec![0.0; n];
        let mut den = vec![0.0; n];
        for (t, tri) in map.source.triangles.iter().enumerate() {
            for &v in tri {
                num[v] += areas[t] * per_triangle[t];
                den[v] += areas[t];
            }
        }
        let per_vertex = num.iter().zip(&den).map(|(a, b)| a / b).collect();
        Self {
            per_triangle,
            per_vertex,
            scale: 1.0,
        }
    }

    /// Population variance of the per-triangle values.
    pub fn variance(&self) -> f64 {
        let n = self.per_triangle.len() as f64;
        let mean = self.per_triangle.iter().sum::<f64>() / n;
        self.per_triangle.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n
    }
}

pub fn compute_area_density(source: &TriMesh, map: &SphereMap) -> Result<SphereDensity> {
    let areas = map.solid_angles();
    let mut raw = Vec::with_capacity(areas.len());
    for (t, &a) in areas.iter().enumerate() {
        if !(a >= MIN_IMAGE_AREA) {
            return Err(Error::DegenerateImage { triangle: t, area: a });
        }
        raw.push(source.triangle_area(t) / a);
    }
    let total: f64 = raw.iter().zip(&areas).map(|(m, a)| m * a).sum();
    let scale = 4.0 * PI / total;
    let mut density = SphereDensity::from_triangles(map, raw.iter().map(|m| m * scale).collect());
    density.scale = scale;
    Ok(density)
}

/// Lumped vertex masses: a third of the incident spherical areas.
pub fn vertex_masses(map: &SphereMap) -> Vec<f64> {
    let areas = map.solid_angles();
    let mut m = vec![0.0; map.positions.len()];
    for (t, tri) in map.source.triangles.iter().enumerate() {
        for &v in tri {
            m[v] += areas[t] / 3.0;
        }
    }
    m
}

/// Solves `Delta Theta = 1 - mu` on the spherical triangulation. The
/// discrete form is `L Theta = M (1 - mu)` with the cotangent Laplacian `L`
/// and lumped masses `M`; `Theta` has zero mass-weighted mean.
pub fn solve_sphere_poisson(map: &SphereMap, density: &SphereDensity) -> Result<Vec<f64>> {
    let mass = vertex_masses(map);
    let total: f64 = mass.iter().sum();
    let mean = mass
        .iter()
        .zip(&density.per_vertex)
        .map(|(m, mu)| m * (1.0 - mu))
        .sum::<f64>()
        / total;
    if !(mean.abs() <= 1e-6) {
        return Err(Error::IncompatibleRhs { mean });
    }
    // The positive semi-definite cotangent matrix is -L.
    let d = cotangent_matrix(&map.positions, &map.source.triangles)?;
    let rhs: Vec<f64> = mass
        .iter()
        .zip(&density.per_vertex)
        .map(|(m, mu)| m * (mu - 1.0))
        .collect();
    let opts = CgOptions {
        tolerance: 1e-11,
        max_iterations: 50 * d.n + 1000,
        project_constant: true,
    };
    let (mut theta, stats) = conjugate_gradient(&d, &rhs, &opts)?;
    let shift = theta.iter().zip(&mass).map(|(t, m)| t * m).sum::<f64>() / total;
    theta.iter_mut().for_each(|t| *t -= shift);
    let res = relative_residual(&d, &theta, &rhs);
    if !(res <= 1e-8) {
        return Err(Error::SolverFailure {
            residual: res,
            iterations: stats.iterations,
        });
    }
    Ok(theta)
}

/// Gradient of the piecewise-linear interpolant of `f` on each flat triangle.
pub fn triangle_gradients(positions: &[Vec3], triangles: &[[usize; 3]], f: &[f64]) -> Vec<Vec3> {
    triangles
        .iter()
        .map(|t| {
            let p = t.map(|v| positions[v]);
            let n = (p[1] - p[0]).cross(&(p[2] - p[0]));
            let a2 = n.norm();
            if a2 == 0.0 {
                return Vec3::zeros();
            }
            let n = n / a2;
            (n.cross(&(p[2] - p[1])) * f[t[0]]
                + n.cross(&(p[0] - p[2])) * f[t[1]]
                + n.cross(&(p[1] - p[0])) * f[t[2]])
                / a2
        })
        .collect()
}

/// Area-weighted vertex average of the triangle gradients, projected onto
/// the tangent plane of the sphere.
pub fn vertex_gradients(positions: &[Vec3], triangles: &[[usize; 3]], f: &[f64]) -> Vec<Vec3> {
    let tg = triangle_gradients(positions, triangles, f);
    let mut acc = vec![Vec3::zeros(); positions.len()];
    let mut w = vec![0.0; positions.len()];
    for (t, tri) in triangles.iter().enumerate() {
        let p = tri.map(|v| positions[v]);
        let a = (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
        for &v in tri {
            acc[v] += tg[t] * a;
            w[v] += a;
        }
    }
    acc.iter()
        .zip(&w)
        .zip(positions)
        .map(|((g, w), p)| {
            let g = g / *w;
            let n = p.normalize();
            g - n * g.dot(&n)
        })
        .collect()
}

/// Velocity field of the flow, sampled on a fixed reference triangulation.
pub struct AreaVelocity<'a> {
    locator: SphereLocator<'a>,
    triangles: &'a [[usize; 3]],
    grad: Vec<Vec3>,
    mu: &'a [f64],
}

impl<'a> AreaVelocity<'a> {
    pub fn new(map: &'a SphereMap, theta: &[f64], density: &'a SphereDensity) -> Self {
        Self {
            locator: SphereLocator::new(&map.source, &map.positions),
            triangles: &map.source.triangles,
            grad: vertex_gradients(&map.positions, &map.source.triangles, theta),
            mu: &density.per_vertex,
        }
    }

    /// `Y_t(p) = -grad Theta / ((1 - t) mu + t)`, tangent at `p`. Also returns
    /// the containing triangle so the next query can start its walk there.
    pub fn eval(&self, p: &Vec3, t: f64, start: usize, query: usize) -> Result<(Vec3, usize)> {
        let loc = self.locator.locate(p, start, query)?;
        let tri = self.triangles[loc.triangle];
        let mut g = Vec3::zeros();
        let mut mu = 0.0;
        for k in 0..3 {
            g += self.grad[tri[k]] * loc.bary[k];
            mu += self.mu[tri[k]] * loc.bary[k];
        }
        let n = p.normalize();
        let g = g - n * g.dot(&n);
        Ok((-g / ((1.0 - t) * mu + t), loc.triangle))
    }
}

/// Largest share of the vertices a single local repair may move.
const MAX_REPAIR_FRACTION: f64 = 0.01;

/// Untangles a local collapse: the corners of the `bad` triangles and their
/// neighbours are moved to the normalized mean of their neighbours until no
/// triangle is flipped. `false` if the collapse is too large or persists.
fn repair_flips(pos: &mut [Vec3], mesh: &TriMesh, neighbors: &[Vec<usize>], bad: &[usize]) -> bool {
    let mut region: Vec<usize> = bad.iter().flat_map(|&t| mesh.triangles[t]).collect();
    let ring: Vec<usize> = region.iter().flat_map(|&v| neighbors[v].iter().copied()).collect();
    region.extend(ring);
    region.sort_unstable();
    region.dedup();
    if region.len() as f64 > MAX_REPAIR_FRACTION * pos.len() as f64 {
        return false;
    }
    for _ in 0..20 {
        for &v in &region {
            let mean: Vec3 = neighbors[v].iter().map(|&u| pos[u]).sum();
            if mean.norm() > 0.0 {
                pos[v] = mean.normalize();
            }
        }
        if flipped_triangles(pos, &mesh.triangles).is_empty() {
            return true;
        }
    }
    false
}

/// Explicit Euler over `steps` steps; `None` if a triangle flips. With
/// `repair`, small local collapses are untangled instead.
fn run_flow(
    map: &SphereMap,
    velocity: &AreaVelocity,
    steps: usize,
    repair: bool,
    observe: &mut dyn FnMut(&[Vec3]),
) -> Result<Option<Vec<Vec3>>> {
    let dt = 1.0 / steps as f64;
    let mut pos = map.positions.clone();
    let vt = map.source.vertex_triangles();
    let neighbors = map.source.vertex_neighbors();
    let mut hint: Vec<usize> = vt.iter().map(|ts| ts[0]).collect();
    for step in 0..steps {
        let t = step as f64 * dt;
        let moved: Vec<(Vec3, usize)> = pos
            .par_iter()
            .zip(hint.par_iter())
            .enumerate()
            .map(|(v, (p, &h))| {
                let (y, tri) = velocity.eval(p, t, h, v)?;
                Ok(((p + y * dt).normalize(), tri))
            })
            .collect::<Result<_>>()?;
        for (v, (p, tri)) in moved.into_iter().enumerate() {
            pos[v] = p;
            hint[v] = tri;
        }
        let flipped = flipped_triangles(&pos, &map.source.triangles);
        if !flipped.is_empty() {
            if !(repair && repair_flips(&mut pos, &map.source, &neighbors, &flipped)) {
                return Ok(None);
            }
            log::debug!("area flow step {step}: untangled {} flipped triangle(s)", flipped.len());
            for (v, h) in hint.iter_mut().enumerate() {
                *h = vt[v][0];
            }
        }
        observe(&pos);
    }
    Ok(Some(pos))
}

/// Advects the vertices of `map` through the flow with explicit Euler steps,
/// reprojecting to the sphere after each. A flipped triangle restarts the
/// integration with twice the steps, up to three times; the last attempt
/// untangles small local collapses rather than giving up.
pub fn integrate_area_flow(
    map: &SphereMap,
    theta: &[f64],
    density: &SphereDensity,
    steps: usize,
) -> Result<SphereMap> {
    integrate_area_flow_observed(map, theta, density, steps, &mut |_| {})
}

/// [`integrate_area_flow`] calling `observe` with the positions after every
/// accepted step, restarts included.
pub fn integrate_area_flow_observed(
    map: &SphereMap,
    theta: &[f64],
    density: &SphereDensity,
    steps: usize,
    observe: &mut dyn FnMut(&[Vec3]),
) -> Result<SphereMap> {
    assert!(steps >= 1);
    let velocity = AreaVelocity::new(map, theta, density);
    let mut n = steps;
    for attempt in 0..=MAX_RETRIES {
        if let Some(pos) = run_flow(map, &velocity, n, attempt == MAX_RETRIES, observe)? {
            return Ok(map.with_positions(pos));
        }
        if attempt < MAX_RETRIES {
            log::debug!("area flow flipped a triangle with {n} steps; retrying with {}", 2 * n);
        }
        n *= 2;
    }
    Err(Error::FlipDetected(format!(
        "area flow lost injectivity with {} steps",
        n / 2
    )))
}

/// Rotation of the sphere that best aligns each vertex image with the
/// direction of its source vertex from the source centroid.
pub fn align_to_source(map: &SphereMap) -> SphereMap {
    let w = vertex_areas(&map.source);
    let total: f64 = w.iter().sum();
    let centroid = map
        .source
        .vertices
        .iter()
        .zip(&w)
        .map(|(p, w)| p * *w)
        .sum::<Vec3>()
        / total;
    let dirs: Vec<Vec3> = map
        .source
        .vertices
        .iter()
        .map(|s| {
            let d = s - centroid;
            let len = d.norm();
            if len > 0.0 {
                d / len
            } else {
                Vec3::zeros()
            }
        })
        .collect();
    let r = best_rotation(&map.positions, &dirs, &w);
    map.with_positions(map.positions.iter().map(|p| (r * p).normalize()).collect())
}

/// Densities spanning more than this ratio are flowed in softened passes.
const MAX_DENSITY_RATIO: f64 = 100.0;
const MAX_PASSES: usize = 8;

/// `mu^alpha` rescaled to total `4 pi`, with `alpha` chosen so the result
/// spans at most `max_ratio`. Returns `None` when `mu` is already within it.
pub fn softened_density(map: &SphereMap, density: &SphereDensity, max_ratio: f64) -> Option<SphereDensity> {
    let lo = density.per_triangle.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = density.per_triangle.iter().copied().fold(0.0, f64::max);
    if !(hi / lo > max_ratio) {
        return None;
    }
    let alpha = max_ratio.ln() / (hi / lo).ln();
    let areas = map.solid_angles();
    let raw: Vec<f64> = density.per_triangle.iter().map(|m| m.powf(alpha)).collect();
    let total: f64 = raw.iter().zip(&areas).map(|(m, a)| m * a).sum();
    let scale = 4.0 * PI / total;
    Some(SphereDensity::from_triangles(map, raw.iter().map(|m| m * scale).collect()))
}

/// Density, Poisson solve and flow in one call. A density with an extreme
/// range is first evened out by flows towards softened targets.
pub fn area_correct(map: &SphereMap, steps: usize) -> Result<SphereMap> {
    let mut cur = map.clone();
    for pass in 0..MAX_PASSES {
        let density = compute_area_density(&cur.source, &cur)?;
        let Some(soft) = softened_density(&cur, &density, MAX_DENSITY_RATIO) else {
            let theta = solve_sphere_poisson(&cur, &density)?;
            return Ok(relax_collapsed(integrate_area_flow(&cur, &theta, &density, steps)?));
        };
        log::debug!("area flow pass {pass}: softened density");
        let theta = solve_sphere_poisson(&cur, &soft)?;
        cur = integrate_area_flow(&cur, &theta, &soft, steps)?;
    }
    let density = compute_area_density(&cur.source, &cur)?;
    let theta = solve_sphere_poisson(&cur, &density)?;
    Ok(relax_collapsed(integrate_area_flow(&cur, &theta, &density, steps)?))
}

/// Triangles left this many times too small after a flow get relaxed.
const COLLAPSE_DENSITY: f64 = 10.0;

/// Relaxes the neighbourhoods of nearly collapsed triangles; the map is kept
/// as is when that would flip a triangle or raise the density variance.
fn relax_collapsed(map: SphereMap) -> SphereMap {
    let Ok(density) = compute_area_density(&map.source, &map) else {
        return map;
    };
    let bad: Vec<usize> = (0..density.per_triangle.len())
        .filter(|&t| density.per_triangle[t] > COLLAPSE_DENSITY)
        .collect();
    if bad.is_empty() {
        return map;
    }
    let mut pos = map.positions.clone();
    if !repair_flips(&mut pos, &map.source, &map.source.vertex_neighbors(), &bad) {
        return map;
    }
    let relaxed = map.with_positions(pos);
    match compute_area_density(&relaxed.source, &relaxed) {
        Ok(d) if d.variance() < density.variance() => relaxed,
        _ => map,
    }
}

/// Total signed spherical area of the map.
pub fn total_area(positions: &[Vec3], triangles: &[[usize; 3]]) -> f64 {
    solid_angles(positions, triangles).iter().sum()
}
