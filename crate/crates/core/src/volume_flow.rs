//! Volume-preserving correction of a lattice map by a Moser flow on the cube.
//!
//! Fields live on the cube lattice: scalars per cell, potentials per cell
//! centre, fluxes per interior face and velocities per node.

use log::{debug, warn};
use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::assembly::VolumetricMap;
use crate::cube::CubeComplex;
use crate::error::{Error, Result};
use crate::hex::{self, HexCorners};
use crate::linalg::{conjugate_gradient, norm, CgOptions, CsrMatrix};
use crate::mesh::Vec3;
use crate::quality::normalized_variance;

pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

/// Per-cell Jacobian of the map (image volume times model density over cube
/// cell volume), scaled to mean 1.
pub fn jacobian_field(map: &VolumetricMap, density: Option<&[f64]>) -> Result<Vec<f64>> {
    let mesh = map.hex_mesh();
    let mut vols = mesh.volumes();
    let inverted: Vec<usize> = (0..vols.len()).filter(|&c| !(vols[c] > 0.0)).collect();
    if !inverted.is_empty() {
        return Err(Error::InvertedCell { cells: inverted });
    }
    if let Some(mu) = density {
        for (v, m) in vols.iter_mut().zip(mu) {
            *v *= m;
        }
    }
    let mean = vols.iter().sum::<f64>() / vols.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::ZeroMeanVolume);
    }
    Ok(vols.into_iter().map(|v| v / mean).collect())
}

/// Cell indexing helpers for a lattice with `c` cells per side.
#[derive(Debug, Clone, Copy)]
struct Cells {
    c: usize,
}

impl Cells {
    fn id(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.c * (j + self.c * k)
    }

    fn coords(&self, id: usize) -> [usize; 3] {
        [id % self.c, (id / self.c) % self.c, id / (self.c * self.c)]
    }

    /// Neighbour one step along `+axis`, if any.
    fn next(&self, id: usize, axis: usize) -> Option<usize> {
        let mut p = self.coords(id);
        p[axis] += 1;
        (p[axis] < self.c).then(|| self.id(p[0], p[1], p[2]))
    }

    fn prev(&self, id: usize, axis: usize) -> Option<usize> {
        let mut p = self.coords(id);
        if p[axis] == 0 {
            return None;
        }
        p[axis] -= 1;
        Some(self.id(p[0], p[1], p[2]))
    }
}

/// Negative 7-point Laplacian on cell centres with zero-flux boundary
/// (symmetric, positive semi-definite, zero row sums).
pub fn cell_laplacian(cells_per_side: usize, h: f64) -> CsrMatrix {
    let cells = Cells { c: cells_per_side };
    let n = cells_per_side.pow(3);
    let w = 1.0 / (h * h);
    let mut t = Vec::with_capacity(7 * n);
    for id in 0..n {
        for axis in 0..3 {
            if let Some(nb) = cells.next(id, axis) {
                t.push((id, id, w));
                t.push((nb, nb, w));
                t.push((id, nb, -w));
                t.push((nb, id, -w));
            }
        }
    }
    CsrMatrix::from_triplets(n, t)
}

/// Gradient on interior faces: `g[axis][cell]` is the difference quotient
/// towards the `+axis` neighbour, zero on the boundary.
pub fn face_gradient(cells_per_side: usize, h: f64, p: &[f64]) -> [Vec<f64>; 3] {
    let cells = Cells { c: cells_per_side };
    let mut g = [vec![0.0; p.len()], vec![0.0; p.len()], vec![0.0; p.len()]];
    for (axis, ga) in g.iter_mut().enumerate() {
        for id in 0..p.len() {
            if let Some(nb) = cells.next(id, axis) {
                ga[id] = (p[nb] - p[id]) / h;
            }
        }
    }
    g
}

/// Divergence of a face field, per cell.
pub fn face_divergence(cells_per_side: usize, h: f64, g: &[Vec<f64>; 3]) -> Vec<f64> {
    let cells = Cells { c: cells_per_side };
    let n = g[0].len();
    (0..n)
        .map(|id| {
            (0..3)
                .map(|axis| {
                    let out = g[axis][id];
                    let inn = cells.prev(id, axis).map_or(0.0, |p| g[axis][p]);
                    (out - inn) / h
                })
                .sum()
        })
        .collect()
}

/// Potential and velocity solving `div v = rhs` with `v = grad p`.
#[derive(Debug, Clone)]
pub struct DivergencePotential {
    pub potential: Vec<f64>,
    pub faces: [Vec<f64>; 3],
    /// Face gradients averaged to the nodes; tangential on the cube surface.
    pub velocity: Vec<Vec3>,
    pub relative_residual: f64,
}

pub fn solve_divergence_potential(cube: &CubeComplex, rhs: &[f64]) -> Result<DivergencePotential> {
    let c = cube.side() - 1;
    let h = cube.spacing();
    assert_eq!(rhs.len(), c * c * c);
    let mean = rhs.iter().sum::<f64>() / rhs.len() as f64;
    if mean.abs() > 1e-9 {
        return Err(Error::IncompatibleRhs { mean });
    }
    let n = rhs.len();
    let rhs: Vec<f64> = rhs.iter().map(|r| r - mean).collect();
    if norm(&rhs) <= 1e-13 * (n as f64).sqrt() {
        // Round-off level imbalance: nothing to correct.
        return Ok(DivergencePotential {
            potential: vec![0.0; n],
            faces: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            velocity: vec![Vec3::zeros(); cube.nodes.len()],
            relative_residual: 0.0,
        });
    }
    let a = cell_laplacian(c, h);
    let b: Vec<f64> = rhs.iter().map(|r| -r).collect();
    let opts = CgOptions {
        tolerance: RESIDUAL_TOLERANCE * 0.01,
        project_constant: true,
        ..CgOptions::default()
    };
    let (p, _) = conjugate_gradient(&a, &b, &opts)?;
    let faces = face_gradient(c, h, &p);
    let div = face_divergence(c, h, &faces);
    let rn = norm(&rhs);
    let res: Vec<f64> = div.iter().zip(&rhs).map(|(d, r)| d - r).collect();
    let relative_residual = if rn > 0.0 { norm(&res) / rn } else { norm(&res) };
    if !(relative_residual <= RESIDUAL_TOLERANCE) {
        return Err(Error::SolverFailure {
            residual: relative_residual,
            iterations: 0,
        });
    }
    let velocity = node_velocity(cube, &faces);
    Ok(DivergencePotential {
        potential: p,
        faces,
        velocity,
        relative_residual,
    })
}

/// Averages each axis' face values onto the nodes of those faces. On the
/// surface only the tangential components survive, so surface nodes slide
/// within their cube faces and corners stay put.
pub fn node_velocity(cube: &CubeComplex, faces: &[Vec<f64>; 3]) -> Vec<Vec3> {
    let m = cube.side();
    let cells = Cells { c: m - 1 };
    (0..cube.nodes.len())
        .map(|id| {
            let n = cube.node_coords(id);
            let mut v = Vec3::zeros();
            for axis in 0..3 {
                if n[axis] == 0 || n[axis] == m - 1 {
                    continue;
                }
                // Faces normal to `axis` through this node's plane sit between
                // cells n[axis]-1 and n[axis]; the other two indices take n-1, n.
                let (b, d) = ((axis + 1) % 3, (axis + 2) % 3);
                let around = |k: usize| [k.checked_sub(1), (k < m - 1).then_some(k)];
                let mut sum = 0.0;
                let mut count = 0.0;
                for db in around(n[b]).into_iter().flatten() {
                    for dd in around(n[d]).into_iter().flatten() {
                        let mut p = [0; 3];
                        p[axis] = n[axis] - 1;
                        p[b] = db;
                        p[d] = dd;
                        sum += faces[axis][cells.id(p[0], p[1], p[2])];
                        count += 1.0;
                    }
                }
                v[axis] = sum / count;
            }
            v
        })
        .collect()
}

/// Cell values averaged onto the nodes of the incident cells.
pub fn node_average(cube: &CubeComplex, cell_values: &[f64]) -> Vec<f64> {
    let mut sum = vec![0.0; cube.nodes.len()];
    let mut count = vec![0.0; cube.nodes.len()];
    for (hex, &v) in cube.hexes.iter().zip(cell_values) {
        for &n in hex {
            sum[n] += v;
            count[n] += 1.0;
        }
    }
    sum.iter().zip(&count).map(|(s, c)| s / c).collect()
}

/// `X_t = -v / ((1 - t) J + t)` at every node.
pub fn moser_velocity(v: &[Vec3], jac: &[f64], t: f64) -> Vec<Vec3> {
    v.iter().zip(jac).map(|(v, j)| -v / ((1.0 - t) * j + t)).collect()
}

/// Cell and parametric coordinates of a cube point.
fn cube_cell(cube: &CubeComplex, p: &Vec3) -> (usize, [f64; 3]) {
    let c = cube.side() - 1;
    let h = cube.spacing();
    let mut idx = [0; 3];
    let mut uvw = [0.0; 3];
    for a in 0..3 {
        let s = (p[a] / h).clamp(0.0, c as f64);
        let i = (s.floor() as usize).min(c - 1);
        idx[a] = i;
        uvw[a] = s - i as f64;
    }
    (idx[0] + c * (idx[1] + c * idx[2]), uvw)
}

fn trilinear_weights(uvw: [f64; 3]) -> [f64; 8] {
    hex::CORNER_BITS.map(|b| {
        (0..3)
            .map(|a| if b[a] == 1 { uvw[a] } else { 1.0 - uvw[a] })
            .product()
    })
}

/// Trilinear interpolation of a node vector field at a cube point.
pub fn sample_nodes<T>(cube: &CubeComplex, values: &[T], p: &Vec3) -> T
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::iter::Sum<T>,
{
    let (cell, uvw) = cube_cell(cube, p);
    let w = trilinear_weights(uvw);
    let hex = cube.hexes[cell];
    (0..8).map(|k| values[hex[k]] * w[k]).sum()
}

/// Parametric coordinates of `x` in the trilinear cell `c`, if inside.
fn invert_trilinear(c: &HexCorners, x: &Vec3) -> Option<[f64; 3]> {
    let scale = (c[6] - c[0]).norm().max(f64::MIN_POSITIVE);
    let mut u = [0.5; 3];
    for _ in 0..50 {
        let r = hex::trilinear(c, u[0], u[1], u[2]) - x;
        if r.norm() <= 1e-12 * scale {
            break;
        }
        let d = hex::trilinear_jacobian(c, u[0], u[1], u[2]);
        let m = Matrix3::from_columns(&d);
        let step = m.lu().solve(&r)?;
        for a in 0..3 {
            u[a] = (u[a] - step[a]).clamp(-0.5, 1.5);
        }
    }
    let r = hex::trilinear(c, u[0], u[1], u[2]) - x;
    let tol = 1e-9;
    (r.norm() <= 1e-9 * scale && u.iter().all(|&t| t >= -tol && t <= 1.0 + tol)).then(|| u.map(|t| t.clamp(0.0, 1.0)))
}

/// For each target point, the cube point that the deformed lattice sends there.
pub fn invert_lattice(cube: &CubeComplex, deformed: &[Vec3], targets: &[Vec3]) -> Result<Vec<Vec3>> {
    let h = cube.spacing();
    let boxes: Vec<(Vec3, Vec3)> = cube
        .hexes
        .iter()
        .map(|hx| {
            let c = hex::gather(deformed, hx);
            let lo = c.iter().fold(Vec3::repeat(f64::INFINITY), |a, p| a.inf(p));
            let hi = c.iter().fold(Vec3::repeat(f64::NEG_INFINITY), |a, p| a.sup(p));
            (lo, hi)
        })
        .collect();
    let pad = 1e-9 * h;
    let cells = cube.side() - 1;
    let found: Vec<Option<Vec3>> = targets
        .par_iter()
        .map(|x| {
            let try_cell = |cell: usize| {
                let (lo, hi) = boxes[cell];
                if (0..3).any(|a| x[a] < lo[a] - pad || x[a] > hi[a] + pad) {
                    return None;
                }
                let u = invert_trilinear(&hex::gather(deformed, &cube.hexes[cell]), x)?;
                let [i, j, k] = [cell % cells, (cell / cells) % cells, cell / (cells * cells)];
                Some(Vec3::new((i as f64 + u[0]) * h, (j as f64 + u[1]) * h, (k as f64 + u[2]) * h))
            };
            let (guess, _) = cube_cell(cube, x);
            try_cell(guess).or_else(|| (0..cube.hexes.len()).find_map(try_cell))
        })
        .collect();
    let missing = found.iter().filter(|f| f.is_none()).count();
    if missing > 0 {
        return Err(Error::InversionFailure { nodes: missing });
    }
    Ok(found.into_iter().map(Option::unwrap).collect())
}

/// Trilinear evaluation of the map at a cube point.
pub fn evaluate_map(map: &VolumetricMap, p: &Vec3) -> Vec3 {
    sample_nodes(&map.cube, &map.images, p)
}

#[derive(Debug, Clone)]
pub struct VolumeFlowOptions {
    /// Euler substeps per flow.
    pub steps: usize,
    /// Flow restarts; each is kept only if it lowers the volume variance.
    pub rounds: usize,
    /// Step-doubling retries after an inverted cell.
    pub retries: usize,
    /// Optional model density per cube cell.
    pub density: Option<Vec<f64>>,
}

impl Default for VolumeFlowOptions {
    fn default() -> Self {
        Self {
            steps: 20,
            rounds: 4,
            retries: 3,
            density: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VolumeFlowResult {
    pub map: VolumetricMap,
    /// Volume variance before the flow and after each accepted round.
    pub variances: Vec<f64>,
    /// Set when a round had to be abandoned because the lattice inverted.
    pub flip_warning: bool,
}

fn has_inverted(cube: &CubeComplex, nodes: &[Vec3]) -> bool {
    cube.hexes
        .par_iter()
        .any(|hx| hex::min_scaled_jacobian(&hex::gather(nodes, hx)) <= 0.0)
}

fn concave_count(cube: &CubeComplex, nodes: &[Vec3]) -> usize {
    cube.hexes
        .iter()
        .filter(|hx| hex::min_scaled_jacobian(&hex::gather(nodes, hx)) <= 0.0)
        .count()
}

/// Flows the lattice nodes for `t` in `[0, 1]`; `None` if a cell inverts.
fn flow_nodes(cube: &CubeComplex, velocity: &[Vec3], jac_nodes: &[f64], steps: usize) -> Option<Vec<Vec3>> {
    let mut g = cube.nodes.clone();
    let dt = 1.0 / steps as f64;
    for s in 0..steps {
        let t = s as f64 * dt;
        g = g
            .par_iter()
            .map(|p| {
                let v: Vec3 = sample_nodes(cube, velocity, p);
                let j: f64 = sample_nodes(cube, jac_nodes, p);
                let q = p - v * (dt / ((1.0 - t) * j + t));
                q.map(|c| c.clamp(0.0, 1.0))
            })
            .collect();
        if has_inverted(cube, &g) {
            return None;
        }
    }
    Some(g)
}

/// One flow: the corrected map `f o g_1^-1`, or `None` if every retry inverted.
fn flow_once(map: &VolumetricMap, opts: &VolumeFlowOptions) -> Result<Option<VolumetricMap>> {
    let cube = &map.cube;
    let jac = jacobian_field(map, opts.density.as_deref())?;
    let rhs: Vec<f64> = jac.iter().map(|j| 1.0 - j).collect();
    let pot = solve_divergence_potential(cube, &rhs)?;
    let jac_nodes = node_average(cube, &jac);
    let mut steps = opts.steps.max(1);
    for attempt in 0..=opts.retries {
        if let Some(g) = flow_nodes(cube, &pot.velocity, &jac_nodes, steps) {
            let pre = invert_lattice(cube, &g, &cube.nodes)?;
            let images = pre.iter().map(|y| evaluate_map(map, y)).collect();
            return Ok(Some(map.with_images(images)));
        }
        debug!("volume flow inverted a cell with {steps} steps (attempt {attempt})");
        steps *= 2;
    }
    Ok(None)
}

/// Repeated Moser flows, each accepted only if it lowers the volume variance
/// without adding concave cells.
pub fn integrate_volume_flow(map: &VolumetricMap, opts: &VolumeFlowOptions) -> Result<VolumeFlowResult> {
    let mut cur = map.clone();
    let var = |m: &VolumetricMap| normalized_variance(&m.hex_mesh().volumes());
    let mut best = var(&cur)?;
    let mut variances = vec![best];
    let mut concave = concave_count(&cur.cube, &cur.images);
    let mut flip_warning = false;
    for round in 0..opts.rounds {
        let Some(next) = flow_once(&cur, opts)? else {
            warn!("volume flow round {round} abandoned: lattice inverted");
            flip_warning = true;
            break;
        };
        let v = var(&next)?;
        let c = concave_count(&next.cube, &next.images);
        debug!("volume flow round {round}: variance {best:e} -> {v:e}, concave {concave} -> {c}");
        if !(v < best) || c > concave {
            break;
        }
        best = v;
        concave = c;
        variances.push(v);
        cur = next;
    }
    Ok(VolumeFlowResult {
        map: cur,
        variances,
        flip_warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::build_cube_shells;

    fn identity(n: usize) -> VolumetricMap {
        let cube = build_cube_shells(n);
        VolumetricMap::new(cube.clone(), cube.nodes.clone())
    }

    #[test]
    fn identity_has_unit_jacobian() {
        let j = jacobian_field(&identity(3), None).unwrap();
        assert!(j.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn scaling_normalizes_away() {
        let m = identity(3);
        let scaled = m.with_images(m.images.iter().map(|p| p * 2.0).collect());
        let j = jacobian_field(&scaled, None).unwrap();
        assert!(j.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn inverted_cells_are_reported() {
        let m = identity(2);
        let mut images = m.images.clone();
        let id = m.cube.node_id(1, 1, 1);
        images[id] = Vec3::new(0.9, 0.9, 0.9);
        assert!(matches!(jacobian_field(&m.with_images(images), None), Err(Error::InvertedCell { .. })));
    }

    #[test]
    fn divergence_of_gradient_is_the_laplacian() {
        let (c, h) = (5, 0.25);
        let p: Vec<f64> = (0..c * c * c).map(|i| ((i * 37 % 11) as f64).sin()).collect();
        let div = face_divergence(c, h, &face_gradient(c, h, &p));
        let lap = cell_laplacian(c, h).mul_vec(&p);
        for (d, l) in div.iter().zip(&lap) {
            assert!((d + l).abs() < 1e-12);
        }
        let a = cell_laplacian(c, h);
        assert_eq!(a.asymmetry(), 0.0);
        assert!(a.max_row_sum() < 1e-12);
    }

    #[test]
    fn zero_rhs_gives_zero_velocity() {
        let cube = build_cube_shells(3);
        let n = (cube.side() - 1).pow(3);
        let pot = solve_divergence_potential(&cube, &vec![0.0; n]).unwrap();
        assert!(pot.velocity.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn incompatible_rhs_is_rejected() {
        let cube = build_cube_shells(2);
        let n = (cube.side() - 1).pow(3);
        assert!(matches!(
            solve_divergence_potential(&cube, &vec![0.01; n]),
            Err(Error::IncompatibleRhs { .. })
        ));
    }

    #[test]
    fn dipole_rhs_is_matched() {
        let cube = build_cube_shells(3);
        let n = (cube.side() - 1).pow(3);
        let mut rhs = vec![0.0; n];
        rhs[cube.cell_id(1, 1, 1)] = 0.5;
        rhs[cube.cell_id(3, 2, 3)] = -0.5;
        let pot = solve_divergence_potential(&cube, &rhs).unwrap();
        let div = face_divergence(n.cbrt_usize(), cube.spacing(), &pot.faces);
        let err: Vec<f64> = div.iter().zip(&rhs).map(|(d, r)| d - r).collect();
        assert!(norm(&err) / norm(&rhs) <= 1e-8);
    }

    trait Cbrt {
        fn cbrt_usize(self) -> usize;
    }
    impl Cbrt for usize {
        fn cbrt_usize(self) -> usize {
            (self as f64).cbrt().round() as usize
        }
    }

    #[test]
    fn moser_velocity_formula() {
        let v = vec![Vec3::new(1.0, -2.0, 0.5)];
        assert_eq!(moser_velocity(&v, &[3.0], 1.0)[0], -v[0]);
        assert_eq!(moser_velocity(&v, &[1.0], 0.3)[0], -v[0]);
        assert_eq!(moser_velocity(&v, &[2.0], 0.0)[0], -v[0] / 2.0);
    }

    #[test]
    fn uniform_map_is_left_alone() {
        let m = identity(3);
        let out = integrate_volume_flow(&m, &VolumeFlowOptions::default()).unwrap();
        assert!(out.map.max_displacement(&m.images) < 1e-12);
    }

    #[test]
    fn identity_lattice_inverts_to_itself() {
        let cube = build_cube_shells(2);
        let pre = invert_lattice(&cube, &cube.nodes, &cube.nodes).unwrap();
        for (a, b) in pre.iter().zip(&cube.nodes) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn flow_evens_out_a_graded_map() {
        let m = identity(4);
        // Stretch x towards 1: cells near x = 1 get larger.
        let images = m.images.iter().map(|p| Vec3::new(p.x * (0.6 + 0.4 * p.x), p.y, p.z)).collect();
        let warped = m.with_images(images);
        let out = integrate_volume_flow(&warped, &VolumeFlowOptions::default()).unwrap();
        let before = out.variances[0];
        let after = *out.variances.last().unwrap();
        assert!(after <= 0.5 * before, "{:?}", out.variances);
    }
}
