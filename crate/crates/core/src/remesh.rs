//! Cleanup of marching-tetrahedra surfaces: collapse of very short edges,
//! edge flips on nearly flat edges, and tangential smoothing that snaps the
//! vertices back onto the level set they came from.

use std::collections::HashSet;

use crate::mesh::{ordered, TriMesh, Vec3};
use crate::voxel::ScalarGrid;

#[derive(Debug, Clone, Copy)]
pub struct RemeshOptions {
    /// Edges shorter than this fraction of the voxel spacing are collapsed.
    pub min_edge: f64,
    /// Edges whose two triangles bend by less than this (degrees) may be flipped.
    pub flip_angle: f64,
    pub smooth_iterations: usize,
    pub smooth_step: f64,
    /// Rough vertex budget; larger surfaces get longer collapse thresholds.
    pub max_vertices: usize,
}

impl Default for RemeshOptions {
    fn default() -> Self {
        Self {
            min_edge: 0.4,
            flip_angle: 20.0,
            smooth_iterations: 6,
            smooth_step: 0.5,
            max_vertices: 12_000,
        }
    }
}

fn normal(p: [Vec3; 3]) -> Vec3 {
    (p[1] - p[0]).cross(&(p[2] - p[0]))
}

/// Collapses edges shorter than `min_len` to their midpoints, in passes over
/// independent sets of edges, skipping collapses that would break the
/// manifold (link condition) or fold a triangle over.
pub fn collapse_short_edges(mesh: &TriMesh, min_len: f64) -> TriMesh {
    let mut pos = mesh.vertices.clone();
    let mut tris = mesh.triangles.clone();
    let mut alive = vec![true; tris.len()];
    let mut vtris: Vec<Vec<usize>> = vec![Vec::new(); pos.len()];
    for (t, tri) in tris.iter().enumerate() {
        for &v in tri {
            vtris[v].push(t);
        }
    }
    let mut removed = vec![false; pos.len()];
    let mut live_vertices = pos.len();
    let area_floor = 1e-10 * min_len * min_len;

    for _pass in 0..20 {
        let mut edges: Vec<(f64, usize, usize)> = Vec::new();
        for (t, tri) in tris.iter().enumerate() {
            if !alive[t] {
                continue;
            }
            for k in 0..3 {
                let (a, b) = ordered(tri[k], tri[(k + 1) % 3]);
                if tri[k] < tri[(k + 1) % 3] {
                    let len = (pos[a] - pos[b]).norm();
                    if len < min_len {
                        edges.push((len, a, b));
                    }
                }
            }
        }
        if edges.is_empty() {
            break;
        }
        edges.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        let mut locked = vec![false; pos.len()];
        let mut collapsed = 0;
        for (_, a, b) in edges {
            if locked[a] || locked[b] || removed[a] || removed[b] || live_vertices <= 6 {
                continue;
            }
            let ring = |v: usize, tris: &Vec<[usize; 3]>| -> HashSet<usize> {
                vtris[v]
                    .iter()
                    .filter(|&&t| alive[t])
                    .flat_map(|&t| tris[t])
                    .filter(|&w| w != v)
                    .collect()
            };
            let na = ring(a, &tris);
            let nb = ring(b, &tris);
            if !na.contains(&b) {
                continue;
            }
            if na.intersection(&nb).count() != 2 {
                continue;
            }
            let m = (pos[a] + pos[b]) / 2.0;
            let touched: Vec<usize> = vtris[a]
                .iter()
                .chain(&vtris[b])
                .copied()
                .filter(|&t| alive[t])
                .collect::<HashSet<_>>()
                .into_iter()
                .collect();
            let mut ok = true;
            for &t in &touched {
                let tri = tris[t];
                if tri.contains(&a) && tri.contains(&b) {
                    continue;
                }
                let old = normal(tri.map(|v| pos[v]));
                let new = normal(tri.map(|v| if v == a || v == b { m } else { pos[v] }));
                if new.norm() < area_floor || new.normalize().dot(&old.normalize()) < 0.3 {
                    ok = false;
                    break;
                }
            }
            if !ok {
                continue;
            }
            pos[a] = m;
            let mut keep = Vec::new();
            for &t in &touched {
                if tris[t].contains(&a) && tris[t].contains(&b) {
                    alive[t] = false;
                    continue;
                }
                for v in tris[t].iter_mut() {
                    if *v == b {
                        *v = a;
                    }
                }
                keep.push(t);
            }
            keep.sort_unstable();
            vtris[a] = keep;
            vtris[b].clear();
            removed[b] = true;
            live_vertices -= 1;
            for v in na.iter().chain(&nb) {
                locked[*v] = true;
            }
            locked[a] = true;
            collapsed += 1;
        }
        for list in vtris.iter_mut() {
            list.retain(|&t| alive[t]);
        }
        if collapsed == 0 {
            break;
        }
    }

    let mut remap = vec![usize::MAX; pos.len()];
    let mut vertices = Vec::with_capacity(live_vertices);
    for v in 0..pos.len() {
        if !removed[v] {
            remap[v] = vertices.len();
            vertices.push(pos[v]);
        }
    }
    let triangles = tris
        .iter()
        .zip(&alive)
        .filter(|(_, &a)| a)
        .map(|(t, _)| t.map(|v| remap[v]))
        .collect();
    TriMesh::new_unchecked(vertices, triangles)
}

/// Corner angles of the triangle `(a, b, c)`.
fn angles(p: [Vec3; 3]) -> [f64; 3] {
    let at = |o: Vec3, u: Vec3, v: Vec3| (u - o).angle(&(v - o));
    [at(p[0], p[1], p[2]), at(p[1], p[2], p[0]), at(p[2], p[0], p[1])]
}

fn max_angle(p: [Vec3; 3]) -> f64 {
    angles(p).into_iter().fold(0.0, f64::max)
}

/// Flips every edge `ab` shared by `(a, b, c)` and `(b, a, d)` for which
/// `wanted` holds, as long as the new triangles do not fold over.
fn flip_pass(mesh: &mut TriMesh, wanted: impl Fn(&[Vec3], [usize; 4]) -> bool) -> usize {
    let mut total = 0;
    for _pass in 0..10 {
        let adjacency = mesh.triangle_adjacency();
        let mut edge_set: HashSet<(usize, usize)> = mesh.edges().into_iter().collect();
        let mut touched = vec![false; mesh.triangles.len()];
        let mut flips = 0;
        for t1 in 0..mesh.triangles.len() {
            for k in 0..3 {
                let t2 = adjacency[t1][k];
                if t2 == usize::MAX || t2 < t1 || touched[t1] || touched[t2] {
                    continue;
                }
                let tri1 = mesh.triangles[t1];
                let (a, b, c) = (tri1[k], tri1[(k + 1) % 3], tri1[(k + 2) % 3]);
                let tri2 = mesh.triangles[t2];
                let Some(d) = tri2.iter().copied().find(|&v| v != a && v != b) else {
                    continue;
                };
                if c == d || edge_set.contains(&ordered(c, d)) || !wanted(&mesh.vertices, [a, b, c, d]) {
                    continue;
                }
                let p = |v: usize| mesh.vertices[v];
                let avg = (normal([p(a), p(b), p(c)]).normalize() + normal([p(b), p(a), p(d)]).normalize()).normalize();
                let new1 = [a, d, c];
                let new2 = [d, b, c];
                if normal(new1.map(p)).dot(&avg) <= 0.0 || normal(new2.map(p)).dot(&avg) <= 0.0 {
                    continue;
                }
                mesh.triangles[t1] = new1;
                mesh.triangles[t2] = new2;
                edge_set.remove(&ordered(a, b));
                edge_set.insert(ordered(c, d));
                touched[t1] = true;
                touched[t2] = true;
                flips += 1;
            }
        }
        total += flips;
        if flips == 0 {
            break;
        }
    }
    total
}

/// Flips edges between nearly coplanar triangles when the two opposite
/// angles sum to more than pi.
pub fn flip_edges(mesh: &mut TriMesh, max_bend_deg: f64) -> usize {
    let cos_limit = max_bend_deg.to_radians().cos();
    flip_pass(mesh, |pos, [a, b, c, d]| {
        let n1 = normal([pos[a], pos[b], pos[c]]);
        let n2 = normal([pos[b], pos[a], pos[d]]);
        if n1.normalize().dot(&n2.normalize()) < cos_limit {
            return false;
        }
        let angle = |o: Vec3, u: Vec3, v: Vec3| (u - o).angle(&(v - o));
        angle(pos[c], pos[a], pos[b]) + angle(pos[d], pos[a], pos[b]) > std::f64::consts::PI + 1e-9
    })
}

/// Flips the long edge of cap triangles (an angle above `cap_deg`) whatever
/// the bend, when that lowers the largest angle of the pair.
pub fn flip_caps(mesh: &mut TriMesh, cap_deg: f64) -> usize {
    let cap = cap_deg.to_radians();
    flip_pass(mesh, |pos, [a, b, c, d]| {
        let before = max_angle([pos[a], pos[b], pos[c]]).max(max_angle([pos[b], pos[a], pos[d]]));
        let after = max_angle([pos[a], pos[d], pos[c]]).max(max_angle([pos[d], pos[b], pos[c]]));
        before > cap && after < before
    })
}

/// Moves `p` onto `{phi = iso}` along the gradient.
pub fn project_to_level(grid: &ScalarGrid, iso: f64, mut p: Vec3) -> Vec3 {
    for _ in 0..4 {
        let f = grid.sample(&p) - iso;
        let g = grid.sample_gradient(&p);
        let g2 = g.norm_squared();
        if g2 < 1e-12 {
            break;
        }
        let step = g * (f / g2);
        // Never jump more than a voxel in one correction.
        let max = grid.geom.spacing;
        p -= if step.norm() > max { step.normalize() * max } else { step };
        if f.abs() < 1e-9 * grid.geom.spacing {
            break;
        }
    }
    p
}

/// Umbrella smoothing restricted to the tangent plane, followed by
/// reprojection onto the level set. Moves that would flip a triangle are undone.
pub fn smooth_on_level_set(mesh: &mut TriMesh, grid: &ScalarGrid, iso: f64, iterations: usize, step: f64) {
    let neighbors = mesh.vertex_neighbors();
    for _ in 0..iterations {
        let normals = mesh.vertex_normals();
        let old = mesh.vertices.clone();
        let old_normals: Vec<Vec3> = (0..mesh.num_triangles()).map(|t| normal(mesh.corners(t))).collect();
        let moved: Vec<Vec3> = (0..old.len())
            .map(|v| {
                let nb = &neighbors[v];
                let c = nb.iter().map(|&w| old[w]).sum::<Vec3>() / nb.len() as f64;
                let d = c - old[v];
                let n = normals[v];
                let t = d - n * d.dot(&n);
                project_to_level(grid, iso, old[v] + t * step)
            })
            .collect();
        mesh.vertices = moved;
        for _ in 0..5 {
            let mut bad = Vec::new();
            for t in 0..mesh.num_triangles() {
                let n = normal(mesh.corners(t));
                if n.dot(&old_normals[t]) <= 0.0 || n.norm() < 1e-3 * old_normals[t].norm() {
                    bad.extend(mesh.triangles[t]);
                }
            }
            if bad.is_empty() {
                break;
            }
            for v in bad {
                mesh.vertices[v] = old[v];
            }
        }
    }
}

/// Triangles with a larger angle (degrees) count as caps.
const CAP_ANGLE: f64 = 150.0;

/// Full cleanup of a surface extracted from `grid` at `iso`.
pub fn cleanup_level_set(mesh: &TriMesh, grid: &ScalarGrid, iso: f64, opts: &RemeshOptions) -> TriMesh {
    let h = grid.geom.spacing;
    // Collapsing at `T` leaves edges of about 1.5 T; pick `T` so the
    // equilateral vertex count 2A / (sqrt(3) L^2) meets the budget.
    let budget = (2.0 * mesh.total_area() / (3f64.sqrt() * opts.max_vertices.max(1) as f64)).sqrt() / 1.5;
    let mut m = collapse_short_edges(mesh, (opts.min_edge * h).max(budget));
    flip_edges(&mut m, opts.flip_angle);
    smooth_on_level_set(&mut m, grid, iso, opts.smooth_iterations, opts.smooth_step);
    flip_edges(&mut m, opts.flip_angle);
    flip_caps(&mut m, CAP_ANGLE);
    m
}

/// Smallest interior angle of any triangle, in degrees.
pub fn min_angle_deg(mesh: &TriMesh) -> f64 {
    let mut worst = 180.0f64;
    for t in 0..mesh.num_triangles() {
        let p = mesh.corners(t);
        for k in 0..3 {
            let a = (p[(k + 1) % 3] - p[k]).angle(&(p[(k + 2) % 3] - p[k]));
            worst = worst.min(a.to_degrees());
        }
    }
    worst
}
