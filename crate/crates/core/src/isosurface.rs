//! Marching tetrahedra: every grid cube is split into six tetrahedra around
//! its main diagonal, so neighbouring cubes share faces and the extracted
//! level set is a closed manifold whenever the field is positive on the
//! grid border.

use std::collections::HashMap;

use crate::mesh::{TriMesh, Vec3};
use crate::voxel::ScalarGrid;

/// The six tetrahedra of a unit cube, as corner bit patterns `x | y << 1 | z << 2`.
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Distance (relative to the spacing) below which grid values are pushed off the iso-value.
const SNAP: f64 = 1e-6;

/// Triangulates `{phi = iso}` with normals pointing towards larger values.
/// Vertices on the same grid edge are shared.
pub fn marching_tetrahedra(grid: &ScalarGrid, iso: f64) -> TriMesh {
    let g = grid.geom;
    let [nx, ny, nz] = g.dims;
    let delta = SNAP * g.spacing;
    let value = |idx: usize| {
        let v = grid.values[idx] - iso;
        if v.abs() < delta {
            if v < 0.0 {
                -delta
            } else {
                delta
            }
        } else {
            v
        }
    };

    let mut vertices: Vec<Vec3> = Vec::new();
    let mut edge_vertex: HashMap<(usize, usize), usize> = HashMap::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();

    let mut vertex_on = |a: usize, b: usize, va: f64, vb: f64, vertices: &mut Vec<Vec3>| -> usize {
        let key = if a < b { (a, b) } else { (b, a) };
        *edge_vertex.entry(key).or_insert_with(|| {
            let t = va / (va - vb);
            let p = g.center_of(a) + (g.center_of(b) - g.center_of(a)) * t;
            vertices.push(p);
            vertices.len() - 1
        })
    };

    for k in 0..nz.saturating_sub(1) {
        for j in 0..ny.saturating_sub(1) {
            for i in 0..nx.saturating_sub(1) {
                let corner = |bits: usize| g.index(i + (bits & 1), j + ((bits >> 1) & 1), k + ((bits >> 2) & 1));
                let ids: [usize; 8] = std::array::from_fn(corner);
                let vals: [f64; 8] = ids.map(value);
                if vals.iter().all(|&v| v > 0.0) || vals.iter().all(|&v| v < 0.0) {
                    continue;
                }
                for tet in TETS {
                    let inside: Vec<usize> = tet.iter().copied().filter(|&c| vals[c] < 0.0).collect();
                    let outside: Vec<usize> = tet.iter().copied().filter(|&c| vals[c] >= 0.0).collect();
                    let mut cut = |a: usize, b: usize, verts: &mut Vec<Vec3>| {
                        vertex_on(ids[a], ids[b], vals[a], vals[b], verts)
                    };
                    let mut emit = |tri: [usize; 3], inner: usize, outer: usize, verts: &Vec<Vec3>| {
                        let [p, q, r] = tri.map(|v| verts[v]);
                        let n = (q - p).cross(&(r - p));
                        let dir = g.center_of(ids[outer]) - g.center_of(ids[inner]);
                        if n.dot(&dir) < 0.0 {
                            triangles.push([tri[0], tri[2], tri[1]]);
                        } else {
                            triangles.push(tri);
                        }
                    };
                    match inside.len() {
                        1 | 3 => {
                            let (lone, others, lone_inside) = if inside.len() == 1 {
                                (inside[0], outside.clone(), true)
                            } else {
                                (outside[0], inside.clone(), false)
                            };
                            let tri = [
                                cut(lone, others[0], &mut vertices),
                                cut(lone, others[1], &mut vertices),
                                cut(lone, others[2], &mut vertices),
                            ];
                            let (inner, outer) = if lone_inside { (lone, others[0]) } else { (others[0], lone) };
                            emit(tri, inner, outer, &vertices);
                        }
                        2 => {
                            let (a, b) = (inside[0], inside[1]);
                            let (c, d) = (outside[0], outside[1]);
                            let ac = cut(a, c, &mut vertices);
                            let ad = cut(a, d, &mut vertices);
                            let bc = cut(b, c, &mut vertices);
                            let bd = cut(b, d, &mut vertices);
                            // Quad ac-ad-bd-bc split along ac-bd.
                            emit([ac, ad, bd], a, c, &vertices);
                            emit([ac, bd, bc], a, c, &vertices);
                        }
                        _ => {}
                    }
                }
            }
        }
    }
    TriMesh::new_unchecked(vertices, triangles)
}

/// Splits a triangle soup into connected components (by shared vertices)
/// and keeps the one with the most triangles, reindexing its vertices.
pub fn largest_component(mesh: &TriMesh) -> TriMesh {
    let n = mesh.num_vertices();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for t in &mesh.triangles {
        for k in 1..3 {
            let (a, b) = (find(&mut parent, t[0]), find(&mut parent, t[k]));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for t in &mesh.triangles {
        *counts.entry(find(&mut parent, t[0])).or_default() += 1;
    }
    let Some(keep) = counts
        .iter()
        .max_by_key(|&(root, c)| (*c, std::cmp::Reverse(*root)))
        .map(|(r, _)| *r)
    else {
        return mesh.clone();
    };
    let mut remap = vec![usize::MAX; n];
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for t in &mesh.triangles {
        if find(&mut parent, t[0]) != keep {
            continue;
        }
        triangles.push(t.map(|v| {
            if remap[v] == usize::MAX {
                remap[v] = vertices.len();
                vertices.push(mesh.vertices[v]);
            }
            remap[v]
        }));
    }
    TriMesh::new_unchecked(vertices, triangles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::GridGeometry;

    fn sphere_grid(n: usize, r: f64) -> ScalarGrid {
        let geom = GridGeometry {
            dims: [n; 3],
            origin: Vec3::repeat(-(n as f64 - 1.0) / 2.0),
            spacing: 1.0,
        };
        ScalarGrid {
            geom,
            values: (0..geom.len()).map(|i| geom.center_of(i).norm() - r).collect(),
        }
    }

    #[test]
    fn sphere_level_set_is_closed_genus_zero() {
        let mesh = marching_tetrahedra(&sphere_grid(20, 6.3), 0.0);
        mesh.validate_topology().unwrap();
        assert!(mesh.signed_volume() > 0.0);
        let v = 4.0 / 3.0 * std::f64::consts::PI * 6.3f64.powi(3);
        assert!((mesh.signed_volume() - v).abs() / v < 0.03);
    }

    #[test]
    fn grid_values_on_the_iso_value_stay_manifold() {
        // Integer radius puts many grid values exactly on the level set.
        let mut grid = sphere_grid(16, 5.0);
        grid.values.iter_mut().for_each(|v| *v = v.round());
        let mesh = largest_component(&marching_tetrahedra(&grid, 0.0));
        mesh.validate_topology().unwrap();
    }
}
