//! The structured cube lattice and its nested shells.
//!
//! The lattice has `2N` nodes per side in `[0, 1]^3`; shell `k` (1-based) is
//! the boundary of the box left after `k - 1` one-layer erosions, so shell 1
//! is the cube surface and shell `N` is the boundary of the central hex.

use std::collections::HashMap;

use crate::mesh::{TriMesh, Vec3};

/// One confining surface of the cube.
#[derive(Debug, Clone)]
pub struct CubeShell {
    /// 1-based shell index (1 = outer boundary).
    pub index: usize,
    /// Global lattice node id of each mesh vertex.
    pub nodes: Vec<usize>,
    /// Triangulated quad surface; vertex `i` sits at lattice node `nodes[i]`.
    pub mesh: TriMesh,
}

#[derive(Debug, Clone)]
pub struct CubeComplex {
    pub n: usize,
    /// Node positions, id = i + m * (j + m * k) with m = 2N.
    pub nodes: Vec<Vec3>,
    /// Hexahedra in VTK corner order.
    pub hexes: Vec<[usize; 8]>,
    /// Shells 1..=N, outermost first.
    pub shells: Vec<CubeShell>,
    /// Shell index of every node (0 would mark the core, which is empty for this lattice).
    pub node_shell: Vec<usize>,
}

impl CubeComplex {
    /// Nodes per lattice side.
    pub fn side(&self) -> usize {
        2 * self.n
    }

    /// Lattice spacing `1 / (2N - 1)`.
    pub fn spacing(&self) -> f64 {
        1.0 / (self.side() - 1) as f64
    }

    pub fn node_id(&self, i: usize, j: usize, k: usize) -> usize {
        let m = self.side();
        i + m * (j + m * k)
    }

    pub fn node_coords(&self, id: usize) -> [usize; 3] {
        let m = self.side();
        [id % m, (id / m) % m, id / (m * m)]
    }

    pub fn cell_id(&self, i: usize, j: usize, k: usize) -> usize {
        let c = self.side() - 1;
        i + c * (j + c * k)
    }

    pub fn cell_coords(&self, id: usize) -> [usize; 3] {
        let c = self.side() - 1;
        [id % c, (id / c) % c, id / (c * c)]
    }

    /// True for nodes on the outer cube surface.
    pub fn is_boundary_node(&self, id: usize) -> bool {
        self.node_shell[id] == 1
    }

    /// 1-based layer of each hex (1 = touches the cube surface).
    pub fn cell_shell(&self) -> Vec<usize> {
        let c = self.side() - 1;
        (0..self.hexes.len())
            .map(|id| {
                let [i, j, k] = self.cell_coords(id);
                [i, j, k, c - 1 - i, c - 1 - j, c - 1 - k]
                    .into_iter()
                    .min()
                    .unwrap()
                    + 1
            })
            .collect()
    }
}

/// Builds the `(2N)^3` lattice, its `(2N - 1)^3` hexes and the `N` shells.
///
/// # Panics
/// If `n == 0`.
pub fn build_cube_shells(n: usize) -> CubeComplex {
    assert!(n >= 1, "cube resolution must be at least 1");
    let m = 2 * n;
    let h = 1.0 / (m - 1) as f64;
    let id = |i: usize, j: usize, k: usize| i + m * (j + m * k);

    let mut nodes = Vec::with_capacity(m * m * m);
    let mut node_shell = Vec::with_capacity(m * m * m);
    for k in 0..m {
        for j in 0..m {
            for i in 0..m {
                nodes.push(Vec3::new(i as f64 * h, j as f64 * h, k as f64 * h));
                let layer = [i, j, k, m - 1 - i, m - 1 - j, m - 1 - k]
                    .into_iter()
                    .min()
                    .unwrap();
                node_shell.push(layer + 1);
            }
        }
    }

    let c = m - 1;
    let mut hexes = Vec::with_capacity(c * c * c);
    for k in 0..c {
        for j in 0..c {
            for i in 0..c {
                hexes.push([
                    id(i, j, k),
                    id(i + 1, j, k),
                    id(i + 1, j + 1, k),
                    id(i, j + 1, k),
                    id(i, j, k + 1),
                    id(i + 1, j, k + 1),
                    id(i + 1, j + 1, k + 1),
                    id(i, j + 1, k + 1),
                ]);
            }
        }
    }

    let shells = (1..=n)
        .map(|k| {
            let lo = k - 1;
            let hi = m - k;
            let (ids, tris) = box_surface([lo; 3], [hi; 3], m);
            let vertices = ids.iter().map(|&g| nodes[g]).collect();
            CubeShell {
                index: k,
                nodes: ids,
                mesh: TriMesh::new_unchecked(vertices, tris),
            }
        })
        .collect();

    CubeComplex {
        n,
        nodes,
        hexes,
        shells,
        node_shell,
    }
}

/// Boundary of the lattice box `[lo, hi]` (inclusive node indices) in a lattice
/// with `m` nodes per side. Returns the global node ids (ascending; these index
/// the output vertices) and outward-oriented triangles, each quad split along
/// its lexicographically smaller diagonal.
impl CubeComplex {
    /// Shell `k` (1-based) with every lattice cell split into `factor^2`
    /// quads, and the refined vertex of each node in `shells[k - 1].nodes`.
    pub fn refined_shell(&self, k: usize, factor: usize) -> (TriMesh, Vec<usize>) {
        assert!(k >= 1 && k <= self.n && factor >= 1);
        let m = self.side();
        let big = (m - 1) * factor + 1;
        let (lo, hi) = ((k - 1) * factor, (m - k) * factor);
        let (ids, tris) = box_surface([lo; 3], [hi; 3], big);
        let scale = 1.0 / (big - 1) as f64;
        let vertices = ids
            .iter()
            .map(|&g| {
                let (i, j, l) = (g % big, (g / big) % big, g / (big * big));
                Vec3::new(i as f64 * scale, j as f64 * scale, l as f64 * scale)
            })
            .collect();
        let nodes = self.shells[k - 1]
            .nodes
            .iter()
            .map(|&id| {
                let [i, j, l] = self.node_coords(id);
                let g = i * factor + big * (j * factor + big * l * factor);
                ids.binary_search(&g).expect("lattice node lies on the refined shell")
            })
            .collect();
        (TriMesh::new_unchecked(vertices, tris), nodes)
    }
}

pub(crate) fn box_surface(lo: [usize; 3], hi: [usize; 3], m: usize) -> (Vec<usize>, Vec<[usize; 3]>) {
    let gid = |p: [usize; 3]| p[0] + m * (p[1] + m * p[2]);
    let mut quads: Vec<[usize; 4]> = Vec::new();
    for a in 0..3 {
        let b = (a + 1) % 3;
        let c = (a + 2) % 3;
        for (side, outward_positive) in [(lo[a], false), (hi[a], true)] {
            for q in lo[c]..hi[c] {
                for p in lo[b]..hi[b] {
                    let corner = |dp: usize, dq: usize| {
                        let mut x = [0usize; 3];
                        x[a] = side;
                        x[b] = p + dp;
                        x[c] = q + dq;
                        gid(x)
                    };
                    let mut quad = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
                    if !outward_positive {
                        quad.reverse();
                    }
                    quads.push(quad);
                }
            }
        }
    }

    let mut ids: Vec<usize> = quads.iter().flatten().copied().collect();
    ids.sort_unstable();
    ids.dedup();
    let local: HashMap<usize, usize> = ids.iter().enumerate().map(|(l, &g)| (g, l)).collect();

    let mut tris = Vec::with_capacity(quads.len() * 2);
    for [q0, q1, q2, q3] in quads {
        let d02 = (q0.min(q2), q0.max(q2));
        let d13 = (q1.min(q3), q1.max(q3));
        let l = |g: usize| local[&g];
        if d02 <= d13 {
            tris.push([l(q0), l(q1), l(q2)]);
            tris.push([l(q0), l(q2), l(q3)]);
        } else {
            tris.push([l(q0), l(q1), l(q3)]);
            tris.push([l(q1), l(q2), l(q3)]);
        }
    }
    (ids, tris)
}
