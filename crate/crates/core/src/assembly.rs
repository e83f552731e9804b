//! Composition of the shell maps into a volumetric map of the cube lattice.

use rayon::prelude::*;

use crate::cube::CubeComplex;
use crate::error::{Error, Result};
use crate::hexmesh::HexMesh;
use crate::mesh::Vec3;
use crate::sphere::{SphereLocator, SphereMap};

/// Image of every cube lattice node in model space.
#[derive(Debug, Clone)]
pub struct VolumetricMap {
    pub cube: CubeComplex,
    pub images: Vec<Vec3>,
}

impl VolumetricMap {
    pub fn new(cube: CubeComplex, images: Vec<Vec3>) -> Self {
        assert_eq!(cube.nodes.len(), images.len());
        Self { cube, images }
    }

    /// Hex mesh with the lattice connectivity, carrying `volume` and `shell` attributes.
    pub fn hex_mesh(&self) -> HexMesh {
        let mut mesh = HexMesh::new(self.images.clone(), self.cube.hexes.clone()).with_volumes();
        let shells = self.cube.cell_shell().into_iter().map(|s| s as f64).collect();
        mesh.set_attribute("shell", shells);
        mesh
    }

    pub fn with_images(&self, images: Vec<Vec3>) -> Self {
        Self::new(self.cube.clone(), images)
    }

    /// Largest node displacement from `other`.
    pub fn max_displacement(&self, other: &[Vec3]) -> f64 {
        self.images
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Source-space positions of sphere points, interpolated linearly inside the
/// spherical triangle that contains each query.
pub fn interpolate_inverse(map: &SphereMap, queries: &[Vec3]) -> Result<Vec<Vec3>> {
    let locator = SphereLocator::new(&map.source, &map.positions);
    let mut out = Vec::with_capacity(queries.len());
    let mut start = map.puncture;
    for (i, q) in queries.iter().enumerate() {
        let loc = locator.locate(q, start, i)?;
        start = loc.triangle;
        let tri = map.source.triangles[loc.triangle];
        if let Some(&v) = tri.iter().find(|&&v| map.positions[v] == *q) {
            out.push(map.source.vertices[v]);
            continue;
        }
        let p = tri
            .iter()
            .zip(loc.bary)
            .map(|(&v, w)| map.source.vertices[v] * w)
            .sum();
        out.push(p);
    }
    Ok(out)
}

/// Node images from per-shell maps: each node of cube shell `k` goes through
/// its sphere image `cube_points[k - 1][i]` (ordered like the shell's
/// `nodes`) into model shell `k`. Both lists are outermost first.
pub fn assemble_initial_map(cube: &CubeComplex, model_maps: &[SphereMap], cube_points: &[Vec<Vec3>]) -> Result<VolumetricMap> {
    if model_maps.len() != cube.n || cube_points.len() != cube.n {
        return Err(Error::ShellCountMismatch {
            model: model_maps.len(),
            cube: cube_points.len(),
        });
    }
    let per_shell: Vec<Result<Vec<Vec3>>> = cube
        .shells
        .par_iter()
        .zip(model_maps.par_iter().zip(cube_points.par_iter()))
        .map(|(shell, (model, points))| {
            assert_eq!(points.len(), shell.nodes.len());
            interpolate_inverse(model, points)
        })
        .collect();
    let mut images = vec![Vec3::zeros(); cube.nodes.len()];
    let mut placed = vec![false; cube.nodes.len()];
    for (shell, pts) in cube.shells.iter().zip(per_shell) {
        for (&node, p) in shell.nodes.iter().zip(pts?) {
            images[node] = p;
            placed[node] = true;
        }
    }
    if placed.iter().any(|p| !p) {
        fill_core(cube, &mut images, &placed);
    }
    check_bijective(&images)?;
    Ok(VolumetricMap::new(cube.clone(), images))
}

/// Places nodes no shell reached by trilinear blending between the nearest
/// placed nodes along each lattice axis.
fn fill_core(cube: &CubeComplex, images: &mut [Vec3], placed: &[bool]) {
    let m = cube.side();
    let snapshot = images.to_vec();
    for id in 0..images.len() {
        if placed[id] {
            continue;
        }
        let c = cube.node_coords(id);
        let mut sum = Vec3::zeros();
        let mut weight = 0.0;
        for axis in 0..3 {
            let find = |dir: isize| {
                let mut p = c;
                loop {
                    let next = p[axis] as isize + dir;
                    if next < 0 || next >= m as isize {
                        return None;
                    }
                    p[axis] = next as usize;
                    let nid = cube.node_id(p[0], p[1], p[2]);
                    if placed[nid] {
                        return Some((nid, (next - c[axis] as isize).unsigned_abs() as f64));
                    }
                }
            };
            if let (Some((a, da)), Some((b, db))) = (find(-1), find(1)) {
                let blend = (snapshot[a] * db + snapshot[b] * da) / (da + db);
                sum += blend;
                weight += 1.0;
            }
        }
        if weight > 0.0 {
            images[id] = sum / weight;
        }
    }
}

/// Fails if two node images coincide to within 1e-9.
pub fn check_bijective(images: &[Vec3]) -> Result<()> {
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.sort_by(|&a, &b| images[a].x.total_cmp(&images[b].x));
    for (i, &a) in order.iter().enumerate() {
        for &b in &order[i + 1..] {
            if images[b].x - images[a].x > 1e-9 {
                break;
            }
            if (images[a] - images[b]).norm() <= 1e-9 {
                return Err(Error::BijectivityFailure(format!("nodes {a} and {b} share an image")));
            }
        }
    }
    Ok(())
}

/// Which nodes laplacian smoothing may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothLayers {
    /// Everything except the cube surface.
    Interior,
    All,
}

/// Jacobi averaging over the six lattice neighbours. Under `All`, surface
/// nodes average only neighbours on every cube face they lie on, so face
/// nodes slide within the face, edge nodes along the edge, and corners stay.
pub fn laplacian_smooth(map: &VolumetricMap, iterations: usize, layers: SmoothLayers) -> VolumetricMap {
    let cube = &map.cube;
    let m = cube.side();
    let face_mask = |c: [usize; 3]| {
        (0..3).fold(0u8, |acc, a| {
            acc | if c[a] == 0 { 1 << (2 * a) } else { 0 } | if c[a] == m - 1 { 2 << (2 * a) } else { 0 }
        })
    };
    let neighbors: Vec<Vec<usize>> = (0..cube.nodes.len())
        .map(|id| {
            let c = cube.node_coords(id);
            let faces = face_mask(c);
            let mut out = Vec::with_capacity(6);
            for axis in 0..3 {
                for dir in [-1isize, 1] {
                    let next = c[axis] as isize + dir;
                    if next < 0 || next >= m as isize {
                        continue;
                    }
                    let mut p = c;
                    p[axis] = next as usize;
                    let nid = cube.node_id(p[0], p[1], p[2]);
                    if face_mask(p) & faces == faces {
                        out.push(nid);
                    }
                }
            }
            out
        })
        .collect();
    let movable: Vec<bool> = (0..cube.nodes.len())
        .map(|id| layers == SmoothLayers::All || !cube.is_boundary_node(id))
        .collect();
    let mut cur = map.images.clone();
    for _ in 0..iterations {
        let next: Vec<Vec3> = (0..cur.len())
            .into_par_iter()
            .map(|id| {
                if !movable[id] || neighbors[id].is_empty() {
                    return cur[id];
                }
                neighbors[id].iter().map(|&n| cur[n]).sum::<Vec3>() / neighbors[id].len() as f64
            })
            .collect();
        cur = next;
    }
    map.with_images(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::build_cube_shells;
    use crate::shapes;

    #[test]
    fn vertex_queries_reproduce_sources() {
        let mesh = shapes::icosphere(2).transformed(2.0, Vec3::new(1.0, 0.0, 0.0));
        let pos: Vec<Vec3> = shapes::icosphere(2).vertices.iter().map(|p| p.normalize()).collect();
        let map = SphereMap::new(mesh.clone(), pos.clone(), 0);
        let out = interpolate_inverse(&map, &pos).unwrap();
        assert_eq!(out, mesh.vertices);
    }

    #[test]
    fn smoothing_fixes_the_regular_lattice() {
        let cube = build_cube_shells(3);
        let map = VolumetricMap::new(cube.clone(), cube.nodes.clone());
        assert_eq!(laplacian_smooth(&map, 0, SmoothLayers::Interior).images, cube.nodes);
        let s = laplacian_smooth(&map, 7, SmoothLayers::All);
        assert!(s.max_displacement(&cube.nodes) < 1e-14);
    }

    #[test]
    fn smoothing_keeps_boundary_by_default() {
        let cube = build_cube_shells(3);
        let mut images = cube.nodes.clone();
        for p in images.iter_mut() {
            p.x += 0.1 * (p.y * 7.0).sin();
        }
        let s = laplacian_smooth(&VolumetricMap::new(cube.clone(), images.clone()), 5, SmoothLayers::Interior);
        for id in 0..images.len() {
            if cube.is_boundary_node(id) {
                assert_eq!(s.images[id], images[id]);
            }
        }
    }

    #[test]
    fn smoothing_untangles_a_displaced_node() {
        let cube = build_cube_shells(3);
        let mut images = cube.nodes.clone();
        let id = cube.node_id(2, 2, 2);
        images[id] += Vec3::repeat(1.6 * cube.spacing());
        let map = VolumetricMap::new(cube.clone(), images);
        let before = crate::quality::compute_quality(&map.hex_mesh()).concave_count();
        let after = crate::quality::compute_quality(&laplacian_smooth(&map, 10, SmoothLayers::Interior).hex_mesh()).concave_count();
        assert!(before > 0);
        assert_eq!(after, 0);
    }

    #[test]
    fn coincident_images_are_rejected() {
        let pts = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 5e-10)];
        assert!(matches!(check_bijective(&pts), Err(Error::BijectivityFailure(_))));
        assert!(check_bijective(&pts[..2]).is_ok());
    }

    #[test]
    fn core_nodes_are_blended() {
        let cube = build_cube_shells(2);
        let mut placed = vec![true; cube.nodes.len()];
        let mut images = cube.nodes.clone();
        let inner = cube.node_id(1, 1, 1);
        placed[inner] = false;
        images[inner] = Vec3::new(9.0, 9.0, 9.0);
        fill_core(&cube, &mut images, &placed);
        assert!((images[inner] - cube.nodes[inner]).norm() < 1e-12);
    }
}
