//! Regular voxel grids: occupancy from ray parity and signed distance fields.
//!
//! Grid values live at voxel centres; voxel `(i, j, k)` is centred at
//! `origin + spacing * (i, j, k)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};

pub const MAX_DIM: usize = 512;
pub const DEFAULT_MARGIN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub dims: [usize; 3],
    pub origin: Vec3,
    pub spacing: f64,
}

impl GridGeometry {
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        [i, j, idx / (self.dims[0] * self.dims[1])]
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.spacing
    }

    pub fn center_of(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.coords(idx);
        self.center(i, j, k)
    }

    /// Continuous grid coordinates of a world point.
    pub fn to_grid(&self, p: &Vec3) -> Vec3 {
        (p - self.origin) / self.spacing
    }

    /// Indices of the (up to six) face neighbours.
    pub fn neighbors6(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let [i, j, k] = self.coords(idx);
        let d = self.dims;
        let cand = [
            (i > 0).then(|| idx - 1),
            (i + 1 < d[0]).then(|| idx + 1),
            (j > 0).then(|| idx - d[0]),
            (j + 1 < d[1]).then(|| idx + d[0]),
            (k > 0).then(|| idx - d[0] * d[1]),
            (k + 1 < d[2]).then(|| idx + d[0] * d[1]),
        ];
        cand.into_iter().flatten()
    }

    pub fn is_border(&self, idx: usize) -> bool {
        let c = self.coords(idx);
        (0..3).any(|a| c[a] == 0 || c[a] + 1 == self.dims[a])
    }
}

/// Occupancy of each voxel centre.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryVolume {
    pub geom: GridGeometry,
    pub occupancy: Vec<bool>,
}

impl BinaryVolume {
    pub fn count(&self) -> usize {
        self.occupancy.iter().filter(|&&b| b).count()
    }

    pub fn volume(&self) -> f64 {
        self.count() as f64 * self.geom.spacing.powi(3)
    }

    pub fn from_fn(geom: GridGeometry, inside: impl Fn(Vec3) -> bool) -> Self {
        let occupancy = (0..geom.len()).map(|i| inside(geom.center_of(i))).collect();
        Self { geom, occupancy }
    }
}

/// Scalar value per voxel centre.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub geom: GridGeometry,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.geom.index(i, j, k)]
    }

    fn clamped(&self, i: isize, j: isize, k: isize) -> f64 {
        let d = self.geom.dims;
        let c = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        self.at(c(i, d[0]), c(j, d[1]), c(k, d[2]))
    }

    /// Trilinear interpolation at a world point (clamped at the border).
    pub fn sample(&self, p: &Vec3) -> f64 {
        let g = self.geom.to_grid(p);
        let (i, j, k) = (g.x.floor(), g.y.floor(), g.z.floor());
        let (fx, fy, fz) = (g.x - i, g.y - j, g.z - k);
        let (i, j, k) = (i as isize, j as isize, k as isize);
        let mut v = 0.0;
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let w = (if dx == 1 { fx } else { 1.0 - fx })
                        * (if dy == 1 { fy } else { 1.0 - fy })
                        * (if dz == 1 { fz } else { 1.0 - fz });
                    v += w * self.clamped(i + dx, j + dy, k + dz);
                }
            }
        }
        v
    }

    /// Central-difference gradient at a voxel (one-sided at the border), in world units.
    pub fn gradient_at(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.geom.coords(idx).map(|v| v as isize);
        let d = self.geom.dims;
        let h = self.geom.spacing;
        let mut g = Vec3::zeros();
        for a in 0..3 {
            let mut lo = [i, j, k];
            let mut hi = [i, j, k];
            let c = [i, j, k][a];
            lo[a] = (c - 1).max(0);
            hi[a] = (c + 1).min(d[a] as isize - 1);
            let span = (hi[a] - lo[a]) as f64 * h;
            if span > 0.0 {
                g[a] = (self.clamped(hi[0], hi[1], hi[2]) - self.clamped(lo[0], lo[1], lo[2])) / span;
            }
        }
        g
    }

    /// Gradient of the trilinear interpolant at a world point.
    pub fn sample_gradient(&self, p: &Vec3) -> Vec3 {
        let g = self.geom.to_grid(p);
        let (i, j, k) = (g.x.floor(), g.y.floor(), g.z.floor());
        let f = [g.x - i, g.y - j, g.z - k];
        let (i, j, k) = (i as isize, j as isize, k as isize);
        let mut out = Vec3::zeros();
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let d = [dx, dy, dz];
                    let v = self.clamped(i + dx, j + dy, k + dz);
                    for a in 0..3 {
                        let mut w = if d[a] == 1 { 1.0 } else { -1.0 };
                        for b in 0..3 {
                            if b != a {
                                w *= if d[b] == 1 { f[b] } else { 1.0 - f[b] };
                            }
                        }
                        out[a] += w * v;
                    }
                }
            }
        }
        out / self.geom.spacing
    }
}

/// Grid covering the bounding box of `mesh` plus `margin` voxels on every side.
pub fn grid_for(mesh: &TriMesh, spacing: f64, margin: usize) -> Result<GridGeometry> {
    if !(spacing > 0.0) {
        return Err(Error::Config(format!("voxel spacing must be positive, got {spacing}")));
    }
    let (lo, hi) = mesh.bbox();
    let ext = hi - lo;
    let dims = [0, 1, 2].map(|a| ((ext[a] / spacing).ceil() as usize).max(1) + 2 * margin);
    if dims.iter().any(|&d| d > MAX_DIM) {
        return Err(Error::ResolutionTooHigh { dims });
    }
    let center = (lo + hi) / 2.0;
    let half = Vec3::new(dims[0] as f64 - 1.0, dims[1] as f64 - 1.0, dims[2] as f64 - 1.0) * (spacing / 2.0);
    Ok(GridGeometry {
        dims,
        origin: center - half,
        spacing,
    })
}

pub fn voxelize(mesh: &TriMesh, spacing: f64) -> Result<BinaryVolume> {
    voxelize_in(mesh, grid_for(mesh, spacing, DEFAULT_MARGIN)?)
}

/// Marks voxel centres inside the closed surface by counting crossings of
/// rays cast along +x. The ray offsets are jittered slightly so they never
/// pass exactly through a vertex or edge.
pub fn voxelize_in(mesh: &TriMesh, geom: GridGeometry) -> Result<BinaryVolume> {
    let [nx, ny, nz] = geom.dims;
    let h = geom.spacing;
    let jitter = Vec3::new(0.0, 1.234_567e-7, 2.718_281e-7) * h;

    // Bucket triangles by the rows (j, k) their yz-bounding box covers.
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); ny * nz];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let p = tri.map(|v| geom.to_grid(&(mesh.vertices[v] - jitter)));
        let lo = |a: usize| p.iter().map(|q| q[a]).fold(f64::INFINITY, f64::min).ceil().max(0.0) as usize;
        let hi = |a: usize, n: usize| {
            let m = p.iter().map(|q| q[a]).fold(f64::NEG_INFINITY, f64::max).floor();
            if m < 0.0 {
                None
            } else {
                Some((m as usize).min(n - 1))
            }
        };
        let (Some(jh), Some(kh)) = (hi(1, ny), hi(2, nz)) else {
            continue;
        };
        for k in lo(2)..=kh {
            for j in lo(1)..=jh {
                rows[j + ny * k].push(t);
            }
        }
    }

    let results: Vec<(Vec<bool>, bool)> = rows
        .par_iter()
        .enumerate()
        .map(|(row, tris)| {
            let (j, k) = (row % ny, row / ny);
            let q = geom.center(0, j, k) + jitter;
            let mut xs: Vec<f64> = Vec::new();
            for &t in tris {
                let [a, b, c] = mesh.triangles[t].map(|v| mesh.vertices[v]);
                let e = |p: &Vec3, r: &Vec3| (p.y - q.y) * (r.z - q.z) - (p.z - q.z) * (r.y - q.y);
                let (wa, wb, wc) = (e(&b, &c), e(&c, &a), e(&a, &b));
                let inside = (wa > 0.0 && wb > 0.0 && wc > 0.0) || (wa < 0.0 && wb < 0.0 && wc < 0.0);
                if inside {
                    let s = wa + wb + wc;
                    xs.push((wa * a.x + wb * b.x + wc * c.x) / s);
                }
            }
            xs.sort_by(f64::total_cmp);
            let odd = xs.len() % 2 == 1;
            let mut occ = vec![false; nx];
            let mut c = 0;
            for (i, o) in occ.iter_mut().enumerate() {
                let x = geom.center(i, j, k).x;
                while c < xs.len() && xs[c] <= x {
                    c += 1;
                }
                *o = c % 2 == 1;
            }
            (occ, odd)
        })
        .collect();

    let bad_rays = results.iter().filter(|r| r.1).count();
    if bad_rays > 0 {
        return Err(Error::NonWatertight { rays: bad_rays });
    }
    let mut occupancy = vec![false; geom.len()];
    for (row, (occ, _)) in results.into_iter().enumerate() {
        let base = row * nx;
        occupancy[base..base + nx].copy_from_slice(&occ);
    }
    let vol = BinaryVolume { geom, occupancy };
    if vol.count() == 0 {
        return Err(Error::EmptyVolume);
    }
    Ok(clean_occupancy(vol))
}

/// 6-connected components of the voxels where `mask` is true; returns a
/// label per voxel (`usize::MAX` outside the mask) and the component sizes.
pub fn components(geom: &GridGeometry, mask: &[bool]) -> (Vec<usize>, Vec<usize>) {
    let mut label = vec![usize::MAX; mask.len()];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for s in 0..mask.len() {
        if !mask[s] || label[s] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        label[s] = id;
        stack.push(s);
        while let Some(v) = stack.pop() {
            size += 1;
            for n in geom.neighbors6(v) {
                if mask[n] && label[n] == usize::MAX {
                    label[n] = id;
                    stack.push(n);
                }
            }
        }
        sizes.push(size);
    }
    (label, sizes)
}

/// Keeps the largest 6-connected solid component and fills enclosed cavities.
pub fn clean_occupancy(vol: BinaryVolume) -> BinaryVolume {
    let geom = vol.geom;
    let (label, sizes) = components(&geom, &vol.occupancy);
    if sizes.is_empty() {
        return vol;
    }
    let keep = (0..sizes.len()).max_by_key(|&c| (sizes[c], std::cmp::Reverse(c))).unwrap();
    let solid: Vec<bool> = label.iter().map(|&l| l == keep).collect();
    let outside: Vec<bool> = solid.iter().map(|s| !s).collect();
    let (olabel, _) = components(&geom, &outside);
    let mut exterior = vec![false; olabel.len().max(1)];
    for idx in 0..geom.len() {
        if outside[idx] && geom.is_border(idx) {
            exterior[olabel[idx]] = true;
        }
    }
    let occupancy: Vec<bool> = (0..geom.len())
        .map(|i| solid[i] || (outside[i] && !exterior[olabel[i]]))
        .collect();
    if sizes.len() > 1 || occupancy != solid {
        log::warn!("voxel occupancy cleaned: {} solid component(s)", sizes.len());
    }
    BinaryVolume { geom, occupancy }
}

/// Unsigned distance to a set of seed points, propagated from voxels that
/// hold a seed by raster sweeps that pass each voxel's nearest known seed to
/// its neighbours.
pub fn propagate_distance(geom: &GridGeometry, seeds: Vec<Option<Vec3>>) -> Vec<f64> {
    let mut nearest = seeds;
    let [nx, ny, nz] = geom.dims.map(|d| d as isize);
    let offsets: Vec<[isize; 3]> = (-1..=1)
        .flat_map(|dz| (-1..=1).flat_map(move |dy| (-1..=1).map(move |dx| [dx, dy, dz])))
        .filter(|d| *d != [0, 0, 0])
        .collect();
    let sweep = |nearest: &mut Vec<Option<Vec3>>, forward: bool| {
        let order: Box<dyn Iterator<Item = isize>> = if forward {
            Box::new(0..nz * ny * nx)
        } else {
            Box::new((0..nz * ny * nx).rev())
        };
        let mut changed = false;
        for lin in order {
            let (i, j, k) = (lin % nx, (lin / nx) % ny, lin / (nx * ny));
            let idx = lin as usize;
            let x = geom.center(i as usize, j as usize, k as usize);
            let mut best = nearest[idx];
            let mut best_d = best.map_or(f64::INFINITY, |s| (s - x).norm_squared());
            for o in &offsets {
                let (a, b, c) = (i + o[0], j + o[1], k + o[2]);
                if a < 0 || b < 0 || c < 0 || a >= nx || b >= ny || c >= nz {
                    continue;
                }
                if let Some(s) = nearest[(a + nx * (b + ny * c)) as usize] {
                    let d = (s - x).norm_squared();
                    if d < best_d {
                        best_d = d;
                        best = Some(s);
                    }
                }
            }
            if best != nearest[idx] {
                nearest[idx] = best;
                changed = true;
            }
        }
        changed
    };
    for _ in 0..8 {
        let a = sweep(&mut nearest, true);
        let b = sweep(&mut nearest, false);
        if !a && !b {
            break;
        }
    }
    nearest
        .iter()
        .enumerate()
        .map(|(idx, s)| s.map_or(f64::INFINITY, |s| (s - geom.center_of(idx)).norm()))
        .collect()
}

/// Closest-seed distance limited to `max_dist`, grown outward from the seeded
/// voxels in order of distance. Voxels farther than `max_dist` get infinity.
pub fn propagate_distance_band(geom: &GridGeometry, seeds: Vec<Option<Vec3>>, max_dist: f64) -> Vec<f64> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    #[derive(PartialEq, PartialOrd)]
    struct Key(f64);
    impl Eq for Key {}
    impl Ord for Key {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&o.0)
        }
    }

    let mut nearest = seeds;
    let mut dist = vec![f64::INFINITY; geom.len()];
    let mut heap = BinaryHeap::new();
    for (idx, s) in nearest.iter().enumerate() {
        if let Some(s) = s {
            let d = (s - geom.center_of(idx)).norm();
            dist[idx] = d;
            heap.push(Reverse((Key(d), idx)));
        }
    }
    let [nx, ny, nz] = geom.dims.map(|d| d as isize);
    while let Some(Reverse((Key(d), idx))) = heap.pop() {
        if d > dist[idx] || d > max_dist {
            continue;
        }
        let seed = nearest[idx].expect("popped voxels carry a seed");
        let [i, j, k] = geom.coords(idx).map(|v| v as isize);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (a, b, c) = (i + dx, j + dy, k + dz);
                    if a < 0 || b < 0 || c < 0 || a >= nx || b >= ny || c >= nz {
                        continue;
                    }
                    let n = (a + nx * (b + ny * c)) as usize;
                    let dn = (seed - geom.center_of(n)).norm();
                    if dn < dist[n] {
                        dist[n] = dn;
                        nearest[n] = Some(seed);
                        heap.push(Reverse((Key(dn), n)));
                    }
                }
            }
        }
    }
    dist.iter().map(|&d| if d <= max_dist { d } else { f64::INFINITY }).collect()
}

/// Signed distance to the voxel boundary of the occupied region: negative
/// inside, positive outside, zero on faces between differing voxels.
pub fn signed_distance(vol: &BinaryVolume) -> Result<ScalarGrid> {
    let geom = vol.geom;
    let n = vol.count();
    if n == 0 {
        return Err(Error::EmptyVolume);
    }
    let mut seeds: Vec<Option<Vec3>> = vec![None; geom.len()];
    for idx in 0..geom.len() {
        let x = geom.center_of(idx);
        for nb in geom.neighbors6(idx) {
            if vol.occupancy[nb] != vol.occupancy[idx] && seeds[idx].is_none() {
                seeds[idx] = Some((x + geom.center_of(nb)) / 2.0);
            }
        }
    }
    if seeds.iter().all(|s| s.is_none()) {
        // Every voxel occupied: the interface is the outer face of the grid.
        for idx in 0..geom.len() {
            if geom.is_border(idx) {
                let c = geom.coords(idx);
                let x = geom.center_of(idx);
                let mut s = x;
                for a in 0..3 {
                    if c[a] == 0 {
                        s[a] -= geom.spacing / 2.0;
                        break;
                    }
                    if c[a] + 1 == geom.dims[a] {
                        s[a] += geom.spacing / 2.0;
                        break;
                    }
                }
                seeds[idx] = Some(s);
            }
        }
    }
    let dist = propagate_distance(&geom, seeds);
    let values = dist
        .iter()
        .zip(&vol.occupancy)
        .map(|(d, &o)| if o { -d } else { *d })
        .collect();
    Ok(ScalarGrid { geom, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    #[test]
    fn index_roundtrip() {
        let g = GridGeometry {
            dims: [3, 4, 5],
            origin: Vec3::zeros(),
            spacing: 1.0,
        };
        for idx in 0..g.len() {
            let [i, j, k] = g.coords(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
        assert_eq!(g.neighbors6(0).count(), 3);
        assert_eq!(g.neighbors6(g.index(1, 1, 1)).count(), 6);
    }

    #[test]
    fn unit_cube_voxel_count() {
        let mesh = shapes::box_mesh(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), 2);
        let vol = voxelize(&mesh, 0.1).unwrap();
        let n = vol.count();
        assert!((900..=1100).contains(&n), "count {n}");
    }

    #[test]
    fn too_fine_grid_is_rejected() {
        let mesh = shapes::icosphere(1);
        assert!(matches!(voxelize(&mesh, 1e-3), Err(Error::ResolutionTooHigh { .. })));
    }

    #[test]
    fn open_surface_is_not_watertight() {
        let mut mesh = shapes::icosphere(2);
        mesh.triangles.truncate(mesh.triangles.len() - 5);
        let mesh = TriMesh::new_unchecked(mesh.vertices, mesh.triangles);
        assert!(matches!(voxelize(&mesh, 0.1), Err(Error::NonWatertight { .. })));
    }

    #[test]
    fn trilinear_sample_reproduces_linear_fields() {
        let geom = GridGeometry {
            dims: [4, 5, 6],
            origin: Vec3::new(-1.0, 0.5, 2.0),
            spacing: 0.5,
        };
        let f = |p: Vec3| 2.0 * p.x - p.y + 0.5 * p.z + 3.0;
        let grid = ScalarGrid {
            geom,
            values: (0..geom.len()).map(|i| f(geom.center_of(i))).collect(),
        };
        let p = Vec3::new(-0.3, 1.7, 3.1);
        assert!((grid.sample(&p) - f(p)).abs() < 1e-12);
        assert!((grid.sample_gradient(&p) - Vec3::new(2.0, -1.0, 0.5)).norm() < 1e-12);
        assert!((grid.gradient_at(geom.index(2, 2, 2)) - Vec3::new(2.0, -1.0, 0.5)).norm() < 1e-12);
    }
}
