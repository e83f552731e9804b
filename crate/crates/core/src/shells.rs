//! Nested intermediate surfaces of a solid.
//!
//! The outer shells are inner offsets of the solid (level sets of its signed
//! distance), taken no deeper than the depth at which the offset region
//! stays a single simply connected piece. Shells that must be smaller than
//! that core are snapshots of a Chan-Vese contour grown from the core's
//! geodesic centre until it fills the core.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::isosurface::{largest_component, marching_tetrahedra};
use crate::levelset::{evolve_chan_vese, heaviside, ChanVeseOptions, EvolutionTrace, Initialization};
use crate::mesh::{TriMesh, Vec3};
use crate::remesh::{cleanup_level_set, project_to_level, RemeshOptions};
use crate::voxel::{signed_distance, BinaryVolume, GridGeometry, ScalarGrid};

/// How shell sizes are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShellSchedule {
    /// Shell `k` encloses the same volume fraction as cube shell `k`.
    VolumeMatched,
    /// Shells evenly spaced in front travel (offset depth).
    StepUniform,
}

#[derive(Debug, Clone)]
pub struct ShellOptions {
    pub schedule: ShellSchedule,
    /// Fraction of the deepest valid offset used as the core depth.
    pub core_depth_factor: f64,
    /// Minimum thickness, in voxels, kept below the core when searching its depth.
    pub core_thickness: f64,
    pub chan_vese: ChanVeseOptions,
    pub remesh: RemeshOptions,
    /// Minimum gap between consecutive shells, in voxels.
    pub min_separation: f64,
}

impl Default for ShellOptions {
    fn default() -> Self {
        Self {
            schedule: ShellSchedule::VolumeMatched,
            core_depth_factor: 0.95,
            core_thickness: 2.0,
            chan_vese: ChanVeseOptions {
                polish_steps: 0,
                ..ChanVeseOptions::default()
            },
            remesh: RemeshOptions::default(),
            min_separation: 0.25,
        }
    }
}

/// Extracted shells, outermost first, with the fields they are level sets of.
#[derive(Debug, Clone)]
pub struct ShellStack {
    pub shells: Vec<TriMesh>,
    /// `fields[k]` is negative inside `shells[k]` (world units).
    pub fields: Vec<ScalarGrid>,
    /// Depth (world units) of the core below which contour snapshots are used.
    pub core_depth: f64,
    /// Number of shells taken from the growing contour.
    pub grown: usize,
    /// Trace of the growth run, when one was needed.
    pub growth: Option<EvolutionTrace>,
}

/// Volume fraction enclosed by cube shell `k` of `n` (`k = 1` is the boundary).
pub fn cube_volume_fraction(k: usize, n: usize) -> f64 {
    ((n as f64 - k as f64 + 0.5) / (n as f64 - 0.5)).powi(3)
}

/// Signed distances in ascending order, for fast offset volumes.
struct DepthProfile {
    sorted: Vec<f64>,
    h: f64,
}

impl DepthProfile {
    fn new(sdf: &ScalarGrid) -> Self {
        let mut sorted = sdf.values.clone();
        sorted.sort_by(f64::total_cmp);
        Self {
            sorted,
            h: sdf.geom.spacing,
        }
    }

    /// Smoothed volume (in voxels) of `{sdf < -depth}`.
    fn volume(&self, depth: f64) -> f64 {
        let lo = self.sorted.partition_point(|&v| v + depth < -self.h);
        let hi = self.sorted.partition_point(|&v| v + depth <= self.h);
        lo as f64
            + self.sorted[lo..hi]
                .iter()
                .map(|&v| heaviside((v + depth) / self.h, 1.0))
                .sum::<f64>()
    }

    /// Depth at which the smoothed offset volume equals `target` (voxels).
    fn depth_for_volume(&self, target: f64, max_depth: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, max_depth);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.volume(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Number of 6-connected components after adding each voxel of `order` in turn.
fn component_counts<'a>(geom: &GridGeometry, order: impl Iterator<Item = &'a usize>) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..geom.len()).collect();
    let mut added = vec![false; geom.len()];
    let mut count = 0usize;
    let mut out = Vec::with_capacity(geom.len());
    for &v in order {
        added[v] = true;
        count += 1;
        for n in geom.neighbors6(v) {
            if added[n] {
                let (a, b) = (find(&mut parent, v), find(&mut parent, n));
                if a != b {
                    parent[a] = b;
                    count -= 1;
                }
            }
        }
        out.push(count);
    }
    out
}

/// Largest depth `d` such that every offset `{sdf < -d'}` with
/// `d' <= d + thickness` voxels is one 6-connected piece with a connected
/// complement.
pub fn max_simple_depth(sdf: &ScalarGrid, thickness: f64) -> f64 {
    let n = sdf.values.len();
    let h = sdf.geom.spacing;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sdf.values[a].total_cmp(&sdf.values[b]).then(a.cmp(&b)));
    let inside = component_counts(&sdf.geom, order.iter());
    let mut outside = component_counts(&sdf.geom, order.iter().rev());
    outside.reverse();
    // The offset holding the first `p` voxels: inside[p - 1] pieces, outside[p] pieces.
    let value = |i: usize| sdf.values[order[i]];
    let surface = order.partition_point(|&v| sdf.values[v] < 0.0);
    let mut fail_depth = -value(0);
    for p in (1..=surface).rev() {
        // Only prefixes that end between distinct values are realized.
        if p < n && value(p) <= value(p - 1) {
            continue;
        }
        let outside_pieces = if p < n { outside[p] } else { 0 };
        if inside[p - 1] != 1 || outside_pieces != 1 {
            fail_depth = if p < n { -value(p) } else { 0.0 };
            break;
        }
    }
    (fail_depth - thickness * h).max(0.0)
}

/// 6-connected hop distances inside `mask` from `start`.
fn hop_distances(geom: &GridGeometry, mask: &[bool], start: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; mask.len()];
    let mut queue = VecDeque::from([start]);
    dist[start] = 0;
    while let Some(v) = queue.pop_front() {
        for n in geom.neighbors6(v) {
            if mask[n] && dist[n] == usize::MAX {
                dist[n] = dist[v] + 1;
                queue.push_back(n);
            }
        }
    }
    dist
}

/// Voxel of `mask` minimizing its larger hop distance to the two ends of a
/// double-sweep diameter; ties go to the deeper voxel, then the lower index.
pub fn geodesic_center(geom: &GridGeometry, mask: &[bool], depth: &[f64]) -> Option<usize> {
    let start = (0..mask.len()).filter(|&i| mask[i]).min_by(|&a, &b| depth[b].total_cmp(&depth[a]).then(a.cmp(&b)))?;
    let far = |d: &[usize]| (0..d.len()).filter(|&i| d[i] != usize::MAX).max_by(|&a, &b| d[a].cmp(&d[b]).then(b.cmp(&a)));
    let a = far(&hop_distances(geom, mask, start))?;
    let da = hop_distances(geom, mask, a);
    let b = far(&da)?;
    let db = hop_distances(geom, mask, b);
    (0..mask.len())
        .filter(|&i| mask[i] && da[i] != usize::MAX)
        .min_by(|&x, &y| {
            da[x].max(db[x])
                .cmp(&da[y].max(db[y]))
                .then(depth[y].total_cmp(&depth[x]))
                .then(x.cmp(&y))
        })
}

/// Picks, for each target volume (ascending), the first step whose inside
/// volume reaches it, keeping steps strictly increasing and inside `[0, last]`.
pub fn schedule_steps(volumes: &[usize], targets: &[f64], last: usize) -> Vec<usize> {
    let mut steps = Vec::with_capacity(targets.len());
    let mut prev: Option<usize> = None;
    for &t in targets {
        let first = (0..=last).find(|&s| volumes[s] as f64 >= t).unwrap_or(last);
        let s = match prev {
            Some(p) if first <= p => p + 1,
            _ => first,
        };
        steps.push(s.min(last));
        prev = Some(s);
    }
    steps
}

/// Level-set fields for `n` nested shells of `beta`, outermost first.
pub fn plan_shell_fields(beta: &BinaryVolume, n: usize, opts: &ShellOptions) -> Result<(Vec<ScalarGrid>, f64, Option<EvolutionTrace>)> {
    assert!(n >= 1);
    let sdf = signed_distance(beta)?;
    let geom = sdf.geom;
    let h = geom.spacing;
    let core = opts.core_depth_factor * max_simple_depth(&sdf, opts.core_thickness);
    let profile = DepthProfile::new(&sdf);
    let total = profile.volume(0.0);
    let core_volume = profile.volume(core);
    let shifted = |d: f64| ScalarGrid {
        geom,
        values: sdf.values.iter().map(|v| v + d).collect(),
    };

    let mut depths: Vec<Option<f64>> = Vec::with_capacity(n);
    let mut grown_targets = Vec::new();
    for k in 1..=n {
        match opts.schedule {
            ShellSchedule::VolumeMatched => {
                let target = cube_volume_fraction(k, n) * total;
                if k == 1 {
                    depths.push(Some(0.0));
                } else if target >= core_volume {
                    depths.push(Some(profile.depth_for_volume(target, core)));
                } else {
                    depths.push(None);
                    grown_targets.push(target);
                }
            }
            ShellSchedule::StepUniform => depths.push(Some(core * (k - 1) as f64 / n as f64)),
        }
    }

    let mut fields: Vec<ScalarGrid> = depths.iter().flatten().map(|&d| shifted(d)).collect();
    let mut growth = None;
    if !grown_targets.is_empty() {
        let kmask: Vec<bool> = sdf.values.iter().map(|&v| v < -core).collect();
        let kvol = BinaryVolume {
            geom,
            occupancy: kmask.clone(),
        };
        let depth: Vec<f64> = sdf.values.iter().map(|v| -v).collect();
        let center = geodesic_center(&geom, &kmask, &depth).ok_or(Error::EmptyVolume)?;
        let init = Initialization::Seed {
            center: geom.center_of(center),
            radius: 1.5 * h,
        };
        let first = evolve_chan_vese(&kvol, &init, None, &opts.chan_vese)?;
        let last = first.steps_to_convergence;
        let volumes: Vec<usize> = (0..=last).map(|s| first.inside_at(s)).collect();
        // Innermost first, so the steps come out increasing.
        let ascending: Vec<f64> = grown_targets.iter().rev().copied().collect();
        let mut steps = schedule_steps(&volumes, &ascending, last.saturating_sub(1));
        steps.dedup();
        let second = evolve_chan_vese(
            &kvol,
            &init,
            None,
            &ChanVeseOptions {
                keep: steps.clone(),
                max_steps: last.max(1),
                ..opts.chan_vese.clone()
            },
        )?;
        if second.snapshots.len() != grown_targets.len() {
            return Err(Error::Overlap(format!(
                "core admits only {} distinct contour snapshots for {} shells",
                second.snapshots.len(),
                grown_targets.len()
            )));
        }
        for snap in second.snapshots.iter().rev() {
            fields.push(snap.phi.clone());
        }
        growth = Some(second);
    }
    Ok((fields, core, growth))
}

/// Isosurface of `field` at zero (or a nearby iso-value if that surface is
/// not a genus-zero sphere), cleaned up.
pub fn extract_surface(field: &ScalarGrid, remesh: &RemeshOptions) -> Result<TriMesh> {
    let h = field.geom.spacing;
    let mut last_err = None;
    for iso in [0.0, -0.1 * h, 0.1 * h] {
        let raw = largest_component(&marching_tetrahedra(field, iso));
        if raw.num_triangles() == 0 {
            last_err = Some(Error::EmptyInterface("level set is empty".into()));
            continue;
        }
        if let Err(e) = raw.validate_topology() {
            last_err = Some(e);
            continue;
        }
        let clean = cleanup_level_set(&raw, field, iso, remesh);
        match clean.validate() {
            Ok(()) => return Ok(clean),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Topology("surface extraction failed".into())))
}

/// Pushes every vertex of `inner` to at least `gap` inside the zero level of `outer`.
pub fn enforce_separation(inner: &mut TriMesh, outer: &ScalarGrid, gap: f64) -> Result<()> {
    let mut worst = f64::NEG_INFINITY;
    for p in inner.vertices.iter_mut() {
        if outer.sample(p) > -gap {
            *p = project_to_level(outer, -gap * 1.05, *p);
        }
        worst = worst.max(outer.sample(p));
    }
    if worst >= 0.0 {
        return Err(Error::Overlap(format!(
            "inner shell vertex at {worst:e} outside the enclosing shell"
        )));
    }
    Ok(())
}

/// `n` nested shells of the solid `beta`, outermost (the solid's surface) first.
pub fn build_model_shells(beta: &BinaryVolume, n: usize, opts: &ShellOptions) -> Result<ShellStack> {
    let (fields, core_depth, growth) = plan_shell_fields(beta, n, opts)?;
    let h = beta.geom.spacing;
    let extracted: Vec<Result<TriMesh>> = fields.par_iter().map(|f| extract_surface(f, &opts.remesh)).collect();
    let mut shells: Vec<TriMesh> = Vec::with_capacity(n);
    for (k, mesh) in extracted.into_iter().enumerate() {
        let mut mesh = mesh?;
        if k > 0 {
            enforce_separation(&mut mesh, &fields[k - 1], opts.min_separation * h)?;
            mesh.validate()?;
        }
        shells.push(mesh);
    }
    let grown = growth.as_ref().map_or(0, |g| g.snapshots.len());
    Ok(ShellStack {
        shells,
        fields,
        core_depth,
        grown,
        growth,
    })
}

/// Shells from a contour grown from the inside: the final level set is shell
/// 1 and earlier snapshots, largest first, follow.
pub fn extract_shells(trace: &EvolutionTrace, n: usize, opts: &ShellOptions) -> Result<Vec<TriMesh>> {
    let mut fields = vec![trace.final_phi.clone()];
    let mut snaps: Vec<_> = trace.snapshots.iter().collect();
    snaps.sort_by(|a, b| b.inside_voxels.cmp(&a.inside_voxels).then(b.step.cmp(&a.step)));
    fields.extend(snaps.into_iter().take(n.saturating_sub(1)).map(|s| s.phi.clone()));
    if fields.len() != n {
        return Err(Error::Overlap(format!("trace holds {} level sets for {n} shells", fields.len())));
    }
    let h = trace.final_phi.geom.spacing;
    let mut shells: Vec<TriMesh> = Vec::with_capacity(n);
    for (k, field) in fields.iter().enumerate() {
        let mut mesh = extract_surface(field, &opts.remesh)?;
        if k > 0 {
            enforce_separation(&mut mesh, &fields[k - 1], opts.min_separation * h)?;
        }
        shells.push(mesh);
    }
    Ok(shells)
}

/// Mean distance of the vertices from `center`.
pub fn mean_radius(mesh: &TriMesh, center: &Vec3) -> f64 {
    mesh.vertices.iter().map(|p| (p - center).norm()).sum::<f64>() / mesh.num_vertices() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_fractions_match_the_lattice() {
        assert_eq!(cube_volume_fraction(1, 4), 1.0);
        assert!((cube_volume_fraction(4, 4) - (0.5f64 / 3.5).powi(3)).abs() < 1e-15);
    }

    #[test]
    fn steps_are_strictly_increasing() {
        let volumes = vec![10, 10, 12, 20, 40, 80];
        assert_eq!(schedule_steps(&volumes, &[5.0, 11.0, 30.0], 5), vec![0, 2, 4]);
        assert_eq!(schedule_steps(&volumes, &[1.0, 2.0, 3.0], 5), vec![0, 1, 2]);
    }
}
