//! End-to-end run: surface mesh in, hexahedral mesh and report out.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};

use crate::area_flow::{align_to_source, area_correct};
use crate::assembly::{assemble_initial_map, laplacian_smooth, VolumetricMap};
use crate::config::{PipelineConfig, Spacing};
use crate::conformal::{blend_punctured_maps, conformal_to_sphere, opposite_point, select_puncture_triangle};
use crate::cube::{build_cube_shells, CubeComplex};
use crate::error::{Result, StageExt};
use crate::hexmesh::HexMesh;
use crate::io::{load_surface_mesh, write_hex_vtk, write_map_json, write_metrics_report, write_obj};
use crate::levelset::ChanVeseOptions;
use crate::mesh::{TriMesh, Vec3};
use crate::quality::{compute_quality, PreFlowSummary, QualityReport};
use crate::shapes::subdivide;
use crate::shells::{build_model_shells, ShellOptions, ShellStack};
use crate::sphere::SphereMap;
use crate::voxel::{clean_occupancy, voxelize};
use crate::volume_flow::{integrate_volume_flow, VolumeFlowOptions};

/// Similarity taking the input into `[0.05, 0.95]^3`, centred.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub center: Vec3,
    pub scale: f64,
}

impl Normalization {
    pub fn fit(mesh: &TriMesh) -> Self {
        let (lo, hi) = mesh.bbox();
        let extent = (hi - lo).max();
        Self {
            center: (lo + hi) / 2.0,
            scale: 0.9 / extent,
        }
    }

    pub fn forward(&self, p: &Vec3) -> Vec3 {
        (p - self.center) * self.scale + Vec3::repeat(0.5)
    }

    pub fn inverse(&self, p: &Vec3) -> Vec3 {
        (p - Vec3::repeat(0.5)) / self.scale + self.center
    }
}

#[derive(Debug, Clone)]
pub struct StageTiming {
    pub stage: &'static str,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    /// Final mesh in model units.
    pub mesh: HexMesh,
    /// Final map in model units.
    pub map: VolumetricMap,
    /// Final quality; `pre_flow` holds the statistics before the volume flow.
    pub report: QualityReport,
    /// Quality of the assembled map before smoothing.
    pub assembled: QualityReport,
    /// Quality after smoothing, before the volume flow.
    pub smoothed: QualityReport,
    pub timings: Vec<StageTiming>,
    /// Voxel edge in model units.
    pub spacing: f64,
    pub normalization: Normalization,
    /// Everything below is in normalized coordinates.
    pub shells: ShellStack,
    pub model_maps: Vec<SphereMap>,
    /// Maps of the refined cube shells.
    pub cube_maps: Vec<SphereMap>,
    /// Sphere image of every cube shell node, per shell.
    pub cube_points: Vec<Vec<Vec3>>,
    pub volume_variances: Vec<f64>,
    pub flip_warning: bool,
}

struct Clock {
    timings: Vec<StageTiming>,
}

impl Clock {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f().stage(stage);
        let seconds = t0.elapsed().as_secs_f64();
        info!("{stage}: {seconds:.3} s");
        self.timings.push(StageTiming { stage, seconds });
        out
    }
}

/// Sphere map of one shell: conformal map, optional area correction and
/// alignment, done twice with opposite punctures and blended. If only one
/// puncture succeeds its map is used alone.
pub fn shell_sphere_map(shell: &TriMesh, hint: Vec3, area_steps: usize, correct: bool) -> Result<SphereMap> {
    let puncture = select_puncture_triangle(shell, Some(hint));
    let single = |hint: Vec3| -> Result<SphereMap> {
        let mut map = conformal_to_sphere(shell, Some(hint))?;
        if correct {
            map = area_correct(&map, area_steps)?;
        }
        Ok(align_to_source(&map))
    };
    let (first, second) = rayon::join(
        || single(shell.triangle_centroid(puncture)),
        || single(opposite_point(shell, puncture)),
    );
    match (first, second) {
        (Ok(a), Ok(b)) => Ok(blend_punctured_maps(&a, &b)),
        (Ok(m), Err(e)) | (Err(e), Ok(m)) => {
            warn!("one puncture failed ({e}); using the other map alone");
            Ok(m)
        }
        (Err(e), Err(_)) => Err(e),
    }
}

/// Sphere maps for nested shells, outermost first. Each puncture sits near
/// the previous shell's puncture, starting from `start` (or the top of the
/// outer shell).
pub fn shell_sphere_maps(shells: &[&TriMesh], area_steps: usize, correct: bool, start: Option<Vec3>) -> Result<Vec<SphereMap>> {
    let mut maps: Vec<SphereMap> = Vec::with_capacity(shells.len());
    for shell in shells {
        let hint = match (maps.last(), start) {
            (Some(prev), _) => prev.source.triangle_centroid(prev.puncture),
            (None, Some(h)) => h,
            (None, None) => {
                let (lo, hi) = shell.bbox();
                Vec3::new((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0, hi.z)
            }
        };
        maps.push(shell_sphere_map(shell, hint, area_steps, correct)?);
    }
    Ok(maps)
}

/// The input surface split by midpoint subdivision until its edges are
/// near the voxel size or the vertex budget is reached; `None` if the input
/// is already over budget.
fn input_shell(mesh: &TriMesh, h: f64, budget: usize) -> Option<TriMesh> {
    if mesh.num_vertices() > budget {
        return None;
    }
    let longest = |m: &TriMesh| {
        m.edges()
            .iter()
            .map(|&(a, b)| (m.vertices[a] - m.vertices[b]).norm())
            .fold(0.0, f64::max)
    };
    let mut m = mesh.clone();
    while 4 * m.num_vertices() <= budget && longest(&m) > 2.0 * h {
        m = subdivide(&m);
    }
    Some(m)
}

/// Maps of the model shells; `outer` replaces the outermost level set when it maps cleanly.
fn model_sphere_maps(shells: &[TriMesh], outer: Option<&TriMesh>, steps: usize) -> Result<Vec<SphereMap>> {
    let inner: Vec<&TriMesh> = shells[1..].iter().collect();
    if let Some(outer) = outer {
        match shell_sphere_maps(&[outer], steps, true, None) {
            Ok(mut maps) => {
                let start = maps[0].source.triangle_centroid(maps[0].puncture);
                maps.extend(shell_sphere_maps(&inner, steps, true, Some(start))?);
                return Ok(maps);
            }
            Err(e) => warn!("input surface cannot serve as the outer shell ({e}); using the level set"),
        }
    }
    shell_sphere_maps(&shells.iter().collect::<Vec<_>>(), steps, true, None)
}

/// Maps of the refined cube shells and the sphere image of every shell node.
fn cube_sphere_maps(cube: &CubeComplex, steps: usize, correct: bool) -> Result<(Vec<SphereMap>, Vec<Vec<Vec3>>)> {
    let refined: Vec<(TriMesh, Vec<usize>)> = (1..=cube.n)
        .map(|k| cube.refined_shell(k, refinement(2 * (cube.n - k) + 1, CUBE_SHELL_VERTICES)))
        .collect();
    let meshes: Vec<&TriMesh> = refined.iter().map(|(m, _)| m).collect();
    let maps = shell_sphere_maps(&meshes, steps, correct, None)?;
    let points = maps
        .iter()
        .zip(&refined)
        .map(|(map, (_, nodes))| nodes.iter().map(|&v| map.positions[v]).collect())
        .collect();
    Ok((maps, points))
}

/// Target vertex count of a refined cube shell.
const CUBE_SHELL_VERTICES: usize = 20_000;

/// Refinement factor giving a box surface `cells` lattice cells wide about `vertices` vertices.
fn refinement(cells: usize, vertices: usize) -> usize {
    (((vertices as f64 / 6.0).sqrt() / cells as f64).round() as usize).max(1)
}

fn shell_options(config: &PipelineConfig) -> ShellOptions {
    let base = ShellOptions::default();
    ShellOptions {
        schedule: config.shells.schedule,
        core_depth_factor: config.shells.core_depth_factor,
        chan_vese: ChanVeseOptions {
            eps: config.gac.eps,
            dt: config.gac.dt,
            max_steps: config.gac.max_steps,
            reinit_every: config.gac.reinit_every,
            patience: config.gac.patience,
            ..base.chan_vese.clone()
        },
        ..base
    }
}

/// Runs every stage on an already loaded surface.
pub fn run_on_mesh(input: &TriMesh, config: &PipelineConfig) -> Result<PipelineResult> {
    let start = Instant::now();
    let mut clock = Clock { timings: Vec::new() };
    let norm = Normalization::fit(input);
    let mesh = TriMesh::new_unchecked(input.vertices.iter().map(|p| norm.forward(p)).collect(), input.triangles.clone());
    let h = match config.spacing {
        Spacing::Auto => 0.9 / 128.0,
        Spacing::Fixed(s) => s * norm.scale,
    };
    let n = config.resolution;

    let beta = clock.run("voxelize", || Ok(clean_occupancy(voxelize(&mesh, h)?)))?;
    let mut shells = clock.run("shells", || build_model_shells(&beta, n, &shell_options(config)))?;
    let cube = build_cube_shells(n);
    let outer = config
        .shells
        .outer_from_input
        .then(|| input_shell(&mesh, h, shell_options(config).remesh.max_vertices))
        .flatten();
    let steps = config.flows.area_steps;
    let (model_maps, cube_side) = clock.run("sphere maps", || {
        let (model, cube_side) = rayon::join(
            || model_sphere_maps(&shells.shells, outer.as_ref(), steps),
            || cube_sphere_maps(&cube, steps, config.flows.area_correct_cube),
        );
        Ok((model?, cube_side?))
    })?;
    let (cube_maps, cube_points) = cube_side;
    if model_maps[0].source.vertices != shells.shells[0].vertices {
        shells.shells[0] = model_maps[0].source.clone();
    }
    let assembled = clock.run("assembly", || assemble_initial_map(&cube, &model_maps, &cube_points))?;
    let assembled_report = compute_quality(&assembled.hex_mesh());
    let smoothed = clock.run("smoothing", || {
        Ok(laplacian_smooth(&assembled, config.smoothing.iterations, config.smoothing.layers))
    })?;
    let smoothed_report = compute_quality(&smoothed.hex_mesh());
    let flow_opts = VolumeFlowOptions {
        steps: config.flows.volume_steps,
        rounds: config.flows.volume_rounds,
        ..VolumeFlowOptions::default()
    };
    let flowed = clock.run("volume flow", || integrate_volume_flow(&smoothed, &flow_opts))?;

    let images = flowed.map.images.iter().map(|p| norm.inverse(p)).collect();
    let map = flowed.map.with_images(images);
    let mesh_out = map.hex_mesh();
    let mut report = compute_quality(&mesh_out);
    report.pre_flow = Some(PreFlowSummary {
        volume_variance: smoothed_report.volume_variance,
        concave_fraction: smoothed_report.concave_fraction,
    });
    report.wall_time_sec = start.elapsed().as_secs_f64();
    Ok(PipelineResult {
        mesh: mesh_out,
        map,
        report,
        assembled: assembled_report,
        smoothed: smoothed_report,
        timings: clock.timings,
        spacing: h / norm.scale,
        normalization: norm,
        shells,
        model_maps,
        cube_maps,
        cube_points,
        volume_variances: flowed.variances,
        flip_warning: flowed.flip_warning,
    })
}

/// Path of the `k`-th debug shell next to `base`.
fn debug_shell_path(base: &Path, k: usize) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("hexcube");
    base.with_file_name(format!("{stem}_shell_{k}.obj"))
}

/// Loads the input, runs the pipeline and writes the requested outputs.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineResult> {
    let input = load_surface_mesh(&config.input).stage("load")?;
    let result = run_on_mesh(&input, config)?;
    let out = &config.outputs;
    if let Some(p) = &out.hex_vtk {
        write_hex_vtk(&result.mesh, p).stage("write mesh")?;
    }
    if let Some(p) = &out.map_json {
        write_map_json(&result.map.images, p).stage("write map")?;
    }
    if let Some(p) = &out.metrics_json {
        write_metrics_report(&result.report, p).stage("write metrics")?;
    }
    if out.debug_shells {
        let base = out.hex_vtk.clone().unwrap_or_else(|| PathBuf::from("hexcube.vtk"));
        let norm = result.normalization;
        for (k, shell) in result.shells.shells.iter().enumerate() {
            let model = TriMesh::new_unchecked(shell.vertices.iter().map(|p| norm.inverse(p)).collect(), shell.triangles.clone());
            write_obj(&model, debug_shell_path(&base, k + 1)).stage("write shells")?;
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_round_trips() {
        let mesh = crate::shapes::box_mesh(Vec3::new(-1.0, 2.0, 0.0), Vec3::new(3.0, 4.0, 1.0), 1);
        let n = Normalization::fit(&mesh);
        let (lo, hi) = mesh.bbox();
        assert!((n.forward(&lo).x - 0.05).abs() < 1e-15);
        assert!((n.forward(&hi).x - 0.95).abs() < 1e-15);
        let p = Vec3::new(0.3, 2.5, 0.7);
        assert!((n.inverse(&n.forward(&p)) - p).norm() < 1e-14);
    }

    #[test]
    fn debug_shell_names() {
        assert_eq!(debug_shell_path(Path::new("out/m.vtk"), 2), PathBuf::from("out/m_shell_2.obj"));
    }
}
