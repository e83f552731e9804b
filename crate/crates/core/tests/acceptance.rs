//! Acceptance criteria, one test per criterion. Each prints a single
//! `criterion N [PASS|FAIL]` line to stderr before asserting.

mod common;

use std::f64::consts::PI;
use std::io::Write;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use common::{divergence_volume, jittered_sphere, perturbed_hex, random_direction, sphere_gradient_rms};
use hexcube::area_flow::{compute_area_density, integrate_area_flow_observed, solve_sphere_poisson, total_area, vertex_masses};
use hexcube::conformal::{
    build_cotangent_system, conformal_to_sphere, cotangent_matrix, relative_residual, select_puncture_triangle,
    solve_planar_coordinates,
};
use hexcube::config::PipelineConfig;
use hexcube::cube::build_cube_shells;
use hexcube::hex;
use hexcube::linalg::norm;
use hexcube::pipeline::{run_on_mesh, PipelineResult};
use hexcube::shapes;
use hexcube::sphere::SphereLocator;
use hexcube::volume_flow::{cell_laplacian, face_divergence, face_gradient, jacobian_field, solve_divergence_potential};
use hexcube::{TriMesh, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: usize, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {criterion} [{verdict}] {detail}");
    assert!(pass, "criterion {criterion}: {detail}");
}

struct Run {
    result: PipelineResult,
    seconds: f64,
}

/// Pipeline runs are serialized so their timings do not overlap.
static RUN_LOCK: Mutex<()> = Mutex::new(());

fn run(mesh: TriMesh, resolution: usize, smoothing_iterations: usize) -> Result<Run, String> {
    let _guard = RUN_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let mut config = PipelineConfig::default();
    config.resolution = resolution;
    config.smoothing.iterations = smoothing_iterations;
    let start = Instant::now();
    let result = run_on_mesh(&mesh, &config).map_err(|e| e.to_string())?;
    Ok(Run {
        result,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn cube_run() -> &'static Result<Run, String> {
    static CELL: OnceLock<Result<Run, String>> = OnceLock::new();
    CELL.get_or_init(|| run(shapes::box_mesh(Vec3::zeros(), Vec3::repeat(1.0), 4), 4, 10))
}

fn ellipsoid_run() -> &'static Result<Run, String> {
    static CELL: OnceLock<Result<Run, String>> = OnceLock::new();
    CELL.get_or_init(|| run(shapes::ellipsoid(2.0, 1.0, 1.0, 4), 6, 10))
}

fn peanut_run() -> &'static Result<Run, String> {
    static CELL: OnceLock<Result<Run, String>> = OnceLock::new();
    CELL.get_or_init(|| run(shapes::peanut(1.0, 1.2, 4), 6, 10))
}

fn get<'a>(criterion: usize, name: &str, run: &'a Result<Run, String>) -> &'a Run {
    match run {
        Ok(r) => r,
        Err(e) => {
            report(criterion, false, &format!("{name} pipeline failed: {e}"));
            unreachable!()
        }
    }
}

#[test]
fn criterion_01_lattice_structure() {
    let start = Instant::now();
    let mut counts = Vec::new();
    let mut exact = true;
    for n in [4usize, 6, 7, 8] {
        let cube = build_cube_shells(n);
        exact &= cube.nodes.len() == (2 * n).pow(3) && cube.hexes.len() == (2 * n - 1).pow(3);
        counts.push((n, cube.nodes.len(), cube.hexes.len()));
    }
    let table = counts.iter().any(|c| *c == (6, 1728, 1331))
        && counts.iter().any(|c| *c == (7, 2744, 2197))
        && counts.iter().any(|c| *c == (8, 4096, 3375));
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        exact && table && secs < 1.0,
        &format!("counts (N, nodes, hexes) {counts:?} in {secs:.3} s"),
    );
}

#[test]
fn criterion_02_identity_on_the_unit_cube() {
    let run = get(2, "cube", cube_run());
    let r = &run.result;
    let displacement = r
        .map
        .images
        .iter()
        .zip(&r.map.cube.nodes)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max)
        / r.spacing;
    let var = r.report.volume_variance;
    let concave = r.report.concave_fraction;
    report(
        2,
        var <= 1e-3 && concave == 0.0 && displacement <= 1.0 && run.seconds < 60.0,
        &format!(
            "variance {var:.2e}, concave {concave}, max displacement {displacement:.3} voxels, {:.1} s",
            run.seconds
        ),
    );
}

fn flow_efficacy(name: &str, run: &Run) -> (bool, String) {
    let r = &run.result;
    let pre = r.report.pre_flow.map(|p| p.volume_variance).unwrap_or(f64::NAN);
    let post = r.report.volume_variance;
    let pass = post <= 0.5 * pre && post <= 0.25 && run.seconds < 300.0;
    (pass, format!("{name}: {pre:.4} -> {post:.2e} in {:.1} s", run.seconds))
}

#[test]
fn criterion_03_volume_flow_efficacy() {
    let (a, da) = flow_efficacy("ellipsoid", get(3, "ellipsoid", ellipsoid_run()));
    let (b, db) = flow_efficacy("peanut", get(3, "peanut", peanut_run()));
    report(3, a && b, &format!("{da}; {db}"));
}

#[test]
fn criterion_04_jacobian_near_one() {
    let r = &get(4, "ellipsoid", ellipsoid_run()).result;
    let jac = jacobian_field(&r.map, None).expect("no inverted cells");
    let inside = jac.iter().filter(|j| (0.9..=1.1).contains(*j)).count() as f64 / jac.len() as f64;
    report(4, inside >= 0.9, &format!("{:.1}% of cells within [0.9, 1.1]", 100.0 * inside));
}

#[test]
fn criterion_05_element_quality() {
    let r = &get(5, "ellipsoid", ellipsoid_run()).result;
    let ok = r.report.acceptable_fraction();
    report(5, ok >= 0.85, &format!("{:.1}% of elements acceptable", 100.0 * ok));
}

#[test]
fn criterion_06_smoothing_removes_concave_elements() {
    let r = &get(6, "peanut", peanut_run()).result;
    let before = r.assembled.concave_fraction;
    let after = r.smoothed.concave_fraction;
    report(
        6,
        after <= 0.5 * before,
        &format!(
            "concave fraction {before:.4} assembled, {after:.4} after 10 iterations{}",
            if before == 0.0 { " (nothing to remove)" } else { "" }
        ),
    );
}

#[test]
fn criterion_07_area_flow_on_the_outer_shell() {
    let r = &get(7, "ellipsoid", ellipsoid_run()).result;
    let shell = &r.shells.shells[0];
    let map = conformal_to_sphere(shell, None).expect("conformal map");
    let density = compute_area_density(shell, &map).expect("density");
    let theta = solve_sphere_poisson(&map, &density).expect("poisson");
    let mut worst_area = (map.total_area() - 4.0 * PI).abs();
    let mut observe = |pos: &[Vec3]| {
        worst_area = worst_area.max((total_area(pos, &shell.triangles) - 4.0 * PI).abs());
    };
    let flowed = integrate_area_flow_observed(&map, &theta, &density, 20, &mut observe).expect("area flow");
    let before = density.variance();
    let after = compute_area_density(shell, &flowed).expect("density").variance();
    let reduction = 1.0 - after / before;
    report(
        7,
        reduction >= 0.9 && worst_area <= 1e-6 && flowed.is_injective(),
        &format!(
            "density variance {before:.4} -> {after:.2e} ({:.1}% reduction), max area error {worst_area:.1e}",
            100.0 * reduction
        ),
    );
}

#[test]
fn criterion_08_cotangent_system_and_injective_maps() {
    let mut worst_sym = 0.0f64;
    let mut worst_solve = 0.0f64;
    let mut maps = 0;
    let mut flipped = 0;
    let mut failures = Vec::new();
    for (name, run) in [("cube", cube_run()), ("ellipsoid", ellipsoid_run()), ("peanut", peanut_run())] {
        let r = &get(8, name, run).result;
        for shell in &r.shells.shells {
            let d = cotangent_matrix(&shell.vertices, &shell.triangles).expect("cotangent matrix");
            let scale = d.max_abs();
            worst_sym = worst_sym.max(d.asymmetry() / scale).max(d.max_row_sum() / scale);
            let sys = build_cotangent_system(shell, select_puncture_triangle(shell, None)).expect("system");
            match solve_planar_coordinates(&sys) {
                Ok(uv) => {
                    let x: Vec<f64> = uv.iter().map(|p| p.x).collect();
                    let y: Vec<f64> = uv.iter().map(|p| p.y).collect();
                    worst_solve = worst_solve
                        .max(relative_residual(&sys.d, &x, &sys.a))
                        .max(relative_residual(&sys.d, &y, &sys.b));
                }
                Err(e) => failures.push(format!("{name}: {e}")),
            }
        }
        for map in r.model_maps.iter().chain(&r.cube_maps) {
            maps += 1;
            flipped += map.flipped_triangles().len();
        }
    }
    report(
        8,
        worst_sym <= 1e-10 && worst_solve <= 1e-8 && flipped == 0 && failures.is_empty(),
        &format!(
            "symmetry/row sums {worst_sym:.1e}, solve residual {worst_solve:.1e}, {flipped} flipped triangles over {maps} maps{}",
            if failures.is_empty() { String::new() } else { format!(", failures {failures:?}") }
        ),
    );
}

#[test]
fn criterion_09_discrete_operators() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let c = 11;
    let h = 1.0 / c as f64;
    let p: Vec<f64> = (0..c * c * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let div = face_divergence(c, h, &face_gradient(c, h, &p));
    let lap = cell_laplacian(c, h).mul_vec(&p);
    let stencil_gap = div
        .iter()
        .zip(&lap)
        .map(|(a, b)| (a + b).abs())
        .fold(0.0, f64::max)
        / norm(&lap);

    let cube = build_cube_shells(6);
    let cells = cube.hexes.len();
    let mut rhs: Vec<f64> = (0..cells).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mean = rhs.iter().sum::<f64>() / cells as f64;
    rhs.iter_mut().for_each(|r| *r -= mean);
    let volume_residual = solve_divergence_potential(&cube, &rhs)
        .map(|s| s.relative_residual)
        .unwrap_or(f64::INFINITY);

    let mesh = shapes::icosphere(3);
    let sphere = conformal_to_sphere(&mesh, None).expect("sphere map");
    let bump: Vec<f64> = sphere.positions.iter().map(|p| 1.0 + 0.3 * p.z + 0.2 * p.x * p.y).collect();
    let mut density = compute_area_density(&mesh, &sphere).expect("density");
    let mass = vertex_masses(&sphere);
    let total: f64 = mass.iter().zip(&bump).map(|(m, b)| m * b).sum();
    density.per_vertex = bump.iter().map(|b| b * 4.0 * PI / total).collect();
    let sphere_residual = match solve_sphere_poisson(&sphere, &density) {
        Ok(theta) => {
            let d = cotangent_matrix(&sphere.positions, &mesh.triangles).expect("cotangent matrix");
            let rhs: Vec<f64> = mass.iter().zip(&density.per_vertex).map(|(m, mu)| m * (mu - 1.0)).collect();
            relative_residual(&d, &theta, &rhs)
        }
        Err(_) => f64::INFINITY,
    };

    let gradient_rms = sphere_gradient_rms(4);
    report(
        9,
        stencil_gap <= 1e-12 && volume_residual <= 1e-8 && sphere_residual <= 1e-8 && gradient_rms <= 0.05,
        &format!(
            "div grad vs stencil {stencil_gap:.1e}, poisson residuals {volume_residual:.1e} (cube) {sphere_residual:.1e} (sphere), gradient rms {:.2}%",
            100.0 * gradient_rms
        ),
    );
}

#[test]
fn criterion_10_volumes_and_point_location() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let c = perturbed_hex(&mut rng, 0.25);
        let exact = divergence_volume(&c);
        worst = worst.max((hex::volume(&c) - exact).abs() / exact.abs());
    }

    let (mesh, pos) = jittered_sphere(&mut rng, 3);
    let loc = SphereLocator::new(&mesh, &pos);
    let mut disagreements = 0;
    for _ in 0..10_000 {
        let p = random_direction(&mut rng);
        let start = rng.gen_range(0..mesh.num_triangles());
        let agree = match (loc.walk(&p, start), loc.brute_force(&p)) {
            (Some(w), Some(b)) => {
                w.triangle == b.triangle || w.bary.iter().chain(&b.bary).any(|&x| x < 1e-9)
            }
            _ => false,
        };
        if !agree {
            disagreements += 1;
        }
    }
    report(
        10,
        worst <= 1e-9 && disagreements == 0,
        &format!("hex volume relative error {worst:.1e} over 1000 elements, {disagreements} walk disagreements in 10000 queries"),
    );
}
