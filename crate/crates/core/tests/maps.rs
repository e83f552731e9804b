//! Sphere maps and model shells checked against geometric oracles.

use std::f64::consts::PI;

mod common;

use common::sphere_gradient_rms;
use hexcube::area_flow::{area_correct, compute_area_density};
use hexcube::conformal::{build_cotangent_system, conformal_to_sphere, cotangent_matrix, solve_planar_coordinates};
use hexcube::mesh::Vec3;
use hexcube::shapes;
use hexcube::shells::{build_model_shells, cube_volume_fraction, mean_radius, ShellOptions};
use hexcube::voxel::{BinaryVolume, GridGeometry};
use hexcube::TriMesh;

fn corner_angles(p: [Vec3; 3]) -> [f64; 3] {
    let at = |a: Vec3, b: Vec3, c: Vec3| (b - a).normalize().dot(&(c - a).normalize()).clamp(-1.0, 1.0).acos();
    [at(p[0], p[1], p[2]), at(p[1], p[2], p[0]), at(p[2], p[0], p[1])]
}

#[test]
fn cotangent_matrix_is_a_symmetric_laplacian() {
    let mesh = shapes::ellipsoid(2.0, 1.0, 0.7, 3);
    let d = cotangent_matrix(&mesh.vertices, &mesh.triangles).unwrap();
    let scale = d.max_abs();
    assert!(d.asymmetry() <= 1e-12 * scale);
    assert!(d.max_row_sum() <= 1e-12 * scale);
    // Positive semi-definite on a random vector.
    let x: Vec<f64> = (0..d.n).map(|i| ((i * 7919) % 101) as f64 - 50.0).collect();
    let dx = d.mul_vec(&x);
    assert!(x.iter().zip(&dx).map(|(a, b)| a * b).sum::<f64>() >= 0.0);
}

#[test]
fn planar_map_of_punctured_sphere_is_injective() {
    let mesh = shapes::icosphere(3);
    let sys = build_cotangent_system(&mesh, 17).unwrap();
    let uv = solve_planar_coordinates(&sys).unwrap();
    let signed = |t: &[usize; 3]| {
        let (a, b, c) = (uv[t[0]], uv[t[1]], uv[t[2]]);
        (b - a).perp(&(c - a))
    };
    let reference = signed(&mesh.triangles[0]).signum();
    for (i, t) in mesh.triangles.iter().enumerate() {
        if i != 17 {
            assert!(signed(t) * reference > 0.0, "triangle {i} flipped");
        }
    }
}

#[test]
fn conformal_map_of_a_fine_sphere_preserves_angles() {
    let mesh = shapes::icosphere(4);
    let map = conformal_to_sphere(&mesh, None).unwrap();
    assert!(map.is_injective());
    let mut total = 0.0;
    let mut count = 0.0;
    for t in 0..mesh.num_triangles() {
        let a = corner_angles(mesh.corners(t));
        let b = corner_angles(map.corners(t));
        for k in 0..3 {
            total += (a[k] - b[k]).abs();
            count += 1.0;
        }
    }
    let mean_deg = (total / count).to_degrees();
    assert!(mean_deg <= 3.0, "mean angle distortion {mean_deg} deg");
}

#[test]
fn area_flow_evens_out_an_ellipsoid() {
    let mesh = shapes::ellipsoid(2.0, 1.0, 1.0, 3);
    let map = conformal_to_sphere(&mesh, None).unwrap();
    let before = compute_area_density(&mesh, &map).unwrap().variance();
    let flowed = area_correct(&map, 20).unwrap();
    let after = compute_area_density(&mesh, &flowed).unwrap().variance();
    assert!(after <= 0.1 * before, "{before} -> {after}");
    assert!(flowed.is_injective());
    assert!((flowed.total_area() - 4.0 * PI).abs() <= 1e-6);
}

#[test]
fn sphere_gradient_matches_finite_differences() {
    let rms = sphere_gradient_rms(4);
    assert!(rms <= 0.05, "relative rms {rms}");
}

fn ball_volume(radius: f64, h: f64) -> BinaryVolume {
    let m = (1.0 / h).round() as usize;
    let geom = GridGeometry {
        dims: [m, m, m],
        origin: Vec3::repeat(h / 2.0),
        spacing: h,
    };
    BinaryVolume::from_fn(geom, |p| (p - Vec3::repeat(0.5)).norm() < radius)
}

fn enclosed_volume(mesh: &TriMesh) -> f64 {
    mesh.signed_volume().abs()
}

#[test]
fn ball_shells_are_nested_and_volume_matched() {
    let h = 1.0 / 80.0;
    let r = 0.4;
    let n = 4;
    let stack = build_model_shells(&ball_volume(r, h), n, &ShellOptions::default()).unwrap();
    assert_eq!(stack.shells.len(), n);
    let c = Vec3::repeat(0.5);
    let total = enclosed_volume(&stack.shells[0]);
    let mut prev = f64::INFINITY;
    for (k, shell) in stack.shells.iter().enumerate() {
        assert_eq!(shell.euler_characteristic(), 2, "shell {k}");
        let radius = mean_radius(shell, &c);
        assert!(radius < prev, "shell {k} is not inside shell {}", k.saturating_sub(1));
        prev = radius;
        let frac = enclosed_volume(shell) / total;
        let target = cube_volume_fraction(k + 1, n);
        // Within two voxel layers of the matched radius.
        let expected_r = r * target.cbrt();
        assert!((radius - expected_r).abs() <= 2.0 * h, "shell {k}: radius {radius} vs {expected_r}, fraction {frac}");
    }
}
