use std::process::Command;

use hexcube::io::{read_hex_vtk, write_obj};
use hexcube::shapes;

fn hexcube() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hexcube"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

#[test]
fn map_writes_mesh_metrics_and_map() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("ellipsoid.obj");
    write_obj(&shapes::ellipsoid(1.5, 1.0, 1.0, 3), &input).unwrap();
    let config = dir.path().join("run.cfg");
    std::fs::write(&config, "[smoothing]\niterations = 3\n[flows]\nvolume_rounds = 1\n").unwrap();
    let mesh = dir.path().join("out.vtk");
    let metrics = dir.path().join("metrics.json");
    let map = dir.path().join("map.json");
    let status = hexcube()
        .arg("map")
        .arg(&input)
        .args(["--resolution", "3", "--smooth-iters", "5", "--flows.volume_rounds=2"])
        .arg("--out-mesh")
        .arg(&mesh)
        .arg("--out-metrics")
        .arg(&metrics)
        .arg("--out-map")
        .arg(&map)
        .arg("--config")
        .arg(&config)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    let hex = read_hex_vtk(&mesh).unwrap();
    assert_eq!(hex.num_nodes(), 216);
    assert_eq!(hex.num_hexes(), 125);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(report["hexahedra"], 125);
    assert!(report["volume_variance"].as_f64().unwrap() < 0.25);
    assert!(report["pre_flow"]["volume_variance"].is_number());
    let images: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&map).unwrap()).unwrap();
    assert!(images.to_string().len() > 100);
}

#[test]
fn torus_is_rejected_as_a_topology_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("torus.obj");
    write_obj(&shapes::torus(1.0, 0.3, 24, 12), &input).unwrap();
    let status = hexcube().arg("map").arg(&input).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let status = hexcube().arg("map").arg(dir.path().join("nothing.obj")).status().unwrap();
    assert_eq!(status.code(), Some(5));
}

#[test]
fn unknown_override_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("ball.obj");
    write_obj(&shapes::icosphere(2), &input).unwrap();
    let status = hexcube().arg("map").arg(&input).arg("--gac.nonsense=1").status().unwrap();
    assert_eq!(status.code(), Some(2));
}
