//! JSON outputs: the quality report and the optional node-image dump.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::Vec3;
use crate::quality::QualityReport;

pub fn write_metrics_report(report: &QualityReport, path: impl AsRef<Path>) -> Result<()> {
    write_json(report, path.as_ref())
}

#[derive(Serialize)]
struct NodeImage {
    cube_node_index: usize,
    image_xyz: [f64; 3],
}

/// Writes `[{cube_node_index, image_xyz}, ...]` for every lattice node.
pub fn write_map_json(images: &[Vec3], path: impl AsRef<Path>) -> Result<()> {
    let rows: Vec<NodeImage> = images
        .iter()
        .enumerate()
        .map(|(i, p)| NodeImage {
            cube_node_index: i,
            image_xyz: [p.x, p.y, p.z],
        })
        .collect();
    write_json(&rows, path.as_ref())
}

fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quality::HistogramBin;

    fn sample() -> QualityReport {
        QualityReport {
            nodes: 2744,
            hexahedra: 2197,
            volume_variance: 0.1,
            concave_fraction: 0.054,
            min_jacobian_histogram: vec![HistogramBin {
                lo: 0.5,
                hi: 1.0,
                count: 3,
            }],
            aspect_ratio_histogram: Vec::new(),
            taper_histogram: Vec::new(),
            wall_time_sec: 1.5,
            pre_flow: None,
            min_scaled_jacobian: Vec::new(),
            aspect_ratio: Vec::new(),
            taper: Vec::new(),
        }
    }

    #[test]
    fn report_fields_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        write_metrics_report(&sample(), &path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["nodes"], 2744);
        assert_eq!(v["hexahedra"], 2197);
        assert_eq!(v["volume_variance"], 0.1);
        assert_eq!(v["concave_fraction"], 0.054);
        assert_eq!(v["wall_time_sec"], 1.5);
        assert_eq!(v["aspect_ratio_histogram"], serde_json::json!([]));
        assert_eq!(v["taper_histogram"], serde_json::json!([]));
        assert_eq!(v["min_jacobian_histogram"][0]["count"], 3);
        assert!(v.get("pre_flow").is_none());
        assert!(v.get("taper").is_none());
    }

    #[test]
    fn map_dump() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.json");
        write_map_json(&[Vec3::new(0.0, 0.5, 1.0), Vec3::new(1.0, 2.0, 3.0)], &path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v[1]["cube_node_index"], 1);
        assert_eq!(v[0]["image_xyz"], serde_json::json!([0.0, 0.5, 1.0]));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let err = write_metrics_report(&sample(), "/nonexistent-dir/x/m.json").unwrap_err();
        assert_eq!(err.exit_code(), 5);
    }
}
