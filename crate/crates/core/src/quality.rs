//! Element quality measures and mesh-level statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hex;
use crate::hexmesh::HexMesh;

pub const HISTOGRAM_BINS: usize = 32;

/// Acceptable element ranges: min scaled Jacobian, aspect ratio, taper.
pub const ACCEPTABLE_MIN_JACOBIAN: (f64, f64) = (0.5, 1.0);
pub const ACCEPTABLE_ASPECT_RATIO: (f64, f64) = (1.0, 4.0);
pub const ACCEPTABLE_TAPER: (f64, f64) = (0.0, 0.4);

const JACOBIAN_RANGE: (f64, f64) = (-1.0, 1.0);
const ASPECT_RANGE: (f64, f64) = (1.0, 5.0);
const TAPER_RANGE: (f64, f64) = (0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Fixed-range histogram; values beyond either end land in the outermost bins.
/// An empty sample gives an empty histogram.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() {
        return Vec::new();
    }
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lo: lo + b as f64 * width,
            hi: lo + (b + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for &v in values.iter().filter(|v| !v.is_nan()) {
        let b = ((v - lo) / width).floor();
        let b = if b < 0.0 { 0 } else { (b as usize).min(bins - 1) };
        out[b].count += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub nodes: usize,
    pub hexahedra: usize,
    pub volume_variance: f64,
    pub concave_fraction: f64,
    pub min_jacobian_histogram: Vec<HistogramBin>,
    pub aspect_ratio_histogram: Vec<HistogramBin>,
    pub taper_histogram: Vec<HistogramBin>,
    pub wall_time_sec: f64,
    /// Statistics of the map before the volume flow, when the pipeline ran one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_flow: Option<PreFlowSummary>,
    #[serde(skip)]
    pub min_scaled_jacobian: Vec<f64>,
    #[serde(skip)]
    pub aspect_ratio: Vec<f64>,
    #[serde(skip)]
    pub taper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreFlowSummary {
    pub volume_variance: f64,
    pub concave_fraction: f64,
}

impl QualityReport {
    /// Fraction of elements inside all three acceptable ranges.
    pub fn acceptable_fraction(&self) -> f64 {
        if self.hexahedra == 0 {
            return 0.0;
        }
        let within = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        let ok = (0..self.hexahedra)
            .filter(|&i| {
                within(self.min_scaled_jacobian[i], ACCEPTABLE_MIN_JACOBIAN)
                    && within(self.aspect_ratio[i], ACCEPTABLE_ASPECT_RATIO)
                    && within(self.taper[i], ACCEPTABLE_TAPER)
            })
            .count();
        ok as f64 / self.hexahedra as f64
    }

    pub fn concave_count(&self) -> usize {
        self.min_scaled_jacobian.iter().filter(|&&j| j <= 0.0).count()
    }
}

/// Per-element metrics and mesh statistics. Degenerate elements are scored,
/// never rejected. `wall_time_sec` is left at zero for the caller to fill.
pub fn compute_quality(mesh: &HexMesh) -> QualityReport {
    let n = mesh.num_hexes();
    let mut sj = Vec::with_capacity(n);
    let mut ar = Vec::with_capacity(n);
    let mut tp = Vec::with_capacity(n);
    for c in 0..n {
        let corners = mesh.corners(c);
        sj.push(hex::min_scaled_jacobian(&corners));
        ar.push(hex::aspect_ratio(&corners));
        tp.push(hex::taper(&corners));
    }
    let concave = sj.iter().filter(|&&j| j <= 0.0).count();
    QualityReport {
        nodes: mesh.num_nodes(),
        hexahedra: n,
        volume_variance: volume_variance(mesh).unwrap_or(f64::NAN),
        concave_fraction: if n == 0 { 0.0 } else { concave as f64 / n as f64 },
        min_jacobian_histogram: histogram(&sj, JACOBIAN_RANGE.0, JACOBIAN_RANGE.1, HISTOGRAM_BINS),
        aspect_ratio_histogram: histogram(&ar, ASPECT_RANGE.0, ASPECT_RANGE.1, HISTOGRAM_BINS),
        taper_histogram: histogram(&tp, TAPER_RANGE.0, TAPER_RANGE.1, HISTOGRAM_BINS),
        wall_time_sec: 0.0,
        pre_flow: None,
        min_scaled_jacobian: sj,
        aspect_ratio: ar,
        taper: tp,
    }
}

/// Population variance of the hex volumes after scaling them to mean 1.
pub fn volume_variance(mesh: &HexMesh) -> Result<f64> {
    normalized_variance(&mesh.volumes())
}

pub fn normalized_variance(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::ZeroMeanVolume);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if !(mean.abs() > f64::MIN_POSITIVE) {
        return Err(Error::ZeroMeanVolume);
    }
    Ok(values
        .iter()
        .map(|v| {
            let d = v / mean - 1.0;
            d * d
        })
        .sum::<f64>()
        / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::build_cube_shells;
    use crate::hex::unit_cube;
    use crate::mesh::Vec3;

    fn single(corners: [Vec3; 8]) -> HexMesh {
        HexMesh::new(corners.to_vec(), vec![[0, 1, 2, 3, 4, 5, 6, 7]])
    }

    #[test]
    fn regular_element() {
        let r = compute_quality(&single(unit_cube()));
        assert_eq!(r.min_scaled_jacobian, vec![1.0]);
        assert_eq!(r.aspect_ratio, vec![1.0]);
        assert_eq!(r.taper, vec![0.0]);
        assert_eq!(r.concave_fraction, 0.0);
        assert_eq!(r.volume_variance, 0.0);
        assert_eq!(r.acceptable_fraction(), 1.0);
    }

    #[test]
    fn collapsed_corner_counts_as_concave() {
        let mut c = unit_cube();
        c[2] = c[1];
        let r = compute_quality(&single(c));
        assert!(r.min_scaled_jacobian[0] <= 0.0);
        assert_eq!(r.concave_fraction, 1.0);
    }

    #[test]
    fn variance_of_two_volumes() {
        assert_eq!(normalized_variance(&[0.5, 1.5]).unwrap(), 0.25);
        assert_eq!(normalized_variance(&[3.0, 3.0, 3.0]).unwrap(), 0.0);
        assert!(matches!(normalized_variance(&[1.0, -1.0]), Err(Error::ZeroMeanVolume)));
        assert!(matches!(normalized_variance(&[]), Err(Error::ZeroMeanVolume)));
    }

    #[test]
    fn lattice_has_perfect_quality() {
        let cube = build_cube_shells(3);
        let r = compute_quality(&HexMesh::from_cube(&cube));
        assert_eq!(r.nodes, 216);
        assert_eq!(r.hexahedra, 125);
        assert!(r.volume_variance < 1e-24);
        assert_eq!(r.acceptable_fraction(), 1.0);
        let total: usize = r.min_jacobian_histogram.iter().map(|b| b.count).sum();
        assert_eq!(total, 125);
        assert_eq!(r.min_jacobian_histogram.len(), HISTOGRAM_BINS);
    }

    #[test]
    fn histogram_edges() {
        let h = histogram(&[-5.0, 0.0, 0.999, 1.0, 7.0, f64::INFINITY], 0.0, 1.0, 4);
        let counts: Vec<usize> = h.iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![2, 0, 0, 4]);
        assert!(histogram(&[], 0.0, 1.0, 4).is_empty());
    }
}
