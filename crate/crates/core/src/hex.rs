//! Geometry of a single trilinear hexahedron in VTK corner order:
//! corners 0-3 walk the bottom face counter-clockwise (seen from above),
//! corners 4-7 sit above them.

use crate::mesh::Vec3;

pub type HexCorners = [Vec3; 8];

/// Outward-oriented faces.
pub const FACES: [[usize; 4]; 6] = [
    [0, 3, 2, 1],
    [4, 5, 6, 7],
    [0, 1, 5, 4],
    [2, 3, 7, 6],
    [0, 4, 7, 3],
    [1, 2, 6, 5],
];

/// Parametric bits `(xi, eta, zeta)` of each corner.
pub const CORNER_BITS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

pub fn corner_from_bits(bits: [usize; 3]) -> usize {
    const LUT: [usize; 8] = [0, 1, 3, 2, 4, 5, 7, 6];
    LUT[bits[0] | (bits[1] << 1) | (bits[2] << 2)]
}

pub fn gather(nodes: &[Vec3], hex: &[usize; 8]) -> HexCorners {
    hex.map(|i| nodes[i])
}

/// Exact volume of the trilinear hex from its 24-tetrahedron split through
/// the face centres and the body centre.
pub fn volume(c: &HexCorners) -> f64 {
    let o = c.iter().sum::<Vec3>() / 8.0;
    let mut v = 0.0;
    for f in FACES {
        let fc = (c[f[0]] + c[f[1]] + c[f[2]] + c[f[3]]) / 4.0 - o;
        for k in 0..4 {
            let a = c[f[k]] - o;
            let b = c[f[(k + 1) % 4]] - o;
            v += a.dot(&b.cross(&fc));
        }
    }
    v / 6.0
}

/// Point of the trilinear map at parametric coordinates in `[0, 1]^3`.
pub fn trilinear(c: &HexCorners, u: f64, v: f64, w: f64) -> Vec3 {
    let mut p = Vec3::zeros();
    for (k, bits) in CORNER_BITS.iter().enumerate() {
        let wu = if bits[0] == 1 { u } else { 1.0 - u };
        let wv = if bits[1] == 1 { v } else { 1.0 - v };
        let ww = if bits[2] == 1 { w } else { 1.0 - w };
        p += c[k] * (wu * wv * ww);
    }
    p
}

/// Derivatives of the trilinear map with respect to `(u, v, w)`.
pub fn trilinear_jacobian(c: &HexCorners, u: f64, v: f64, w: f64) -> [Vec3; 3] {
    let mut d = [Vec3::zeros(); 3];
    for (k, bits) in CORNER_BITS.iter().enumerate() {
        let s = |b: usize| if b == 1 { 1.0 } else { -1.0 };
        let f = |b: usize, t: f64| if b == 1 { t } else { 1.0 - t };
        d[0] += c[k] * (s(bits[0]) * f(bits[1], v) * f(bits[2], w));
        d[1] += c[k] * (f(bits[0], u) * s(bits[1]) * f(bits[2], w));
        d[2] += c[k] * (f(bits[0], u) * f(bits[1], v) * s(bits[2]));
    }
    d
}

/// Principal axes `X1, X2, X3` (sums of the four parallel edge vectors).
pub fn principal_axes(c: &HexCorners) -> [Vec3; 3] {
    let mut x = [Vec3::zeros(); 3];
    for (k, bits) in CORNER_BITS.iter().enumerate() {
        for a in 0..3 {
            let s = if bits[a] == 1 { 1.0 } else { -1.0 };
            x[a] += c[k] * s;
        }
    }
    x
}

/// Mixed second differences `X12, X13, X23`.
pub fn cross_derivatives(c: &HexCorners) -> [Vec3; 3] {
    let mut x = [Vec3::zeros(); 3];
    let pairs = [(0, 1), (0, 2), (1, 2)];
    for (k, bits) in CORNER_BITS.iter().enumerate() {
        for (p, &(i, j)) in pairs.iter().enumerate() {
            let si = if bits[i] == 1 { 1.0 } else { -1.0 };
            let sj = if bits[j] == 1 { 1.0 } else { -1.0 };
            x[p] += c[k] * (si * sj);
        }
    }
    x
}

/// Scaled Jacobian at each corner: determinant of the three unit edge
/// vectors leaving the corner in the `(xi, eta, zeta)` directions.
/// A corner with a zero-length edge scores 0.
pub fn corner_scaled_jacobians(c: &HexCorners) -> [f64; 8] {
    let mut out = [0.0; 8];
    for (k, bits) in CORNER_BITS.iter().enumerate() {
        let mut sign = 1.0;
        let mut e = [Vec3::zeros(); 3];
        let mut degenerate = false;
        for a in 0..3 {
            let mut nb = *bits;
            nb[a] ^= 1;
            let v = c[corner_from_bits(nb)] - c[k];
            let len = v.norm();
            if len <= f64::MIN_POSITIVE {
                degenerate = true;
                break;
            }
            e[a] = v / len;
            if bits[a] == 1 {
                sign = -sign;
            }
        }
        out[k] = if degenerate {
            0.0
        } else {
            sign * e[0].dot(&e[1].cross(&e[2]))
        };
    }
    out
}

pub fn min_scaled_jacobian(c: &HexCorners) -> f64 {
    corner_scaled_jacobians(c).into_iter().fold(f64::INFINITY, f64::min)
}

/// Ratio of the longest to the shortest principal axis.
pub fn aspect_ratio(c: &HexCorners) -> f64 {
    let lens = principal_axes(c).map(|x| x.norm());
    let max = lens.iter().copied().fold(0.0, f64::max);
    let min = lens.iter().copied().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Largest `||X_ij|| / min(||X_i||, ||X_j||)` over the three axis pairs.
pub fn taper(c: &HexCorners) -> f64 {
    let axes = principal_axes(c).map(|x| x.norm());
    let cross = cross_derivatives(c).map(|x| x.norm());
    let pairs = [(0, 1), (0, 2), (1, 2)];
    pairs
        .iter()
        .zip(cross)
        .map(|(&(i, j), xij)| {
            let d = axes[i].min(axes[j]);
            if d > 0.0 {
                xij / d
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

pub fn unit_cube() -> HexCorners {
    CORNER_BITS.map(|b| Vec3::new(b[0] as f64, b[1] as f64, b[2] as f64))
}
