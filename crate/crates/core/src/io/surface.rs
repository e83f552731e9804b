//! ASCII surface readers: OFF, OBJ and STL.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};

/// STL vertices closer than this fraction of the bounding-box diagonal are merged.
pub const STL_WELD_TOLERANCE: f64 = 1e-7;

/// Loads and validates a closed genus-zero surface. The format is chosen by
/// file extension (`off`, `obj`, `stl`).
pub fn load_surface_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let (vertices, triangles) = match ext.as_str() {
        "off" => parse_off(&text, path)?,
        "obj" => parse_obj(&text, path)?,
        "stl" => parse_stl(&text, path)?,
        other => return Err(Error::parse(path, 0, format!("unsupported extension '{other}'"))),
    };
    if vertices.is_empty() || triangles.is_empty() {
        return Err(Error::parse(path, 0, "mesh has no vertices or no faces"));
    }
    TriMesh::new(vertices, triangles)
}

fn parse_f64(tok: &str, path: &Path, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::parse(path, line, format!("expected a number, found '{tok}'")))
}

fn fan(poly: &[usize], out: &mut Vec<[usize; 3]>) {
    for k in 1..poly.len() - 1 {
        out.push([poly[0], poly[k], poly[k + 1]]);
    }
}

pub fn parse_off(text: &str, path: &Path) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    // Tokens with their line numbers, comments stripped.
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let mut rest_of_header: Vec<&str> = Vec::new();
    if let Some(stripped) = header.strip_prefix("OFF") {
        rest_of_header.extend(stripped.split_whitespace());
    } else {
        return Err(Error::parse(path, hline, "missing OFF header"));
    }
    let (cline, counts): (usize, Vec<&str>) = if rest_of_header.len() >= 2 {
        (hline, rest_of_header)
    } else {
        let (l, c) = lines
            .next()
            .ok_or_else(|| Error::parse(path, hline, "missing element counts"))?;
        (l, c.split_whitespace().collect())
    };
    if counts.len() < 2 {
        return Err(Error::parse(path, cline, "expected vertex and face counts"));
    }
    let nv = counts[0]
        .parse::<usize>()
        .map_err(|_| Error::parse(path, cline, "bad vertex count"))?;
    let nf = counts[1]
        .parse::<usize>()
        .map_err(|_| Error::parse(path, cline, "bad face count"))?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (l, s) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, "unexpected end of file in vertex list"))?;
        let toks: Vec<&str> = s.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(Error::parse(path, l, "vertex needs three coordinates"));
        }
        vertices.push(Vec3::new(
            parse_f64(toks[0], path, l)?,
            parse_f64(toks[1], path, l)?,
            parse_f64(toks[2], path, l)?,
        ));
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (l, s) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, "unexpected end of file in face list"))?;
        let toks: Vec<&str> = s.split_whitespace().collect();
        let k = toks
            .first()
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(|| Error::parse(path, l, "bad face vertex count"))?;
        if k < 3 || toks.len() < k + 1 {
            return Err(Error::parse(path, l, "face needs at least three indices"));
        }
        let poly = toks[1..=k]
            .iter()
            .map(|t| {
                t.parse::<usize>()
                    .ok()
                    .filter(|&i| i < nv)
                    .ok_or_else(|| Error::parse(path, l, format!("bad vertex index '{t}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        fan(&poly, &mut triangles);
    }
    Ok((vertices, triangles))
}

pub fn parse_obj(text: &str, path: &Path) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let l = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let c: Vec<&str> = toks.collect();
                if c.len() < 3 {
                    return Err(Error::parse(path, l, "vertex needs three coordinates"));
                }
                vertices.push(Vec3::new(
                    parse_f64(c[0], path, l)?,
                    parse_f64(c[1], path, l)?,
                    parse_f64(c[2], path, l)?,
                ));
            }
            Some("f") => {
                let poly = toks
                    .map(|t| {
                        let idx = t.split('/').next().unwrap_or("");
                        let v: i64 = idx
                            .parse()
                            .map_err(|_| Error::parse(path, l, format!("bad face index '{t}'")))?;
                        let n = vertices.len() as i64;
                        let resolved = if v < 0 { n + v } else { v - 1 };
                        if resolved < 0 || resolved >= n {
                            return Err(Error::parse(path, l, format!("face index {v} out of range")));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<Vec<_>>>()?;
                if poly.len() < 3 {
                    return Err(Error::parse(path, l, "face needs at least three indices"));
                }
                fan(&poly, &mut triangles);
            }
            _ => {}
        }
    }
    Ok((vertices, triangles))
}

pub fn parse_stl(text: &str, path: &Path) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    let mut corners: Vec<Vec3> = Vec::new();
    let mut seen_solid = false;
    for (i, raw) in text.lines().enumerate() {
        let l = i + 1;
        let mut toks = raw.split_whitespace();
        match toks.next() {
            Some("solid") => seen_solid = true,
            Some("vertex") => {
                let c: Vec<&str> = toks.collect();
                if c.len() < 3 {
                    return Err(Error::parse(path, l, "vertex needs three coordinates"));
                }
                corners.push(Vec3::new(
                    parse_f64(c[0], path, l)?,
                    parse_f64(c[1], path, l)?,
                    parse_f64(c[2], path, l)?,
                ));
            }
            _ => {}
        }
    }
    if !seen_solid {
        return Err(Error::parse(path, 1, "not an ASCII STL file (missing 'solid')"));
    }
    if corners.len() % 3 != 0 {
        return Err(Error::parse(path, 0, "vertex count is not a multiple of three"));
    }
    Ok(weld(&corners))
}

/// Merges coincident facet corners with grid hashing.
fn weld(corners: &[Vec3]) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in corners {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let tol = ((hi - lo).norm() * STL_WELD_TOLERANCE).max(f64::MIN_POSITIVE);
    let key = |p: &Vec3| {
        [
            ((p.x - lo.x) / tol).floor() as i64,
            ((p.y - lo.y) / tol).floor() as i64,
            ((p.z - lo.z) / tol).floor() as i64,
        ]
    };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut remap = Vec::with_capacity(corners.len());
    for p in corners {
        let k = key(p);
        let mut found = None;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        if let Some(&id) = ids.iter().find(|&&id| (vertices[id] - p).norm() <= tol) {
                            found = Some(id);
                            break 'search;
                        }
                    }
                }
            }
        }
        let id = found.unwrap_or_else(|| {
            vertices.push(*p);
            grid.entry(k).or_default().push(vertices.len() - 1);
            vertices.len() - 1
        });
        remap.push(id);
    }
    let triangles = remap.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
    (vertices, triangles)
}

/// Writes a mesh as OFF (used for shell dumps and test fixtures).
pub fn write_off(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    use std::fmt::Write as _;
    let path = path.as_ref();
    let mut s = String::new();
    let _ = writeln!(s, "OFF\n{} {} 0", mesh.num_vertices(), mesh.num_triangles());
    for p in &mesh.vertices {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn write_obj(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    use std::fmt::Write as _;
    let path = path.as_ref();
    let mut s = String::new();
    for p in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", p.x, p.y, p.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn write_stl(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    use std::fmt::Write as _;
    let path = path.as_ref();
    let mut s = String::from("solid hexcube\n");
    for t in 0..mesh.num_triangles() {
        let n = mesh.triangle_normal(t);
        let _ = writeln!(s, "  facet normal {} {} {}\n    outer loop", n.x, n.y, n.z);
        for p in mesh.corners(t) {
            let _ = writeln!(s, "      vertex {} {} {}", p.x, p.y, p.z);
        }
        let _ = writeln!(s, "    endloop\n  endfacet");
    }
    s.push_str("endsolid hexcube\n");
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    #[test]
    fn octahedron_off_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("oct.off");
        write_off(&shapes::octahedron(), &p).unwrap();
        let m = load_surface_mesh(&p).unwrap();
        assert_eq!((m.num_vertices(), m.num_triangles()), (6, 8));
        assert_eq!(m.euler_characteristic(), 2);
        assert_eq!(m, shapes::octahedron());
    }

    #[test]
    fn off_with_comments_and_inline_counts() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tet.off");
        std::fs::write(
            &p,
            "# a tetrahedron\nOFF 4 4 0\n0 0 0\n1 0 0\n0 1 0 # apex next\n0 0 1\n\
             3 0 2 1\n3 0 1 3\n3 1 2 3\n3 0 3 2\n",
        )
        .unwrap();
        let m = load_surface_mesh(&p).unwrap();
        assert_eq!(m.num_triangles(), 4);
    }

    #[test]
    fn icosphere_level3_off() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ico.off");
        write_off(&shapes::icosphere(3), &p).unwrap();
        let m = load_surface_mesh(&p).unwrap();
        assert_eq!((m.num_vertices(), m.num_triangles()), (642, 1280));
    }

    #[test]
    fn obj_and_stl_load() {
        let dir = tempfile::tempdir().unwrap();
        let src = shapes::icosphere(2);
        let obj = dir.path().join("s.obj");
        write_obj(&src, &obj).unwrap();
        assert_eq!(load_surface_mesh(&obj).unwrap(), src);

        let stl = dir.path().join("s.stl");
        write_stl(&src, &stl).unwrap();
        let m = load_surface_mesh(&stl).unwrap();
        assert_eq!(m.num_vertices(), src.num_vertices());
        assert_eq!(m.num_triangles(), src.num_triangles());
        assert!((m.signed_volume() - src.signed_volume()).abs() < 1e-12);
    }

    #[test]
    fn torus_fails_topology_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("torus.off");
        write_off(&shapes::torus(1.0, 0.3, 12, 8), &p).unwrap();
        let err = load_surface_mesh(&p).unwrap_err();
        assert!(matches!(err, Error::Topology(ref s) if s.contains("genus")), "{err}");
    }

    #[test]
    fn malformed_files_are_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        for (name, body) in [
            ("a.off", "OFF\n3 1 0\n0 0 0\n1 0\n"),
            ("b.off", "NOTOFF\n"),
            ("c.off", ""),
            ("d.obj", "v 0 0 0\nf 1 2 3\n"),
            ("e.stl", "vertex 0 0 0\n"),
            ("f.ply", "ply\n"),
            ("g.obj", "# nothing\n"),
        ] {
            let p = dir.path().join(name);
            std::fs::write(&p, body).unwrap();
            let err = load_surface_mesh(&p).unwrap_err();
            assert!(matches!(err, Error::Parse { .. }), "{name}: {err}");
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_surface_mesh("/nonexistent/mesh.off").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert_eq!(err.exit_code(), 5);
    }
}
