//! Legacy ASCII VTK (3.0) unstructured grids of hexahedra.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hexmesh::HexMesh;
use crate::mesh::Vec3;

const VTK_HEXAHEDRON: u32 = 12;

/// Writes the mesh with every cell attribute as a `CELL_DATA` scalar field.
/// Floats use the shortest round-trip representation, so reading the file
/// back reproduces the coordinates bit for bit.
pub fn write_hex_vtk(mesh: &HexMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_hex_vtk(mesh)).map_err(|e| Error::io(path, e))
}

pub fn format_hex_vtk(mesh: &HexMesh) -> String {
    let mut s = String::new();
    let m = mesh.num_hexes();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "hexcube hexahedral mesh");
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {} double", mesh.num_nodes());
    for p in &mesh.nodes {
        let _ = writeln!(s, "{:?} {:?} {:?}", p.x, p.y, p.z);
    }
    let _ = writeln!(s, "CELLS {} {}", m, 9 * m);
    for h in &mesh.hexes {
        let _ = writeln!(
            s,
            "8 {} {} {} {} {} {} {} {}",
            h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7]
        );
    }
    let _ = writeln!(s, "CELL_TYPES {m}");
    for _ in 0..m {
        let _ = writeln!(s, "{VTK_HEXAHEDRON}");
    }
    if !mesh.cell_data.is_empty() {
        let _ = writeln!(s, "CELL_DATA {m}");
        for attr in &mesh.cell_data {
            let _ = writeln!(s, "SCALARS {} double 1", attr.name);
            let _ = writeln!(s, "LOOKUP_TABLE default");
            for v in &attr.values {
                let _ = writeln!(s, "{v:?}");
            }
        }
    }
    s
}

struct Tokens<'a> {
    iter: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    path: &'a Path,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str, path: &'a Path) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .skip(2)
                .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t))),
        );
        Self {
            iter: it.peekable(),
            path,
        }
    }

    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.iter
            .next()
            .ok_or_else(|| Error::parse(self.path, 0, "unexpected end of file"))
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        let (line, t) = self.next()?;
        if t.eq_ignore_ascii_case(word) {
            Ok(())
        } else {
            Err(Error::parse(self.path, line, format!("expected {word}, found {t}")))
        }
    }

    fn parse<T: std::str::FromStr>(&mut self) -> Result<T> {
        let (line, t) = self.next()?;
        t.parse()
            .map_err(|_| Error::parse(self.path, line, format!("bad number {t}")))
    }
}

/// Reads a hexahedral unstructured grid written by [`write_hex_vtk`].
pub fn read_hex_vtk(path: impl AsRef<Path>) -> Result<HexMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_hex_vtk(&text, path)
}

pub fn parse_hex_vtk(text: &str, path: &Path) -> Result<HexMesh> {
    if !text.starts_with("# vtk DataFile") {
        return Err(Error::parse(path, 1, "missing vtk header"));
    }
    let mut tok = Tokens::new(text, path);
    tok.expect("ASCII")?;
    tok.expect("DATASET")?;
    tok.expect("UNSTRUCTURED_GRID")?;
    tok.expect("POINTS")?;
    let n: usize = tok.parse()?;
    tok.next()?;
    let mut nodes = Vec::with_capacity(n);
    for _ in 0..n {
        nodes.push(Vec3::new(tok.parse()?, tok.parse()?, tok.parse()?));
    }
    tok.expect("CELLS")?;
    let m: usize = tok.parse()?;
    let _size: usize = tok.parse()?;
    let mut hexes = Vec::with_capacity(m);
    for _ in 0..m {
        let (line, k) = tok.next()?;
        if k != "8" {
            return Err(Error::parse(path, line, "only 8-node cells are supported"));
        }
        let mut h = [0usize; 8];
        for slot in &mut h {
            let (line, t) = tok.next()?;
            *slot = t
                .parse()
                .ok()
                .filter(|&i: &usize| i < n)
                .ok_or_else(|| Error::parse(path, line, format!("bad node index {t}")))?;
        }
        hexes.push(h);
    }
    tok.expect("CELL_TYPES")?;
    let _: usize = tok.parse()?;
    for _ in 0..m {
        let (line, t) = tok.next()?;
        if t != "12" {
            return Err(Error::parse(path, line, format!("unsupported cell type {t}")));
        }
    }
    let mut mesh = HexMesh::new(nodes, hexes);
    if tok.iter.peek().is_some() {
        tok.expect("CELL_DATA")?;
        let _: usize = tok.parse()?;
        while tok.iter.peek().is_some() {
            tok.expect("SCALARS")?;
            let (_, name) = tok.next()?;
            tok.next()?;
            // Optional component count before LOOKUP_TABLE.
            let (line, t) = tok.next()?;
            if t != "LOOKUP_TABLE" {
                if t != "1" {
                    return Err(Error::parse(path, line, "only scalar cell data is supported"));
                }
                tok.expect("LOOKUP_TABLE")?;
            }
            tok.next()?;
            let values = (0..m).map(|_| tok.parse()).collect::<Result<Vec<f64>>>()?;
            mesh.set_attribute(name, values);
        }
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::build_cube_shells;
    use crate::hex::unit_cube;

    #[test]
    fn single_hex_file_layout() {
        let mesh = HexMesh::new(unit_cube().to_vec(), vec![[0, 1, 2, 3, 4, 5, 6, 7]]);
        let s = format_hex_vtk(&mesh);
        assert!(s.contains("DATASET UNSTRUCTURED_GRID"));
        assert!(s.contains("POINTS 8 double"));
        assert!(s.contains("CELLS 1 9\n8 0 1 2 3 4 5 6 7\n"));
        assert!(s.contains("CELL_TYPES 1\n12\n"));
        assert!(!s.contains("CELL_DATA"));
    }

    #[test]
    fn lattice_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lattice.vtk");
        let cube = build_cube_shells(6);
        let mut mesh = HexMesh::from_cube(&cube);
        for (i, p) in mesh.nodes.iter_mut().enumerate() {
            *p += Vec3::new(1e-3 * (i as f64).sin(), 0.1 / 3.0, -1.0 / 7.0);
        }
        let mesh = mesh.with_volumes();
        write_hex_vtk(&mesh, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("POINTS 1728 double"));
        assert!(text.contains("CELLS 1331 11979"));
        assert!(text.contains("SCALARS volume double 1"));
        let back = read_hex_vtk(&path).unwrap();
        assert_eq!(back, mesh);
    }

    #[test]
    fn rejects_other_cell_types() {
        let text = "# vtk DataFile Version 3.0\nx\nASCII\nDATASET UNSTRUCTURED_GRID\nPOINTS 1 double\n0 0 0\nCELLS 1 2\n1 0\nCELL_TYPES 1\n1\n";
        assert!(matches!(
            parse_hex_vtk(text, Path::new("t.vtk")),
            Err(Error::Parse { .. })
        ));
    }
}
