use crate::cube::CubeComplex;
use crate::hex::{self, HexCorners};
use crate::mesh::Vec3;

/// Named per-cell scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct CellAttribute {
    pub name: String,
    pub values: Vec<f64>,
}

/// Unstructured hexahedral mesh; for pipeline output the connectivity is
/// always that of the cube lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct HexMesh {
    pub nodes: Vec<Vec3>,
    pub hexes: Vec<[usize; 8]>,
    pub cell_data: Vec<CellAttribute>,
}

impl HexMesh {
    pub fn new(nodes: Vec<Vec3>, hexes: Vec<[usize; 8]>) -> Self {
        Self {
            nodes,
            hexes,
            cell_data: Vec::new(),
        }
    }

    /// The undeformed lattice of `cube`.
    pub fn from_cube(cube: &CubeComplex) -> Self {
        Self::new(cube.nodes.clone(), cube.hexes.clone())
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_hexes(&self) -> usize {
        self.hexes.len()
    }

    pub fn corners(&self, cell: usize) -> HexCorners {
        hex::gather(&self.nodes, &self.hexes[cell])
    }

    pub fn volumes(&self) -> Vec<f64> {
        (0..self.hexes.len()).map(|c| hex::volume(&self.corners(c))).collect()
    }

    /// Sets (or replaces) a named cell attribute.
    pub fn set_attribute(&mut self, name: &str, values: Vec<f64>) {
        assert_eq!(values.len(), self.hexes.len());
        match self.cell_data.iter_mut().find(|a| a.name == name) {
            Some(a) => a.values = values,
            None => self.cell_data.push(CellAttribute {
                name: name.to_string(),
                values,
            }),
        }
    }

    pub fn attribute(&self, name: &str) -> Option<&[f64]> {
        self.cell_data
            .iter()
            .find(|a| a.name == name)
            .map(|a| a.values.as_slice())
    }

    /// Attaches the `volume` attribute computed from the current geometry.
    pub fn with_volumes(mut self) -> Self {
        let v = self.volumes();
        self.set_attribute("volume", v);
        self
    }

    pub fn with_nodes(&self, nodes: Vec<Vec3>) -> Self {
        assert_eq!(nodes.len(), self.nodes.len());
        Self {
            nodes,
            hexes: self.hexes.clone(),
            cell_data: Vec::new(),
        }
    }
}
