//! Volume-preserving maps from genus-zero solids onto a solid cube.
//!
//! The pipeline voxelizes a closed surface, grows a Chan-Vese active contour
//! to pull out nested shells, maps every model shell and every cube shell to
//! the sphere (cotangent conformal map followed by an area-correcting Moser
//! flow), interpolates the shell correspondences into an initial volumetric
//! map, and finally runs a Moser flow on the cube so every hexahedron of the
//! `(2N)^3` lattice maps to the same volume.

pub mod area_flow;
pub mod assembly;
pub mod config;
pub mod conformal;
pub mod cube;
pub mod error;
pub mod hex;
pub mod hexmesh;
pub mod io;
pub mod isosurface;
pub mod levelset;
pub mod linalg;
pub mod mesh;
pub mod pipeline;
pub mod quality;
pub mod remesh;
pub mod shapes;
pub mod shells;
pub mod sphere;
pub mod volume_flow;
pub mod voxel;

pub use error::{Error, Result};
pub use hexmesh::HexMesh;
pub use mesh::{TriMesh, Vec3};
