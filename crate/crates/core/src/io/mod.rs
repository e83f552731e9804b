//! Surface mesh, hexahedral mesh and report files.

pub mod report;
pub mod surface;
pub mod vtk;

pub use report::{write_map_json, write_metrics_report};
pub use surface::{load_surface_mesh, write_obj, write_off, write_stl};
pub use vtk::{read_hex_vtk, write_hex_vtk};
