use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong between loading a surface and writing the hex mesh.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("topology error: {0}")]
    Topology(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("voxel grid {dims:?} exceeds the 512^3 limit")]
    ResolutionTooHigh { dims: [usize; 3] },

    #[error("surface is not watertight: odd ray-crossing parity on {rays} ray(s)")]
    NonWatertight { rays: usize },

    #[error("binary volume is empty")]
    EmptyVolume,

    #[error("level set has no interface: {0}")]
    EmptyInterface(String),

    #[error("active contour did not converge after {steps} steps")]
    NoConvergence { steps: usize },

    #[error("shells overlap: {0}")]
    Overlap(String),

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error("linear solver failed: relative residual {residual:e} after {iterations} iterations")]
    SolverFailure { residual: f64, iterations: usize },

    #[error("incompatible right-hand side: mean {mean:e}")]
    IncompatibleRhs { mean: f64 },

    #[error("degenerate spherical image: triangle {triangle} has area {area:e}")]
    DegenerateImage { triangle: usize, area: f64 },

    #[error("flip detected: {0}")]
    FlipDetected(String),

    #[error("point location failed for query {query}")]
    LocationFailure { query: usize },

    #[error("shell count mismatch: {model} model shells vs {cube} cube shells")]
    ShellCountMismatch { model: usize, cube: usize },

    #[error("map is not bijective: {0}")]
    BijectivityFailure(String),

    #[error("inverted cells: {cells:?}")]
    InvertedCell { cells: Vec<usize> },

    #[error("flow map could not be inverted at {nodes} lattice node(s)")]
    InversionFailure { nodes: usize },

    #[error("mean hex volume is zero")]
    ZeroMeanVolume,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code for the CLI: 2 parse/topology, 3 solver, 4 flow/inversion, 5 io.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Parse { .. }
            | Error::Topology(_)
            | Error::DegenerateGeometry(_)
            | Error::NonWatertight { .. }
            | Error::ResolutionTooHigh { .. }
            | Error::EmptyVolume
            | Error::EmptyInterface(_)
            | Error::Overlap(_)
            | Error::ShellCountMismatch { .. }
            | Error::Config(_) => 2,
            Error::NumericalDegeneracy(_)
            | Error::SolverFailure { .. }
            | Error::IncompatibleRhs { .. }
            | Error::NoConvergence { .. }
            | Error::DegenerateImage { .. }
            | Error::LocationFailure { .. }
            | Error::ZeroMeanVolume => 3,
            Error::FlipDetected(_)
            | Error::BijectivityFailure(_)
            | Error::InvertedCell { .. }
            | Error::InversionFailure { .. } => 4,
            Error::Io { .. } => 5,
            Error::Stage { .. } => unreachable!("root() strips stage wrappers"),
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
