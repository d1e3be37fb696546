use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while loading, validating or measuring a triangle mesh.
#[derive(Debug, Error)]
pub enum MeshError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("face {face} references vertex {index}, but the mesh has {vertex_count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        vertex_count: usize,
    },
    #[error("face {face} repeats a vertex index")]
    DegenerateFace { face: usize },
    #[error("edge ({a}, {b}) is shared by more than two faces")]
    NonManifoldEdge { a: usize, b: usize },
    #[error("edge ({a}, {b}) appears with the same direction in two faces")]
    InconsistentOrientation { a: usize, b: usize },
    #[error("vertex {vertex} joins several disconnected face fans")]
    NonManifoldVertex { vertex: usize },
    #[error("vertex {vertex} has degree {degree}, at least 2 is required")]
    IsolatedVertex { vertex: usize, degree: usize },
    #[error("face {face} has zero area")]
    ZeroAreaFace { face: usize },
    #[error("area-weighted normal vanishes at vertex {vertex}")]
    DegenerateNormal { vertex: usize },
    #[error("invalid generator parameters: {0}")]
    InvalidParameters(String),
}

/// Errors from the tangent-plane geometry: log map, frames and transport.
#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("logarithmic map undefined: q - p is parallel to the normal")]
    UndefinedLogarithm,
    #[error("no usable reference neighbor at vertex {vertex}")]
    FrameConstruction { vertex: usize },
    #[error("vertex {reference} is not a neighbor of vertex {vertex}")]
    NotANeighbor { vertex: usize, reference: usize },
    #[error("normals at {p} and {q} are antipodal, transport is ambiguous")]
    AmbiguousTransport { p: usize, q: usize },
    #[error("expected {expected} per-vertex values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid transformation: {0}")]
    InvalidTransform(String),
}

/// Errors from the feature-type system and input feature construction.
#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("cannot parse feature type {input:?}: {message}")]
    ParseType { input: String, message: String },
    #[error("irrep order {order} exceeds the supported maximum {max}")]
    OrderTooLarge { order: u32, max: u32 },
    #[error("vertex {vertex} coincides with its neighbor {neighbor}")]
    ZeroDistance { vertex: usize, neighbor: usize },
    #[error("at least one relative power is required")]
    EmptyPowers,
    #[error("feature data has length {actual}, expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
}

/// Errors raised by the equivariant layers and the model.
#[derive(Debug, Error, PartialEq)]
pub enum LayerError {
    #[error("feature type mismatch: layer expects {expected}, got {actual}")]
    TypeMismatch { expected: String, actual: String },
    #[error("feature field is bound to different frames than the transport data")]
    FrameBindingMismatch,
    #[error("vertex {vertex} has no neighbors")]
    EmptyNeighborhood { vertex: usize },
    #[error("bias expects {expected} parameters, got {actual}")]
    BiasCountMismatch { expected: usize, actual: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("residual block maps {input} to {output}")]
    ResidualTypeMismatch { input: String, output: String },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Errors from the reverse-mode tape.
#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("backward requires a scalar loss, got shape {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("backward was already run on this tape; higher-order gradients are not supported")]
    AlreadyBackpropagated,
    #[error("target index {target} is out of range for {classes} classes")]
    InvalidTarget { target: usize, classes: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Top-level error for the command-line harness.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Stable machine-readable tag used in error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Mesh(_) => "mesh",
            HarnessError::Geometry(_) => "geometry",
            HarnessError::Feature(_) => "feature",
            HarnessError::Layer(_) => "layer",
            HarnessError::Autodiff(_) => "autodiff",
            HarnessError::Diverged { .. } => "diverged",
            HarnessError::Checkpoint(_) => "checkpoint",
            HarnessError::Dataset(_) => "dataset",
            HarnessError::Io { .. } => "io",
            HarnessError::Json(_) => "json",
        }
    }
}
