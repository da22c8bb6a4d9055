use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate triangle (area {area:.3e} mm²)")]
    DegenerateTriangle { area: f64 },

    #[error("mesh is not closed: edge ({0}, {1}) is used by {2} face(s)")]
    OpenMesh(u32, u32, usize),

    #[error("inconsistent winding at edge ({0}, {1})")]
    InconsistentWinding(u32, u32),

    #[error("mesh is inside-out (enclosed volume {0:.4} mm³)")]
    InvertedMesh(f64),

    #[error("mesh has no pseudonormal cache; call compute_pseudonormals first")]
    MissingPseudonormals,

    #[error("mesh is empty")]
    EmptyMesh,

    #[error("face {face} references vertex {index}, but the mesh has {count} vertices")]
    InvalidIndex { face: usize, index: u32, count: usize },

    #[error("query point lies on the surface (distance {0:.3e} mm)")]
    OnSurface(f64),

    #[error("{name} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("bvh was built for a different mesh ({bvh} triangles, mesh has {mesh})")]
    BvhMismatch { bvh: usize, mesh: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("backend `{0}` is unavailable: {1}")]
    BackendUnavailable(String, String),

    #[error("unknown backend `{0}`")]
    UnknownBackend(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
