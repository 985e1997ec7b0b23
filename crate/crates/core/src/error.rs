use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("meshes do not belong to the same bisection forest")]
    IncompatibleMeshes,
    #[error("mesh is not conforming: {0}")]
    NonConforming(String),
    #[error("unsupported polynomial degree {0} (expected 1 or 2)")]
    UnsupportedDegree(usize),
    #[error("unsupported quadrature exactness {requested} (maximum {max})")]
    UnsupportedQuadrature { requested: usize, max: usize },
    #[error("point ({0}, {1}) lies outside the domain")]
    PointOutsideDomain(f64, f64),
    #[error("target space is not a refinement of the source space")]
    NonNestedTransfer,
    #[error("linear solver failed: {0}")]
    Solver(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("output directory {0} already exists (use --force to overwrite)")]
    OutputExists(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
