use thiserror::Error;

use crate::mesh::BoundaryPart;

#[derive(Debug, Error)]
pub enum Error {
    #[error("triangle id {0} out of range")]
    InvalidTriangle(usize),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("unsupported element: {family} of degree {degree}")]
    UnsupportedElement { family: &'static str, degree: usize },

    #[error("degenerate element (jacobian determinant {0:e})")]
    DegenerateElement(f64),

    #[error("space mismatch: {0}")]
    SpaceMismatch(String),

    #[error("boundary facets on {part:?} do not match between trial and test meshes: {detail}")]
    FacetMismatch { part: BoundaryPart, detail: String },

    #[error("quadrature produced a non-finite value ({0})")]
    NonFinite(&'static str),

    #[error("gram matrix `{name}` is not positive definite (smallest eigenvalue {smallest_eigenvalue:e})")]
    NotPositiveDefinite { name: &'static str, smallest_eigenvalue: f64 },

    #[error("schur complement is singular: the test space is too small for the trial space")]
    SingularSchur,

    #[error("iterative solve did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("inf-sup probe undefined: {0}")]
    ProbeUndefined(String),

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error("problem `{0}` has no exact solution")]
    MissingExactSolution(String),

    #[error("need at least {needed} history points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
