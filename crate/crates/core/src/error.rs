use thiserror::Error;

use crate::basis::BasisError;
use crate::dense::DenseError;
use crate::mesh::MeshError;

#[derive(Debug, Error)]
pub enum HdgError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Dense(#[from] DenseError),
    #[error("mass matrix of element {element} is singular")]
    SingularMass { element: usize },
    #[error("local solve on element {element} is singular")]
    SingularLocalSolve { element: usize },
    #[error("non-finite state value in {0}")]
    NonFiniteState(&'static str),
    #[error("inconsistent dimensions: {0}")]
    InconsistentDimensions(String),
    #[error("{n_dof} trace unknowns exceed the dense limit of {limit}")]
    TooLargeForDense { n_dof: usize, limit: usize },
    #[error("preconditioner block {index} is singular")]
    SingularBlock { index: usize },
    #[error("non-finite value in GMRES at iteration {iteration}: {what}")]
    NaNDetected { iteration: usize, what: String },
    #[error("line search failed: no step >= {min_alpha} reduced the residual {residual:.3e}")]
    LineSearchFailed { min_alpha: f64, residual: f64 },
    #[error("time step {step}: {source}")]
    TimeStep {
        step: usize,
        #[source]
        source: Box<HdgError>,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed matrix file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HdgError {
    /// Whether the error reflects a singular or non-finite computation rather
    /// than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            HdgError::Dense(DenseError::SingularBlock { .. })
                | HdgError::SingularMass { .. }
                | HdgError::SingularLocalSolve { .. }
                | HdgError::NonFiniteState(_)
                | HdgError::SingularBlock { .. }
                | HdgError::NaNDetected { .. }
        ) || matches!(self, HdgError::TimeStep { source, .. } if source.is_numerical())
    }

    /// Whether the error means the nonlinear iteration stalled.
    pub fn is_nonconvergence(&self) -> bool {
        match self {
            HdgError::LineSearchFailed { .. } => true,
            HdgError::TimeStep { source, .. } => source.is_nonconvergence(),
            _ => false,
        }
    }
}

pub type Result<T, E = HdgError> = std::result::Result<T, E>;
