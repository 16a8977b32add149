use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid facet: {0}")]
    InvalidFacet(String),

    #[error("polytope is unbounded along direction {direction:?}")]
    Unbounded { direction: Vec<f64> },

    #[error("polytope has empty interior")]
    EmptyInterior,

    #[error("non-Delzant vertex {vertex:?}: {reason}")]
    NonDelzantVertex { vertex: Vec<f64>, reason: String },

    #[error("empty grid: no cells satisfy the margin {margin}")]
    EmptyGrid { margin: f64 },

    #[error("point {point:?} is not in the interior of the polytope")]
    NotInterior { point: Vec<f64> },

    #[error("Hessian is not positive definite at {point:?} (min eigenvalue {eigenvalue:e})")]
    NotStrictlyConvex { point: Vec<f64>, eigenvalue: f64 },

    #[error("grid minimum of f_λ at {argmin:?} is {distance:e} away from λ (cell size {cell:e})")]
    MinimumOffCenter { argmin: Vec<f64>, distance: f64, cell: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonFailed { iterations: usize, residual: f64 },

    #[error("Hessian is ill-conditioned at {point:?} (condition number {condition:e})")]
    IllConditioned { point: Vec<f64>, condition: f64 },

    #[error("rank-deficient frame (rank {rank}, expected {expected})")]
    RankDeficient { rank: usize, expected: usize },

    #[error("quadrature stagnated at estimate {value:e} with error estimate {estimate:e}")]
    QuadratureStagnation { value: f64, estimate: f64 },

    #[error("quadrature did not reach tolerance within depth {depth} (value {value:e}, error estimate {estimate:e})")]
    QuadratureDepth { depth: usize, value: f64, estimate: f64 },

    #[error("weights {first:?} and {second:?} alias on a θ-grid of {points} points")]
    Aliasing {
        first: Vec<i64>,
        second: Vec<i64>,
        points: usize,
    },

    #[error("λ = {lambda:?} is not a regular value (λ ∈ t*_{{Z,reg}} requires an interior lattice point)")]
    NotRegular { lambda: Vec<f64> },

    #[error("bump support is not contained in the polytope interior: {0}")]
    BumpSupport(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
        if expected == actual {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, actual })
        }
    }
}
