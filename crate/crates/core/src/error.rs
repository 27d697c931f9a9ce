use thiserror::Error;

/// Errors raised anywhere in the discretization pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(
        "segment endpoints do not bracket the boundary (phi(a) = {phi_a:e}, phi(b) = {phi_b:e})"
    )]
    NoCrossing { phi_a: f64, phi_b: f64 },
    #[error("{what} did not converge within {iterations} iterations")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
    },
    #[error("degenerate bounding box: width {width}, height {height}")]
    DegenerateBox { width: f64, height: f64 },
    #[error("clipped polygon of background triangle {triangle} is empty")]
    EmptyClip { triangle: usize },
    #[error("background triangle {triangle} intersects the domain in more than one component")]
    MultiComponent { triangle: usize },
    #[error("domain point ({x}, {y}) is not covered by any active element")]
    UncoveredDomain { x: f64, y: f64 },
    #[error("quadrature degree {degree} is not supported (maximum {max})")]
    UnsupportedDegree { degree: usize, max: usize },
    #[error("segment of length {length:e} is degenerate")]
    DegenerateSegment { length: f64 },
    #[error("element {element} is not star-shaped with respect to any sampled point")]
    NonStarShaped { element: usize },
    #[error("level-set gradient vanishes at ({x}, {y})")]
    NormalUndefined { x: f64, y: f64 },
    #[error("basis on element {element} is numerically singular (pivot ratio {pivot:e})")]
    NumericallySingular { element: usize, pivot: f64 },
    #[error("missing quadrature rule for {what} {index}")]
    QuadratureMissing { what: &'static str, index: usize },
    #[error("saddle-point system is singular: {reason}")]
    SingularSystem { reason: String },
    #[error("velocity block is not positive definite; increase the penalty constant")]
    PenaltyTooSmall,
    #[error("solver residual {residual:e} exceeds tolerance {tolerance:e}")]
    ResidualTooLarge { residual: f64, tolerance: f64 },
    #[error("mesh sizes are not a halving sequence (h[{index}] = {h0}, h[{next}] = {h1})", next = .index + 1)]
    NonHalvingSequence { index: usize, h0: f64, h1: f64 },
    #[error("unknown problem `{0}` (expected `square` or `disc`)")]
    UnknownProblem(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
