use thiserror::Error;

/// Failure modes shared across the geometry, solver, estimation and
/// synthetic-scene layers.
///
/// Several variants are "soft" outcomes: a solver reporting
/// [`Error::NoRealRoots`] or a decomposition reporting
/// [`Error::CheiralityFailure`] simply rejects the hypothesis at hand.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("local affine transformation is singular")]
    SingularAffine,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("gravity direction must be a finite nonzero vector")]
    InvalidGravity,
    #[error("invalid relative pose: {0}")]
    InvalidPose(&'static str),
    #[error("residual is undefined for this correspondence (points at the epipoles)")]
    DegenerateResidual,
    #[error("mapped point lies at infinity")]
    PointAtInfinity,
    #[error("no pose candidate places the point in front of both cameras")]
    CheiralityFailure,
    #[error("polynomial has no real roots")]
    NoRealRoots,
    #[error("null space of the hidden-variable matrix is not one-dimensional")]
    DegenerateKernel,
    #[error("linear system for the plane normal is rank deficient")]
    RankDeficientSystem,
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("invalid polynomial: all coefficients vanish")]
    ZeroPolynomial,
    #[error("match pool exhausted after {0} candidates")]
    PoolExhausted(usize),
    #[error("invalid match pool: {0}")]
    InvalidPool(String),
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),
    #[error("no model reached the minimum support")]
    NoModelFound,
    #[error("scene generation failed after {0} attempts")]
    GenerationFailure(usize),
    #[error("plane is nearly tangent to a viewing ray")]
    GrazingPlane,
    #[error("empty input")]
    EmptyInput,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
