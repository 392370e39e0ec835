use alloc::string::String;

/// Failure modes across the crate.
///
/// Variants are named for the condition they report rather than the module
/// that raises them; the payload carries the offending values formatted into
/// a message, since callers almost always want to surface it verbatim.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Dimensions (p, q) outside the regime where the cone analysis holds
    /// (p, q >= 3 and p + q >= 8).
    DimensionError(String),
    /// A scalar parameter out of range (mode index, tolerance, mesh size...).
    ParameterError(String),
    /// Function argument outside the mathematical domain.
    DomainError(String),
    /// An iteration or series failed to reach tolerance within its budget.
    NonConvergence(String),
    /// An ODE trajectory left the region where the equation makes sense.
    IntegrationBlowup(String),
    /// A profile stopped being a graph over the chart coordinate.
    ChartFold(String),
    /// A rate fit had no usable residual window.
    FitDegenerate(String),
    /// A mesh too coarse for the requested stencil or interpolation.
    MeshTooCoarse(String),
    /// A curve crossed the cone it must stay strictly on one side of.
    ConeBreach(String),
    /// Mutually inconsistent run parameters (ordering constraints).
    ParameterClash(String),
    /// No concave C^2 blend exists for the requested corner half-width.
    BlendFailure(String),
    /// Neighboring charts disagree beyond tolerance on their overlap.
    OverlapMismatch(String),
    /// A linear solve failed (singular or non-finite tridiagonal system).
    SolveFailure(String),
    /// The tip height reached zero during evolution.
    TipCollapse(String),
    /// A parametric curve degenerated (crossed nodes, vanishing segment).
    CurveDegenerate(String),
    /// Charts no longer cover the curve (gap between neighbors).
    ChartCoverage(String),
    /// The shooter stalled before reaching its residual target.
    RootFindStall(String),
    /// Requested fit window spans too little of the data.
    SpanTooShort(String),
    /// A denominator in the quasilinear terms approached zero.
    DenominatorBreach(String),
    /// A diagnostic window is not covered by the stored charts.
    WindowUncovered(String),
    /// A config-level constraint violated (named inequality in message).
    ConstraintViolation(String),
}

impl core::fmt::Display for Error {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let (tag, msg) = match self {
            Error::DimensionError(m) => ("dimension error", m),
            Error::ParameterError(m) => ("parameter error", m),
            Error::DomainError(m) => ("domain error", m),
            Error::NonConvergence(m) => ("no convergence", m),
            Error::IntegrationBlowup(m) => ("integration blowup", m),
            Error::ChartFold(m) => ("chart fold", m),
            Error::FitDegenerate(m) => ("degenerate fit", m),
            Error::MeshTooCoarse(m) => ("mesh too coarse", m),
            Error::ConeBreach(m) => ("cone breach", m),
            Error::ParameterClash(m) => ("parameter clash", m),
            Error::BlendFailure(m) => ("blend failure", m),
            Error::OverlapMismatch(m) => ("overlap mismatch", m),
            Error::SolveFailure(m) => ("linear solve failure", m),
            Error::TipCollapse(m) => ("tip collapse", m),
            Error::CurveDegenerate(m) => ("degenerate curve", m),
            Error::ChartCoverage(m) => ("chart coverage gap", m),
            Error::RootFindStall(m) => ("root-find stall", m),
            Error::SpanTooShort(m) => ("span too short", m),
            Error::DenominatorBreach(m) => ("denominator breach", m),
            Error::WindowUncovered(m) => ("window uncovered", m),
            Error::ConstraintViolation(m) => ("constraint violation", m),
        };
        write!(f, "{tag}: {msg}")
    }
}

impl core::error::Error for Error {}
