use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("non-Hermitian model: {0}")]
    NonHermitianModel(String),
    #[error("quadrature did not converge: {0}")]
    QuadratureNotConverged(String),
    #[error("oracle too large: {0}")]
    OracleTooLarge(String),
    #[error("singular leading minor at degree {0}")]
    SingularMinor(usize),
    #[error("truncation too small: {0}")]
    TruncationTooSmall(String),
    #[error("constructions disagree: {0}")]
    ConstructionsDisagree(String),
    #[error("interpolation inconsistent: {0}")]
    InterpolationInconsistent(String),
    #[error("near-degenerate spectrum: {0}")]
    NearDegenerateSpectrum(String),
    #[error("singular shift: {0}")]
    SingularShift(String),
    #[error("truncation not converged: {0}")]
    TruncationNotConverged(String),
    #[error("Newton iteration diverged: {0}")]
    NewtonDiverged(String),
    #[error("degenerate branch point: {0}")]
    DegenerateBranchPoint(String),
    #[error("coincident points: {0}")]
    CoincidentPoints(String),
    #[error("point outside the cut: {0}")]
    OutsideCut(String),
    #[error("integration path crosses the cut: {0}")]
    PathCrossesCut(String),
    #[error("point inside the cut region: {0}")]
    InsideCutRegion(String),
    #[error("chain not mixed: {0}")]
    ChainNotMixed(String),
    #[error("unsupported correlation order: {0}")]
    UnsupportedOrder(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
}

impl Error {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NonHermitianModel(_) => "NonHermitianModel",
            Error::QuadratureNotConverged(_) => "QuadratureNotConverged",
            Error::OracleTooLarge(_) => "OracleTooLarge",
            Error::SingularMinor(_) => "SingularMinor",
            Error::TruncationTooSmall(_) => "TruncationTooSmall",
            Error::ConstructionsDisagree(_) => "ConstructionsDisagree",
            Error::InterpolationInconsistent(_) => "InterpolationInconsistent",
            Error::NearDegenerateSpectrum(_) => "NearDegenerateSpectrum",
            Error::SingularShift(_) => "SingularShift",
            Error::TruncationNotConverged(_) => "TruncationNotConverged",
            Error::NewtonDiverged(_) => "NewtonDiverged",
            Error::DegenerateBranchPoint(_) => "DegenerateBranchPoint",
            Error::CoincidentPoints(_) => "CoincidentPoints",
            Error::OutsideCut(_) => "OutsideCut",
            Error::PathCrossesCut(_) => "PathCrossesCut",
            Error::InsideCutRegion(_) => "InsideCutRegion",
            Error::ChainNotMixed(_) => "ChainNotMixed",
            Error::UnsupportedOrder(_) => "UnsupportedOrder",
            Error::ConfigInvalid(_) => "ConfigInvalid",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
