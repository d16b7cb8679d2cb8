use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("spectral radius {0} is not below one")]
    Unstable(f64),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("break fraction leaves fewer than 2 observations in a regime (T = {t}, break index = {break_index})")]
    BreakTooExtreme { t: usize, break_index: usize },

    #[error("regime too small: break index {break_index} of T = {t} needs at least {min} observations per regime")]
    RegimeTooSmall {
        t: usize,
        break_index: usize,
        min: usize,
    },

    #[error("K = {k} is smaller than the number of restrictions p = {p}")]
    KTooSmall { k: usize, p: usize },

    #[error("transformed basis has rank {available}, cannot use K = {requested}")]
    BasisRankDeficient { requested: usize, available: usize },

    #[error("{singular} of {reps} replications had a singular weighting matrix")]
    SingularReplications { singular: usize, reps: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cache file: {0}")]
    CacheFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short stable identifier used in CLI diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            Error::NotSymmetric(_) => "NotSymmetric",
            Error::Unstable(_) => "Unstable",
            Error::Dimension(_) => "Dimension",
            Error::Domain(_) => "Domain",
            Error::BreakTooExtreme { .. } => "BreakTooExtreme",
            Error::RegimeTooSmall { .. } => "RegimeTooSmall",
            Error::KTooSmall { .. } => "KTooSmall",
            Error::BasisRankDeficient { .. } => "BasisRankDeficient",
            Error::SingularReplications { .. } => "SingularReplications",
            Error::Config(_) => "Config",
            Error::CacheFormat(_) => "CacheFormat",
            Error::Io(_) => "Io",
        }
    }

    /// Whether the error comes from input validation rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_)
                | Error::Domain(_)
                | Error::BreakTooExtreme { .. }
                | Error::RegimeTooSmall { .. }
                | Error::KTooSmall { .. }
                | Error::Config(_)
        )
    }
}
