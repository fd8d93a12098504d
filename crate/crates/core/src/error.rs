use thiserror::Error;

/// Errors raised by the design, estimation and information routines.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("x = {x} lies outside the design space [{lo}, {hi}]")]
    Domain { x: f64, lo: f64, hi: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("derivative order {0} is not supported (expected 0..=4)")]
    InvalidOrder(usize),

    #[error("quadrature did not converge: estimate {estimate}, error estimate {abs_error:e}")]
    QuadratureNonConvergence { estimate: f64, abs_error: f64 },

    #[error("maximum likelihood fit did not converge: gradient norm {grad_norm:e} at {best:?}")]
    NonConvergence { best: Vec<f64>, grad_norm: f64 },

    #[error("information matrix is singular or not compatible with the criterion")]
    SingularInfo,

    #[error("negative observed information ({0}) in a fitted cluster")]
    NegativeQ(f64),

    #[error("all design weights are degenerate after regularization")]
    AllWeightsDegenerate,

    #[error("design not certified: min sensitivity {min_phi:e} at x = {argmin_x}")]
    NotCertified {
        design: crate::design::Design,
        min_phi: f64,
        argmin_x: f64,
    },

    #[error("cannot round a {d}-point design to n = {n} observations")]
    InfeasibleRounding { n: usize, d: usize },

    #[error("i/o failure: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable tag used by the CLI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain { .. } => "Domain",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::InvalidOrder(_) => "InvalidOrder",
            Error::QuadratureNonConvergence { .. } => "QuadratureNonConvergence",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::SingularInfo => "SingularInfo",
            Error::NegativeQ(_) => "NegativeQ",
            Error::AllWeightsDegenerate => "AllWeightsDegenerate",
            Error::NotCertified { .. } => "NotCertified",
            Error::InfeasibleRounding { .. } => "InfeasibleRounding",
            Error::Io(_) => "Io",
        }
    }

    /// True for failures of a numerical procedure, as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::QuadratureNonConvergence { .. }
                | Error::NonConvergence { .. }
                | Error::SingularInfo
                | Error::NegativeQ(_)
                | Error::AllWeightsDegenerate
                | Error::NotCertified { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
