use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular Fisher information at theta = {theta} (outcome {outcome})")]
    SingularFisher { theta: f64, outcome: usize },

    #[error("prior has no support on the grid")]
    DegeneratePrior,

    #[error("prior is not differentiable: {0}")]
    NonDifferentiablePrior(String),

    #[error("no feasible estimate: every candidate has zero likelihood")]
    NoFeasibleEstimate,

    #[error("posterior underflowed to zero everywhere on the grid")]
    DegeneratePosterior,

    #[error("grid spacing {spacing} does not resolve posterior width {width}")]
    Resolution { spacing: f64, width: f64 },

    #[error("training diverged at epoch {epoch} (cost {cost})")]
    Divergence { epoch: usize, cost: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
