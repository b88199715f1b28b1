use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate body frame: sigma_min(G) = {sigma_min:.3e} A^2")]
    DegenerateFrame { sigma_min: f64 },

    #[error("degenerate anchor: |r_a - centroid| = {norm:.3e} A")]
    DegenerateAnchor { norm: f64 },

    #[error("resource guard: {what} = {count} exceeds limit {limit}")]
    Resource {
        what: &'static str,
        count: usize,
        limit: usize,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("training diverged at epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },

    #[error("{} frame(s) failed the frame gates (first: frame {})", .0.len(), .0.first().map_or(0, |r| r.frame))]
    RejectedFrames(Vec<crate::injector::Rejection>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
