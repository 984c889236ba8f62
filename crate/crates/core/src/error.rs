use thiserror::Error;

/// Every failure the laboratory can report.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate plane intersection (angle {angle:.3e} rad)")]
    DegenerateIntersection { angle: f64 },

    #[error("power iteration did not converge: gap {gap:.3e} after {iterations} iterations")]
    NonConvergence { gap: f64, iterations: usize },

    #[error("inverse iteration failed: residual {residual:.3e}")]
    Inversion { residual: f64 },

    #[error("indeterminate classification: {0}")]
    Indeterminate(String),

    #[error("size limit exceeded: {0}")]
    Size(String),

    #[error("periodic continuation failed: {0}")]
    Continuation(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("transport failed: {0}")]
    Transport(String),

    #[error("holonomy did not converge: gap {gap:.3e} at depth {depth}")]
    Holonomy { gap: f64, depth: usize },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("leaf trace stopped after {} points: {source}", partial.points.len())]
    Trace {
        partial: Box<crate::splitting::LeafArc>,
        #[source]
        source: Box<LabError>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
