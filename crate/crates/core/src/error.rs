use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("frame index {index} out of range for {frames} frames")]
    FrameOutOfRange { index: usize, frames: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("sampling pattern frame {0} has no samples")]
    EmptyPatternFrame(usize),

    #[error("non-finite loss at iteration {iteration}: data={data}, sparsity={sparsity}, tv={tv}")]
    NonFiniteLoss {
        iteration: usize,
        data: f64,
        sparsity: f64,
        tv: f64,
    },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("reference image is identically zero")]
    ZeroReference,

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported format version {found} (this build reads major version {supported})")]
    UnsupportedVersion { found: String, supported: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image encoding failed: {0}")]
    Image(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
