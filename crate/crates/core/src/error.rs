use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("degenerate schedule: 1 - alpha_bar[{step}] = 0")]
    DegenerateSchedule { step: usize },

    #[error("step {step} out of range [{lo}, {hi}]")]
    StepOutOfRange { step: usize, lo: usize, hi: usize },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },

    #[error("invalid watermark: {0}")]
    Watermark(String),

    #[error("stage mismatch: {0}")]
    Stage(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite loss {loss} at step {step} (t = {t})")]
    NonFiniteLoss { step: usize, t: usize, loss: f64 },

    #[error("parameter sets are incongruent: {0} vs {1}")]
    Incongruent(usize, usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("bad IDX magic: {0}")]
    IdxMagic(String),

    #[error("truncated IDX payload: expected {expected} bytes, found {found}")]
    IdxTruncated { expected: usize, found: usize },

    #[error("IDX dimension mismatch: {0}")]
    IdxDimensions(String),

    #[error("container format: {0}")]
    Container(String),

    #[error("checkpoint schedule fingerprint mismatch: file {file}, expected {expected}")]
    FingerprintMismatch { file: String, expected: String },

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schedule(_) => "schedule",
            Error::DegenerateSchedule { .. } => "degenerate_schedule",
            Error::StepOutOfRange { .. } => "step_out_of_range",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::Watermark(_) => "watermark",
            Error::Stage(_) => "stage",
            Error::NonFinite(_) => "non_finite",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Incongruent(..) => "incongruent",
            Error::Config(_) => "config",
            Error::Input(_) => "input",
            Error::IdxMagic(_) => "idx_magic",
            Error::IdxTruncated { .. } => "idx_truncated",
            Error::IdxDimensions(_) => "idx_dimensions",
            Error::Container(_) => "container",
            Error::FingerprintMismatch { .. } => "fingerprint_mismatch",
            Error::Image(_) => "image",
            Error::Json(_) => "json",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
