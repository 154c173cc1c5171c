use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("zero-energy matrix cannot be normalized: {0}")]
    ZeroMatrix(&'static str),
    #[error("degenerate sub-channel {index}: zero SINR denominator")]
    DegenerateSubchannel { index: usize },
    #[error("singular equalizer matrix")]
    Singular,
    #[error("ill-conditioned equalizer matrix (condition number {0:.3e})")]
    IllConditioned(f64),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("unknown file magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported {kind} format version {version}")]
    UnsupportedVersion { kind: &'static str, version: u32 },
    #[error("truncated file: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
