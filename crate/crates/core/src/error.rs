use std::path::PathBuf;

/// Errors produced anywhere in the decomposition pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("cannot encode {path}: {source}")]
    Encode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("no frames found in {0}")]
    NoFrames(PathBuf),

    #[error("frame {index} is {got_width}x{got_height}, expected {width}x{height}")]
    FrameSizeMismatch {
        index: usize,
        width: usize,
        height: usize,
        got_width: usize,
        got_height: usize,
    },

    #[error("empty palette")]
    EmptyPalette,

    #[error("channel out of range: {0}")]
    ChannelOutOfRange(f64),

    #[error("duplicate palette colors at indices {0} and {1}")]
    DuplicateColor(usize, usize),

    #[error("requested {requested} palette colors but only {available} distinct colors were sampled")]
    TooFewColors { requested: usize, available: usize },

    #[error("superpixel count {requested} outside [1, {pixels}]")]
    SuperpixelCount { requested: usize, pixels: usize },

    #[error("k = {k} out of range for a corpus of {corpus} points")]
    NeighborCount { k: usize, corpus: usize },

    #[error("coordinate ({x}, {y}, {t}) outside {width}x{height}x{frames} volume")]
    OutOfBounds {
        x: i64,
        y: i64,
        t: i64,
        width: usize,
        height: usize,
        frames: usize,
    },

    #[error("layer id {layer} out of range for {layers} layers")]
    LayerOutOfRange { layer: usize, layers: usize },

    #[error("constraint value {0} outside [0, 1]")]
    ValueOutOfRange(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bad magic")]
    BadMagic,

    #[error("version mismatch: file has version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated payload")]
    TruncatedPayload,

    #[error("trailing bytes after payload")]
    TrailingBytes,

    #[error("checksum failure")]
    ChecksumMismatch,

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps the error with the pipeline stage it came from.
    pub fn at(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The underlying error with any stage wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
