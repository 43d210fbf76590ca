use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid STFT configuration: {0}")]
    InvalidStft(String),
    #[error("signal too short: {len} samples, need at least {min}")]
    SignalTooShort { len: usize, min: usize },
    #[error("channel {channel} has {len} samples, expected {expected}")]
    ChannelLengthMismatch {
        channel: usize,
        len: usize,
        expected: usize,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error("no speech found in the clean reference component")]
    NoSpeech,
    #[error("VAD labels need at least one speech and one noise frame")]
    DegenerateLabels,
    #[error("reference entry at bin is unreliable (|r_ref| = {magnitude:.3e})")]
    UnreliableBin { magnitude: f64 },
    #[error("zero reference-channel power")]
    ZeroReferencePower,
    #[error("degenerate steering: a^H R^-1 a = {0:.3e}")]
    DegenerateSteering(f64),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("eigen solver did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("too few frames: {got}, need {need}")]
    TooFewFrames { got: usize, need: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("WAV error on {path}: {source}")]
    Wav {
        path: String,
        #[source]
        source: hound::Error,
    },
    #[error("{condition}: {source}")]
    Condition {
        condition: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Process exit code for the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidStft(_) | Error::Scene(_) => 2,
            Error::Io { .. } | Error::Wav { .. } => 3,
            Error::Condition { source, .. } => source.exit_code(),
            _ => 4,
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
