use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("insufficient overlap: {0}")]
    InsufficientOverlap(String),
    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),
    #[error("no overlap: {0}")]
    NoOverlap(String),
    #[error("degenerate denominator: {0}")]
    DegenerateDenominator(String),
    #[error("degenerate distance: {0}")]
    DegenerateDistance(String),
    #[error("no link within {radius_m} m of ({lat}, {lon})")]
    NoMatch { lat: f64, lon: f64, radius_m: f64 },
    #[error("unknown link `{0}`")]
    UnknownLink(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("underdetermined fit: {0}")]
    UnderdeterminedFit(String),
    #[error("singular fit: {0}")]
    SingularFit(String),
    #[error("uncovered bin: {0}")]
    UncoveredBin(String),
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),
    #[error("schema violation in {record}: {reason}")]
    Schema { record: String, reason: String },
    #[error("rejected snapshot at epoch {epoch}: {reason}")]
    RejectedSnapshot { epoch: i64, reason: String },
    #[error("unreachable: no path from `{origin}` to `{destination}`")]
    Unreachable { origin: String, destination: String },
    #[error("unsupported feature: {0}")]
    Unsupported(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    /// Short machine-readable tag for CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyInput(_) => "empty-input",
            Error::InsufficientOverlap(_) => "insufficient-overlap",
            Error::DegenerateSignal(_) => "degenerate-signal",
            Error::NoOverlap(_) => "no-overlap",
            Error::DegenerateDenominator(_) => "degenerate-denominator",
            Error::DegenerateDistance(_) => "degenerate-distance",
            Error::NoMatch { .. } => "no-match",
            Error::UnknownLink(_) => "unknown-link",
            Error::UnknownNode(_) => "unknown-node",
            Error::UnderdeterminedFit(_) => "underdetermined-fit",
            Error::SingularFit(_) => "singular-fit",
            Error::UncoveredBin(_) => "uncovered-bin",
            Error::InvalidMeasurement(_) => "invalid-measurement",
            Error::Schema { .. } => "schema-violation",
            Error::RejectedSnapshot { .. } => "rejected-snapshot",
            Error::Unreachable { .. } => "unreachable",
            Error::Unsupported(_) => "unsupported-feature",
            Error::Invalid(_) => "invalid-input",
            Error::Io { .. } => "io",
            Error::Csv { .. } => "csv",
            Error::Json { .. } => "json",
            Error::Internal(_) => "internal",
        }
    }

    pub fn is_internal(&self) -> bool {
        matches!(self, Error::Internal(_))
    }

    pub(crate) fn schema(record: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            record: record.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
