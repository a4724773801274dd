use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] instrec::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no segment store under {0}; run `instrec ingest` first")]
    NotIngested(String),

    #[error("no thresholds: pass --thresholds, or --train-predictions from `instrec tune-thresholds`, or run `instrec tune-thresholds` first")]
    MissingThresholds,

    #[error("{0}")]
    Input(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn kind(&self) -> &'static str {
        use instrec::Error as E;
        match self {
            CliError::Core(e) => match e {
                E::Io { .. } => "io",
                E::LabelParse { .. } => "label_parse",
                E::AudioDecode { .. } | E::EmptyAudio | E::NonFiniteSample { .. } => "audio",
                E::Shape { .. } => "shape",
                E::MissingComponent { .. } => "missing_component",
                E::UnknownVariant { .. } => "unknown_variant",
                E::GeometryMismatch { .. } => "geometry_mismatch",
                E::Diverged { .. } => "diverged",
                E::Container { .. } => "container",
                E::Config(_) => "config",
                _ => "error",
            },
            CliError::Config(_) => "config",
            CliError::NotIngested(_) => "not_ingested",
            CliError::MissingThresholds => "missing_thresholds",
            CliError::Input(_) => "input",
        }
    }

    /// The machine-readable record printed on stderr.
    pub fn record(&self) -> serde_json::Value {
        json!({ "error": { "kind": self.kind(), "message": self.to_string() } })
    }
}
