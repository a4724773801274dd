use std::path::{Path, PathBuf};

use instrec::cqt::CqtConfig;
use instrec::ingest::InstrumentCatalog;
use instrec::nn::{ModelSpec, Variant, DEFAULT_BASE_CHANNELS, DEFAULT_WIDTH};
use instrec::train::{geometry_hash, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Environment variable overriding `paths.cache`.
pub const CACHE_ENV: &str = "INSTREC_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub cache: PathBuf,
    pub output: PathBuf,
    /// JSON instrument catalog; the MusicNet program numbers when absent.
    pub catalog: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: None,
            cache: PathBuf::from(".instrec-cache"),
            output: PathBuf::from("instrec-out"),
            catalog: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PitchInput {
    /// Pitch rolls rasterized from the note labels.
    GroundTruth,
    /// Salience matrices read from `model.salience_file`.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: String,
    /// Order of the harmonic series feature for `cqt_hsf`.
    pub hsf_order: Option<usize>,
    pub width: usize,
    pub base_channels: usize,
    pub pitch: PitchInput,
    pub salience_file: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: "cqt_hsf".into(),
            hsf_order: Some(3),
            width: DEFAULT_WIDTH,
            base_channels: DEFAULT_BASE_CHANNELS,
            pitch: PitchInput::GroundTruth,
            salience_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub weight_cap: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        Self { weight_cap: 10.0 }
    }
}

/// Everything a run depends on. Read from TOML, then overridden by the
/// environment and command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Standardize CQT bins with training-set statistics.
    pub normalize: bool,
    pub paths: Paths,
    pub cqt: CqtConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            normalize: true,
            paths: Paths::default(),
            cqt: CqtConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            loss: LossSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| instrec::Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn variant(&self) -> CliResult<Variant> {
        Ok(Variant::parse(&self.model.variant, self.model.hsf_order)?)
    }

    pub fn model_spec(&self) -> CliResult<ModelSpec> {
        let spec = ModelSpec::with_widths(self.variant()?, self.model.width, self.model.base_channels);
        spec.validate()?;
        Ok(spec)
    }

    pub fn catalog(&self) -> CliResult<InstrumentCatalog> {
        Ok(match &self.paths.catalog {
            Some(p) => InstrumentCatalog::load(p)?,
            None => InstrumentCatalog::default(),
        })
    }

    pub fn geometry_hash(&self) -> String {
        geometry_hash(&self.cqt, self.normalize)
    }

    pub fn dataset(&self) -> CliResult<&Path> {
        self.paths
            .dataset
            .as_deref()
            .ok_or_else(|| CliError::Config("no dataset root given (paths.dataset or --dataset)".into()))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.cqt.validate()?;
        self.train.validate()?;
        if !(self.loss.weight_cap >= 1.0 && self.loss.weight_cap.is_finite()) {
            return Err(CliError::Config("loss.weight_cap must be a finite value >= 1".into()));
        }
        self.variant()?;
        if self.model.pitch == PitchInput::External && self.model.salience_file.is_none() {
            return Err(CliError::Config(
                "model.pitch = \"external\" needs model.salience_file".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_fill_defaults() {
        let cfg = PipelineConfig::from_toml("[model]\nvariant = \"resblock1d\"\n[train]\nbatch_size = 4\n").unwrap();
        assert_eq!(cfg.model.variant, "resblock1d");
        assert_eq!(cfg.model.width, DEFAULT_WIDTH);
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.train.momentum, 0.9);
        assert_eq!(cfg.train.initial_lr, 0.01);
        assert_eq!(cfg.cqt, CqtConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("[model]\nvariantt = \"x\"\n").is_err());
    }
}
