use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde_json::json;

use super::{CqtConfig, FeatureStats};
use crate::container::{self, Record};
use crate::error::{Error, Result};
use crate::geometry::{FRAMES, PITCH_BINS};
use crate::provenance;
use crate::raster::{FrameRaster, FreqAxis};

const FEATURE_KIND: &[u8; 4] = b"FEAT";

/// Feature files keyed by `(clip_id, segment_index, config hash)`:
///
/// ```text
/// <root>/<config-hash-prefix>/config.json
/// <root>/<config-hash-prefix>/stats.json
/// <root>/<config-hash-prefix>/<clip_id>/<segment_index>.feat
/// ```
///
/// A changed configuration hashes to a different directory, so stale
/// features are never read.
pub struct FeatureCache {
    dir: PathBuf,
    config: CqtConfig,
    hash: String,
}

impl FeatureCache {
    pub fn open(root: &Path, config: CqtConfig) -> Result<Self> {
        let hash = config.hash();
        let dir = root.join(provenance::short(&hash));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let config_path = dir.join("config.json");
        std::fs::write(
            &config_path,
            serde_json::to_vec_pretty(&json!({ "cqt": config, "hash": hash }))?,
        )
        .map_err(|e| Error::io(&config_path, e))?;
        Ok(Self { dir, config, hash })
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn config(&self) -> &CqtConfig {
        &self.config
    }

    fn path(&self, clip_id: &str, segment: usize) -> PathBuf {
        self.dir.join(clip_id).join(format!("{segment}.feat"))
    }

    pub fn contains(&self, clip_id: &str, segment: usize) -> bool {
        self.path(clip_id, segment).is_file()
    }

    pub fn put(&self, clip_id: &str, segment: usize, features: &FrameRaster) -> Result<()> {
        let mut record = Record::new(
            FEATURE_KIND,
            json!({
                "clip_id": clip_id,
                "segment_index": segment,
                "config_hash": self.hash,
            }),
        );
        record.push("cqt", &[FRAMES, PITCH_BINS], features.data().iter().copied().collect());
        container::write_records(&self.path(clip_id, segment), &[record])
    }

    pub fn get(&self, clip_id: &str, segment: usize) -> Result<FrameRaster> {
        let path = self.path(clip_id, segment);
        let record = container::read_single(&path, FEATURE_KIND)?;
        if record.header["config_hash"].as_str() != Some(self.hash.as_str()) {
            return Err(Error::Container {
                path,
                message: "feature file computed under a different configuration".into(),
            });
        }
        let (shape, data) = record.tensor("cqt").ok_or_else(|| Error::Container {
            path: path.clone(),
            message: "missing cqt tensor".into(),
        })?;
        if shape != [FRAMES, PITCH_BINS] {
            return Err(Error::shape("cached cqt", &[FRAMES, PITCH_BINS], shape));
        }
        FrameRaster::new(
            Array2::from_shape_vec((FRAMES, PITCH_BINS), data.to_vec()).expect("checked"),
            FreqAxis::Semitones,
        )
    }

    pub fn put_stats(&self, stats: &FeatureStats) -> Result<()> {
        let path = self.dir.join("stats.json");
        std::fs::write(&path, serde_json::to_vec_pretty(stats)?).map_err(|e| Error::io(&path, e))
    }

    pub fn stats(&self) -> Result<Option<FeatureStats>> {
        let path = self.dir.join("stats.json");
        if !path.is_file() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Some(serde_json::from_str(&text)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cqt::MagnitudeScale;

    #[test]
    fn config_change_invalidates() {
        let dir = tempfile::tempdir().unwrap();
        let a = FeatureCache::open(dir.path(), CqtConfig::default()).unwrap();
        let raster = FrameRaster::zeros(FreqAxis::Semitones);
        a.put("c", 0, &raster).unwrap();
        assert!(a.contains("c", 0));
        assert_eq!(a.get("c", 0).unwrap(), raster);

        let other = CqtConfig {
            magnitude_scale: MagnitudeScale::Linear,
            ..CqtConfig::default()
        };
        let b = FeatureCache::open(dir.path(), other).unwrap();
        assert_ne!(a.config_hash(), b.config_hash());
        assert!(!b.contains("c", 0));
    }
}
