use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::trainer::TrainState;
use crate::container::{read_single, write_records, Record};
use crate::cqt::{CqtConfig, FeatureStats};
use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::nn::{Model, ModelSpec};
use crate::provenance::hash_json;

pub const CHECKPOINT_KIND: &[u8; 4] = b"CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Hash of everything that fixes the meaning of a model input: frame
/// geometry, spectrogram settings and whether features are normalized.
pub fn geometry_hash(cqt: &CqtConfig, normalized: bool) -> String {
    hash_json(&json!({
        "geometry": Geometry::default(),
        "cqt": cqt,
        "normalized": normalized,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    spec: ModelSpec,
    geometry_hash: String,
    stats: Option<FeatureStats>,
    pipeline: Value,
    train_state: Option<TrainState>,
}

/// A saved model: parameters (including batch-norm buffers), optional
/// optimizer velocities and the configuration it was trained under.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub geometry_hash: String,
    pub params: Vec<Vec<f32>>,
    pub stats: Option<FeatureStats>,
    pub pipeline: Value,
    pub train_state: Option<TrainState>,
    pub velocity: Option<Vec<Vec<f32>>>,
}

impl Checkpoint {
    pub fn from_model(model: &mut Model, geometry_hash: String, stats: Option<FeatureStats>, pipeline: Value) -> Self {
        Self {
            spec: model.spec().clone(),
            geometry_hash,
            params: model.param_values(),
            stats,
            pipeline,
            train_state: None,
            velocity: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            geometry_hash: self.geometry_hash.clone(),
            stats: self.stats.clone(),
            pipeline: self.pipeline.clone(),
            train_state: self.train_state.clone(),
        };
        let mut record = Record::new(CHECKPOINT_KIND, serde_json::to_value(header)?);
        for (i, p) in self.params.iter().enumerate() {
            record.push(&format!("param.{i}"), &[p.len()], p.clone());
        }
        if let Some(v) = &self.velocity {
            for (i, p) in v.iter().enumerate() {
                record.push(&format!("velocity.{i}"), &[p.len()], p.clone());
            }
        }
        write_records(path, &[record])
    }

    /// Loads a checkpoint. With `expected_geometry`, a checkpoint trained
    /// under a different pipeline geometry is refused.
    pub fn load(path: &Path, expected_geometry: Option<&str>) -> Result<Self> {
        let record = read_single(path, CHECKPOINT_KIND)?;
        let malformed = |message: String| Error::Container {
            path: path.to_owned(),
            message,
        };
        let header: Header = serde_json::from_value(record.header.clone())?;
        if header.version != CHECKPOINT_VERSION {
            return Err(malformed(format!("unsupported checkpoint version {}", header.version)));
        }
        if let Some(current) = expected_geometry {
            if current != header.geometry_hash {
                return Err(Error::GeometryMismatch {
                    checkpoint: header.geometry_hash,
                    current: current.to_owned(),
                });
            }
        }
        header.spec.validate()?;
        let collect = |prefix: &str| -> Vec<Vec<f32>> {
            (0..)
                .map_while(|i| record.tensor(&format!("{prefix}.{i}")).map(|(_, d)| d.to_vec()))
                .collect()
        };
        let params = collect("param");
        let velocity = collect("velocity");
        let expected: Vec<usize> = Model::new(header.spec.clone(), 0)
            .params_mut()
            .iter()
            .map(|p| p.len())
            .collect();
        if params.iter().map(Vec::len).collect::<Vec<_>>() != expected {
            return Err(malformed("parameter tensors do not match the model spec".into()));
        }
        Ok(Self {
            spec: header.spec,
            geometry_hash: header.geometry_hash,
            params,
            stats: header.stats,
            pipeline: header.pipeline,
            train_state: header.train_state,
            velocity: (!velocity.is_empty()).then_some(velocity),
        })
    }

    pub fn to_model(&self) -> Model {
        let mut model = Model::new(self.spec.clone(), 0);
        for (p, v) in model.params_mut().into_iter().zip(&self.params) {
            p.value.clone_from(v);
        }
        model
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Variant;

    fn small() -> Model {
        Model::new(ModelSpec::with_widths(Variant::CqtHsf(2), 8, 4), 3)
    }

    #[test]
    fn round_trip_preserves_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut model = small();
        let hash = geometry_hash(&CqtConfig::default(), true);
        let ck = Checkpoint::from_model(&mut model, hash.clone(), None, json!({"a": 1}));
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path, Some(&hash)).unwrap();
        assert_eq!(back.params, model.param_values());
        assert_eq!(back.spec, *model.spec());
        assert_eq!(back.pipeline, json!({"a": 1}));
        assert_eq!(back.to_model().param_values(), model.param_values());
    }

    #[test]
    fn geometry_mismatch_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut model = small();
        let hash = geometry_hash(&CqtConfig::default(), true);
        Checkpoint::from_model(&mut model, hash, None, Value::Null).save(&path).unwrap();
        let other = geometry_hash(&CqtConfig::default(), false);
        assert!(matches!(
            Checkpoint::load(&path, Some(&other)),
            Err(Error::GeometryMismatch { .. })
        ));
    }
}
