use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use instrec::cqt::{Cqt, FeatureCache, FeatureStats};
use instrec::geometry::{Geometry, HOP, INSTRUMENTS};
use instrec::hsf::{read_salience_records, PitchSalience};
use instrec::ingest::{
    load_audio, parse_labels, scan_dataset, segment_clip, SegmentStore, Split, StoreIndex, StoredClip, STORE_VERSION,
};
use instrec::nn::{prepare_input, Model};
use instrec::plot::{render_rolls, save_png, RollLayout};
use instrec::provenance::{hash_files, hash_json, short};
use instrec::train::{
    compute_class_weights, frame_f1, predict_all, render_table, split_validation, tune_thresholds, Checkpoint,
    EvalReport, FramePair, LossConfig, ThresholdVector, TrainExample, Trainer,
};
use ndarray::{concatenate, s, Array2, Axis};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{PipelineConfig, PitchInput};
use crate::error::{CliError, CliResult};
use crate::rolls::{ClipRoll, RollSet};

pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const THRESHOLDS_FILE: &str = "thresholds.json";
pub const TRAIN_PREDICTIONS: &str = "train_predictions.roll";
pub const TEST_PREDICTIONS: &str = "test_predictions.roll";
pub const EVAL_REPORT: &str = "eval_report.json";
pub const EVAL_TABLE: &str = "eval_report.txt";

fn store(cfg: &PipelineConfig) -> SegmentStore {
    SegmentStore::new(cfg.paths.cache.join("segments"))
}

fn feature_cache(cfg: &PipelineConfig) -> CliResult<FeatureCache> {
    Ok(FeatureCache::open(&cfg.paths.cache.join("features"), cfg.cqt)?)
}

fn store_index(cfg: &PipelineConfig) -> CliResult<StoreIndex> {
    let store = store(cfg);
    store
        .read_index()?
        .ok_or_else(|| CliError::NotIngested(store.dir().display().to_string()))
}

fn output_dir(cfg: &PipelineConfig) -> CliResult<&Path> {
    let dir = cfg.paths.output.as_path();
    fs::create_dir_all(dir).map_err(|e| instrec::Error::io(dir, e))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(instrec::Error::from)?;
    fs::write(path, text + "\n").map_err(|e| instrec::Error::io(path, e))?;
    Ok(())
}

fn file_hash(path: &Path) -> CliResult<String> {
    Ok(hash_files(&[path])?)
}

/// Frames covering `samples` audio samples on the 512-sample grid.
pub fn frames_for(samples: usize) -> usize {
    samples.div_ceil(HOP)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCount {
    pub clips: usize,
    pub segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub splits: BTreeMap<String, SplitCount>,
    pub input_hash: String,
    /// True when the store was already up to date.
    pub cached: bool,
}

/// Cuts every clip of the dataset into labeled segments in the cache.
/// Re-running with unchanged inputs does nothing.
pub fn cmd_ingest(cfg: &PipelineConfig) -> CliResult<IngestSummary> {
    let root = cfg.dataset()?;
    let catalog = cfg.catalog()?;
    let clips = scan_dataset(root)?;
    let files: Vec<&Path> = clips
        .iter()
        .flat_map(|c| [c.audio_path.as_path(), c.labels_path.as_path()])
        .collect();
    let input_hash = hash_json(&json!({
        "files": hash_files(&files)?,
        "clips": clips.iter().map(|c| (&c.clip_id, c.split)).collect::<Vec<_>>(),
        "catalog": catalog,
    }));
    let store = store(cfg);
    let summarize = |index: &StoreIndex| {
        [Split::Train, Split::Test]
            .into_iter()
            .map(|s| {
                let count = SplitCount {
                    clips: index.clips_in(s).count(),
                    segments: index.segment_count(s),
                };
                (s.as_str().to_owned(), count)
            })
            .collect()
    };
    if let Some(index) = store.read_index()? {
        if index.input_hash == input_hash {
            log::info!("segment store is up to date ({})", short(&input_hash));
            return Ok(IngestSummary {
                splits: summarize(&index),
                input_hash,
                cached: true,
            });
        }
    }
    let mut stored = Vec::with_capacity(clips.len());
    for clip in &clips {
        let audio = load_audio(&clip.audio_path)?;
        let events = parse_labels(&clip.labels_path, &catalog)?;
        let segments = segment_clip(&clip.clip_id, &audio, &events)?;
        for seg in &segments {
            store.write_segment(clip.split, seg)?;
        }
        log::info!("{} ({}): {} segments", clip.clip_id, clip.split.as_str(), segments.len());
        stored.push(StoredClip {
            clip_id: clip.clip_id.clone(),
            split: clip.split,
            segments: segments.len(),
            duration_samples: audio.len(),
        });
    }
    let index = StoreIndex {
        version: STORE_VERSION,
        input_hash: input_hash.clone(),
        catalog,
        clips: stored,
    };
    store.write_index(&index)?;
    Ok(IngestSummary {
        splits: summarize(&index),
        input_hash,
        cached: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub computed: usize,
    pub cached: usize,
    pub config_hash: String,
}

/// Computes the CQT of every stored segment not yet in the feature cache,
/// then the per-bin training statistics.
pub fn cmd_features(cfg: &PipelineConfig) -> CliResult<FeatureSummary> {
    let index = store_index(cfg)?;
    let store = store(cfg);
    let cache = feature_cache(cfg)?;
    let cqt = Cqt::new(cfg.cqt)?;
    let (mut computed, mut cached) = (0, 0);
    let mut train_features = Vec::new();
    for clip in &index.clips {
        for i in 0..clip.segments {
            let features = if cache.contains(&clip.clip_id, i) {
                cached += 1;
                cache.get(&clip.clip_id, i)?
            } else {
                let seg = store.read_segment(&clip.clip_id, i)?;
                let x = cqt.compute(&seg.audio)?;
                cache.put(&clip.clip_id, i, &x)?;
                computed += 1;
                x
            };
            if clip.split == Split::Train {
                train_features.push(features);
            }
        }
    }
    if train_features.is_empty() {
        return Err(CliError::Input("the dataset has no training segments".into()));
    }
    cache.put_stats(&FeatureStats::from_rasters(&train_features)?)?;
    Ok(FeatureSummary {
        computed,
        cached,
        config_hash: cache.config_hash().to_owned(),
    })
}

/// Stored clips of one split with one model input per segment.
struct SplitData {
    clips: Vec<(StoredClip, Vec<TrainExample>)>,
}

impl SplitData {
    fn examples(&self) -> Vec<TrainExample> {
        self.clips.iter().flat_map(|(_, e)| e.iter().cloned()).collect()
    }
}

fn external_salience(cfg: &PipelineConfig) -> CliResult<BTreeMap<(String, usize), PitchSalience>> {
    let path = cfg
        .model
        .salience_file
        .as_deref()
        .ok_or_else(|| CliError::Config("model.salience_file is not set".into()))?;
    Ok(read_salience_records(path, &Geometry::default())?
        .into_iter()
        .map(|r| ((r.clip_id, r.segment_index), r.salience))
        .collect())
}

fn load_split(cfg: &PipelineConfig, split: Split, stats: Option<&FeatureStats>) -> CliResult<SplitData> {
    let index = store_index(cfg)?;
    let store = store(cfg);
    let cache = feature_cache(cfg)?;
    let variant = cfg.variant()?;
    let external = if variant.needs_pitch() && cfg.model.pitch == PitchInput::External {
        Some(external_salience(cfg)?)
    } else {
        None
    };
    let mut clips = Vec::new();
    for clip in index.clips_in(split) {
        let mut examples = Vec::with_capacity(clip.segments);
        for i in 0..clip.segments {
            let seg = store.read_segment(&clip.clip_id, i)?;
            if !cache.contains(&clip.clip_id, i) {
                return Err(CliError::Input(format!(
                    "no features for {}#{i}; run `instrec features` first",
                    clip.clip_id
                )));
            }
            let mut x = cache.get(&clip.clip_id, i)?;
            if let Some(stats) = stats {
                x = stats.normalize(&x)?;
            }
            let salience = match &external {
                Some(map) => Some(map.get(&(clip.clip_id.clone(), i)).ok_or_else(|| {
                    CliError::Input(format!("salience file has no record for {}#{i}", clip.clip_id))
                })?),
                None => None,
            };
            examples.push(TrainExample::from_segment(variant, &seg, &x, salience)?);
        }
        clips.push((clip.clone(), examples));
    }
    Ok(SplitData { clips })
}

fn training_stats(cfg: &PipelineConfig) -> CliResult<Option<FeatureStats>> {
    if !cfg.normalize {
        return Ok(None);
    }
    let stats = feature_cache(cfg)?
        .stats()?
        .ok_or_else(|| CliError::Input("no feature statistics; run `instrec features` first".into()))?;
    Ok(Some(stats))
}

fn run_hash(cfg: &PipelineConfig) -> CliResult<String> {
    let index = store_index(cfg)?;
    Ok(hash_json(&json!({
        "segments": index.input_hash,
        "features": feature_cache(cfg)?.config_hash(),
    })))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_f1: f64,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub conv_layers: usize,
}

/// Trains the configured variant, writing `train_log.jsonl`, `last.ckpt`
/// (resumable) and `best.ckpt` (best selection epoch) to the output
/// directory.
pub fn cmd_train(cfg: &PipelineConfig, resume: bool) -> CliResult<TrainSummary> {
    cfg.validate()?;
    let spec = cfg.model_spec()?;
    let stats = training_stats(cfg)?;
    let data = load_split(cfg, Split::Train, stats.as_ref())?;
    let (train, validation) = split_validation(data.examples(), cfg.train.validation_fraction);
    if train.is_empty() {
        return Err(CliError::Input("no training segments".into()));
    }
    log::info!(
        "{} training and {} validation segments; model selection on {}",
        train.len(),
        validation.len(),
        if validation.is_empty() { "the training set" } else { "held-out clips" }
    );
    let (loss, absent) = compute_class_weights(train.iter().map(|e| &e.labels), cfg.loss.weight_cap)?;
    let hash = run_hash(cfg)?;
    let pipeline = json!({ "config": cfg.to_json(), "input_hash": hash, "loss": loss });
    let out = output_dir(cfg)?;
    let (last, best, log_path) = (out.join(LAST_CHECKPOINT), out.join(BEST_CHECKPOINT), out.join(TRAIN_LOG));

    let mut trainer = if resume {
        let ck = Checkpoint::load(&last, Some(&cfg.geometry_hash()))?;
        if ck.spec != spec {
            return Err(CliError::Config("checkpoint was trained with a different model spec".into()));
        }
        let (Some(state), Some(velocity)) = (ck.train_state.clone(), ck.velocity.clone()) else {
            return Err(CliError::Input(format!("{} has no optimizer state", last.display())));
        };
        log::info!("resuming after epoch {}", state.epoch);
        Trainer::resume(ck.to_model(), cfg.train.clone(), loss_from(&ck, loss)?, velocity, state)?
    } else {
        if log_path.exists() {
            fs::remove_file(&log_path).map_err(|e| instrec::Error::io(&log_path, e))?;
        }
        Trainer::new(Model::new(spec.clone(), cfg.train.seed), cfg.train.clone(), loss)?
    };
    if !absent.is_empty() {
        log::warn!("instruments without positive training frames: {absent:?}");
    }
    log::info!(
        "training {} ({} parameters): momentum {}, lr {}, schedule {:?}, batch {}",
        spec.variant,
        spec.n_params,
        cfg.train.momentum,
        trainer.state().lr,
        cfg.train.lr_schedule,
        cfg.train.batch_size
    );
    let geometry = cfg.geometry_hash();
    let epochs = trainer.fit(&train, &validation, |record, t| {
        let mut log_file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| instrec::Error::io(&log_path, e))?;
        writeln!(log_file, "{}", serde_json::to_string(record)?).map_err(|e| instrec::Error::io(&log_path, e))?;
        log::info!(
            "epoch {:>3}  loss {:.5}  {} F1 {:.4}  lr {}",
            record.epoch,
            record.train_loss,
            record.selection_set,
            record.selection_f1,
            record.lr
        );
        let mut model = t.model().clone();
        let mut ck = Checkpoint::from_model(&mut model, geometry.clone(), stats.clone(), pipeline.clone());
        if t.state().best_epoch == record.epoch {
            ck.save(&best)?;
        }
        ck.train_state = Some(t.state().clone());
        ck.velocity = Some(t.velocity().to_vec());
        ck.save(&last)
    })?;
    let state = trainer.state();
    Ok(TrainSummary {
        epochs: epochs.len(),
        best_epoch: state.best_epoch,
        best_f1: state.best_f1,
        checkpoint: best,
        log: log_path,
        conv_layers: instrec::nn::count_conv_layers(&spec),
    })
}

fn loss_from(ck: &Checkpoint, fallback: LossConfig) -> CliResult<LossConfig> {
    Ok(match ck.pipeline.get("loss") {
        Some(v) => serde_json::from_value(v.clone()).map_err(instrec::Error::from)?,
        None => fallback,
    })
}

fn load_checkpoint(cfg: &PipelineConfig, path: &Path) -> CliResult<Checkpoint> {
    let ck = Checkpoint::load(path, Some(&cfg.geometry_hash()))?;
    let configured = cfg.variant()?;
    if ck.spec.variant != configured {
        return Err(CliError::Config(format!(
            "checkpoint holds a {} model but the configuration selects {configured}",
            ck.spec.variant
        )));
    }
    Ok(ck)
}

/// Per-clip rolls: segment predictions concatenated and trimmed to the
/// clip's own frames.
fn clip_rolls(model: &Model, data: &SplitData, batch: usize) -> CliResult<Vec<ClipRoll>> {
    data.clips
        .iter()
        .map(|(clip, examples)| {
            let preds = predict_all(model, examples, batch)?;
            let frames = frames_for(clip.duration_samples);
            let join = |parts: Vec<ndarray::ArrayView2<f32>>| -> Array2<f32> {
                concatenate(Axis(0), &parts).expect("equal widths").slice(s![..frames, ..]).to_owned()
            };
            Ok(ClipRoll {
                clip_id: clip.clip_id.clone(),
                predictions: join(preds.iter().map(|p| p.view()).collect()),
                labels: Some(join(examples.iter().map(|e| e.labels.view()).collect())),
            })
        })
        .collect()
}

fn pairs(rolls: &[ClipRoll]) -> CliResult<Vec<FramePair<'_>>> {
    rolls
        .iter()
        .map(|r| {
            let labels = r
                .labels
                .as_ref()
                .ok_or_else(|| CliError::Input(format!("clip {} has no labels", r.clip_id)))?;
            Ok(FramePair {
                clip_id: &r.clip_id,
                predictions: r.predictions.view(),
                labels: labels.view(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFile {
    pub thresholds: ThresholdVector,
    pub config: Value,
    pub input_hash: String,
}

impl ThresholdFile {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| instrec::Error::io(path, e))?;
        let file: Self = serde_json::from_str(&text).map_err(instrec::Error::from)?;
        file.thresholds.validate()?;
        Ok(file)
    }
}

/// Predicts the training split with a checkpoint and tunes one threshold
/// per instrument on those predictions.
pub fn cmd_tune_thresholds(cfg: &PipelineConfig, checkpoint: &Path) -> CliResult<ThresholdFile> {
    let ck = load_checkpoint(cfg, checkpoint)?;
    let data = load_split(cfg, Split::Train, ck.stats.as_ref())?;
    let rolls = clip_rolls(&ck.to_model(), &data, cfg.train.batch_size)?;
    let thresholds = tune_thresholds(&pairs(&rolls)?)?;
    let input_hash = hash_json(&json!({ "run": run_hash(cfg)?, "checkpoint": file_hash(checkpoint)? }));
    let out = output_dir(cfg)?;
    let file = ThresholdFile {
        thresholds: thresholds.clone(),
        config: cfg.to_json(),
        input_hash: input_hash.clone(),
    };
    write_json(&out.join(THRESHOLDS_FILE), &file)?;
    RollSet {
        config: cfg.to_json(),
        input_hash,
        thresholds: Some(thresholds),
        clips: rolls,
    }
    .write(&out.join(TRAIN_PREDICTIONS))?;
    Ok(file)
}

/// Scores the test split. Thresholds come from `thresholds`, or are tuned
/// on `train_predictions`; with neither the command refuses to guess.
pub fn cmd_eval(
    cfg: &PipelineConfig,
    checkpoint: &Path,
    thresholds: Option<&Path>,
    train_predictions: Option<&Path>,
) -> CliResult<EvalReport> {
    let thresholds = match (thresholds, train_predictions) {
        (Some(path), _) => ThresholdFile::read(path)?.thresholds,
        (None, Some(path)) => tune_thresholds(&pairs(&RollSet::read(path)?.clips)?)?,
        (None, None) => return Err(CliError::MissingThresholds),
    };
    let ck = load_checkpoint(cfg, checkpoint)?;
    let data = load_split(cfg, Split::Test, ck.stats.as_ref())?;
    if data.clips.is_empty() {
        return Err(CliError::Input("the dataset has no test clips".into()));
    }
    let rolls = clip_rolls(&ck.to_model(), &data, cfg.train.batch_size)?;
    let mut report = frame_f1(&pairs(&rolls)?, &thresholds)?;
    let input_hash = hash_json(&json!({ "run": run_hash(cfg)?, "checkpoint": file_hash(checkpoint)? }));
    report.config_hashes = BTreeMap::from([
        ("geometry".to_owned(), cfg.geometry_hash()),
        ("features".to_owned(), feature_cache(cfg)?.config_hash().to_owned()),
        ("checkpoint".to_owned(), file_hash(checkpoint)?),
        ("input".to_owned(), input_hash.clone()),
    ]);
    let out = output_dir(cfg)?;
    write_json(
        &out.join(EVAL_REPORT),
        &json!({ "report": report, "config": cfg.to_json(), "input_hash": input_hash }),
    )?;
    let label = ck.spec.variant.to_string();
    let table = render_table(&[(label.as_str(), &report)]);
    fs::write(out.join(EVAL_TABLE), &table).map_err(|e| instrec::Error::io(out.join(EVAL_TABLE), e))?;
    RollSet {
        config: cfg.to_json(),
        input_hash,
        thresholds: Some(thresholds),
        clips: rolls,
    }
    .write(&out.join(TEST_PREDICTIONS))?;
    Ok(report)
}

/// Predicts an arbitrary audio file. Pitch-aware variants need a salience
/// file with one record per 3-second segment, since no labels exist.
pub fn cmd_predict(
    cfg: &PipelineConfig,
    checkpoint: &Path,
    audio_path: &Path,
    salience: Option<&Path>,
    out_path: &Path,
) -> CliResult<ClipRoll> {
    let ck = load_checkpoint(cfg, checkpoint)?;
    let variant = ck.spec.variant;
    let audio = load_audio(audio_path)?;
    let segments = segment_clip("input", &audio, &[])?;
    let saliences = match (variant.needs_pitch(), salience) {
        (false, _) => None,
        (true, None) => {
            return Err(CliError::Input(format!(
                "variant {variant} takes pitch salience as input and ground truth is unavailable for \
                 arbitrary audio; pass --salience-file with one salience record per 3-second segment"
            )))
        }
        (true, Some(path)) => {
            let mut records = read_salience_records(path, &Geometry::default())?;
            records.sort_by_key(|r| r.segment_index);
            if records.len() != segments.len() {
                return Err(CliError::Input(format!(
                    "{} has {} salience records but the audio has {} segments",
                    path.display(),
                    records.len(),
                    segments.len()
                )));
            }
            Some(records)
        }
    };
    let cqt = Cqt::new(cfg.cqt)?;
    let model = ck.to_model();
    let mut rolls = Vec::with_capacity(segments.len());
    for (i, seg) in segments.iter().enumerate() {
        let mut x = cqt.compute(&seg.audio)?;
        if let Some(stats) = &ck.stats {
            x = stats.normalize(&x)?;
        }
        let p = saliences.as_ref().map(|r| &r[i].salience);
        rolls.push(model.forward(&prepare_input(variant, &x, p)?)?.raster.into_inner());
    }
    let frames = frames_for(audio.len());
    let views: Vec<_> = rolls.iter().map(|r| r.view()).collect();
    let predictions = concatenate(Axis(0), &views).expect("equal widths").slice(s![..frames, ..]).to_owned();
    let roll = ClipRoll {
        clip_id: audio_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        predictions,
        labels: None,
    };
    let mut inputs = vec![checkpoint, audio_path];
    inputs.extend(salience);
    RollSet {
        config: cfg.to_json(),
        input_hash: hash_files(&inputs)?,
        thresholds: None,
        clips: vec![roll.clone()],
    }
    .write(out_path)?;
    Ok(roll)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotEntry {
    pub clip_id: String,
    pub file: String,
    pub frames: usize,
}

/// Renders one label-over-prediction image per clip plus `index.json`.
pub fn cmd_plot(predictions: &Path, thresholds: Option<&Path>, out_dir: &Path) -> CliResult<Vec<PlotEntry>> {
    let set = RollSet::read(predictions)?;
    let thresholds = match thresholds {
        Some(path) => ThresholdFile::read(path)?.thresholds,
        None => set.thresholds.clone().ok_or_else(|| {
            CliError::Input(format!("{} carries no thresholds; pass --thresholds", predictions.display()))
        })?,
    };
    fs::create_dir_all(out_dir).map_err(|e| instrec::Error::io(out_dir, e))?;
    let mut index = Vec::with_capacity(set.clips.len());
    for clip in &set.clips {
        let labels = clip
            .labels
            .as_ref()
            .ok_or_else(|| CliError::Input(format!("clip {} has no labels to plot", clip.clip_id)))?;
        if labels.nrows() != clip.predictions.nrows() {
            return Err(CliError::Input(format!(
                "clip {}: {} label frames but {} prediction frames",
                clip.clip_id,
                labels.nrows(),
                clip.predictions.nrows()
            )));
        }
        let image = render_rolls(labels.view(), clip.predictions.view(), &thresholds, RollLayout::default())?;
        let file = format!("{}.png", sanitize(&clip.clip_id));
        save_png(&image, &out_dir.join(&file))?;
        index.push(PlotEntry {
            clip_id: clip.clip_id.clone(),
            file,
            frames: clip.predictions.nrows(),
        });
    }
    write_json(
        &out_dir.join("index.json"),
        &json!({
            "instruments": instrec::ingest::INSTRUMENT_NAMES,
            "thresholds": thresholds,
            "clips": index,
            "config": set.config,
            "input_hash": hash_files(&[predictions])?,
        }),
    )?;
    debug_assert!(index.iter().all(|e| !e.file.is_empty()) && INSTRUMENTS == 7);
    Ok(index)
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}
