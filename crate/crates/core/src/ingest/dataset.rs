use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SAMPLE_RATE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipManifest {
    pub clip_id: String,
    pub split: Split,
    pub audio_path: PathBuf,
    pub labels_path: PathBuf,
    /// Length after resampling to 44.1 kHz.
    pub duration_samples: usize,
}

/// Name of the optional split manifest at the dataset root: a CSV with
/// `clip_id,split` rows.
pub const MANIFEST_FILE: &str = "manifest.csv";

/// Text describing the expected dataset layout, used in error messages.
pub const EXPECTED_LAYOUT: &str = "expected dataset layout:\n  \
    <root>/manifest.csv              clip_id,split rows (optional if the directories below exist)\n  \
    <root>/train_data/<clip_id>.wav  training audio\n  \
    <root>/train_labels/<clip_id>.csv\n  \
    <root>/test_data/<clip_id>.wav   test audio\n  \
    <root>/test_labels/<clip_id>.csv";

pub fn audio_path(root: &Path, split: Split, clip_id: &str) -> PathBuf {
    root.join(format!("{}_data", split.as_str()))
        .join(format!("{clip_id}.wav"))
}

pub fn labels_path(root: &Path, split: Split, clip_id: &str) -> PathBuf {
    root.join(format!("{}_labels", split.as_str()))
        .join(format!("{clip_id}.csv"))
}

/// Reads the split assignment, from `manifest.csv` when present, otherwise
/// from the `train_data/` and `test_data/` directory listings (sorted by id).
pub fn read_split_manifest(root: &Path) -> Result<Vec<(String, Split)>> {
    let manifest = root.join(MANIFEST_FILE);
    if manifest.is_file() {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(&manifest)
            .map_err(|e| Error::Config(format!("{}: {e}", manifest.display())))?;
        let mut out = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let bad = |message: String| Error::LabelParse {
                path: manifest.clone(),
                row: i + 2,
                message,
            };
            let row = row.map_err(|e| bad(e.to_string()))?;
            let id = row.get(0).unwrap_or_default().to_owned();
            let split = row
                .get(1)
                .unwrap_or_default()
                .parse::<Split>()
                .map_err(bad)?;
            if id.is_empty() {
                return Err(bad("empty clip_id".into()));
            }
            out.push((id, split));
        }
        return Ok(out);
    }

    let mut out = Vec::new();
    let mut found_dir = false;
    for split in [Split::Train, Split::Test] {
        let dir = root.join(format!("{}_data", split.as_str()));
        let Ok(entries) = fs::read_dir(&dir) else {
            continue;
        };
        found_dir = true;
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "wav"))
            .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
            .collect();
        ids.sort();
        out.extend(ids.into_iter().map(|id| (id, split)));
    }
    if !found_dir {
        return Err(Error::Config(format!(
            "{} is not a dataset root; {EXPECTED_LAYOUT}",
            root.display()
        )));
    }
    Ok(out)
}

/// Resolves every clip of the dataset, listing all missing files at once.
pub fn scan_dataset(root: &Path) -> Result<Vec<ClipManifest>> {
    let splits = read_split_manifest(root)?;
    if splits.is_empty() {
        return Err(Error::Config(format!(
            "{} contains no clips; {EXPECTED_LAYOUT}",
            root.display()
        )));
    }
    let mut missing = Vec::new();
    let mut clips = Vec::new();
    for (clip_id, split) in splits {
        let audio = audio_path(root, split, &clip_id);
        let labels = labels_path(root, split, &clip_id);
        for p in [&audio, &labels] {
            if !p.is_file() {
                missing.push(p.display().to_string());
            }
        }
        clips.push(ClipManifest {
            clip_id,
            split,
            audio_path: audio,
            labels_path: labels,
            duration_samples: 0,
        });
    }
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "missing {} dataset file(s):\n  {}",
            missing.len(),
            missing.join("\n  ")
        )));
    }
    for clip in &mut clips {
        clip.duration_samples = wav_duration(&clip.audio_path)?;
    }
    Ok(clips)
}

fn decode_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::AudioDecode {
        path: path.to_owned(),
        message: e.to_string(),
    }
}

fn wav_duration(path: &Path) -> Result<usize> {
    let reader = hound::WavReader::open(path).map_err(|e| decode_error(path, e))?;
    let spec = reader.spec();
    let frames = reader.duration() as u64;
    Ok((frames * SAMPLE_RATE as u64).div_ceil(spec.sample_rate as u64) as usize)
}

/// Loads a PCM WAV file as mono samples at 44.1 kHz. Channels are averaged;
/// other rates are resampled by linear interpolation.
pub fn load_audio(path: &Path) -> Result<Vec<f32>> {
    let mut reader = hound::WavReader::open(path).map_err(|e| decode_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| decode_error(path, e))?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| decode_error(path, e))?
        }
    };
    let mono: Vec<f32> = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f32>() / frame.len() as f32)
        .collect();
    Ok(resample_linear(&mono, spec.sample_rate, SAMPLE_RATE))
}

/// Writes mono 44.1 kHz float audio.
pub fn write_audio(path: &Path, samples: &[f32]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| decode_error(path, e))?;
    for &s in samples {
        writer.write_sample(s).map_err(|e| decode_error(path, e))?;
    }
    writer.finalize().map_err(|e| decode_error(path, e))
}

pub fn resample_linear(input: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || input.is_empty() {
        return input.to_vec();
    }
    let out_len = (input.len() as u64 * to as u64).div_ceil(from as u64) as usize;
    let step = from as f64 / to as f64;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let j = pos.floor() as usize;
            let frac = (pos - j as f64) as f32;
            let a = input[j.min(input.len() - 1)];
            let b = input[(j + 1).min(input.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}
