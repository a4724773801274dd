//! Synthetic ensemble recordings in the MusicNet layout.
//!
//! Each instrument has its own harmonic profile, envelope and register, so
//! a frame-level model can learn to tell them apart from the spectrum. Used
//! for tests, examples and smoke runs when the real dataset is unavailable.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{INSTRUMENTS, SAMPLE_RATE};
use crate::ingest::{
    audio_path, labels_path, write_audio, write_labels, ClipManifest, InstrumentCatalog, NoteEvent, Split,
    MANIFEST_FILE,
};

#[derive(Debug, Clone, Copy)]
struct Voice {
    lowest: u8,
    highest: u8,
    /// Harmonic amplitudes, fundamental first.
    harmonics: &'static [f64],
    attack_s: f64,
    /// Exponential decay rate in 1/s; 0 for a sustained tone.
    decay: f64,
    vibrato_cents: f64,
}

const VOICES: [Voice; INSTRUMENTS] = [
    // piano
    Voice { lowest: 36, highest: 96, harmonics: &[1.0, 0.5, 0.33, 0.25, 0.2, 0.16, 0.14, 0.12], attack_s: 0.005, decay: 3.0, vibrato_cents: 0.0 },
    // violin
    Voice { lowest: 55, highest: 100, harmonics: &[1.0, 0.8, 0.6, 0.55, 0.4, 0.35, 0.3, 0.25], attack_s: 0.06, decay: 0.0, vibrato_cents: 25.0 },
    // viola
    Voice { lowest: 48, highest: 88, harmonics: &[0.7, 1.0, 0.5, 0.4, 0.2, 0.15], attack_s: 0.07, decay: 0.0, vibrato_cents: 18.0 },
    // cello
    Voice { lowest: 36, highest: 76, harmonics: &[1.0, 0.45, 0.3, 0.12, 0.08], attack_s: 0.08, decay: 0.0, vibrato_cents: 12.0 },
    // clarinet
    Voice { lowest: 50, highest: 91, harmonics: &[1.0, 0.02, 0.5, 0.02, 0.3, 0.02, 0.15], attack_s: 0.03, decay: 0.0, vibrato_cents: 0.0 },
    // bassoon
    Voice { lowest: 34, highest: 75, harmonics: &[0.3, 0.8, 1.0, 0.6, 0.4, 0.3], attack_s: 0.04, decay: 0.0, vibrato_cents: 0.0 },
    // horn
    Voice { lowest: 41, highest: 77, harmonics: &[1.0, 0.3, 0.08], attack_s: 0.05, decay: 0.4, vibrato_cents: 0.0 },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub train_clips: usize,
    pub test_clips: usize,
    pub clip_seconds: f64,
    pub seed: u64,
    /// Probability that an instrument plays at all in a clip.
    pub presence: f64,
    /// Standard deviation of the additive white noise.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train_clips: 8,
            test_clips: 2,
            clip_seconds: 6.0,
            seed: 0,
            presence: 0.45,
            noise: 0.002,
        }
    }
}

fn midi_hz(midi: f64) -> f64 {
    440.0 * 2f64.powf((midi - 69.0) / 12.0)
}

fn render_note(out: &mut [f32], voice: &Voice, onset: usize, offset: usize, midi: u8, gain: f64, phase: f64) {
    let sr = SAMPLE_RATE as f64;
    let f0 = midi_hz(midi as f64);
    let release = (0.02 * sr) as usize;
    let len = offset - onset;
    for (i, y) in out[onset..offset].iter_mut().enumerate() {
        let t = i as f64 / sr;
        let attack = (t / voice.attack_s).min(1.0);
        let tail = ((len - i) as f64 / release as f64).min(1.0);
        let env = gain * attack * tail * (-voice.decay * t).exp();
        let bend = 2f64.powf(voice.vibrato_cents / 1200.0 * (TAU * 5.5 * t).sin());
        let mut s = 0.0;
        for (k, a) in voice.harmonics.iter().enumerate() {
            let fk = f0 * (k + 1) as f64;
            if fk >= sr / 2.0 {
                break;
            }
            s += a * (TAU * fk * bend * t + phase * (k + 1) as f64).sin();
        }
        *y += (env * s) as f32;
    }
}

/// One synthetic clip with its note list, at 44.1 kHz.
pub fn synth_clip(seed: u64, seconds: f64, config: &SynthConfig, catalog: &InstrumentCatalog) -> (Vec<f32>, Vec<NoteEvent>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * SAMPLE_RATE as f64) as usize;
    let mut audio = vec![0f32; n];
    let mut events = Vec::new();
    let mut playing: Vec<usize> = (0..INSTRUMENTS).filter(|_| rng.random_bool(config.presence)).collect();
    if playing.is_empty() {
        playing.push(rng.random_range(0..INSTRUMENTS));
    }
    for &inst in &playing {
        let voice = &VOICES[inst];
        let mut at = (rng.random_range(0.0..0.8) * SAMPLE_RATE as f64) as usize;
        while at < n {
            let dur = (rng.random_range(0.15..1.2) * SAMPLE_RATE as f64) as usize;
            let end = (at + dur).min(n);
            if end - at > 1024 {
                let midi = rng.random_range(voice.lowest..=voice.highest);
                let gain = rng.random_range(0.3..1.0);
                render_note(&mut audio, voice, at, end, midi, gain, rng.random_range(0.0..TAU));
                events.push(
                    NoteEvent::new(at as u64, end as u64, midi, catalog.code(inst), catalog)
                        .expect("valid synthetic note"),
                );
            }
            at = end + (rng.random_range(0.0..0.6) * SAMPLE_RATE as f64) as usize;
        }
    }
    let peak = audio.iter().fold(0f32, |m, x| m.max(x.abs())).max(1e-6);
    let noise = rand_distr::Normal::new(0.0, config.noise).expect("non-negative noise");
    for x in &mut audio {
        *x = *x / peak * 0.8 + rng.sample(noise) as f32;
    }
    events.sort_by_key(|e| (e.onset_sample, e.midi_pitch));
    (audio, events)
}

/// Writes a synthetic dataset under `root` with `manifest.csv`,
/// `{split}_data/{id}.wav` and `{split}_labels/{id}.csv`.
pub fn write_synthetic_dataset(root: &Path, config: &SynthConfig) -> Result<Vec<ClipManifest>> {
    if config.clip_seconds <= 0.0 {
        return Err(Error::Config("clip length must be positive".into()));
    }
    let catalog = InstrumentCatalog::default();
    let mut manifest = String::from("clip_id,split\n");
    let mut clips = Vec::new();
    let splits = std::iter::repeat_n(Split::Train, config.train_clips).chain(std::iter::repeat_n(Split::Test, config.test_clips));
    for (i, split) in splits.enumerate() {
        let id = format!("{}{:04}", split.as_str(), i);
        let (audio, events) = synth_clip(config.seed.wrapping_mul(1000).wrapping_add(i as u64), config.clip_seconds, config, &catalog);
        let audio_file = audio_path(root, split, &id);
        let labels_file = labels_path(root, split, &id);
        write_audio(&audio_file, &audio)?;
        write_labels(&labels_file, &events)?;
        manifest.push_str(&format!("{id},{}\n", split.as_str()));
        clips.push(ClipManifest {
            clip_id: id,
            split,
            audio_path: audio_file,
            labels_path: labels_file,
            duration_samples: audio.len(),
        });
    }
    let path = root.join(MANIFEST_FILE);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(clips)
}
