#![allow(dead_code)]

use instrec::cqt::{Cqt, CqtConfig, FeatureStats};
use instrec::ingest::{segment_clip, InstrumentCatalog, SegmentRecord};
use instrec::nn::Variant;
use instrec::synth::{synth_clip, SynthConfig};
use instrec::train::TrainExample;
use instrec::FrameRaster;

/// Segments of synthetic clips with their CQT features.
pub struct Prepared {
    pub segments: Vec<SegmentRecord>,
    pub cqt: Vec<FrameRaster>,
}

pub fn prepare(seeds: impl IntoIterator<Item = u64>, seconds: f64) -> Prepared {
    prepare_with(seeds, seconds, &SynthConfig::default())
}

/// Instruments (catalog indices) heard in a synthetic clip.
pub fn instruments_in(seed: u64, seconds: f64, cfg: &SynthConfig) -> [bool; 7] {
    let (_, events) = synth_clip(seed, seconds, cfg, &InstrumentCatalog::default());
    let mut present = [false; 7];
    for e in events {
        present[e.instrument.unwrap()] = true;
    }
    present
}

/// The first `count` seeds from `start` whose clips together contain all
/// seven instruments, searching greedily.
pub fn covering_seeds(start: u64, count: usize, seconds: f64, cfg: &SynthConfig) -> Vec<u64> {
    let mut seed = start;
    loop {
        let seeds: Vec<u64> = (seed..seed + count as u64).collect();
        let mut all = [false; 7];
        for &s in &seeds {
            for (a, b) in all.iter_mut().zip(instruments_in(s, seconds, cfg)) {
                *a |= b;
            }
        }
        if all.iter().all(|&x| x) {
            return seeds;
        }
        seed += count as u64;
    }
}

pub fn prepare_with(seeds: impl IntoIterator<Item = u64>, seconds: f64, cfg: &SynthConfig) -> Prepared {
    let catalog = InstrumentCatalog::default();
    let cqt = Cqt::new(CqtConfig::default()).unwrap();
    let mut out = Prepared { segments: Vec::new(), cqt: Vec::new() };
    for seed in seeds {
        let (audio, events) = synth_clip(seed, seconds, cfg, &catalog);
        for seg in segment_clip(&format!("clip{seed}"), &audio, &events).unwrap() {
            out.cqt.push(cqt.compute(&seg.audio).unwrap());
            out.segments.push(seg);
        }
    }
    out
}

/// Normalizes every set with statistics of `train`.
pub fn normalize(train: &mut Prepared, others: &mut [&mut Prepared]) {
    let stats = FeatureStats::from_rasters(&train.cqt).unwrap();
    for p in std::iter::once(train).chain(others.iter_mut().map(|p| &mut **p)) {
        for x in &mut p.cqt {
            *x = stats.normalize(x).unwrap();
        }
    }
}

pub fn examples(variant: Variant, p: &Prepared) -> Vec<TrainExample> {
    p.segments
        .iter()
        .zip(&p.cqt)
        .map(|(s, x)| TrainExample::from_segment(variant, s, x, None).unwrap())
        .collect()
}
