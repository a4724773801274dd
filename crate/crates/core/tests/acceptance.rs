//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use instrec::hsf::{build_hsf, harmonic_shift_bins, PitchSalience};
use instrec::ingest::{rasterize_labels, rasterize_pitch, InstrumentCatalog, NoteEvent};
use instrec::nn::{prepare_input, Model, ModelSpec, Variant};
use instrec::synth::SynthConfig;
use instrec::train::{
    compute_class_weights, frame_f1, predict_all, split_validation, train, tune_thresholds, weighted_bce,
    weighted_bce_grad, Confusion, FramePair, LossConfig, LrSchedule, ThresholdVector, TrainConfig, TrainExample,
};
use instrec::{FrameRaster, FreqAxis};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FRAMES: usize = 258;
const BINS: usize = 88;
const SEGMENT: u64 = 132_300;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// 1. HSF against a naive double loop

fn naive_hsf(p0: &Array2<f32>, n: usize) -> Array2<f32> {
    const SHIFTS: [usize; 6] = [0, 12, 19, 24, 28, 31];
    let mut out = Array2::<f32>::zeros((FRAMES, BINS));
    for t in 0..FRAMES {
        for f in 0..BINS {
            let mut acc = 0.0f32;
            for &s in &SHIFTS[..=n] {
                if f >= s {
                    acc += p0[[t, f - s]];
                }
            }
            out[[t, f]] = acc;
        }
    }
    out
}

fn hsf_oracle() -> Outcome {
    let mut r = rng(1);
    for i in 0..100 {
        let binary = i % 2 == 0;
        let density = r.random_range(0.01..0.3);
        let data = Array2::from_shape_fn((FRAMES, BINS), |_| {
            if binary {
                r.random_bool(density) as u8 as f32
            } else {
                r.random::<f32>()
            }
        });
        let raster = FrameRaster::new(data.clone(), FreqAxis::Semitones).unwrap();
        let p0 = if binary {
            PitchSalience::ground_truth(raster).unwrap()
        } else {
            PitchSalience::estimate(raster).unwrap()
        };
        for n in 1..=5 {
            let got = build_hsf(&p0, n).unwrap();
            ensure(got.raster.data() == &naive_hsf(&data, n), || format!("matrix {i}, n = {n} differs"))?;
        }
    }
    Ok("100 matrices x n = 1..5 identical".into())
}

// 2. harmonic offsets

fn harmonic_offsets() -> Outcome {
    let got: Vec<usize> = (1..=6).map(|k| harmonic_shift_bins(k).unwrap()).collect();
    ensure(got == [0, 12, 19, 24, 28, 31], || format!("got {got:?}"))?;
    Ok(format!("{got:?}"))
}

// 3. rasterization against the frame-center predicate

fn rasterization_oracle() -> Outcome {
    let catalog = InstrumentCatalog::default();
    let mut r = rng(3);
    for set in 0..1000 {
        let count = r.random_range(0..12);
        let events: Vec<NoteEvent> = (0..count)
            .map(|_| {
                let onset = r.random_range(0..SEGMENT + 2_000);
                let offset = onset + r.random_range(1..60_000);
                let pitch = r.random_range(15..=115u8);
                let code = if r.random_bool(0.1) { 999 } else { catalog.code(r.random_range(0..7)) };
                NoteEvent::new(onset, offset, pitch, code, &catalog).unwrap()
            })
            .collect();
        let mut labels = Array2::<f32>::zeros((FRAMES, 7));
        let mut pitch = Array2::<f32>::zeros((FRAMES, BINS));
        for t in 0..FRAMES {
            let center = 512 * t as u64 + 256;
            for e in &events {
                if e.onset_sample <= center && center < e.offset_sample {
                    if let Some(n) = e.instrument {
                        labels[[t, n]] = 1.0;
                    }
                    if (21..=108).contains(&e.midi_pitch) {
                        pitch[[t, e.midi_pitch as usize - 21]] = 1.0;
                    }
                }
            }
        }
        ensure(rasterize_labels(&events).data() == &labels, || format!("label roll of set {set} differs"))?;
        ensure(rasterize_pitch(&events).data() == &pitch, || format!("pitch roll of set {set} differs"))?;
    }
    Ok("1000 event sets identical".into())
}

// 4. loss gradient

fn loss_gradient() -> Outcome {
    let mut r = rng(4);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for triple in 0..20 {
        let frames = r.random_range(1..12);
        let logits = Array2::from_shape_fn((frames, 7), |_| r.random_range(-6.0..6.0));
        let labels = Array2::from_shape_fn((frames, 7), |_| r.random_bool(0.3) as u8 as f64);
        let cfg = LossConfig {
            class_weights: (0..7).map(|_| r.random_range(1.0..10.0)).collect(),
            weight_cap: 10.0,
        };
        let grad = weighted_bce_grad(logits.view(), labels.view(), &cfg).unwrap();
        for idx in ndarray::indices_of(&logits) {
            let mut plus = logits.clone();
            let mut minus = logits.clone();
            plus[idx] += h;
            minus[idx] -= h;
            let numeric = (weighted_bce(plus.view(), labels.view(), &cfg).unwrap()
                - weighted_bce(minus.view(), labels.view(), &cfg).unwrap())
                / (2.0 * h);
            let rel = (grad[idx] - numeric).abs() / grad[idx].abs().max(numeric.abs()).max(1e-12);
            worst = worst.max(rel);
            ensure(rel <= 1e-4, || {
                format!("triple {triple} at {idx:?}: analytic {} numeric {numeric} (rel {rel:.2e})", grad[idx])
            })?;
        }
    }
    Ok(format!("20 triples, worst relative error {worst:.2e} (tolerance 1e-4)"))
}

// 5. threshold tuner against exhaustive search

fn exhaustive_thresholds(preds: &[Array2<f32>], labels: &[Array2<f32>]) -> Vec<f64> {
    (0..7)
        .map(|n| {
            let mut best = (-1.0, 0.0);
            for i in 1..=99 {
                let theta = i as f64 / 100.0;
                let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
                for (p, l) in preds.iter().zip(labels) {
                    for t in 0..p.nrows() {
                        let active = p[[t, n]] as f64 >= theta;
                        match (active, l[[t, n]] >= 0.5) {
                            (true, true) => tp += 1,
                            (true, false) => fp += 1,
                            (false, true) => fn_ += 1,
                            _ => {}
                        }
                    }
                }
                let denom = 2 * tp + fp + fn_;
                let f1 = if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
                if f1 > best.0 {
                    best = (f1, theta);
                }
            }
            best.1
        })
        .collect()
}

fn pairs<'a>(preds: &'a [Array2<f32>], labels: &'a [Array2<f32>]) -> Vec<FramePair<'a>> {
    preds
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (p, l))| FramePair {
            clip_id: if i % 2 == 0 { "a" } else { "b" },
            predictions: p.view(),
            labels: l.view(),
        })
        .collect()
}

fn threshold_tuner() -> Outcome {
    let mut r = rng(5);
    for case in 0..50 {
        let segments = r.random_range(1..4);
        let frames = r.random_range(1..80);
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..segments {
            let l = Array2::from_shape_fn((frames, 7), |_| r.random_bool(0.3) as u8 as f32);
            // mostly informative, with some values sitting exactly on grid points
            let p = Array2::from_shape_fn((frames, 7), |(t, n)| {
                if r.random_bool(0.2) {
                    r.random_range(1..=99) as f32 / 100.0
                } else {
                    (0.4 * l[[t, n]] + 0.6 * r.random::<f32>()).min(1.0)
                }
            });
            preds.push(p);
            labels.push(l);
        }
        let got = tune_thresholds(&pairs(&preds, &labels)).unwrap().values;
        let want = exhaustive_thresholds(&preds, &labels);
        ensure(got == want, || format!("case {case}: tuner {got:?} exhaustive {want:?}"))?;
    }
    let labels = vec![Array2::from_shape_fn((50, 7), |(t, n)| ((t + n) % 3 == 0) as u8 as f32)];
    let perfect = tune_thresholds(&pairs(&labels, &labels)).unwrap();
    ensure(perfect == ThresholdVector::uniform(0.01), || format!("perfect predictor gave {:?}", perfect.values))?;
    Ok("50 instances equal exhaustive search; perfect predictor -> 0.01".into())
}

// 6. F1 protocol

fn f1_protocol() -> Outcome {
    let hand = [((2, 1, 1), 2.0 / 3.0), ((0, 0, 0), 0.0), ((0, 3, 2), 0.0), ((5, 0, 0), 1.0), ((1, 0, 3), 0.4)];
    for ((tp, fp, fn_), want) in hand {
        let got = Confusion { tp, fp, fn_ }.f1();
        ensure(got == want, || format!("tp={tp} fp={fp} fn={fn_}: {got} != {want}"))?;
    }
    // instrument 0 laid out frame by frame as TP, TP, FP, FN, TN
    let mut p = Array2::<f32>::zeros((5, 7));
    let mut l = Array2::<f32>::zeros((5, 7));
    for (t, (pv, lv)) in [(0.9, 1.0), (0.8, 1.0), (0.7, 0.0), (0.1, 1.0), (0.2, 0.0)].into_iter().enumerate() {
        p[[t, 0]] = pv;
        l[[t, 0]] = lv;
    }
    let report = frame_f1(&pairs(&[p], &[l]), &ThresholdVector::uniform(0.5)).unwrap();
    ensure(report.instruments[0].f1 == 2.0 / 3.0, || format!("frame roll gave {}", report.instruments[0].f1))?;

    let mut r = rng(6);
    let preds: Vec<Array2<f32>> = (0..8).map(|_| Array2::from_shape_fn((40, 7), |_| r.random())).collect();
    let labels: Vec<Array2<f32>> =
        (0..8).map(|_| Array2::from_shape_fn((40, 7), |_| r.random_bool(0.4) as u8 as f32)).collect();
    let th = ThresholdVector { values: (1..=7).map(|i| i as f64 / 10.0).collect() };
    let report = frame_f1(&pairs(&preds, &labels), &th).unwrap();
    let mean = report.instruments.iter().map(|s| s.f1).sum::<f64>() / 7.0;
    ensure((report.macro_f1 - mean).abs() < 1e-15, || format!("macro {} != mean {mean}", report.macro_f1))?;

    let mut order: Vec<usize> = (0..8).collect();
    order.shuffle(&mut r);
    let sp: Vec<_> = order.iter().map(|&i| preds[i].clone()).collect();
    let sl: Vec<_> = order.iter().map(|&i| labels[i].clone()).collect();
    let shuffled = frame_f1(&pairs(&sp, &sl), &th).unwrap();
    ensure(shuffled.macro_f1 == report.macro_f1 && shuffled.f1() == report.f1(), || {
        "segment order changed the scores".into()
    })?;
    Ok("hand cases exact, macro = mean, order invariant".into())
}

// 7. shape and range contract

fn shape_contract() -> Outcome {
    let mut r = rng(7);
    let cqt = FrameRaster::new(Array2::from_shape_fn((FRAMES, BINS), |_| r.random_range(-3.0..3.0)), FreqAxis::Semitones)
        .unwrap();
    let p0 = PitchSalience::ground_truth(
        FrameRaster::new(Array2::from_shape_fn((FRAMES, BINS), |_| r.random_bool(0.05) as u8 as f32), FreqAxis::Semitones)
            .unwrap(),
    )
    .unwrap();
    let mut shapes = Vec::new();
    for v in [Variant::Baseline2d, Variant::Resblock1d, Variant::CqtHsf(3), Variant::CqtPitchF, Variant::CqtPitchC] {
        let input = prepare_input(v, &cqt, v.needs_pitch().then_some(&p0)).unwrap();
        if v == Variant::CqtPitchF {
            ensure(input.shape() == [1, FRAMES, 2 * BINS], || format!("pitch(F) input {:?}", input.shape()))?;
        }
        let out = Model::new(ModelSpec::new(v), 0).forward(&input).unwrap();
        let d = out.raster.data();
        ensure(d.dim() == (FRAMES, 7), || format!("{v}: output {:?}", d.dim()))?;
        ensure(d.iter().all(|p| (0.0..=1.0).contains(p)), || format!("{v}: output outside [0, 1]"))?;
        shapes.push(format!("{v} {:?}", input.shape()));
    }
    Ok(format!("(258, 7) in [0, 1] for {}", shapes.join(", ")))
}

// 8. overfit two clips

const OVERFIT_SECONDS: f64 = 6.0;

fn overfit() -> Outcome {
    let syn = SynthConfig::default();
    let seeds = common::covering_seeds(0, 2, OVERFIT_SECONDS, &syn);
    let mut data = common::prepare_with(seeds.clone(), OVERFIT_SECONDS, &syn);
    common::normalize(&mut data, &mut []);
    let examples = common::examples(Variant::Resblock1d, &data);
    let loss = compute_class_weights(examples.iter().map(|e| &e.labels), 10.0).unwrap().0;
    let cfg = TrainConfig {
        max_epochs: 200,
        validation_fraction: 0.0,
        target_f1: Some(0.9),
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let out = train(Model::new(ModelSpec::new(Variant::Resblock1d), 0), &examples, &[], &cfg, &loss)
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let last = out.log.last().unwrap();
    let detail = format!(
        "clips {seeds:?} ({} segments): train macro F1 {:.4} at epoch {} in {:.0}s",
        examples.len(),
        out.best_f1,
        last.epoch,
        elapsed.as_secs_f64()
    );
    ensure(out.best_f1 >= 0.9 && elapsed < Duration::from_secs(30 * 60), || detail.clone())?;
    Ok(detail)
}

// 9. ordering at reduced scale

const ORDER_TRAIN_SEEDS: std::ops::Range<u64> = 100..110;
const ORDER_SECONDS: f64 = 30.0;
const ORDER_PRESENCE: f64 = 0.6;
const ORDER_WIDTH: usize = 64;
const ORDER_BATCH: usize = 8;
const ORDER_EPOCHS: usize = 30;
const ORDER_RUNS: u64 = 3;

fn test_macro_f1(variant: Variant, train_set: &[TrainExample], test_set: &[TrainExample], seed: u64) -> f64 {
    let (fit, val) = split_validation(train_set.to_vec(), 0.1);
    let loss = compute_class_weights(fit.iter().map(|e| &e.labels), 10.0).unwrap().0;
    let cfg = TrainConfig {
        max_epochs: ORDER_EPOCHS,
        batch_size: ORDER_BATCH,
        seed,
        lr_schedule: LrSchedule::HalveOnPlateau { patience: 5 },
        ..TrainConfig::default()
    };
    let model = Model::new(ModelSpec::with_widths(variant, ORDER_WIDTH, 32), seed);
    let out = train(model, &fit, &val, &cfg, &loss).unwrap();
    let roll_pairs = |set: &[TrainExample], preds: &[Array2<f32>]| -> Vec<(Array2<f32>, Array2<f32>)> {
        set.iter().zip(preds).map(|(e, p)| (p.clone(), e.labels.clone())).collect()
    };
    let train_preds = predict_all(&out.model, &fit, 16).unwrap();
    let tp = roll_pairs(&fit, &train_preds);
    let (p, l): (Vec<_>, Vec<_>) = tp.into_iter().unzip();
    let th = tune_thresholds(&pairs(&p, &l)).unwrap();
    let test_preds = predict_all(&out.model, test_set, 16).unwrap();
    let (p, l): (Vec<_>, Vec<_>) = roll_pairs(test_set, &test_preds).into_iter().unzip();
    frame_f1(&pairs(&p, &l), &th).unwrap().macro_f1
}

fn ordering() -> Outcome {
    let syn = SynthConfig { presence: ORDER_PRESENCE, ..SynthConfig::default() };
    let test_seeds = common::covering_seeds(1000, 2, ORDER_SECONDS, &syn);
    let mut tr = common::prepare_with(ORDER_TRAIN_SEEDS, ORDER_SECONDS, &syn);
    let mut te = common::prepare_with(test_seeds, ORDER_SECONDS, &syn);
    common::normalize(&mut tr, &mut [&mut te]);
    let mut means = Vec::new();
    let mut runs = Vec::new();
    for v in [Variant::Resblock1d, Variant::CqtHsf(3)] {
        let (train_set, test_set) = (common::examples(v, &tr), common::examples(v, &te));
        let scores: Vec<f64> = (0..ORDER_RUNS).map(|seed| test_macro_f1(v, &train_set, &test_set, seed)).collect();
        means.push(scores.iter().sum::<f64>() / scores.len() as f64);
        runs.push(format!("{v} {:?}", scores.iter().map(|s| (s * 1e4).round() / 1e4).collect::<Vec<_>>()));
    }
    let detail = format!(
        "test macro F1 mean over {ORDER_RUNS} seeds: cqt_hsf(3) {:.4} vs resblock1d {:.4}; runs {}",
        means[1],
        means[0],
        runs.join(", ")
    );
    ensure(means[1] > means[0], || detail.clone())?;
    Ok(detail)
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 HSF oracle equivalence", hsf_oracle),
        ("2 harmonic offsets", harmonic_offsets),
        ("3 rasterization oracle", rasterization_oracle),
        ("4 loss gradient check", loss_gradient),
        ("5 threshold tuner", threshold_tuner),
        ("6 F1 protocol", f1_protocol),
        ("7 shape/range contract", shape_contract),
        ("8 overfit sanity", overfit),
        ("9 ordering sanity", ordering),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.starts_with(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!("SKIP  10 full-scale reproduction: needs the complete dataset and days of CPU time; see the guide");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
