use std::path::Path;
use std::process::Command;

use instrec::ingest::write_audio;
use instrec::synth::{write_synthetic_dataset, SynthConfig};
use instrec_cli::commands::{self, BEST_CHECKPOINT, EVAL_REPORT, TRAIN_PREDICTIONS};
use instrec_cli::{CliError, PipelineConfig};
use tempfile::TempDir;

fn small_config(root: &Path, variant: &str) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.paths.dataset = Some(root.join("data"));
    cfg.paths.cache = root.join("cache");
    cfg.paths.output = root.join("out");
    cfg.model.variant = variant.into();
    cfg.model.width = 8;
    cfg.model.base_channels = 4;
    cfg.train.max_epochs = 2;
    cfg.train.batch_size = 4;
    cfg
}

fn dataset(root: &Path) {
    let syn = SynthConfig {
        train_clips: 2,
        test_clips: 1,
        clip_seconds: 4.0,
        ..SynthConfig::default()
    };
    write_synthetic_dataset(&root.join("data"), &syn).unwrap();
}

fn trained(variant: &str) -> (TempDir, PipelineConfig) {
    let dir = TempDir::new().unwrap();
    dataset(dir.path());
    let cfg = small_config(dir.path(), variant);
    commands::cmd_ingest(&cfg).unwrap();
    commands::cmd_features(&cfg).unwrap();
    commands::cmd_train(&cfg, false).unwrap();
    (dir, cfg)
}

#[test]
fn ingest_twice_is_a_cache_hit() {
    let dir = TempDir::new().unwrap();
    dataset(dir.path());
    let cfg = small_config(dir.path(), "resblock1d");
    let first = commands::cmd_ingest(&cfg).unwrap();
    assert!(!first.cached);
    assert_eq!(first.splits["train"].clips, 2);
    // 4 s of audio spans two 3 s segments
    assert_eq!(first.splits["train"].segments, 4);
    let second = commands::cmd_ingest(&cfg).unwrap();
    assert!(second.cached);
    assert_eq!(first.input_hash, second.input_hash);
}

#[test]
fn empty_dataset_is_rejected() {
    let dir = TempDir::new().unwrap();
    std::fs::create_dir_all(dir.path().join("data")).unwrap();
    let cfg = small_config(dir.path(), "resblock1d");
    let err = commands::cmd_ingest(&cfg).unwrap_err();
    assert_eq!(err.kind(), "config", "{err}");
}

#[test]
fn unknown_variant_lists_the_choices() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), "transformer");
    let msg = cfg.validate().unwrap_err().to_string();
    for v in ["baseline2d", "resblock1d", "cqt_hsf", "cqt_pitch_c", "cqt_pitch_f"] {
        assert!(msg.contains(v), "{msg}");
    }
}

#[test]
fn features_before_ingest_points_at_ingest() {
    let dir = TempDir::new().unwrap();
    dataset(dir.path());
    let cfg = small_config(dir.path(), "resblock1d");
    assert!(matches!(commands::cmd_features(&cfg), Err(CliError::NotIngested(_))));
}

#[test]
fn full_pipeline_is_reproducible() {
    let (_dir, cfg) = trained("resblock1d");
    let out = cfg.paths.output.clone();
    let ckpt = out.join(BEST_CHECKPOINT);
    let log = std::fs::read_to_string(out.join(commands::TRAIN_LOG)).unwrap();
    assert_eq!(log.lines().count(), 2);

    assert!(matches!(
        commands::cmd_eval(&cfg, &ckpt, None, None),
        Err(CliError::MissingThresholds)
    ));

    let tuned = commands::cmd_tune_thresholds(&cfg, &ckpt).unwrap();
    let th = out.join(commands::THRESHOLDS_FILE);
    let a = commands::cmd_eval(&cfg, &ckpt, Some(&th), None).unwrap();
    let first = std::fs::read(out.join(EVAL_REPORT)).unwrap();
    let b = commands::cmd_eval(&cfg, &ckpt, Some(&th), None).unwrap();
    assert_eq!(first, std::fs::read(out.join(EVAL_REPORT)).unwrap());
    assert_eq!(a, b);
    // tuning from stored training predictions lands on the same thresholds
    let c = commands::cmd_eval(&cfg, &ckpt, None, Some(&out.join(TRAIN_PREDICTIONS))).unwrap();
    assert_eq!(a.macro_f1, c.macro_f1);
    assert!(tuned.thresholds.values.iter().all(|t| (0.01..=0.99).contains(t)));

    let plots = out.join("plots");
    let index = commands::cmd_plot(&out.join(commands::TEST_PREDICTIONS), None, &plots).unwrap();
    assert_eq!(index.len(), 1);
    assert!(plots.join("index.json").is_file());
    assert!(plots.join(&index[0].file).is_file());
    // a 4 s clip covers ceil(176400 / 512) frames
    assert_eq!(index[0].frames, 345);
}

#[test]
fn predict_trims_to_the_audio_length() {
    let (dir, cfg) = trained("resblock1d");
    let audio = dir.path().join("ten_seconds.wav");
    let samples: Vec<f32> = (0..441_000).map(|i| (i as f32 * 0.05).sin() * 0.3).collect();
    write_audio(&audio, &samples).unwrap();
    let out = dir.path().join("pred.roll");
    let roll = commands::cmd_predict(&cfg, &cfg.paths.output.join(BEST_CHECKPOINT), &audio, None, &out).unwrap();
    assert_eq!(roll.predictions.dim(), (862, 7));
    assert!(roll.predictions.iter().all(|p| (0.0..=1.0).contains(p)));
    assert!(out.is_file());
}

#[test]
fn pitch_variant_needs_salience_for_arbitrary_audio() {
    let (dir, cfg) = trained("cqt_hsf");
    let audio = dir.path().join("data/test_data/test0002.wav");
    let err = commands::cmd_predict(&cfg, &cfg.paths.output.join(BEST_CHECKPOINT), &audio, None, &dir.path().join("p.roll"))
        .unwrap_err();
    assert_eq!(err.kind(), "input");
    assert!(err.to_string().contains("salience"), "{err}");
}

#[test]
fn checkpoint_from_other_geometry_is_refused() {
    let (_dir, mut cfg) = trained("resblock1d");
    let ckpt = cfg.paths.output.join(BEST_CHECKPOINT);
    cfg.normalize = false;
    let err = commands::cmd_tune_thresholds(&cfg, &ckpt).unwrap_err();
    assert_eq!(err.kind(), "geometry_mismatch", "{err}");
}

#[test]
fn binary_reports_errors_as_json() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_instrec"))
        .args(["ingest", "--variant", "nope", "--dataset"])
        .arg(dir.path())
        .env("RUST_LOG", "off")
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let last = stderr.lines().last().unwrap();
    let record: serde_json::Value = serde_json::from_str(last).unwrap();
    assert_eq!(record["error"]["kind"], "unknown_variant");
    assert!(record["error"]["message"].as_str().unwrap().contains("resblock1d"));
}

#[test]
fn guide_configuration_parses() {
    let page = include_str!("../../../book/src/full-run.md");
    let toml = page.split("```toml").nth(1).and_then(|rest| rest.split("```").next()).unwrap();
    let cfg = PipelineConfig::from_toml(toml).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.model.hsf_order, Some(3));
}
