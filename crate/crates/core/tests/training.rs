mod common;

use approx::assert_relative_eq;
use instrec::nn::{Model, ModelSpec, Variant};
use instrec::train::{
    compute_class_weights, geometry_hash, Checkpoint, LossConfig, LrSchedule, TrainConfig, Trainer,
};
use instrec::cqt::CqtConfig;
use instrec::Error;

fn small_config(seed: u64, batch: usize) -> TrainConfig {
    TrainConfig {
        batch_size: batch,
        max_epochs: 3,
        seed,
        lr_schedule: LrSchedule::Constant,
        ..TrainConfig::default()
    }
}

fn weights(examples: &[instrec::train::TrainExample]) -> LossConfig {
    compute_class_weights(examples.iter().map(|e| &e.labels), 10.0).unwrap().0
}

#[test]
fn zero_learning_rate_leaves_parameters_and_loss_unchanged() {
    let mut data = common::prepare([1], 6.0);
    common::normalize(&mut data, &mut []);
    let examples = common::examples(Variant::Resblock1d, &data);
    let mut model = Model::new(ModelSpec::with_widths(Variant::Resblock1d, 16, 4), 0);
    let before: Vec<Vec<f32>> = model.params_mut().iter().filter(|p| p.trainable).map(|p| p.value.clone()).collect();
    let config = TrainConfig { initial_lr: 0.0, ..small_config(0, examples.len()) };
    let mut trainer = Trainer::new(model, config, weights(&examples)).unwrap();
    let log = trainer.fit(&examples, &[], |_, _| Ok(())).unwrap();
    let after: Vec<Vec<f32>> = trainer
        .model_mut()
        .params_mut()
        .iter()
        .filter(|p| p.trainable)
        .map(|p| p.value.clone())
        .collect();
    assert_eq!(before, after);
    assert_eq!(log.len(), 3);
    for r in &log[1..] {
        assert_relative_eq!(r.train_loss, log[0].train_loss, max_relative = 1e-6);
    }
}

#[test]
fn resumed_run_continues_with_identical_losses() {
    let mut data = common::prepare([2], 6.0);
    common::normalize(&mut data, &mut []);
    let examples = common::examples(Variant::CqtHsf(3), &data);
    let spec = ModelSpec::with_widths(Variant::CqtHsf(3), 16, 4);
    let loss = weights(&examples);
    let config = TrainConfig { max_epochs: 4, ..small_config(7, 2) };

    let mut straight = Trainer::new(Model::new(spec.clone(), 1), config.clone(), loss.clone()).unwrap();
    let full = straight.fit(&examples, &[], |_, _| Ok(())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("resume.ckpt");
    let hash = geometry_hash(&CqtConfig::default(), true);
    let first_half = TrainConfig { max_epochs: 2, ..config.clone() };
    let mut a = Trainer::new(Model::new(spec, 1), first_half, loss.clone()).unwrap();
    a.fit(&examples, &[], |_, _| Ok(())).unwrap();
    let mut ck = Checkpoint::from_model(a.model_mut(), hash.clone(), None, serde_json::Value::Null);
    ck.train_state = Some(a.state().clone());
    ck.velocity = Some(a.velocity().to_vec());
    ck.save(&path).unwrap();

    let ck = Checkpoint::load(&path, Some(&hash)).unwrap();
    let mut b = Trainer::resume(ck.to_model(), config, loss, ck.velocity.unwrap(), ck.train_state.unwrap()).unwrap();
    let rest = b.fit(&examples, &[], |_, _| Ok(())).unwrap();
    assert_eq!(rest.len(), 2);
    for (x, y) in full[2..].iter().zip(&rest) {
        assert_eq!(x.epoch, y.epoch);
        assert_eq!(x.train_loss, y.train_loss);
    }
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let mut data = common::prepare([3], 3.0);
    common::normalize(&mut data, &mut []);
    let mut examples = common::examples(Variant::Resblock1d, &data);
    examples[0].input.data[[0, 5, 5]] = f32::NAN;
    let model = Model::new(ModelSpec::with_widths(Variant::Resblock1d, 8, 4), 0);
    let mut trainer = Trainer::new(model, small_config(0, 1), LossConfig::default()).unwrap();
    match trainer.run_epoch(&examples, &[]) {
        Err(Error::Diverged { epoch, lr, .. }) => {
            assert_eq!(epoch, 1);
            assert_eq!(lr, 0.01);
        }
        other => panic!("expected divergence, got {:?}", other.map(|r| r.train_loss)),
    }
}
