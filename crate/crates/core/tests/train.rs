use aqa_core::data::{synth_dataset, Dataset, SynthSpec};
use aqa_core::model::{Model, ModelConfig, Variant};
use aqa_core::train::{train, train_from, AdamW, TrainConfig, TrainLog, TrainOptions, TrainState, LOG_HEADER};
use aqa_core::ParamStore;

fn small_data(n: usize) -> Dataset {
    synth_dataset(&SynthSpec {
        n_clips: n,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn model() -> Model {
    Model::new(ModelConfig::tiny(Variant::EncoderMlp), 0).unwrap()
}

#[test]
fn zero_epochs_leave_the_model_untouched() {
    let m = model();
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::toy()
    };
    let (trained, log) = train(m.clone(), &small_data(12), &cfg).unwrap();
    assert!(log.rows.is_empty());
    assert_eq!(trained.params(), m.params());
}

#[test]
fn decay_alone_shrinks_weights_geometrically() {
    let mut s = ParamStore::new();
    let id = s.add("w", &[3], vec![1.0, -2.0, 0.5]).unwrap();
    let mut opt = AdamW::new(&s);
    let (lr, wd) = (0.1, 0.5);
    for _ in 0..10 {
        opt.step(&mut s, &[vec![0.0; 3]], lr, wd).unwrap();
    }
    let factor = (1.0f64 - lr * wd).powi(10);
    for (got, start) in s.entry(id).values.iter().zip([1.0, -2.0, 0.5]) {
        assert!((got - start * factor).abs() < 1e-14);
    }
}

#[test]
fn fixed_batch_loss_decreases() {
    let data = synth_dataset(&SynthSpec {
        n_clips: 16,
        test_fraction: 0.0,
        ..SynthSpec::default()
    })
    .unwrap();
    let mut cfg = TrainConfig::toy();
    cfg.epochs = 12;
    cfg.batch_size = 16;
    cfg.freeze_plans = true;
    cfg.preprocess.augment = false;
    cfg.loss.beta = 0.0;
    let (_, log) = train(model(), &data, &cfg).unwrap();
    let first = log.rows[0].train_loss;
    let last = log.last().unwrap().train_loss;
    assert!(last < 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn checkpoints_follow_the_schedule_and_the_log_is_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = TrainConfig::toy();
    cfg.epochs = 4;
    cfg.checkpoint_every = 2;
    let opts = TrainOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
    };
    let state = train_from(TrainState::new(model()), &small_data(20), &cfg, &opts).unwrap();
    for name in ["epoch_0002.ckpt", "epoch_0004.ckpt", "last.ckpt", "best.ckpt", "last.json"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    assert!(!dir.path().join("epoch_0001.ckpt").exists());
    let last = TrainState::load(dir.path().join("last.ckpt")).unwrap();
    assert_eq!(last.epochs_done, 4);
    assert!(last.log.same_metrics(&state.log));
    assert_eq!(last.model.params(), state.model.params());

    let csv = dir.path().join("log.csv");
    state.log.save(&csv).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some(LOG_HEADER));
    assert_eq!(text.lines().count(), 5);
    assert_eq!(TrainLog::load(&csv).unwrap(), state.log);
}

#[test]
fn mismatched_frame_count_is_a_config_error() {
    let mut cfg = TrainConfig::toy();
    cfg.sampler.n_frames = 4;
    let err = train(model(), &small_data(8), &cfg).unwrap_err();
    assert!(err.to_string().contains("n_frames"), "{err}");
}

#[test]
fn different_seeds_give_different_runs() {
    let data = small_data(16);
    let mut cfg = TrainConfig::toy();
    cfg.epochs = 1;
    let (_, a) = train(model(), &data, &cfg).unwrap();
    cfg.seed = 1;
    let (_, b) = train(model(), &data, &cfg).unwrap();
    assert!(!a.same_metrics(&b));
}
