mod common;

use common::{band_examples, small_setup};
use hvlad::model::build_encoder;
use hvlad::nn::{read_checkpoint, AdamConfig};
use hvlad::traineval::{
    checkpoint_name, evaluate, evaluate_checkpoint, latest_checkpoint, load_state, read_log, train, EvalOptions,
    TrainState,
};
use hvlad::Error;

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let (model_cfg, mut cfg) = small_setup(4, 1, 5);
    cfg.adam.lr = 0.0;
    cfg.init_vlad = false;
    let model = build_encoder::<f32>(&model_cfg, 1).unwrap();
    let mut state = TrainState::new(model.clone(), cfg.adam);
    train(&mut state, &band_examples(4, 3, 33, 30, 0), &cfg, &mut Vec::new()).unwrap();
    assert_eq!(state.step, 5);
    assert_eq!(state.model.params, model.params);
}

#[test]
fn resumed_run_matches_unbroken_run() {
    let ex = band_examples(4, 4, 33, 30, 2);
    let tmp = tempfile::tempdir().unwrap();
    let (model_cfg, mut cfg) = small_setup(4, 9, 12);
    let fresh = || TrainState::new(build_encoder::<f32>(&model_cfg, 3).unwrap(), cfg.adam);

    let mut unbroken = fresh();
    let full_log = train(&mut unbroken, &ex, &cfg, &mut Vec::new()).unwrap();

    cfg.checkpoint_dir = Some(tmp.path().to_path_buf());
    cfg.steps = 5;
    let mut first = fresh();
    let mut log = Vec::new();
    train(&mut first, &ex, &cfg, &mut log).unwrap();
    assert!(tmp.path().join(checkpoint_name(0)).exists());
    let ckpt = latest_checkpoint(tmp.path()).unwrap().unwrap();
    assert_eq!(ckpt, tmp.path().join(checkpoint_name(5)));

    let mut resumed = load_state::<f32>(&model_cfg, &ckpt, cfg.adam).unwrap();
    cfg.steps = 12;
    train(&mut resumed, &ex, &cfg, &mut log).unwrap();
    let stitched = read_log(&String::from_utf8(log).unwrap()).unwrap();

    // checkpoints hold f32, so an f32 run resumes bit-exactly
    assert_eq!(resumed.model.params, unbroken.model.params);
    assert_eq!(resumed.model.buffers, unbroken.model.buffers);
    assert_eq!(stitched.len(), 12);
    for (a, b) in stitched.iter().zip(&full_log) {
        assert_eq!(a.step, b.step);
        assert!((a.loss - b.loss).abs() < 1e-6, "{a:?} vs {b:?}");
        assert_eq!(a.top1, b.top1);
    }
}

#[test]
fn loss_decreases_for_most_seeds() {
    let ex = band_examples(4, 6, 33, 30, 5);
    let seeds: Vec<u64> = (0..10).collect();
    let mut decreased = 0;
    for &seed in &seeds {
        let (model_cfg, cfg) = small_setup(4, seed, 50);
        let mut state = TrainState::new(build_encoder::<f32>(&model_cfg, seed).unwrap(), cfg.adam);
        let log = train(&mut state, &ex, &cfg, &mut Vec::new()).unwrap();
        let head: f64 = log[..10].iter().map(|l| l.loss).sum::<f64>() / 10.0;
        let tail: f64 = log[40..].iter().map(|l| l.loss).sum::<f64>() / 10.0;
        if tail < head {
            decreased += 1;
        }
    }
    assert!(decreased * 10 >= seeds.len() * 9, "{decreased}/{} seeds decreased", seeds.len());
}

#[test]
fn overfits_small_set_and_evaluation_is_pure() {
    let ex = band_examples(4, 4, 33, 30, 7);
    let tmp = tempfile::tempdir().unwrap();
    let (model_cfg, mut cfg) = small_setup(4, 4, 150);
    cfg.checkpoint_dir = Some(tmp.path().to_path_buf());
    let mut state = TrainState::new(build_encoder::<f32>(&model_cfg, 4).unwrap(), cfg.adam);
    train(&mut state, &ex, &cfg, &mut Vec::new()).unwrap();

    let frontend = cfg.frontend();
    let before = state.model.clone();
    let report = evaluate(&state.model, &ex, &frontend, &EvalOptions::default(), state.step, 1).unwrap();
    assert!(report.top1 >= 0.95, "train top1 {}", report.top1);
    assert!(report.top5 >= report.top1);
    assert_eq!(state.model, before);

    let path = tmp.path().join(checkpoint_name(150));
    let again = evaluate_checkpoint(&model_cfg, &path, &ex, &frontend, &EvalOptions::default(), 1).unwrap();
    assert_eq!(again.step, 150);
    assert_eq!(again, evaluate_checkpoint(&model_cfg, &path, &ex, &frontend, &EvalOptions::default(), 1).unwrap());

    let other = model_cfg.clone().with_variant(hvlad::model::Variant::Baseline2);
    assert!(matches!(
        evaluate_checkpoint(&other, &path, &ex, &frontend, &EvalOptions::default(), 1),
        Err(Error::ConfigMismatch(_))
    ));
    assert_eq!(read_checkpoint::<f32>(&path).unwrap().step, 150);
}

#[test]
fn non_finite_loss_aborts_with_diagnostic_checkpoint() {
    let mut ex = band_examples(4, 2, 33, 30, 1);
    for e in &mut ex {
        e.spec.values[0] = f32::NAN;
    }
    let tmp = tempfile::tempdir().unwrap();
    let (model_cfg, mut cfg) = small_setup(4, 0, 3);
    cfg.checkpoint_dir = Some(tmp.path().to_path_buf());
    cfg.init_vlad = false;
    let mut state = TrainState::new(build_encoder::<f32>(&model_cfg, 0).unwrap(), AdamConfig::default());
    let err = train(&mut state, &ex, &cfg, &mut Vec::new()).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err:?}");
    assert!(tmp.path().join("ckpt_nonfinite_00000001.bin").exists());
}
