use std::path::Path;

use sfsnid::data::{generate_dataset, load_image, DataConfig, DatasetManifest};
use sfsnid::pipeline::{
    evaluate, generate_pseudo_labels, infer, initial_checkpoint, retrain_fused, train_supervised, Checkpoint, Config,
    Model, Split, Stage, CHECKPOINT_FILE, LOSS_LOG_FILE,
};

fn small_config(steps: u64) -> Config {
    let mut cfg = Config::toy();
    cfg.train.image_size = 16;
    cfg.train.batch_size = 2;
    cfg.train.steps = Some(steps);
    cfg.train.retrain_steps = Some(steps);
    cfg.data = DataConfig {
        synthetic_pairs: 3,
        real_hazy: 2,
        image_size: 16,
        write_real_clear: true,
        ..DataConfig::default()
    };
    cfg
}

fn dataset(cfg: &Config, dir: &Path) -> DatasetManifest {
    generate_dataset(&cfg.data, 1, dir).unwrap()
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(3);
    cfg.train.lr = 0.0;
    let m = dataset(&cfg, dir.path());
    let out = train_supervised(&m, &cfg, None, None).unwrap();
    assert_eq!(out.checkpoint.params, initial_checkpoint(&cfg).unwrap().params);
    assert_eq!(out.log.len(), 3);
    assert!(out.log.iter().all(|r| r.l_b == 0.0));
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(4);
    let m = dataset(&cfg, dir.path());
    let a = train_supervised(&m, &cfg, None, None).unwrap();
    let b = train_supervised(&m, &cfg, None, None).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(a.log, b.log);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(6);
    let m = dataset(&cfg, dir.path());
    let full_dir = dir.path().join("full");
    let full = train_supervised(&m, &cfg, None, Some(&full_dir)).unwrap();

    let split_dir = dir.path().join("split");
    let first = train_supervised(&m, &small_config(3), None, Some(&split_dir)).unwrap();
    let saved = Checkpoint::load(&split_dir.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(saved.to_bytes(), first.checkpoint.to_bytes());
    let mut resumed_from = saved;
    resumed_from.config = cfg.clone();
    let rest = train_supervised(&m, &cfg, Some(&resumed_from), Some(&split_dir)).unwrap();
    assert_eq!(rest.log.len(), 3);
    assert_eq!(rest.checkpoint.params, full.checkpoint.params);
    assert_eq!(rest.checkpoint.optimizer, full.checkpoint.optimizer);
    assert_eq!(
        std::fs::read_to_string(full_dir.join(LOSS_LOG_FILE)).unwrap(),
        std::fs::read_to_string(split_dir.join(LOSS_LOG_FILE)).unwrap()
    );
}

#[test]
fn retraining_refuses_untrained_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(2);
    let m = dataset(&cfg, dir.path());
    let untrained = initial_checkpoint(&cfg).unwrap();
    assert_eq!(untrained.stage, Stage::Untrained);
    assert!(retrain_fused(&untrained, &m, &cfg, None).is_err());
    assert!(generate_pseudo_labels(&untrained, &m, &dir.path().join("p")).is_err());
}

#[test]
fn retraining_without_pseudo_and_brightness_is_a_continuation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(3);
    cfg.loss.beta = 0.0;
    let m = dataset(&cfg, dir.path());
    let stage_one = train_supervised(&m, &cfg, None, None).unwrap().checkpoint;
    let retrained = retrain_fused(&stage_one, &m, &cfg, None).unwrap().checkpoint;

    let mut longer = cfg.clone();
    longer.train.steps = Some(6);
    let continued = train_supervised(&m, &longer, None, None).unwrap().checkpoint;
    assert_eq!(retrained.stage, Stage::Retrained);
    assert_eq!(retrained.step, 6);
    assert_eq!(retrained.params, continued.params);
}

#[test]
fn pseudo_labels_are_inference_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(2);
    let m = dataset(&cfg, dir.path());
    let ckpt = train_supervised(&m, &cfg, None, None).unwrap().checkpoint;
    let out = dir.path().join("pseudo_run");
    let next = generate_pseudo_labels(&ckpt, &m, &out).unwrap();
    let labels = next.pseudo_labels.clone().unwrap();
    assert_eq!(labels.len(), m.real_hazy.len());
    let model = Model::from_checkpoint(&ckpt).unwrap();
    for (hazy, label) in next.pseudo_pairs() {
        let expected = infer(&model, &load_image(&hazy).unwrap()).unwrap();
        let direct = out.join("direct.png");
        sfsnid::data::save_image(&expected, &direct).unwrap();
        assert_eq!(std::fs::read(&direct).unwrap(), std::fs::read(&label).unwrap());
    }
    let reloaded = DatasetManifest::load(&out.join(sfsnid::data::MANIFEST_FILE)).unwrap();
    assert_eq!(reloaded.pseudo_pairs(), next.pseudo_pairs());

    let fused = retrain_fused(&ckpt, &next, &cfg, None).unwrap();
    assert!(fused.log.iter().any(|r| r.l_b > 0.0));
}

#[test]
fn evaluation_reports_both_splits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(1);
    let m = dataset(&cfg, dir.path());
    let model = Model::init(&cfg.network, 0).unwrap();
    let syn = evaluate(&model, &m, Split::Synthetic).unwrap();
    assert_eq!(syn.records.len(), 3);
    assert!(syn.mean_psnr.is_some() && syn.mean_ssim.is_some());
    let real = evaluate(&model, &m, Split::Real).unwrap();
    assert_eq!(real.records.len(), 2);
    assert!(real.mean_psnr.is_some());
    assert!(real.records.iter().all(|r| (0.0..=1.0).contains(&r.mean_brightness)));
}
