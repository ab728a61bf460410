use deepcs::fixtures::write_fixture_set;
use deepcs::train::{self, batch_loss, epoch_order, initial_state, load_dataset, train_epoch, CHECKPOINT_FILE};
use deepcs::{AdamConfig, Checkpoint64, Model64, NetConfig, Tensor64, TrainConfig};

fn config(dir: &std::path::Path, ckpt: &std::path::Path, epochs: usize) -> TrainConfig {
    TrainConfig {
        net: NetConfig::tiny(2, 4, 8, &[0.25, 0.5]),
        epochs,
        batch_size: 3,
        lr: 1e-3,
        patch_size: 16,
        patches_per_image: 2,
        seed: 9,
        dataset_dir: dir.to_path_buf(),
        checkpoint_dir: Some(ckpt.to_path_buf()),
        resume: None,
    }
}

fn patches(cfg: &TrainConfig) -> Vec<Tensor64> {
    load_dataset(&cfg.dataset_dir, cfg.patch_size, cfg.net.block_size, cfg.patches_per_image, cfg.seed)
        .unwrap()
        .patches
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let data = tempfile::tempdir().unwrap();
    write_fixture_set(data.path(), 4, 24, 20, 1).unwrap();
    let run = |sub: &str| {
        let ck = data.path().join(sub);
        let cfg = config(data.path(), &ck, 3);
        let mut st = initial_state::<f64>(&cfg).unwrap();
        train::train(&mut st, &patches(&cfg), &cfg, |_| {}).unwrap();
        std::fs::read(ck.join(CHECKPOINT_FILE)).unwrap()
    };
    // The checkpoint directories live inside the dataset directory; the
    // loader skips them because only regular files are listed.
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
}

#[test]
fn resumed_training_continues_exactly() {
    let data = tempfile::tempdir().unwrap();
    write_fixture_set(data.path(), 4, 24, 20, 2).unwrap();
    let ck = tempfile::tempdir().unwrap();
    let cfg = config(data.path(), ck.path(), 2);
    let ps = patches(&cfg);

    let mut straight = initial_state::<f64>(&cfg).unwrap();
    let stats = train::train(&mut straight, &ps, &TrainConfig { epochs: 3, checkpoint_dir: None, ..cfg.clone() }, |_| {}).unwrap();
    assert_eq!(stats.iter().map(|s| s.epoch).collect::<Vec<_>>(), [1, 2, 3]);

    let mut first = initial_state::<f64>(&cfg).unwrap();
    train::train(&mut first, &ps, &cfg, |_| {}).unwrap();
    let resume_cfg = TrainConfig {
        epochs: 1,
        resume: Some(ck.path().join(CHECKPOINT_FILE)),
        checkpoint_dir: None,
        ..cfg.clone()
    };
    let mut resumed = initial_state::<f64>(&resume_cfg).unwrap();
    assert_eq!(resumed.epoch, 2);
    assert_eq!(resumed.to_bytes(), first.to_bytes());

    // The first resumed batch loss is recomputable from the saved state.
    let order = epoch_order(ps.len(), cfg.seed, 3);
    let batch: Vec<Tensor64> = order[..cfg.batch_size].iter().map(|&i| ps[i].clone()).collect();
    let expected = batch_loss(&resumed.model, &batch).unwrap();
    let s = train_epoch(&mut resumed, &ps, cfg.batch_size, cfg.seed).unwrap();
    assert_eq!(s.epoch, 3);
    assert!((s.first_batch_loss - expected).abs() <= 1e-9 * expected.max(1.0));
    assert_eq!(resumed.to_bytes(), straight.to_bytes());
}

#[test]
fn incompatible_resume_is_rejected() {
    let ck = tempfile::tempdir().unwrap();
    let path = ck.path().join(CHECKPOINT_FILE);
    let model = Model64::new(NetConfig::tiny(2, 4, 8, &[0.5])).unwrap();
    Checkpoint64::fresh(model, AdamConfig::default()).save(&path).unwrap();
    let cfg = TrainConfig {
        net: NetConfig::tiny(3, 4, 8, &[0.5]),
        resume: Some(path),
        patch_size: 16,
        ..TrainConfig::default()
    };
    let err = initial_state::<f64>(&cfg).unwrap_err();
    assert!(err.to_string().contains("stages"), "{err}");
}

#[test]
fn loss_falls_on_a_small_run() {
    let data = tempfile::tempdir().unwrap();
    write_fixture_set(data.path(), 6, 40, 40, 5).unwrap();
    let cfg = TrainConfig {
        net: NetConfig::tiny(3, 8, 8, &[0.25, 0.5]),
        epochs: 8,
        batch_size: 2,
        lr: 1e-2,
        patch_size: 32,
        patches_per_image: 2,
        checkpoint_dir: None,
        ..config(data.path(), data.path(), 1)
    };
    let ps = patches(&cfg);
    let mut st = initial_state::<f64>(&cfg).unwrap();
    let before = batch_loss(&st.model, &ps).unwrap();
    let stats = train::train(&mut st, &ps, &cfg, |_| {}).unwrap();
    let after = batch_loss(&st.model, &ps).unwrap();
    assert!(stats.last().unwrap().loss < stats[0].loss);
    assert!(after < before);
}
