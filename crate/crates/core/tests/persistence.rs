use crctc_core::harness::{run_experiment, ExperimentConfig, Objective, RunRecord};
use crctc_core::model::{forward, load_checkpoint, read_checkpoint, save_checkpoint, Mode};
use crctc_core::{softmax_rows, DistributionLattice, LogitLattice, Matrix};

fn tiny(objective: Objective) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(objective);
    cfg.task.train_samples = 6;
    cfg.task.dev_samples = 2;
    cfg.task.test_samples = 2;
    cfg.task.max_label_len = 4;
    cfg.model.hidden_dim = 8;
    cfg.train.epochs = 2;
    cfg
}

#[test]
fn checkpoint_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(Objective::CrCtc);
    let (_, params) = run_experiment(&cfg).unwrap();
    let enc = cfg.encoder_config();
    let path = dir.path().join("p.ckpt");
    save_checkpoint(&path, &enc, &params).unwrap();
    let (enc2, params2) = load_checkpoint(&path).unwrap();
    assert_eq!(enc2, enc);
    assert_eq!(params2, params);

    let x = Matrix::filled(9, enc.input_dim, 0.25);
    let a = forward(&enc, &params, &x, Mode::Eval).unwrap().0;
    let b = forward(&enc2, &params2, &x, Mode::Eval).unwrap().0;
    assert_eq!(a, b);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let cfg = tiny(Objective::Ctc);
    let (_, params) = run_experiment(&cfg).unwrap();
    let mut bytes = Vec::new();
    crctc_core::model::write_checkpoint(&mut bytes, &cfg.encoder_config(), &params).unwrap();

    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 0xff;
    assert!(read_checkpoint(bad_magic.as_slice()).is_err());
    assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    assert!(read_checkpoint(&bytes[..4]).is_err());
}

#[test]
fn run_record_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(Objective::SrCtc);
    let (record, _) = run_experiment(&cfg).unwrap();
    let path = dir.path().join("r.json");
    record.save(&path).unwrap();
    let back = RunRecord::load(&path).unwrap();
    assert_eq!(back, record);
    assert_eq!(back.experiment_config().unwrap(), cfg);
}

#[test]
fn lattice_text_round_trips() {
    let logits = LogitLattice::new(Matrix::from_rows(&[[0.3, -1.2, 2.0], [1.0, 1.0, -0.5], [-3.0, 0.1, 0.2]])).unwrap();
    let z = softmax_rows(&logits);
    let back = DistributionLattice::read_text(z.to_text().as_bytes()).unwrap();
    for (a, b) in z.probs().as_slice().iter().zip(back.probs().as_slice()) {
        assert!((a - b).abs() < 1e-15);
    }
}
