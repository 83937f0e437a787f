//! File-format checks: model config, CSV matrices, image blob, PGM, history.

mod common;

use common::*;
use l1smooth::io::{
    load_linear_model, read_matrix_csv, save_linear_model, write_history_csv, write_matrix_csv,
};
use l1smooth::model::MatSeq;
use l1smooth::presets::{phantom_sequence, ImageSequence};
use l1smooth::splitting::IterationRecord;

#[test]
fn matrix_csv_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let mut rng = rng(100);
    let m = random_matrix(&mut rng, 5, 3, 2.0);
    write_matrix_csv(&path, &m).unwrap();
    let back = read_matrix_csv::<f64>(&path).unwrap();
    assert_eq!(m, back);
}

#[test]
fn matrix_csv_rejects_ragged_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "1.0,2.0\n3.0\n").unwrap();
    assert!(read_matrix_csv::<f64>(&path).is_err());
}

#[test]
fn model_config_roundtrip_stationary_and_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rng(101);

    for stationary in [true, false] {
        let shape = InstanceShape {
            steps: 4,
            state_dim: 3,
            meas_dim: 2,
            sparsity_dim: 2,
            stationary,
        };
        let model = random_linear_model(&mut rng, &shape);
        let path = dir.path().join(format!("model_{stationary}.toml"));
        save_linear_model(&path, &model).unwrap();
        let back = load_linear_model::<f64>(&path).unwrap();
        assert_eq!(back.steps, model.steps);
        assert_eq!(back.prior_mean, model.prior_mean);
        for t in 1..model.steps {
            assert_eq!(back.trans_at(t), model.trans_at(t));
            assert_eq!(back.proc_at(t), model.proc_at(t));
        }
        for t in 0..model.steps {
            assert_eq!(back.meas_at(t), model.meas_at(t));
            assert_eq!(back.meas_noise_at(t), model.meas_noise_at(t));
            assert_eq!(back.sparsity_at(t), model.sparsity_at(t));
        }
        assert!(back.validate().is_empty());
    }
}

#[test]
fn model_config_resolves_csv_references() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rng(102);
    let a = random_matrix(&mut rng, 2, 2, 1.0);
    write_matrix_csv(&dir.path().join("a.csv"), &a).unwrap();
    let text = r#"
steps = 3
state_dim = 2
meas_dim = 2
sparsity_dim = 2
stationary = true
trans = { csv = "a.csv" }
meas = [[1.0, 0.0], [0.0, 1.0]]
proc_noise = [[1.0, 0.0], [0.0, 1.0]]
meas_noise = [[0.5, 0.0], [0.0, 0.5]]
sparsity = [[1.0, 0.0], [0.0, 1.0]]
prior_mean = [0.0, 0.0]
prior_cov = [[1.0, 0.0], [0.0, 1.0]]
"#;
    let path = dir.path().join("model.toml");
    std::fs::write(&path, text).unwrap();
    let model = load_linear_model::<f64>(&path).unwrap();
    assert_eq!(model.trans_at(1), &a);
    assert!(matches!(model.trans, MatSeq::Stationary(_)));
}

#[test]
fn image_blob_roundtrip_and_magic_check() {
    let dir = tempfile::tempdir().unwrap();
    let seq = phantom_sequence::<f64>(16, 5, 3).unwrap();
    let path = dir.path().join("seq.l1sm");
    seq.write_blob(&path).unwrap();
    let back = ImageSequence::<f64>::read_blob(&path).unwrap();
    assert_eq!(seq, back);

    let bad = dir.path().join("bad.l1sm");
    std::fs::write(&bad, b"NOPE").unwrap();
    assert!(ImageSequence::<f64>::read_blob(&bad).is_err());
}

#[test]
fn pgm_header_and_size() {
    let dir = tempfile::tempdir().unwrap();
    let seq = phantom_sequence::<f64>(16, 2, 4).unwrap();
    let path = dir.path().join("frame0.pgm");
    seq.write_pgm(0, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(bytes.len(), b"P5\n16 16\n255\n".len() + 256);
    assert!(seq.write_pgm(9, &dir.path().join("oob.pgm")).is_err());
}

#[test]
fn history_csv_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("history.csv");
    let history = vec![
        IterationRecord {
            k: 1,
            objective: 2.5f64,
            aug_lagrangian: 2.25,
            primal_residual: 0.5,
            dual_residual: 0.25,
            wall_time_s: 0.001,
            cov_updates: 40,
        },
        IterationRecord {
            k: 2,
            objective: 2.0,
            aug_lagrangian: 1.75,
            primal_residual: 0.05,
            dual_residual: 0.02,
            wall_time_s: 0.002,
            cov_updates: 0,
        },
    ];
    write_history_csv(&path, &history).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "k,objective,aug_lagrangian,primal_residual,dual_residual,wall_time_s"
    );
    assert_eq!(lines.count(), 2);
}
