use std::path::Path;
use std::process::{Command, Output};

use tpidm::config::{DataSource, ExperimentConfig, SegmentLayout};

fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::lv_desk();
    c.dataset.source = DataSource::lotka_volterra_default(
        1200,
        SegmentLayout {
            count: 2,
            length: 150,
            gap: 150,
        },
    );
    c.dataset.train_points = 500;
    c.dataset.window = 10;
    c.dataset.eval_normal = 20;
    c.dataset.eval_anomalous = 10;
    c.model.encoder_hidden = vec![3, 4];
    c.model.decoder_hidden = vec![3, 2];
    c.model.steps = 20;
    c.training.epochs = 2;
    c.training.batch_size = 16;
    c.training.max_batches_per_epoch = Some(2);
    c.training.lr = 1e-3;
    c.detection.elbo_subsample = Some(4);
    c.detection.validation_windows = Some(30);
    c
}

fn tpidm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpidm"))
        .args(args)
        .env("TPIDM_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

#[test]
fn full_pipeline_runs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny_config());
    let data_dir = dir.path().join("data");
    let o = tpidm(&["gen-data", "--config", s(&cfg), "--out", s(&data_dir)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let series = data_dir.join("series.csv");
    let first = std::fs::read(&series).unwrap();
    assert!(data_dir.join("series.csv.meta.json").exists());
    let o = tpidm(&["gen-data", "--config", s(&cfg), "--out", s(&data_dir)]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(&series).unwrap(), first);

    let run = dir.path().join("run");
    let o = tpidm(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&series),
        "--out",
        s(&run),
        "--seed",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,l_dm,l_pi,total"));

    let ckpt = run.join("model.ckpt");
    let o = tpidm(&[
        "detect",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&series),
        "--out",
        s(&run),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    let f1 = metrics["f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    for key in ["precision", "recall", "threshold", "config"] {
        assert!(metrics.get(key).is_some(), "missing {key}");
    }
    let scores = std::fs::read_to_string(run.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().next(), Some("window_id,score,verdict,truth"));
    assert_eq!(scores.lines().count(), 31);

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = tpidm(&[
            "sample",
            "--checkpoint",
            s(&ckpt),
            "--count",
            "16",
            "--seed",
            "9",
            "--out",
            s(out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let sa = std::fs::read(a.join("samples.csv")).unwrap();
    assert_eq!(sa, std::fs::read(b.join("samples.csv")).unwrap());
    assert!(String::from_utf8(sa)
        .unwrap()
        .starts_with("window_id,step,prey,predator"));

    let o = tpidm(&[
        "pca",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&series),
        "--samples",
        s(&a.join("samples.csv")),
        "--count",
        "30",
        "--out",
        s(&run),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let pca = std::fs::read_to_string(run.join("pca.csv")).unwrap();
    assert_eq!(pca.lines().next(), Some("set,pc1,pc2"));
    assert_eq!(pca.lines().count(), 1 + 30 + 16);

    let o = tpidm(&[
        "bench",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&series),
        "--count",
        "50",
        "--out",
        s(&run),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let bench: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("bench.json")).unwrap()).unwrap();
    assert_eq!(bench["windows"], 50);
    assert!(bench["seconds"].as_f64().unwrap() > 0.0);
}

#[test]
fn negative_dt_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny_config();
    c.dataset.dt = -0.01;
    let cfg = write_config(dir.path(), &c);
    let o = tpidm(&[
        "gen-data",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("d")),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn unknown_config_key_and_bad_flags_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, tiny_config().to_toml() + "\n[extra]\nx = 1\n").unwrap();
    let o = tpidm(&["gen-data", "--config", s(&path), "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&tpidm(&["train", "--bogus"])), 1);
    assert_eq!(code(&tpidm(&["--help"])), 0);
}

#[test]
fn missing_files_exit_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = tpidm(&[
        "detect",
        "--checkpoint",
        s(&dir.path().join("none.ckpt")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 3);
    let o = tpidm(&[
        "gen-data",
        "--config",
        s(&dir.path().join("none.toml")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn corrupt_checkpoint_exits_with_runtime_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny_config());
    let o = tpidm(&["train", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = dir.path().join("model.ckpt");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let n = bytes.len();
    bytes[n - 12] ^= 0x40;
    std::fs::write(&ckpt, bytes).unwrap();
    let o = tpidm(&["detect", "--checkpoint", s(&ckpt), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"));
}
