use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dseq::io::{load_generic, load_model, save_model};
use dseq::{CrfParams, EncoderWeights, LabelAlphabet, ModelState, TopLayer, TrainConfig};
use ndarray::{array, Array1};

fn dseq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dseq")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["synth", "--k", "3", "--d", "6", "--strength", "0.9", "--n", "24", "--seed", "11", "--out", s(&out)];
    args.extend_from_slice(extra);
    let o = dseq(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

/// Two-label model whose emissions pick the hot coordinate, and matching data.
fn perfect_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let alphabet = LabelAlphabet::new(vec!["a".into(), "b".into()]).unwrap();
    let cfg = TrainConfig {
        layers: vec![2],
        ..TrainConfig::default()
    };
    let model = ModelState::new(
        EncoderWeights::new(vec![array![[8.0, -8.0], [-8.0, 8.0], [0.0, 0.0]]]).unwrap(),
        TopLayer::new(array![[4.0, -4.0], [-4.0, 4.0]], Array1::zeros(2)).unwrap(),
        CrfParams::zeros(2),
        alphabet,
        cfg,
    )
    .unwrap();
    let model_path = dir.join("perfect.dseq");
    save_model(&model, &model_path).unwrap();
    let data = dir.join("perfect.seq");
    fs::write(
        &data,
        concat!(
            r#"{"id":"x1","labels":["a","b","b"],"frames":[[1,0],[0,1],[0,1]]}"#,
            "\n",
            r#"{"id":"x2","labels":["b","a"],"frames":[[0,1],[1,0]]}"#,
            "\n"
        ),
    )
    .unwrap();
    (model_path, data)
}

#[test]
fn synth_writes_loadable_deterministic_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a.seq", &[]);
    let b = synth(dir.path(), "b.seq", &[]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let data = load_generic(&a).unwrap();
    assert_eq!(data.num_labels(), 3);
    assert_eq!(data.len(), 24);
}

#[test]
fn synth_rejects_invalid_strength() {
    let dir = tempfile::tempdir().unwrap();
    let o = dseq(&["synth", "--strength", "1.5", "--out", s(&dir.path().join("x.seq"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn smoke_train_writes_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.seq", &[]);
    let out = dir.path().join("m.dseq");
    let o = dseq(&[
        "train", "--data", s(&data), "--no-rbm", "--no-independent", "--epochs", "0", "--seed", "4",
        "--set", "layers=5", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let model = load_model(&out).unwrap();
    let cfg = model.config.clone();
    assert_eq!((cfg.epochs, cfg.seed, cfg.use_rbm, cfg.use_independent), (0, 4, false, false));
    let dataset = load_generic(&data).unwrap();
    assert_eq!(model, ModelState::init(dataset.alphabet.clone(), dataset.dim(), &cfg).unwrap());

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("m.dseq.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 4);
    assert_eq!(manifest["data"]["sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["seeds"]["online"].is_u64());
    assert_eq!(fs::read_to_string(dir.path().join("m.dseq.log.jsonl")).unwrap(), "");

    // the written config reproduces the run
    let again = dir.path().join("again.dseq");
    let o = dseq(&["train", "--data", s(&data), "--config", s(&dir.path().join("m.dseq.cfg")), "--out", s(&again)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn train_writes_log_records_and_config_file_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.seq", &[]);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# small run\nlayers = 6\nuse_rbm = false\nind_epochs = 3\nepochs = 9\n").unwrap();
    let out = dir.path().join("m.dseq");
    let log = dir.path().join("train.jsonl");
    // the flag beats the file
    let o = dseq(&["train", "--data", s(&data), "--config", s(&cfg), "--epochs", "3", "--out", s(&out), "--log", s(&log)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<serde_json::Value> = fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    for (i, rec) in lines.iter().enumerate() {
        assert_eq!(rec["epoch"], i);
        for key in ["objective", "train_error", "violations"] {
            assert!(rec.get(key).is_some(), "missing {key}");
        }
    }
    assert_eq!(load_model(&out).unwrap().config.layers, vec![6]);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.seq", &[]);
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "lambda1 = -1\n").unwrap();
    let out = dir.path().join("m.dseq");
    let o = dseq(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let o = dseq(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_key"));
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.seq");
    fs::write(&bad, r#"{"id":"x","labels":["a","b","c"],"frames":[[1],[2]]}"#).unwrap();
    let o = dseq(&["train", "--data", s(&bad), "--out", s(&dir.path().join("m.dseq"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = dseq(&["train", "--data", s(&bad), "--format", "ocr", "--out", s(&dir.path().join("m.dseq"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn eval_perfect_model_prints_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (model, data) = perfect_fixture(dir.path());
    let o = dseq(&["eval", "--model", s(&model), "--data", s(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("frame error 0.000000"), "{}", stdout(&o));
}

#[test]
fn eval_mismatch_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let (model, _) = perfect_fixture(dir.path());
    let data = synth(dir.path(), "d.seq", &[]);
    let o = dseq(&["eval", "--model", s(&model), "--data", s(&data)]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn eval_folds_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.seq", &[]);
    let args = [
        "eval", "--data", s(&data), "--folds", "3", "--seed", "1", "--set", "layers=5", "--set", "use_rbm=false",
        "--set", "epochs=3", "--set", "ind_epochs=3",
    ];
    let a = dseq(&args);
    let b = dseq(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(stdout(&a).lines().count(), 5);
}

#[test]
fn predict_emission_dominated_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (model, _) = perfect_fixture(dir.path());
    let data = dir.path().join("unlabeled.seq");
    fs::write(&data, r#"{"id":"u","frames":[[0,1],[1,0],[1,0],[0,1]]}"#).unwrap();
    let out = dir.path().join("pred.jsonl");
    let o = dseq(&["predict", "--model", s(&model), "--data", s(&data), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rec: serde_json::Value = serde_json::from_str(fs::read_to_string(&out).unwrap().trim()).unwrap();
    assert_eq!(rec["id"], "u");
    assert_eq!(rec["labels"], serde_json::json!(["b", "a", "a", "b"]));
}

#[test]
fn predict_from_file_matches_in_memory_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.seq", &[]);
    let model_path = dir.path().join("m.dseq");
    let o = dseq(&["train", "--data", s(&data), "--set", "layers=5", "--set", "use_rbm=false", "--epochs", "2", "--out", s(&model_path)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = dseq(&["predict", "--model", s(&model_path), "--data", s(&data)]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("frame error"));

    let model = load_model(&model_path).unwrap();
    let dataset = load_generic(&data).unwrap().relabel(&model.alphabet).unwrap();
    let expected: Vec<String> = dataset
        .sequences
        .iter()
        .map(|seq| {
            let labels: Vec<&str> = model
                .decode(seq.frames.view())
                .unwrap()
                .iter()
                .map(|&y| model.alphabet.name(y).unwrap())
                .collect();
            serde_json::json!({"id": seq.id, "labels": labels}).to_string()
        })
        .collect();
    assert_eq!(stdout(&o).lines().collect::<Vec<_>>(), expected);
}

#[test]
fn predict_empty_input_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let (model, _) = perfect_fixture(dir.path());
    let empty = dir.path().join("empty.seq");
    fs::write(&empty, "").unwrap();
    let o = dseq(&["predict", "--model", s(&model), "--data", s(&empty)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn gradcheck_single_seed_and_broken_sign() {
    let o = dseq(&["gradcheck", "--seeds", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    for g in ["A", "pi", "tau", "b", "W", "c", "omega"] {
        assert!(out.lines().any(|l| l.split_whitespace().next() == Some(g)), "group {g} missing:\n{out}");
    }
    let o = dseq(&["gradcheck", "--seeds", "1", "--break-sign", "W"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("W"));
    let o = dseq(&["gradcheck", "--seeds", "1", "--break-sign"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("failed for: A"));
}
