use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use crfcnn::checkpoint::load_tensors;

fn crfcnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crfcnn")).args(args).env_remove("CRFCNN_SEED").output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, count: usize, seed: u64) -> Output {
    crfcnn(&["gen", "--out", s(dir), "--data.count", &count.to_string(), "--data.seed", &seed.to_string()])
}

#[test]
fn gen_writes_manifest_and_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.json");
    fs::write(&spec, r#"{"count": 3, "noise": 0.0}"#).unwrap();
    let out = tmp.path().join("data");
    let o = crfcnn(&["gen", s(&spec), "--out", s(&out), "--pgm"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("manifest.json").exists());
    assert!(out.join("effective_config.json").exists());
    for i in 0..3 {
        assert!(out.join(format!("sample_{i:05}.crf")).exists());
        assert!(out.join(format!("sample_{i:05}.pgm")).exists());
    }
}

#[test]
fn gen_rejects_malformed_spec() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.json");
    fs::write(&spec, "{ count: ").unwrap();
    let o = crfcnn(&["gen", s(&spec), "--out", s(&tmp.path().join("d"))]);
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());
    let o = crfcnn(&["gen", "--out", s(&tmp.path().join("d")), "--data.occlusion", "2.0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gen_zero_count_is_valid() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("empty");
    assert_eq!(code(&gen(&out, 0, 0)), 0);
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"samples\": []"));
}

#[test]
fn train_eval_dump_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&gen(&data, 6, 1)), 0);
    let run = |name: &str, extra: &[&str]| {
        let out = tmp.path().join(name);
        let mut args = vec!["train", "--dataset", s(&data), "--out", s(&out), "--train.epochs", "2", "--train.batch_size", "3"];
        args.extend_from_slice(extra);
        let o = crfcnn(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("a", &["--train.seed", "7"]);
    let b = run("b", &["--train.seed", "7"]);
    let ckpt_a = fs::read(a.join("model.ckpt")).unwrap();
    assert_eq!(ckpt_a, fs::read(b.join("model.ckpt")).unwrap());
    let metrics = fs::read_to_string(a.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert_eq!(metrics, fs::read_to_string(b.join("metrics.jsonl")).unwrap());
    for line in metrics.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for k in ["epoch", "loss", "pck", "pcp"] {
            assert!(v.get(k).is_some());
        }
    }
    let eff: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("effective_config.json")).unwrap()).unwrap();
    assert_eq!(eff["train"]["seed"], 7);

    // a flooding variant from the same config surface
    let f = run("flood", &["--model.schedule", "flooding", "--model.iterations", "2"]);
    let eff: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.join("effective_config.json")).unwrap()).unwrap();
    assert_eq!(eff["model"]["schedule"], "flooding");

    let ckpt = a.join("model.ckpt");
    let e1 = crfcnn(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&data), "--out", s(&tmp.path().join("eval"))]);
    assert_eq!(code(&e1), 0, "{}", String::from_utf8_lossy(&e1.stderr));
    let e2 = crfcnn(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&data)]);
    assert_eq!(stdout(&e1), stdout(&e2));
    assert!(tmp.path().join("eval/report.json").exists());

    let gt = crfcnn(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&data), "--ground-truth-predictions"]);
    let last: serde_json::Value = serde_json::from_str(stdout(&gt).lines().last().unwrap()).unwrap();
    assert_eq!(last["pck"]["mean"], 1.0);
    assert_eq!(last["pcp"]["mean"], 1.0);

    // checkpoint trained for another graph
    let fc = f.join("model.ckpt");
    let o = crfcnn(&["eval", "--checkpoint", s(&fc), "--dataset", s(&data), "--config", s(&a.join("effective_config.json"))]);
    assert_eq!(code(&o), 0);
    let loopy_cfg = tmp.path().join("loopy.json");
    fs::write(&loopy_cfg, r#"{"model": {"schedule": "flooding", "extra_edges": [["r_wrist", "l_wrist"]]}}"#).unwrap();
    let o = crfcnn(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&data), "--config", s(&loopy_cfg)]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));

    let empty = tmp.path().join("empty");
    assert_eq!(code(&gen(&empty, 0, 0)), 0);
    assert_eq!(code(&crfcnn(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&empty)])), 2);

    let dump = tmp.path().join("dump/beliefs.crf");
    let o = crfcnn(&["dump", "--checkpoint", s(&ckpt), "--dataset", s(&data), "--index", "1", "--out", s(&dump)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let names: Vec<String> = load_tensors(&dump).unwrap().into_iter().map(|(n, _)| n).collect();
    assert!(names.iter().any(|n| n == "Q/neck/final"));
    assert!(names.iter().any(|n| n.starts_with("Q/r_wrist/")));
    assert!(names.iter().any(|n| n == "logits/head"));
}

#[test]
fn zero_epochs_saves_initial_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&gen(&data, 2, 3)), 0);
    let out = tmp.path().join("run");
    let o = crfcnn(&["train", "--dataset", s(&data), "--out", s(&out), "--train.epochs", "0"]);
    assert_eq!(code(&o), 0);
    assert!(out.join("model.ckpt").exists());
    assert_eq!(fs::read_to_string(out.join("metrics.jsonl")).unwrap(), "");
}

#[test]
fn divergence_exits_3_and_keeps_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&gen(&data, 4, 3)), 0);
    let out = tmp.path().join("run");
    let o = crfcnn(&["train", "--dataset", s(&data), "--out", s(&out), "--train.lr", "1e200", "--train.momentum", "0"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let params = load_tensors(out.join("model.ckpt")).unwrap();
    assert!(params.iter().all(|(_, t)| t.is_finite()));
}

#[test]
fn seed_comes_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&gen(&data, 2, 3)), 0);
    let out = tmp.path().join("run");
    let o = Command::new(env!("CARGO_BIN_EXE_crfcnn"))
        .args(["train", "--dataset", s(&data), "--out", s(&out), "--train.epochs", "0"])
        .env("CRFCNN_SEED", "42")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let eff: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("effective_config.json")).unwrap()).unwrap();
    assert_eq!(eff["train"]["seed"], 42);
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&gen(&data, 2, 3)), 0);
    let out = tmp.path().join("run");
    let o = crfcnn(&["train", "--dataset", s(&data), "--out", s(&out), "--train.lrr", "0.1"]);
    assert_eq!(code(&o), 2);
    let o = crfcnn(&["train", "--dataset", s(&tmp.path().join("missing")), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let o = crfcnn(&["train", "--dataset", s(&data), "--out", s(&out), "--model.extra_edges", r#"[["r_wrist","l_wrist"]]"#]);
    assert_eq!(code(&o), 2, "serial schedule on a loopy graph is a config error");
}

#[test]
fn verify_modes_pass() {
    for mode in ["oracle", "reachability", "gradcheck"] {
        let o = crfcnn(&["verify", mode]);
        assert_eq!(code(&o), 0, "{mode}: {}", stdout(&o));
        assert!(stdout(&o).lines().any(|l| l.starts_with("PASS")));
        assert!(!stdout(&o).lines().any(|l| l.starts_with("FAIL")));
    }
}
