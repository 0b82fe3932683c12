use std::path::Path;
use std::process::{Command, Output};

fn scriptnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scriptnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_train_evaluate_predict() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("d");
    let out = scriptnet(&[
        "gen-corpus",
        "--n",
        "60",
        "--malicious-frac",
        "0.5",
        "--seed",
        "3",
        "--out",
        p(&corpus),
    ]);
    assert!(out.status.success());
    let manifest = corpus.join("manifest.csv");
    assert!(manifest.exists());

    let cfg = dir.path().join("cpols.cfg");
    std::fs::write(
        &cfg,
        "hidden_size = 8\nembed_dim = 4\nfilters = 6\nwindow = 4\nstride = 2\npartition_len = 20\nclassifier_width = 8\nminibatch_size = 10\nmax_epochs = 2\nlearning_rate = 0.01\n",
    )
    .unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let history = dir.path().join("h.json");
    let out = scriptnet(&[
        "train",
        "--model",
        "cpols",
        "--manifest",
        p(&manifest),
        "--config",
        p(&cfg),
        "--seed",
        "5",
        "--out",
        p(&ckpt),
        "--history",
        p(&history),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let h: serde_json::Value = serde_json::from_slice(&std::fs::read(&history).unwrap()).unwrap();
    assert!(!h.as_array().unwrap().is_empty());

    let report = dir.path().join("r.json");
    let curve = dir.path().join("roc.csv");
    let out = scriptnet(&[
        "evaluate",
        "--ckpt",
        p(&ckpt),
        "--manifest",
        p(&manifest),
        "--fpr",
        "0.01,0.1",
        "--split",
        "test",
        "--out",
        p(&report),
        "--curve",
        p(&curve),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    for key in ["error_rate", "auc", "tpr_at_fpr", "n_pos", "n_neg"] {
        assert!(r.get(key).is_some(), "{key} missing");
    }
    assert_eq!(
        r["n_pos"].as_u64().unwrap() + r["n_neg"].as_u64().unwrap(),
        12
    );
    assert!(r["tpr_at_fpr"].get("0.01").is_some());
    assert!(std::fs::read_to_string(&curve)
        .unwrap()
        .starts_with("threshold,fpr,tpr\n"));

    let script = dir.path().join("s.vbs");
    std::fs::write(&script, "Set o = CreateObject(\"WScript.Shell\")").unwrap();
    let out = scriptnet(&["predict", "--ckpt", p(&ckpt), "--in", p(&script)]);
    assert!(out.status.success());
    let prob: f64 = String::from_utf8(out.stdout)
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(prob > 0.0 && prob < 1.0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        scriptnet(&["train", "--model", "lamp"]).status.code(),
        Some(1)
    );
    assert_eq!(scriptnet(&["--help"]).status.code(), Some(0));

    let corrupt = dir.path().join("bad.ckpt");
    std::fs::write(&corrupt, b"SCRNETCK\x01\x00\x00\x00garbage").unwrap();
    let input = dir.path().join("x.js");
    std::fs::write(&input, "alert(1)").unwrap();
    let out = scriptnet(&["predict", "--ckpt", p(&corrupt), "--in", p(&input)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("integrity"));

    let empty = dir.path().join("manifest.csv");
    std::fs::write(&empty, "# id,label,path\n").unwrap();
    let out = scriptnet(&[
        "train",
        "--model",
        "lamp",
        "--manifest",
        p(&empty),
        "--out",
        p(&dir.path().join("m")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_command() {
    let out = scriptnet(&["gradcheck", "--model", "lamp", "--tiny"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("max relative error"));
    // An impossible threshold turns into a numeric failure.
    let out = scriptnet(&[
        "gradcheck",
        "--model",
        "cpols",
        "--tiny",
        "--tolerance",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn sweep_command() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("d");
    assert!(scriptnet(&[
        "gen-corpus",
        "--n",
        "40",
        "--seed",
        "1",
        "--min-len",
        "20",
        "--max-len",
        "40",
        "--out",
        p(&corpus)
    ])
    .status
    .success());
    let cfg = dir.path().join("base.cfg");
    std::fs::write(&cfg, "hidden_size = 6\nembed_dim = 4\nclassifier_width = 4\nmax_len = 40\nminibatch_size = 10\nmax_epochs = 1\n").unwrap();
    let grid = dir.path().join("grid.txt");
    std::fs::write(&grid, "lstm_layers = 1, 2\nclassifier_layers = 1, 2\n").unwrap();
    let table = dir.path().join("t.json");
    let out = scriptnet(&[
        "sweep",
        "--model",
        "lamp",
        "--manifest",
        p(&corpus.join("manifest.csv")),
        "--config",
        p(&cfg),
        "--grid",
        p(&grid),
        "--out",
        p(&table),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows: serde_json::Value = serde_json::from_slice(&std::fs::read(&table).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 4);
}
