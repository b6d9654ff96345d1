use std::path::Path;
use std::process::{Command, Output};

fn ebisg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ebisg"))
        .args(args)
        .output()
        .expect("failed to run ebisg")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn gen_synth(dir: &Path, seed: &str) -> Output {
    ebisg(&[
        "gen-synth", "--seed", seed, "--out", s(dir), "--voters", "400", "--units", "12", "--train-voters", "50",
        "--unmatched-share", "0.12",
    ])
}

#[test]
fn gen_synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for (dir, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        let o = gen_synth(dir, seed);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["voters.csv", "truth.csv", "surnames.csv", "firstnames.csv", "geo.csv", "income.csv", "voters_train.csv"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f} differs between identical runs");
        if f != "geo.csv" && f != "income.csv" {
            assert_ne!(x, std::fs::read(c.join(f)).unwrap(), "{f} ignores the seed");
        }
    }
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma["digest"], mb["digest"]);
    assert_eq!(ma["command"], "gen-synth");
    assert_eq!(ma["seed"], 5);
    assert!(ma["outputs"].as_array().unwrap().len() >= 7);
    assert_ne!(ma["digest"], manifest(&c)["digest"]);
}

#[test]
fn manifest_digest_tracks_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(gen_synth(&data, "1").status.code(), Some(0));
    let run = |out: &Path| {
        let o = ebisg(&["ingest", "--out", s(out), "--geo", s(&data.join("geo.csv"))]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        manifest(out)["digest"].as_str().unwrap().to_string()
    };
    let first = run(&tmp.path().join("i1"));
    assert_eq!(first, run(&tmp.path().join("i2")));
    let geo = std::fs::read_to_string(data.join("geo.csv")).unwrap();
    let mut lines: Vec<&str> = geo.lines().collect();
    lines.pop();
    std::fs::write(data.join("geo.csv"), lines.join("\n") + "\n").unwrap();
    assert_ne!(first, run(&tmp.path().join("i3")));
}

#[test]
fn missing_fullname_weights_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(gen_synth(&data, "2").status.code(), Some(0));
    let o = ebisg(&[
        "predict",
        "--out",
        s(&tmp.path().join("p")),
        "--method",
        "fullname-embed",
        "--voters",
        s(&data.join("voters.csv")),
        "--surnames",
        s(&data.join("surnames.csv")),
        "--geo",
        s(&data.join("geo.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--weights"), "{}", stderr(&o));
}

#[test]
fn bad_data_exits_one_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("surnames.csv");
    std::fs::write(
        &bad,
        "name,count,pct_white,pct_black,pct_hispanic,pct_asian,pct_aian,pct_other\nSMITH,500,50,50,0,0,0,0\nJONES,500,abc,50,0,0,0,0\n",
    )
    .unwrap();
    let o = ebisg(&["ingest", "--out", s(&tmp.path().join("o")), "--surnames", s(&bad)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("surnames.csv"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(ebisg(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(ebisg(&["ingest", "--out", s(&tmp.path().join("o"))]).status.code(), Some(2));
    assert!(!tmp.path().join("o").exists(), "usage error created the output directory");
    assert_eq!(ebisg(&["predict", "--method", "bisg", "--scope", "all"]).status.code(), Some(2));
    assert_eq!(ebisg(&["--help"]).status.code(), Some(0));

    let cfg = tmp.path().join("run.conf");
    std::fs::write(&cfg, "voters = 10\nnot-a-flag = 3\n").unwrap();
    let o = ebisg(&["gen-synth", "--config", s(&cfg), "--out", s(&tmp.path().join("g"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not-a-flag"), "{}", stderr(&o));
}

#[test]
fn config_file_supplies_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.conf");
    std::fs::write(&cfg, "seed = 4\nvoters = 30\nunits = 5\n").unwrap();
    let out = tmp.path().join("g");
    let o = ebisg(&["gen-synth", "--config", s(&cfg), "--out", s(&out), "--voters", "20"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let voters = std::fs::read_to_string(out.join("voters.csv")).unwrap();
    assert_eq!(voters.lines().count(), 21);
    assert_eq!(manifest(&out)["seed"], 4);
}

#[test]
fn small_pipeline_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(gen_synth(&data, "3").status.code(), Some(0));
    let d = |f: &str| data.join(f).to_str().unwrap().to_string();

    let emb = tmp.path().join("emb");
    let o = ebisg(&["embed", "--out", s(&emb), "--voters", &d("voters.csv"), "--dim", "32", "--ngram-seed", "9"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let models = tmp.path().join("models");
    for (variant, src) in [("surname", "--table"), ("firstname", "--table"), ("fullname", "--voters")] {
        let input = match variant {
            "surname" => d("surnames.csv"),
            "firstname" => d("firstnames.csv"),
            _ => d("voters_train.csv"),
        };
        let o = ebisg(&[
            "train", "--out", s(&models), "--variant", variant, src, &input, "--embeddings",
            s(&emb.join("embeddings.ebed")), "--hidden", "8", "--epochs", "2",
        ]);
        assert_eq!(o.status.code(), Some(0), "{variant}: {}", stderr(&o));
        assert!(models.join(format!("{variant}.emlp")).exists());
    }

    let eval = tmp.path().join("eval");
    let o = ebisg(&[
        "evaluate",
        "--out",
        s(&eval),
        "--voters",
        &d("voters.csv"),
        "--truth",
        &d("truth.csv"),
        "--income",
        &d("income.csv"),
        "--surnames",
        &d("surnames.csv"),
        "--firstnames",
        &d("firstnames.csv"),
        "--geo",
        &d("geo.csv"),
        "--surname-weights",
        s(&models.join("surname.emlp")),
        "--firstname-weights",
        s(&models.join("firstname.emlp")),
        "--weights",
        s(&models.join("fullname.emlp")),
        "--embeddings",
        s(&emb.join("embeddings.ebed")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["methods"].as_array().unwrap().len(), 5);
    for f in ["brier.csv", "brier_decile.csv", "mae.csv", "coverage.csv", "predictions_fullname-embed.csv"] {
        assert!(eval.join(f).exists(), "missing {f}");
    }
}
