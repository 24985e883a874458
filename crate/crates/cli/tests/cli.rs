use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use motionfx::numeric::Rng;
use motionfx::skeleton::{load_jsonl, save_jsonl, GestureClass};
use motionfx::synth::{concatenate, simulate_degradation, synth_raw, GestureSpec};
use motionfx::vfx::read_timeline;
use tempfile::TempDir;

fn motionfx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motionfx"))
        .args(args)
        .env("RAYON_NUM_THREADS", "1")
        .output()
        .expect("spawn motionfx")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn echoed(o: &Output) -> serde_json::Value {
    let line = stderr(o).lines().next().unwrap_or_default().to_string();
    serde_json::from_str(&line).expect("first stderr line is the config echo")
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&motionfx(&["--help"])), 0);
    assert_eq!(code(&motionfx(&["--version"])), 0);
    assert_eq!(code(&motionfx(&["train", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&motionfx(&[])), 1);
    assert_eq!(code(&motionfx(&["fly"])), 1);
    assert_eq!(code(&motionfx(&["synth"])), 1, "missing --out");
    assert_eq!(code(&motionfx(&["synth", "--out", "x", "--n", "many"])), 1);
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "c.jsonl");
    assert_eq!(code(&motionfx(&["synth", "--out", s(&out), "--rhythm-max", "3"])), 1);
    assert_eq!(code(&motionfx(&["synth", "--out", s(&out), "--n", "0"])), 1);
    assert!(!out.exists());
    let o = motionfx(&["train", "--variant", "triple", "--train", "a", "--out", "b"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("triple"));
    assert_eq!(
        code(&motionfx(&["train", "--train", "a", "--out", "b", "--lr", "-1"])),
        1
    );
    assert_eq!(code(&motionfx(&["--threads", "0", "gradcheck"])), 1);
}

#[test]
fn data_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let missing = path(&dir, "missing.jsonl");
    let out = path(&dir, "o.jsonl");
    assert_eq!(
        code(&motionfx(&["stabilize", "--in", s(&missing), "--out", s(&out)])),
        2
    );
    let bad = path(&dir, "bad.jsonl");
    fs::write(&bad, "{\"id\": \"x\", \"label\": 9, \"fps\": 30, \"frames\": []}\n").unwrap();
    let o = motionfx(&["stabilize", "--in", s(&bad), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
    fs::write(&bad, "not json\n").unwrap();
    assert_eq!(code(&motionfx(&["eval", "--model", s(&bad), "--data", s(&bad)])), 2);
}

#[test]
fn synth_writes_whole_corpus_or_split() {
    let dir = TempDir::new().unwrap();
    let all = path(&dir, "all.jsonl");
    let o = motionfx(&["synth", "--n", "250", "--out", s(&all)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&all).unwrap();
    assert_eq!(text.lines().count(), 1000);
    let seqs = load_jsonl(&all).unwrap();
    for c in 0..4 {
        assert_eq!(seqs.iter().filter(|q| q.label == Some(c)).count(), 250);
    }
    assert!(seqs.iter().all(|q| q.is_model_ready()));

    let (tr, te) = (path(&dir, "train.jsonl"), path(&dir, "test.jsonl"));
    let o = motionfx(&[
        "synth",
        "--n",
        "10",
        "--split",
        "0.8",
        "--out",
        s(&tr),
        "--test-out",
        s(&te),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(load_jsonl(&tr).unwrap().len(), 32);
    assert_eq!(load_jsonl(&te).unwrap().len(), 8);
}

#[test]
fn synth_is_seed_deterministic_and_echoes_config() {
    let dir = TempDir::new().unwrap();
    let run = |seed: &str, name: &str| {
        let p = path(&dir, name);
        let o = motionfx(&["--seed", seed, "synth", "--n", "6", "--out", s(&p)]);
        assert_eq!(code(&o), 0);
        (fs::read(&p).unwrap(), o)
    };
    let (a, oa) = run("42", "a.jsonl");
    let (b, _) = run("42", "b.jsonl");
    let (c, _) = run("43", "c.jsonl");
    assert_eq!(a, b);
    assert_ne!(a, c);
    let echo = echoed(&oa);
    assert_eq!(echo["seed"], 42);
    assert_eq!(echo["command"], "synth");
    assert_eq!(echo["config"]["n_per_class"], 6);
    assert_eq!(echo["config"]["noise_sigma"], 0.02);
}

#[test]
fn flags_override_config_file_over_defaults() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "cfg.json");
    fs::write(&cfg, r#"{"seed": 9, "corpus": {"n_per_class": 3, "noise_sigma": 0.0}}"#).unwrap();
    let out = path(&dir, "c.jsonl");
    let o = motionfx(&["--config", s(&cfg), "synth", "--n", "2", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let echo = echoed(&o);
    assert_eq!(echo["seed"], 9);
    assert_eq!(echo["config"]["n_per_class"], 2);
    assert_eq!(echo["config"]["noise_sigma"], 0.0);
    assert_eq!(echo["config"]["amplitude_jitter"], 0.2);
    assert_eq!(load_jsonl(&out).unwrap().len(), 8);

    fs::write(&cfg, r#"{"corpus": {"n_per_clas": 3}}"#).unwrap();
    assert_eq!(code(&motionfx(&["--config", s(&cfg), "synth", "--out", s(&out)])), 1);
    assert_eq!(
        code(&motionfx(&[
            "--config",
            s(&path(&dir, "none.json")),
            "synth",
            "--out",
            s(&out)
        ])),
        1
    );
}

#[test]
fn stabilize_repairs_degraded_sequences() {
    let dir = TempDir::new().unwrap();
    let mut rng = Rng::new(3);
    let seqs: Vec<_> = (0..4)
        .map(|c| {
            let clean = synth_raw(&GestureSpec::new(c, 1.0, c as u64)).unwrap();
            simulate_degradation(&clean, 0.1, 0.05, &mut rng).unwrap().sequence
        })
        .collect();
    assert!(seqs.iter().any(|q| q.missing_count() > 0));
    let (input, out) = (path(&dir, "in.jsonl"), path(&dir, "out.jsonl"));
    save_jsonl(&seqs, &input).unwrap();
    let o = motionfx(&["stabilize", "--in", s(&input), "--out", s(&out), "--alpha", "0.7"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(echoed(&o)["config"]["alpha"], 0.7);
    let fixed = load_jsonl(&out).unwrap();
    assert_eq!(fixed.len(), 4);
    assert!(fixed.iter().all(|q| q.missing_count() == 0));
    assert_eq!(
        code(&motionfx(&[
            "stabilize",
            "--in",
            s(&input),
            "--out",
            s(&out),
            "--alpha",
            "0"
        ])),
        1
    );
}

#[test]
fn gradcheck_reports_error_and_passes() {
    let o = motionfx(&["gradcheck", "--variant", "single", "--runs", "2", "--per-tensor", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(out.lines().filter(|l| l.starts_with("seed ")).count(), 2);
    assert!(out.contains("max relative error"));
}

/// synth → train → eval → predict → timeline on one small model.
#[test]
fn end_to_end_pipeline() {
    let dir = TempDir::new().unwrap();
    let (tr, te) = (path(&dir, "train.jsonl"), path(&dir, "test.jsonl"));
    assert_eq!(
        code(&motionfx(&[
            "synth",
            "--n",
            "10",
            "--out",
            s(&tr),
            "--test-out",
            s(&te)
        ])),
        0
    );

    let (model, log) = (path(&dir, "model.json"), path(&dir, "log.jsonl"));
    let train = |out: &Path, log: &Path| {
        motionfx(&[
            "--seed",
            "5",
            "train",
            "--variant",
            "single",
            "--train",
            s(&tr),
            "--val",
            s(&te),
            "--epochs",
            "2",
            "--out",
            s(out),
            "--log",
            s(log),
        ])
    };
    let o = train(&model, &log);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lines: Vec<serde_json::Value> = fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1]["metrics"]["epoch"], 1);
    assert!(lines[0]["metrics"]["val_loss"].is_number());

    let again = path(&dir, "model2.json");
    assert_eq!(code(&train(&again, &path(&dir, "log2.jsonl"))), 0);
    assert_eq!(fs::read(&model).unwrap(), fs::read(&again).unwrap());

    let o = motionfx(&["eval", "--model", s(&model), "--data", s(&te)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["count"], 8);
    let acc = report["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let preds = path(&dir, "preds.jsonl");
    assert_eq!(
        code(&motionfx(&[
            "predict",
            "--model",
            s(&model),
            "--in",
            s(&te),
            "--out",
            s(&preds)
        ])),
        0
    );
    let preds: Vec<serde_json::Value> = fs::read_to_string(&preds)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(preds.len(), 8);
    let p: f64 = preds[0]["probabilities"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .sum();
    assert!((p - 1.0).abs() < 1e-9);

    // An idle stream of raw-rate clips never produces an event.
    let idle: Vec<_> = (0..4)
        .map(|i| synth_raw(&GestureSpec::new(GestureClass::Idle.index(), 1.0, i)).unwrap())
        .collect();
    let stream = concatenate(&idle, "idle-stream").unwrap();
    let (sp, tl) = (path(&dir, "stream.jsonl"), path(&dir, "timeline.json"));
    save_jsonl(std::slice::from_ref(&stream), &sp).unwrap();
    let o = motionfx(&[
        "timeline",
        "--model",
        s(&model),
        "--in",
        s(&sp),
        "--out",
        s(&tl),
        "--threshold",
        "0.01",
        "--consecutive",
        "1",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let timeline = read_timeline(&tl).unwrap();
    assert_eq!(timeline.stream_id, "idle-stream");
    assert!(timeline.events.iter().all(|e| e.action != "idle"));

    save_jsonl(&[stream.clone(), stream], &sp).unwrap();
    assert_eq!(
        code(&motionfx(&[
            "timeline",
            "--model",
            s(&model),
            "--in",
            s(&sp),
            "--out",
            s(&tl)
        ])),
        2
    );
    assert_eq!(
        code(&motionfx(&[
            "timeline",
            "--model",
            s(&model),
            "--in",
            s(&sp),
            "--out",
            s(&tl),
            "--hop",
            "0"
        ])),
        1
    );
}

#[test]
fn compare_prints_table_and_writes_json() {
    let dir = TempDir::new().unwrap();
    let (tr, te) = (path(&dir, "train.jsonl"), path(&dir, "test.jsonl"));
    assert_eq!(
        code(&motionfx(&[
            "synth",
            "--n",
            "10",
            "--out",
            s(&tr),
            "--test-out",
            s(&te)
        ])),
        0
    );
    let out = path(&dir, "cmp.json");
    let o = motionfx(&[
        "compare",
        "--train",
        s(&tr),
        "--test",
        s(&te),
        "--seeds",
        "1,2",
        "--variants",
        "single,double",
        "--epochs",
        "1",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("94.09") && table.contains("93.12"), "{table}");
    let cmp: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(cmp["rows"].as_array().unwrap().len(), 2);
    assert_eq!(cmp["rows"][0]["runs"].as_array().unwrap().len(), 2);
    assert_eq!(cmp["rows"][0]["reference_reproducible"], false);
}
