//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Runs without the libtest harness so the lines reach the terminal under a
//! plain `cargo test`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use proptest::prelude::{prop, Just, Strategy};
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use motionfx::checkpoint;
use motionfx::gradcheck::{gradcheck_reduced, TOLERANCE};
use motionfx::model::{build_ensemble, build_model, Architecture, Variant, ENSEMBLE_NETWORKS, FC1_WIDTH, FC2_WIDTH};
use motionfx::numeric::{Matrix, Rng};
use motionfx::skeleton::{
    read_jsonl, write_jsonl, GestureClass, Keypoint, KeypointFrame, SkeletonSequence, JOINT_COUNT, NUM_CLASSES, SEQ_LEN,
};
use motionfx::stabilizer::{hold_fill, stabilize, trajectory_rmse, StabilizerConfig};
use motionfx::synth::{concatenate, generate_all, make_corpus, simulate_degradation, CorpusSpec};
use motionfx::train::{compare_models, evaluate, train, Dataset, TrainConfig};
use motionfx::ts_lstm::{window_positions, TsLstmConfig, TsLstmNetwork};
use motionfx::vfx::{emit_timeline, stream_infer, TriggerConfig, VfxEvent, VfxTimeline, WindowResult};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

// 1. Gradient correctness

fn gradients() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 1..=5 {
        let r = gradcheck_reduced(Variant::ItsLstm, seed, 6).expect("gradcheck");
        checked += r.checked;
        worst = worst.max(r.max_relative_error);
    }
    let t = start.elapsed();
    verdict(
        worst < TOLERANCE && t < Duration::from_secs(60),
        format!(
            "5 seeds, {checked} entries, max relative error {worst:.2e} (< {TOLERANCE:e}), {}",
            secs(t)
        ),
    )
}

// 2. Window structure

/// Independent enumeration: slide from the delay while the window fits.
fn oracle_starts(cfg: &TsLstmConfig) -> Vec<usize> {
    match cfg.stride {
        None => vec![cfg.delay],
        Some(s) => {
            let mut out = Vec::new();
            let mut p = cfg.delay;
            while p + cfg.window <= SEQ_LEN {
                out.push(p);
                p += s;
            }
            out
        }
    }
}

fn windows() -> Verdict {
    let expected_counts = [4, 2, 2, 1, 1, 1, 2];
    let model = build_ensemble(&Rng::new(0));
    let x = Matrix::filled(SEQ_LEN, 36, 0.1);
    let mut problems = Vec::new();
    for (i, cfg) in ENSEMBLE_NETWORKS.iter().enumerate() {
        let starts = window_positions(SEQ_LEN, cfg).expect("window positions");
        let net: &TsLstmNetwork = &model.networks()[i];
        let (_, tape) = net.forward_batch(&[&x]).expect("forward");
        if starts != oracle_starts(cfg) || tape.window_starts() != starts.as_slice() {
            problems.push(format!("net {i}: starts {starts:?}"));
        }
        if starts.len() != expected_counts[i] {
            problems.push(format!("net {i}: {} windows", starts.len()));
        }
        if (3..=5).contains(&i) && cfg.delay + cfg.window != SEQ_LEN {
            problems.push(format!("net {i}: D+W = {}", cfg.delay + cfg.window));
        }
    }
    let counts: Vec<usize> = ENSEMBLE_NETWORKS.iter().map(|c| oracle_starts(c).len()).collect();
    verdict(
        problems.is_empty(),
        format!("counts {counts:?} {}", problems.join("; ")),
    )
}

// 3. Head dimensions

fn head() -> Verdict {
    let model = build_ensemble(&Rng::new(0));
    let shapes: Vec<(usize, usize)> = model.head.iter().map(|d| d.w.shape()).collect();
    let x = Matrix::filled(SEQ_LEN, 36, 0.1);
    let (p, tape) = model.forward_batch(&[&x, &x], None).expect("forward");
    let sum: f64 = p.row(0).iter().sum();
    let ok = model.arch.feature_width() == 1056
        && tape.feature().cols() == 1056
        && shapes == [(1056, FC1_WIDTH), (FC1_WIDTH, FC2_WIDTH), (FC2_WIDTH, NUM_CLASSES)]
        && FC1_WIDTH == 72
        && FC2_WIDTH == 18
        && p.shape() == (2, NUM_CLASSES)
        && (sum - 1.0).abs() < 1e-12;
    verdict(ok, format!("layers {shapes:?}, softmax over {} classes", p.cols()))
}

// 4. Overfit sanity

fn overfit() -> Verdict {
    let start = Instant::now();
    let seqs = generate_all(&CorpusSpec {
        n_per_class: 8,
        noise_sigma: 0.0,
        seed: 4,
        ..CorpusSpec::default()
    })
    .expect("corpus");
    let data = Dataset::from_sequences(&seqs).expect("dataset");
    let cfg = TrainConfig {
        learning_rate: 1e-4,
        dropout: 0.2,
        max_epochs: 300,
        patience: None,
        target_accuracy: Some(1.0),
        seed: 4,
        ..TrainConfig::default()
    };
    let model = build_model(&Architecture::for_variant(Variant::ItsLstm), &Rng::new(4).split("init")).expect("model");
    let (model, hist) = train(model, &data, &data, &cfg).expect("train");
    let acc = evaluate(&model, &data).expect("eval").accuracy;
    let t = start.elapsed();
    verdict(
        data.len() == 32 && acc == 1.0 && hist.len() <= 300 && t < Duration::from_secs(300),
        format!(
            "{} samples, train accuracy {acc:.4} after {} epochs, {}",
            data.len(),
            hist.len(),
            secs(t)
        ),
    )
}

// 5. Synthetic-corpus recognition

fn recognition() -> Verdict {
    let start = Instant::now();
    let (train_seqs, test_seqs) = make_corpus(&CorpusSpec::default()).expect("corpus");
    let train_set = Dataset::from_sequences(&train_seqs).expect("train set");
    let test_set = Dataset::from_sequences(&test_seqs).expect("test set");
    let cfg = TrainConfig {
        max_epochs: 10,
        patience: Some(3),
        ..TrainConfig::default()
    };
    let cmp = compare_models(&train_set, &test_set, &cfg, &[1, 2, 3], &Variant::ALL, |_, _, _| {}).expect("compare");
    let t = start.elapsed();
    print!("{}", cmp.render());
    let its = cmp.row(Variant::ItsLstm).map_or(0.0, |r| r.mean_accuracy);
    let single = cmp.row(Variant::SingleLstm).map_or(1.0, |r| r.mean_accuracy);
    let complete = Variant::ALL
        .iter()
        .all(|&v| cmp.row(v).is_some_and(|r| r.runs.len() == 3));
    verdict(
        train_set.len() == 800
            && test_set.len() == 200
            && complete
            && its >= 0.90
            && its >= single
            && t < Duration::from_secs(30 * 60),
        format!(
            "800/200, 3 seeds, iTS-LSTM mean {its:.4}, single LSTM mean {single:.4}, {}",
            secs(t)
        ),
    )
}

// 6. Stabilizer efficacy

fn stabilizer() -> Verdict {
    let start = Instant::now();
    let cfg = StabilizerConfig::default();
    let mut ratios = Vec::new();
    for seed in [11u64, 12, 13] {
        let corpus = generate_all(&CorpusSpec {
            n_per_class: 25,
            seed,
            ..CorpusSpec::default()
        })
        .expect("corpus");
        let mut rng = Rng::new(seed).split("degrade");
        let (mut raw, mut fixed) = (0.0, 0.0);
        for s in &corpus {
            let d = simulate_degradation(s, 0.1, 0.05, &mut rng).expect("degrade");
            raw += trajectory_rmse(&hold_fill(&d.sequence).expect("hold"), &d.truth).expect("rmse");
            fixed += trajectory_rmse(&stabilize(&d.sequence, &cfg).expect("stabilize"), &d.truth).expect("rmse");
        }
        ratios.push(fixed / raw);
    }
    let t = start.elapsed();
    verdict(
        ratios.iter().all(|&r| r <= 0.5) && t < Duration::from_secs(60),
        format!(
            "3 seeds × 100 sequences, stabilized/unstabilized RMSE {ratios:.3?}, {}",
            secs(t)
        ),
    )
}

// 7. Determinism

fn pipeline_bytes() -> Vec<Vec<u8>> {
    let spec = CorpusSpec {
        n_per_class: 12,
        seed: 7,
        ..CorpusSpec::default()
    };
    let seqs = generate_all(&spec).expect("corpus");
    let mut corpus = Vec::new();
    write_jsonl(&seqs, &mut corpus).expect("jsonl");
    let data = Dataset::from_sequences(&seqs).expect("dataset");
    let cfg = TrainConfig {
        max_epochs: 2,
        batch_size: 8,
        seed: 7,
        ..TrainConfig::default()
    };
    let model = build_model(&Architecture::for_variant(Variant::ItsLstm), &Rng::new(7).split("init")).expect("model");
    let (model, hist) = train(model, &data, &data, &cfg).expect("train");
    let history = serde_json::to_vec(&hist).expect("history");
    let ckpt = checkpoint::to_json(&model).expect("checkpoint").into_bytes();
    let stream = concatenate(&seqs[..6], "determinism").expect("stream");
    let trig = TriggerConfig {
        threshold: 0.3,
        consecutive: 1,
        ..TriggerConfig::default()
    };
    let windows = stream_infer(&stream, &model, &trig).expect("infer");
    let timeline = emit_timeline(&windows, &trig, stream.fps, &stream.id);
    let tl = serde_json::to_vec(&(&windows, &timeline)).expect("timeline");
    vec![corpus, history, ckpt, tl]
}

fn determinism() -> Verdict {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
    let a = pool.install(pipeline_bytes);
    let b = pool.install(pipeline_bytes);
    let names = ["corpus", "history", "checkpoint", "timeline"];
    let differing: Vec<&str> = names
        .iter()
        .zip(a.iter().zip(&b))
        .filter(|(_, (x, y))| x != y)
        .map(|(n, _)| *n)
        .collect();
    let sizes: Vec<usize> = a.iter().map(Vec::len).collect();
    verdict(
        differing.is_empty(),
        format!("two single-thread runs, artifact bytes {sizes:?}, differing {differing:?}"),
    )
}

// 8. Round-trip laws

fn keypoint() -> impl Strategy<Value = Keypoint> {
    prop::bool::weighted(0.15).prop_flat_map(|missing| {
        if missing {
            Just(Keypoint::missing()).boxed()
        } else {
            (-0.5f64..1.5, -0.5f64..1.5, 0.0f64..=1.0)
                .prop_map(|(x, y, c)| Keypoint::observed(x, y, c))
                .boxed()
        }
    })
}

fn frame() -> impl Strategy<Value = KeypointFrame> {
    prop::collection::vec(keypoint(), JOINT_COUNT).prop_map(|v| KeypointFrame {
        kp: v.try_into().expect("18 joints"),
    })
}

fn sequence() -> impl Strategy<Value = SkeletonSequence> {
    (
        "[a-z0-9_-]{1,12}",
        prop::option::of(0..NUM_CLASSES),
        0.5f64..240.0,
        prop::collection::vec(frame(), 1..40),
    )
        .prop_map(|(id, label, fps, frames)| SkeletonSequence { id, label, fps, frames })
}

fn timeline() -> impl Strategy<Value = VfxTimeline> {
    let event = (0.0f64..5.0, 0usize..3, 0.0f64..=1.0, "[a-z_]{1,16}", 0..JOINT_COUNT);
    ("[a-z0-9-]{0,10}", 1.0f64..120.0, prop::collection::vec(event, 0..20)).prop_map(|(stream_id, fps, raw)| {
        let mut t = 0.0;
        let events = raw
            .into_iter()
            .map(|(dt, a, confidence, effect, anchor_joint)| {
                t += dt;
                VfxEvent {
                    t_start_s: t,
                    action: GestureClass::ALL[a].name().to_string(),
                    confidence,
                    effect,
                    anchor_joint,
                }
            })
            .collect();
        VfxTimeline { stream_id, fps, events }
    })
}

fn round_trips() -> Verdict {
    const CASES: u32 = 100;
    let runner = || {
        TestRunner::new(Config {
            cases: CASES,
            failure_persistence: None,
            ..Config::default()
        })
    };
    let mut failures = Vec::new();

    let corpus = runner().run(&prop::collection::vec(sequence(), 1..6), |seqs| {
        let mut buf = Vec::new();
        write_jsonl(&seqs, &mut buf).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let back = read_jsonl(buf.as_slice()).map_err(|e| TestCaseError::fail(e.to_string()))?;
        if back != seqs {
            return Err(TestCaseError::fail("corpus differs after reload"));
        }
        Ok(())
    });
    if let Err(e) = corpus {
        failures.push(format!("corpus: {e}"));
    }

    let variants = prop::sample::select(Variant::ALL.to_vec());
    let ckpt = runner().run(&(variants, 1usize..6, prop::num::u64::ANY), |(v, h, seed)| {
        let model = build_model(&Architecture::reduced(v, h), &Rng::new(seed))
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let text = checkpoint::to_json(&model).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let back = checkpoint::from_json(&text).map_err(|e| TestCaseError::fail(e.to_string()))?;
        if back != model {
            return Err(TestCaseError::fail("checkpoint differs after reload"));
        }
        Ok(())
    });
    if let Err(e) = ckpt {
        failures.push(format!("checkpoint: {e}"));
    }

    let tl = runner().run(&timeline(), |tl| {
        let text = tl.to_json().map_err(|e| TestCaseError::fail(e.to_string()))?;
        let back = VfxTimeline::from_json(&text).map_err(|e| TestCaseError::fail(e.to_string()))?;
        if back != tl {
            return Err(TestCaseError::fail("timeline differs after reload"));
        }
        Ok(())
    });
    if let Err(e) = tl {
        failures.push(format!("timeline: {e}"));
    }

    verdict(
        failures.is_empty(),
        format!(
            "{CASES} cases each for corpus, checkpoint and timeline {}",
            failures.join("; ")
        ),
    )
}

// 9. Trigger logic

const FPS: f64 = 30.0;

fn stream_case() -> impl Strategy<Value = (TriggerConfig, Vec<WindowResult>)> {
    let cfg =
        (1usize..12, 0.5f64..0.99, 1usize..5, 0usize..60).prop_map(|(hop, threshold, consecutive, refractory)| {
            TriggerConfig {
                hop,
                threshold,
                consecutive,
                refractory_frames: refractory,
                ..TriggerConfig::default()
            }
        });
    let window = (0..NUM_CLASSES, prop::bool::weighted(0.7), 0.0f64..=1.0);
    (cfg, prop::collection::vec(window, 0..80)).prop_map(|(cfg, raw)| {
        let results = raw
            .into_iter()
            .enumerate()
            .map(|(k, (c, confident, u))| {
                let start = k * cfg.hop;
                let end = start + SEQ_LEN - 1;
                WindowResult {
                    start_frame: start,
                    end_frame: end,
                    time_s: end as f64 / FPS,
                    class: GestureClass::ALL[c],
                    confidence: if confident { 0.8 + 0.2 * u } else { u },
                }
            })
            .collect();
        (cfg, results)
    })
}

fn check_trigger(cfg: &TriggerConfig, results: &[WindowResult]) -> Result<(), TestCaseError> {
    let tl = emit_timeline(results, cfg, FPS, "prop");
    let mut last: [Option<usize>; NUM_CLASSES] = [None; NUM_CLASSES];
    for e in &tl.events {
        let class = GestureClass::from_name(&e.action).ok_or_else(|| TestCaseError::fail("unknown action"))?;
        if class == GestureClass::Idle {
            return Err(TestCaseError::fail("idle fired"));
        }
        if e.confidence < cfg.threshold {
            return Err(TestCaseError::fail(format!(
                "event at {} below threshold",
                e.confidence
            )));
        }
        let frame = (e.t_start_s * FPS).round() as usize;
        if let Some(prev) = last[class.index()] {
            if frame - prev < cfg.refractory_frames {
                return Err(TestCaseError::fail(format!(
                    "{} refired after {} frames",
                    e.action,
                    frame - prev
                )));
            }
        }
        last[class.index()] = Some(frame);
    }
    let idle: Vec<WindowResult> = results
        .iter()
        .map(|w| WindowResult {
            class: GestureClass::Idle,
            ..*w
        })
        .collect();
    if !emit_timeline(&idle, cfg, FPS, "idle").events.is_empty() {
        return Err(TestCaseError::fail("idle stream fired"));
    }
    Ok(())
}

fn triggers() -> Verdict {
    const CASES: u32 = 10_000;
    let mut runner = TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    });
    let result = runner.run(&stream_case(), |(cfg, results)| check_trigger(&cfg, &results));
    let detail = match &result {
        Ok(()) => String::new(),
        Err(e) => e.to_string(),
    };
    verdict(
        result.is_ok(),
        format!("{CASES} random window streams: refractory, threshold, idle {detail}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("gradient correctness", gradients),
        ("window structure", windows),
        ("head dimensions", head),
        ("overfit sanity", overfit),
        ("synthetic-corpus recognition", recognition),
        ("stabilizer efficacy", stabilizer),
        ("determinism", determinism),
        ("round-trip laws", round_trips),
        ("trigger logic", triggers),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| f == &n.to_string() || name.contains(f.as_str())) {
            continue;
        }
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.passed {
            failed += 1;
        }
        println!(
            "criterion {n} {name}: {} ({})",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail.trim_end()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
