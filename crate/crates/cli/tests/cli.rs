use std::path::{Path, PathBuf};
use std::process::Command;

use relunet::scenesim::{generate_dataset, simulate_scene, NoiseKind, Scene, SceneTemplate};
use relunet::signal::{read_wav, write_wav, MultichannelWaveform};

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn relunet(args: &[&str]) -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_relunet"))
        .args(args)
        .output()
        .unwrap();
    Outcome {
        code: out.status.code().unwrap(),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two-channel scenes and a model small enough to train in seconds.
const SMALL: &str = r#"{
  "model": {"num_channels": 2, "reference_index": 1, "encoder_widths": [2, 2, 2, 2, 2, 2]},
  "train": {"batch_size": 2, "learning_rate": 0.001, "validation_interval": 2},
  "simulate": {"num_channels": 2, "reference": 1}
}"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn simulate(dir: &Path, config: &Path, count: &str, seed: &str, out: &str) -> PathBuf {
    let out_dir = dir.join(out);
    let r = relunet(&[
        "simulate",
        "--config",
        s(config),
        "--count",
        count,
        "--seed",
        seed,
        "--out-dir",
        s(&out_dir),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    out_dir.join("manifest.json")
}

#[test]
fn simulate_is_deterministic_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "small.json", SMALL);
    let a = simulate(dir.path(), &config, "8", "1", "a");
    let b = simulate(dir.path(), &config, "8", "1", "b");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let template = SceneTemplate {
        num_channels: 2,
        reference: 1,
        ..Default::default()
    };
    let items = generate_dataset(&[], &template, 8, 1).unwrap();
    for (i, item) in items.iter().enumerate() {
        let back = read_wav(dir.path().join(format!("a/item_{i:04}_noisy.wav"))).unwrap();
        for m in 0..2 {
            for (x, y) in back.channel(m).iter().zip(item.noisy.channel(m)) {
                assert!((x - y).abs() <= 1.0 / 32768.0, "{x} vs {y}");
            }
        }
    }
}

#[test]
fn usage_and_config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(relunet(&["simulate", "--count", "2"]).code, 2);
    assert_eq!(relunet(&["frobnicate"]).code, 2);
    let bad = write_config(dir.path(), "bad.json", r#"{"model": {"widths": [1]}}"#);
    let r = relunet(&[
        "simulate",
        "--config",
        s(&bad),
        "--out-dir",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.starts_with("ERROR code=2"), "{}", r.stderr);
}

#[test]
fn training_is_deterministic_and_writes_history() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "small.json", SMALL);
    let manifest = simulate(dir.path(), &config, "4", "2", "data");
    let mut summaries = Vec::new();
    for name in ["a.ckpt", "b.ckpt"] {
        let out = dir.path().join(name);
        let r = relunet(&[
            "train",
            "--config",
            s(&config),
            "--manifest",
            s(&manifest),
            "--validation",
            s(&manifest),
            "--out",
            s(&out),
            "--steps",
            "4",
        ]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        assert!(r.stderr.contains("INFO event=step step=1 "));
        summaries.push(r.stdout);
    }
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.ckpt"), read("b.ckpt"));
    assert_eq!(read("a.ckpt.json"), read("b.ckpt.json"));
    assert_eq!(read("a.ckpt.history.csv"), read("b.ckpt.history.csv"));
    let history = String::from_utf8(read("a.ckpt.history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("step,train_loss,val_loss"));
    assert_eq!(history.lines().count(), 5);
    assert!(summaries[0].contains("\"steps\":4"));
}

#[test]
fn variants_differ_by_first_layer_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "wide.json",
        r#"{"model": {"num_channels": 2, "reference_index": 1}, "train": {"batch_size": 1},
            "simulate": {"num_channels": 2, "reference": 1}}"#,
    );
    let manifest = simulate(dir.path(), &config, "1", "3", "data");
    let mut counts = Vec::new();
    for variant in ["relunet", "unet"] {
        let out = dir.path().join(format!("{variant}.ckpt"));
        let r = relunet(&[
            "train",
            "--config",
            s(&config),
            "--manifest",
            s(&manifest),
            "--out",
            s(&out),
            "--steps",
            "1",
            "--variant",
            variant,
        ]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        let v: serde_json::Value = serde_json::from_str(r.stdout.trim()).unwrap();
        counts.push(v["parameters"].as_u64().unwrap());
    }
    assert_eq!(counts[0] - counts[1], 384);
}

#[test]
fn enhance_honours_channel_policy() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "six.json",
        r#"{"model": {"encoder_widths": [2, 2, 2, 2, 2, 2]}, "train": {"batch_size": 2}}"#,
    );
    let manifest = simulate(dir.path(), &config, "2", "4", "data");
    let model = dir.path().join("six.ckpt");
    let r = relunet(&[
        "train",
        "--config",
        s(&config),
        "--manifest",
        s(&manifest),
        "--out",
        s(&model),
        "--steps",
        "1",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);

    // 2 s is not a whole number of 1.2 s segments
    let items = generate_dataset(
        &[],
        &SceneTemplate {
            duration: 2.0,
            ..Default::default()
        },
        1,
        9,
    )
    .unwrap();
    let six = dir.path().join("six.wav");
    write_wav(&six, &items[0].noisy).unwrap();
    let mono = dir.path().join("mono.wav");
    write_wav(
        &mono,
        &MultichannelWaveform::mono(items[0].noisy.channel(4).to_vec(), 16000).unwrap(),
    )
    .unwrap();

    let out = dir.path().join("out.wav");
    let r = relunet(&[
        "enhance",
        "--model",
        s(&model),
        "--in",
        s(&six),
        "--out",
        s(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let w = read_wav(&out).unwrap();
    assert_eq!((w.num_channels(), w.len()), (1, 32000));

    let r = relunet(&[
        "enhance",
        "--model",
        s(&model),
        "--in",
        s(&mono),
        "--out",
        s(&out),
    ]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("channel count mismatch"), "{}", r.stderr);

    let replicated = dir.path().join("rep.wav");
    let r = relunet(&[
        "enhance",
        "--model",
        s(&model),
        "--in",
        s(&mono),
        "--out",
        s(&replicated),
        "--channel-policy",
        "replicate",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let w = read_wav(&replicated).unwrap();
    assert_eq!((w.num_channels(), w.len()), (1, 32000));
}

#[test]
fn beamform_passes_noiseless_copies_and_estimates_delays() {
    let dir = tempfile::tempdir().unwrap();
    let clean = relunet::scenesim::speech_like(19200, 16000, 5);
    let copies = MultichannelWaveform::new(vec![clean.clone(), clean.clone()], 16000).unwrap();
    let input = dir.path().join("copies.wav");
    write_wav(&input, &copies).unwrap();
    let out = dir.path().join("bf.wav");
    let r = relunet(&[
        "beamform",
        "--in",
        s(&input),
        "--out",
        s(&out),
        "--delays",
        "0,0",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let y = read_wav(&out).unwrap();
    let x = read_wav(&input).unwrap();
    for i in 1024..19200 - 1024 {
        assert!((y.channel(0)[i] - x.channel(0)[i]).abs() <= 2.0 / 32768.0);
    }

    let scene = simulate_scene(&Scene {
        clean,
        sample_rate: 16000,
        gains: vec![1.0, 0.8],
        delays: vec![0, 5],
        noise_kind: NoiseKind::White,
        noise_scales: Vec::new(),
        snr_db: Some(10.0),
        reference: 0,
        seed: 5,
    })
    .unwrap();
    let delayed = dir.path().join("delayed.wav");
    write_wav(&delayed, &scene.mixture).unwrap();
    let r = relunet(&[
        "beamform",
        "--in",
        s(&delayed),
        "--out",
        s(&out),
        "--method",
        "das",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(
        r.stderr
            .contains("event=delays source=gcc_phat reference=0 tau_samples=0,5"),
        "{}",
        r.stderr
    );

    let r = relunet(&[
        "beamform",
        "--in",
        s(&dir.path().join("missing.wav")),
        "--out",
        s(&out),
    ]);
    assert_eq!(r.code, 1);
}

#[test]
fn evaluate_writes_grouped_report() {
    let dir = tempfile::tempdir().unwrap();
    let x = relunet::scenesim::speech_like(24000, 16000, 6);
    let y: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, v)| v + 0.01 * (i as f64 * 0.37).sin())
        .collect();
    write_wav(
        dir.path().join("ref.wav"),
        &MultichannelWaveform::mono(x, 16000).unwrap(),
    )
    .unwrap();
    write_wav(
        dir.path().join("est.wav"),
        &MultichannelWaveform::mono(y, 16000).unwrap(),
    )
    .unwrap();
    let pairs = write_config(
        dir.path(),
        "pairs.json",
        r#"[{"estimate": "est.wav", "reference": "ref.wav", "condition": "white"},
            {"estimate": "ref.wav", "reference": "est.wav", "condition": "pink"}]"#,
    );
    let out = dir.path().join("report.csv");
    let r = relunet(&[
        "evaluate",
        "--pairs",
        s(&pairs),
        "--metrics",
        "si_sdr,stoi",
        "--out",
        s(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "condition,metric,item_id,value");
    assert_eq!(lines.len(), 1 + 4 + 6);
    assert!(lines[1].starts_with("white,si_sdr,0,"));
    assert!(lines.last().unwrap().starts_with("all,stoi,mean,"));
    let r = relunet(&[
        "evaluate",
        "--pairs",
        s(&pairs),
        "--metrics",
        "pesq",
        "--out",
        s(&out),
    ]);
    assert_eq!(r.code, 2);
}

#[test]
fn spectrogram_of_silence_is_blank() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("zero.wav");
    write_wav(
        &input,
        &MultichannelWaveform::mono(vec![0.0; 19200], 16000).unwrap(),
    )
    .unwrap();
    let prefix = dir.path().join("spec");
    let r = relunet(&["spectrogram", "--in", s(&input), "--out", s(&prefix)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let csv = std::fs::read_to_string(dir.path().join("spec.csv")).unwrap();
    assert_eq!(csv.lines().count(), 512);
    assert!(csv.lines().all(|l| l.split(',').count() == 121));
    let pgm = std::fs::read(dir.path().join("spec.pgm")).unwrap();
    let header = b"P5\n121 512\n255\n";
    assert!(pgm.starts_with(header));
    assert!(pgm[header.len()..].iter().all(|&p| p == 0));
    assert_eq!(pgm.len(), header.len() + 512 * 121);
}

#[test]
fn compare_rows_are_noisy_models_then_mvdr() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "small.json", SMALL);
    let manifest = simulate(dir.path(), &config, "1", "7", "data");
    let model = dir.path().join("tiny.ckpt");
    let r = relunet(&[
        "train",
        "--config",
        s(&config),
        "--manifest",
        s(&manifest),
        "--out",
        s(&model),
        "--steps",
        "1",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let out = dir.path().join("table.csv");
    let r = relunet(&[
        "compare",
        "--config",
        s(&config),
        "--manifest",
        s(&manifest),
        "--models",
        s(&model),
        "--out",
        s(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let table = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "method,item,si_sdr,stoi");
    let methods: Vec<&str> = rows[1..]
        .iter()
        .map(|r| r.split(',').next().unwrap())
        .collect();
    assert_eq!(methods, vec!["noisy", "tiny", "mvdr"]);
    assert!(rows[1..].iter().all(|r| r
        .split(',')
        .skip(2)
        .all(|v| v.parse::<f64>().unwrap().is_finite())));
}
