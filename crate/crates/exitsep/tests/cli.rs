use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use exitsep::audio::{read_raw, read_wav};
use exitsep::report::parse_report;
use exitsep::separate::read_traces;

const CONFIG: &str = r#"
seed = 11

[data]
dir = "data"
train_count = 6
valid_count = 2
test_count = 4
duration_s = 1.0
channels = 2
test_overlaps = [0.0, 0.4]

[model]
layers = 3
heads = 2
d_model = 16
ffn_dim = 32

[train]
batch = 2
chunk_frames = 32
warmup_steps = 3
total_steps = 10

[inference]
window_frames = 32
hop_frames = 16
taus = [0.0, inf]

[output]
dir = "run"
"#;

fn exitsep(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exitsep")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = exitsep(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn synth_is_reproducible() {
    let w = workspace();
    let d = w.path();
    ok(d, &["synth", "--config", "c.toml", "--split", "test", "--out", "a"]);
    ok(d, &["synth", "--config", "c.toml", "--split", "test", "--out", "b"]);
    for name in ["manifest.jsonl", "scene_00003.mix.f64", "scene_00003.ref.f64"] {
        assert_eq!(fs::read(d.join("a").join(name)).unwrap(), fs::read(d.join("b").join(name)).unwrap());
    }
    let mix = read_raw(&d.join("a/scene_00000.mix.f64")).unwrap();
    assert_eq!(mix.channels.len(), 2);
    assert_eq!(mix.len(), 16000);
}

#[test]
fn synth_edge_cases() {
    let w = workspace();
    let d = w.path();
    ok(d, &["synth", "--config", "c.toml", "--split", "test", "--out", "empty", "--count", "0"]);
    assert_eq!(fs::read(d.join("empty/manifest.jsonl")).unwrap().len(), 0);

    let out = exitsep(d, &["synth", "--config", "c.toml", "--overlaps", "0.2,1.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--overlaps"));

    fs::write(d.join("bad.toml"), "[data]\ntest_overlaps = [1.5]\n").unwrap();
    let out = exitsep(d, &["synth", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.test_overlaps"));
}

#[test]
fn usage_and_missing_data_exit_codes() {
    let w = workspace();
    let d = w.path();
    assert_eq!(exitsep(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(exitsep(d, &["--help"]).status.code(), Some(0));
    let out = exitsep(d, &["train", "--config", "c.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("synth"));
}

#[test]
fn train_resume_separate_and_sweep() {
    let w = workspace();
    let d = w.path();
    ok(d, &["synth", "--config", "c.toml"]);
    ok(d, &["train", "--config", "c.toml"]);
    let log = fs::read_to_string(d.join("run/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 11);
    assert!(log.starts_with("step,lr,L1,L2,L3,weighted"));

    ok(d, &["train", "--config", "c.toml", "--steps", "14", "--resume", "run/last.ckpt"]);
    let log = fs::read_to_string(d.join("run/train_log.csv")).unwrap();
    let steps: Vec<u64> = log.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(steps, (1..=14).collect::<Vec<_>>());

    let input = "data/test/scene_00001.mix.f64";
    let len = read_raw(&d.join(input)).unwrap().len();
    for (tau, layer) in [("0", 3), ("1e9", 2)] {
        let out = format!("sep_{tau}");
        ok(d, &["separate", "--config", "c.toml", "--checkpoint", "run/best.ckpt", "--input", input, "--out", &out, "--tau", tau]);
        for s in 0..3 {
            let a = read_wav(&d.join(&out).join(format!("stream_{s}.wav"))).unwrap();
            assert_eq!(a.len(), len);
        }
        let traces = read_traces(&d.join(&out).join("traces.jsonl")).unwrap();
        assert!(!traces.is_empty());
        assert!(traces.iter().all(|t| t.exit_layer == layer));
    }

    ok(d, &["sweep", "--config", "c.toml", "--checkpoint", "run/best.ckpt", "--out", "rep"]);
    let report = parse_report(&d.join("rep")).unwrap();
    assert_eq!(report.layers, 3);
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.rows[0].avg_exit_layer, 3.0);
    assert_eq!(report.rows[1].avg_exit_layer, 2.0);
    assert_eq!(report.rows[0].buckets.iter().map(|b| b.overlap).collect::<Vec<_>>(), [0, 4]);
    assert!(report.rows.iter().all(|r| r.speedup.is_none()));
    assert!(d.join("rep/exit_by_overlap.png").exists());
}
