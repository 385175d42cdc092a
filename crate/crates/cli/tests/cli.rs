use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[corpus]
clips_per_class = 10
duration_s = 0.5

[protocol]
windows_per_clip = 4
kfold_k = 2
timing_runs = 1

[train]
max_epochs = 2
patience = 2

[sweeps]
rooms = [{ size = [20.0, 10.0, 20.0] }]
room_image_order = 1
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sonohazard"))
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin().args(args).arg(config).arg("--out").arg(out).output().unwrap()
}

fn setup() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("out");
    (dir, cfg, out)
}

fn count(dir: &Path, ext: &str) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == ext))
        .count()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "status {:?}: {}", o.status, String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(bin().output().unwrap().status.code(), Some(1));
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn config_errors_exit_two() {
    let (dir, cfg, out) = setup();
    let missing = dir.path().join("absent.toml");
    assert_eq!(run(&["synth"], &missing, &out).status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[corpus]\nclips_per_class = \"many\"\n").unwrap();
    assert_eq!(run(&["synth"], &bad, &out).status.code(), Some(2));
    fs::write(&bad, "[corpus]\nunknown_key = 1\n").unwrap();
    assert_eq!(run(&["synth"], &bad, &out).status.code(), Some(2));
    let o = bin().args(["synth"]).arg(&cfg).args(["--out"]).arg(&out).args(["--set", "corpus.snr_db=nan"]).output();
    assert_eq!(o.unwrap().status.code(), Some(2));
    assert!(!out.join("synth").exists());
}

#[test]
fn missing_inputs_exit_three() {
    let (_dir, cfg, out) = setup();
    for cmd in ["eval", "sweep-snr", "time", "render", "beamform", "features"] {
        let o = run(&[cmd], &cfg, &out);
        assert_eq!(o.status.code(), Some(3), "{cmd}");
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn signal_chain_writes_every_stage() {
    let (dir, cfg, out) = setup();
    ok(&run(&["synth"], &cfg, &out));
    assert_eq!(count(&out.join("synth"), "wav"), 50);
    assert_eq!(count(&out.join("synth"), "json"), 51);
    let clips = fs::read_to_string(out.join("synth/clips.csv")).unwrap();
    assert_eq!(clips.lines().count(), 51);
    assert!(clips.starts_with("clip,class,seed\n"));

    ok(&run(&["render"], &cfg, &out));
    assert_eq!(count(&out.join("render"), "wav"), 50);
    ok(&run(&["beamform"], &cfg, &out));
    assert_eq!(count(&out.join("beamform"), "wav"), 50);
    ok(&run(&["features"], &cfg, &out));
    assert_eq!(count(&out.join("features"), "spec"), 50);
    assert_eq!(count(&out.join("features"), "win"), 50);
    let index = fs::read_to_string(out.join("features/features.csv")).unwrap();
    // 0.5 s: 372 frames, (372 - 24) / 8 + 1 = 44 windows.
    assert!(index.lines().nth(1).unwrap().ends_with(",372,150,44"), "{index}");

    let det = dir.path().join("detections.csv");
    fs::write(&det, "px,py,class\n320,240,gas_leak\n100,200,corona\n").unwrap();
    let o = bin().arg("beamform").arg(&cfg).arg("--out").arg(&out).arg("--detections").arg(&det).output().unwrap();
    ok(&o);
    assert_eq!(count(&out.join("beamform"), "wav"), 50 + 100);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("features/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "features");
    assert_eq!(manifest["artifacts"].as_object().unwrap().len(), 101);
}

#[test]
fn train_then_downstream_commands() {
    let (_dir, cfg, out) = setup();
    let s = ok(&run(&["train"], &cfg, &out));
    assert!(s.contains("parameters"));
    for f in ["weights.bin", "history.csv", "split.csv", "manifest.json"] {
        assert!(out.join("train").join(f).is_file(), "{f}");
    }
    let split = fs::read_to_string(out.join("train/split.csv")).unwrap();
    assert_eq!(split.lines().filter(|l| l.ends_with(",test")).count(), 15);

    ok(&run(&["eval"], &cfg, &out));
    let metrics = fs::read_to_string(out.join("eval/metrics.csv")).unwrap();
    assert!(metrics.starts_with("class,precision,recall,f1,support,predicted,undefined\n"));

    ok(&run(&["sweep-snr"], &cfg, &out));
    let snr = fs::read_to_string(out.join("sweep-snr/snr.csv")).unwrap();
    assert_eq!(snr.lines().count(), 10);

    ok(&run(&["sweep-room"], &cfg, &out));
    let rooms = fs::read_to_string(out.join("sweep-room/rooms.csv")).unwrap();
    let names: Vec<&str> = rooms.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["anechoic", "20x10x20", "20x10x20-absorbing"]);

    ok(&run(&["time"], &cfg, &out));
    assert_eq!(fs::read_to_string(out.join("time/timing.csv")).unwrap().lines().count(), 2);

    // Weights from a different architecture are refused.
    let o = bin().arg("eval").arg(&cfg).arg("--out").arg(&out).args(["--set", "model.mlp_hidden=9"]).output();
    assert_eq!(o.unwrap().status.code(), Some(2));
}
