use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vsp_core::metrics::validate_report;

const PROBE_CONFIG: &str = "\
[train]
epochs = 150
patience = 150
learning_rate = 0.05

[network]
resolution = 32
stem_width = 8
widths = 8, 16
blocks_per_stage = 1

[augment]
color_jitter = false
translate_scale = false
homography = false
perlin = false
blur = false
noise = false
gain_contrast = false
patch_dropout = false
";

fn vsp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vsp"))
        .args(args)
        .env_remove("VSP_THREADS")
        .output()
        .expect("spawn vsp")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn probe_grid(dir: &Path) -> PathBuf {
    let out = dir.join("probe");
    let r = vsp(&[
        "generate", "--out", s(&out), "--az-step", "90", "--el-step", "90", "--lighting", "1", "--resolution", "32",
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    out
}

fn trained(dir: &Path) -> (PathBuf, PathBuf) {
    let data = probe_grid(dir);
    let cfg = dir.join("probe.ini");
    fs::write(&cfg, PROBE_CONFIG).unwrap();
    let run = dir.join("run");
    let r = vsp(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    (data, run)
}

#[test]
fn every_subcommand_help_lists_defaults() {
    for sub in [
        vec!["generate"],
        vec!["trajectory"],
        vec!["augment", "preview"],
        vec!["train"],
        vec!["eval"],
        vec!["explain"],
    ] {
        let mut args = sub.clone();
        args.push("--help");
        let r = vsp(&args);
        assert_eq!(code(&r), 0);
        let text = String::from_utf8(r.stdout).unwrap();
        assert!(text.contains("--threads"), "{sub:?}");
        assert!(text.contains("[default: 0]"), "{sub:?}");
    }
    let text = String::from_utf8(vsp(&["generate", "--help"]).stdout).unwrap();
    for d in ["[default: 10]", "[default: 21]", "[default: visible]", "[default: 128]"] {
        assert!(text.contains(d), "{d} missing from\n{text}");
    }
    let text = String::from_utf8(vsp(&["trajectory", "--help"]).stdout).unwrap();
    for d in ["[default: 0.6]", "[default: 1174]", "[default: thermal]"] {
        assert!(text.contains(d), "{d} missing from\n{text}");
    }
}

#[test]
fn generate_probe_set_and_bad_step() {
    let dir = tempfile::tempdir().unwrap();
    let data = probe_grid(dir.path());
    let manifest = fs::read_to_string(data.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 8);
    assert!(fs::read_to_string(data.join("config.ini")).unwrap().starts_with("[scene]"));

    let r = vsp(&["generate", "--out", s(&dir.path().join("bad")), "--az-step", "7"]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("--az-step"), "{}", stderr(&r));
}

#[test]
fn trajectory_frames_and_missing_out() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj");
    let r = vsp(&["trajectory", "--out", s(&out), "--frames", "1", "--resolution", "32"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert_eq!(fs::read_to_string(out.join("manifest.jsonl")).unwrap().lines().count(), 1);
    assert_eq!(code(&vsp(&["trajectory", "--frames", "1"])), 2);
    assert_eq!(code(&vsp(&["trajectory", "--out", s(&out), "--frames", "0"])), 2);
}

#[test]
fn train_eval_explain_on_the_probe() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = trained(dir.path());
    for f in ["checkpoint.vsp", "metrics.csv", "config.ini"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    assert!(last.ends_with(",1.000000,1.000000"), "{last}");
    // the echo parses back to the same run config
    let echo = vsp_core::config::RunConfig::load(&run.join("config.ini")).unwrap();
    assert_eq!(echo, vsp_core::config::RunConfig::parse(PROBE_CONFIG).unwrap());

    let report = dir.path().join("eval/report.json");
    let r = vsp(&[
        "eval", "--model", s(&run.join("checkpoint.vsp")), "--data", s(&data), "--report", s(&report),
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    validate_report(&v).unwrap();
    assert_eq!(v["heads"]["azimuth"]["accuracy"].as_f64(), Some(1.0));
    assert_eq!(v["heads"]["elevation"]["accuracy"].as_f64(), Some(1.0));
    assert_eq!(v["angular_error"]["mean"].as_f64(), Some(0.0));
    for p in ["confusion_azimuth.png", "bins_azimuth.png", "confusion_elevation.png", "bins_elevation.png"] {
        assert!(dir.path().join("eval").join(p).is_file(), "{p}");
    }

    let overlay = dir.path().join("explain/both.png");
    let csv = dir.path().join("explain/map.csv");
    let r = vsp(&[
        "explain", "--model", s(&run.join("checkpoint.vsp")), "--image", s(&data.join("img_00003.png")),
        "--head", "both", "--out", s(&overlay), "--match", "--csv", s(&csv),
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let img = vsp_core::image::Image::load_png(&overlay).unwrap();
    assert_eq!((img.width(), img.height()), (64, 32));
    let grid = fs::read_to_string(&csv).unwrap();
    assert_eq!(grid.lines().count(), 32);
    assert!(grid.lines().all(|l| l.split(',').count() == 32));

    let r = vsp(&[
        "explain", "--model", s(&run.join("checkpoint.vsp")), "--image", s(&data.join("img_00003.png")),
        "--head", "sideways", "--out", s(&overlay),
    ]);
    assert_eq!(code(&r), 2);
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (_, run_a) = trained(a.path());
    let (_, run_b) = trained(b.path());
    for f in ["metrics.csv", "checkpoint.vsp", "config.ini"] {
        assert_eq!(fs::read(run_a.join(f)).unwrap(), fs::read(run_b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn checkpoint_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = probe_grid(dir.path());
    let report = dir.path().join("r.json");
    let missing = dir.path().join("missing.vsp");
    let r = vsp(&["eval", "--model", s(&missing), "--data", s(&data), "--report", s(&report)]);
    assert_eq!(code(&r), 3);
    let junk = dir.path().join("junk.vsp");
    fs::write(&junk, b"VSPC\x01\x00\x00\x00garbage").unwrap();
    let r = vsp(&["eval", "--model", s(&junk), "--data", s(&data), "--report", s(&report)]);
    assert_eq!(code(&r), 3);
    assert!(!report.exists());
}

#[test]
fn empty_cells_exit_2_and_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let data = probe_grid(dir.path());
    let manifest = data.join("manifest.jsonl");
    let text = fs::read_to_string(&manifest).unwrap();
    let kept: Vec<&str> = text.lines().skip(1).collect();
    fs::write(&manifest, kept.join("\n")).unwrap();
    let cfg = dir.path().join("probe.ini");
    fs::write(&cfg, PROBE_CONFIG).unwrap();
    let r = vsp(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&dir.path().join("run"))]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("class cells without samples: (0, 4)"), "{}", stderr(&r));
}

#[test]
fn config_errors_exit_2_and_blowups_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = probe_grid(dir.path());
    let cfg = dir.path().join("typo.ini");
    fs::write(&cfg, "[train]\nepochz = 3\n").unwrap();
    let r = vsp(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&dir.path().join("a"))]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("epochz"));

    let r = vsp(&[
        "train", "--config", s(&dir.path().join("absent.ini")), "--data", s(&data), "--out", s(&dir.path().join("b")),
    ]);
    assert_eq!(code(&r), 3);

    let cfg = dir.path().join("boom.ini");
    fs::write(&cfg, PROBE_CONFIG.replace("learning_rate = 0.05", "learning_rate = 1e9")).unwrap();
    let r = vsp(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&dir.path().join("c"))]);
    assert_eq!(code(&r), 4, "{}", stderr(&r));
}

#[test]
fn augment_preview_writes_a_montage() {
    let dir = tempfile::tempdir().unwrap();
    let data = probe_grid(dir.path());
    let out = dir.path().join("sheet.png");
    let r = vsp(&[
        "augment", "preview", "--data", s(&data), "--out", s(&out), "--rows", "3", "--variants", "4",
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let img = vsp_core::image::Image::load_png(&out).unwrap();
    assert_eq!((img.width(), img.height()), (5 * 32, 3 * 32));
    let r = vsp(&["augment", "preview", "--data", s(&data), "--out", s(&out), "--channel", "purple"]);
    assert_eq!(code(&r), 2);
}
