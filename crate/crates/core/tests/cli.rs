use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn masklab(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_masklab"))
        .args(args)
        .current_dir(cwd)
        .env_remove("MASKLAB_OUT")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn ok(out: Output) -> Output {
    assert_eq!(
        code(&out),
        0,
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn echo(dir: &Path) -> String {
    std::fs::read_to_string(dir.join("resolved_config.txt")).unwrap()
}

/// A small dataset and one trained checkpoint.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(masklab(d, &["collect", "--n", "60", "--height", "16", "--width", "16", "--actions", "3", "--beacon-size", "3", "--out", "data"]));
    ok(masklab(d, &["train", "--dataset", "data", "--epochs", "1", "--seeds", "1,2", "--lr", "1e-3", "--out", "runs"]));
    dir
}

#[test]
fn every_command_runs_and_echoes_its_config() {
    let ws = workspace();
    let d = ws.path();
    for s in ["seed1", "seed2"] {
        assert!(d.join("runs").join(s).join("checkpoint.vmc").is_file());
        assert!(d.join("runs").join(s).join("train_log.csv").is_file());
    }
    ok(masklab(
        d,
        &["evaluate", "--checkpoint", "runs", "--dataset", "data", "--baselines", "--rise-masks", "40", "--limit", "3", "--overlays", "2", "--out", "eval"],
    ));
    for f in ["report.json", "tables.csv", "curves.csv"] {
        assert!(d.join("eval").join(f).is_file(), "{f}");
    }
    let report = std::fs::read_to_string(d.join("eval/report.json")).unwrap();
    for label in ["seed1", "seed2", "baselines"] {
        assert!(report.contains(label), "{label}");
    }
    ok(masklab(d, &["explain", "--checkpoint", "runs/seed1/checkpoint.vmc", "--dataset", "data", "--index", "0", "--out", "ex"]));
    assert!(d.join("ex/0_action2.ppm").is_file());
    ok(masklab(d, &["counterfactual", "--checkpoint", "runs/seed1/checkpoint.vmc", "--dataset", "data", "--index", "0", "--out", "cf"]));
    assert!(d.join("cf/0_counterfactual.json").is_file());
    ok(masklab(d, &["baseline", "--dataset", "data", "--index", "1", "--method", "occlusion", "--out", "bl"]));
    assert!(d.join("bl/1_occlusion.vmt").is_file());
    assert!(d.join("bl/1_occlusion.json").is_file());
    for (dir, section) in [("data", "collect"), ("runs", "train"), ("eval", "evaluate"), ("ex", "explain"), ("cf", "counterfactual"), ("bl", "baseline")] {
        assert!(echo(&d.join(dir)).starts_with(&format!("[{section}]\n")), "{dir}");
    }
}

#[test]
fn exit_codes() {
    let ws = workspace();
    let d = ws.path();
    let cases: [(&[&str], i32); 8] = [
        (&["collect", "--bogus"], 2),
        (&["collect", "--n", "60", "--height", "16", "--width", "16", "--beacon-size", "3", "--out", "data"], 2),
        (&["train", "--dataset", "no-such-dir", "--epochs", "1"], 3),
        (&["explain", "--checkpoint", "runs/seed1/checkpoint.vmc", "--dataset", "data", "--index", "999"], 2),
        (&["explain", "--checkpoint", "runs/seed9/checkpoint.vmc", "--dataset", "data", "--index", "0"], 5),
        (&["evaluate", "--checkpoint", "missing", "--dataset", "data"], 5),
        (&["counterfactual", "--dataset", "data", "--index", "0"], 5),
        (&["train", "--dataset", "data", "--epochs", "1", "--lambda-l2", "3e38", "--out", "nan"], 4),
    ];
    for (args, want) in cases {
        let out = masklab(d, args);
        assert_eq!(code(&out), want, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    std::fs::write(d.join("bad.cfg"), "[train\nepochs = 1\n").unwrap();
    assert_eq!(code(&masklab(d, &["--config", "bad.cfg", "train", "--dataset", "data"])), 2);
    assert_eq!(code(&masklab(d, &["--config", "absent.cfg", "train", "--dataset", "data"])), 2);
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = Command::new(env!("CARGO_BIN_EXE_masklab"))
        .args(["collect", "--n", "20", "--height", "16", "--width", "16", "--beacon-size", "3"])
        .current_dir(d)
        .env("MASKLAB_OUT", d.join("elsewhere"))
        .output()
        .unwrap();
    ok(out);
    assert!(d.join("elsewhere/data/manifest.txt").is_file());
    assert!(!d.join("masklab-out").exists());
    ok(masklab(d, &["collect", "--n", "20", "--height", "16", "--width", "16", "--beacon-size", "3"]));
    assert!(d.join("masklab-out/data/manifest.txt").is_file());
}

#[test]
fn flags_override_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.cfg"), "height = 16\n[collect]\nn = 30\nseed = 5\nwidth = 16\nbeacon_size = 3\n").unwrap();
    ok(masklab(d, &["--config", "run.cfg", "collect", "--n", "25", "--out", "data"]));
    let e = echo(&d.join("data"));
    for line in ["n = 25\n", "seed = 5\n", "height = 16\n", "width = 16\n", "actions = 5\n", "policy = analytic\n"] {
        assert!(e.contains(line), "{line:?} missing from\n{e}");
    }
    let manifest = std::fs::read_to_string(d.join("data/manifest.txt")).unwrap();
    assert!(manifest.contains("count: 25\n"), "{manifest}");
}
