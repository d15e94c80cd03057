use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use serde_json::Value;
use singan_core::imaging::{resize, ImageField};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_singan"))
}

fn toy_path() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/toy.png"))
}

/// Runs `singan --json <args>`, asserting success, and parses stdout.
fn run_json(args: &[&str]) -> Value {
    let out = bin().arg("--json").args(args).output().unwrap();
    assert!(
        out.status.success(),
        "singan {args:?} failed: {}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
    ckpt: PathBuf,
    image: PathBuf,
}

/// A tiny checkpoint trained once through the CLI for the whole file.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let image = dir.path().join("toy25.png");
        resize(&ImageField::load(toy_path()).unwrap(), (25, 25)).unwrap().save(&image).unwrap();
        let ckpt = dir.path().join("ckpt");
        let v = run_json(&["train", s(&image), "-o", s(&ckpt), "--iters", "2", "--min-coarse-dim", "19", "--seed", "3"]);
        assert_eq!(v["num_scales"], 2);
        Fixture { dir, ckpt, image }
    })
}

fn files_of(v: &Value, key: &str) -> Vec<Vec<u8>> {
    v[key].as_array().unwrap().iter().map(|p| std::fs::read(p.as_str().unwrap()).unwrap()).collect()
}

#[test]
fn sample_twice_gives_identical_files() {
    let f = fixture();
    let (a, b) = (f.dir.path().join("sa"), f.dir.path().join("sb"));
    let va = run_json(&["sample", s(&f.ckpt), "--count", "3", "--seed", "7", "-o", s(&a)]);
    let vb = run_json(&["sample", s(&f.ckpt), "--count", "3", "--seed", "7", "-o", s(&b)]);
    assert_eq!(va["digest"], vb["digest"]);
    assert_eq!(files_of(&va, "files").len(), 3);
    assert_eq!(files_of(&va, "files"), files_of(&vb, "files"));
    let vc = run_json(&["sample", s(&f.ckpt), "--count", "3", "--seed", "8", "-o", s(&b)]);
    assert_ne!(va["digest"], vc["digest"]);
}

#[test]
fn sample_at_custom_dims_and_padding() {
    let f = fixture();
    let out = f.dir.path().join("wide");
    let v = run_json(&["sample", s(&f.ckpt), "--width", "50", "--height", "19", "--padding", "noise", "-o", s(&out)]);
    let img = ImageField::load(v["files"][0].as_str().unwrap()).unwrap();
    assert_eq!(img.dims(), (19, 50));
}

#[test]
fn inject_with_scale_mask_and_preset() {
    let f = fixture();
    let out = f.dir.path().join("inj.png");
    let mask = f.dir.path().join("mask.png");
    ImageField::constant(1, 25, 25, 1.0).unwrap().save(&mask).unwrap();
    let v = run_json(&[
        "inject", s(&f.ckpt), s(&f.image), "--scale", "0", "--mask", s(&mask), "--no-noise", "-o", s(&out),
    ]);
    assert_eq!(v["scale"], 0);
    assert_eq!(v["noise"], false);
    assert_eq!(ImageField::load(&out).unwrap().dims(), (25, 25));

    let v = run_json(&["inject", s(&f.ckpt), s(&f.image), "--preset", "Balloons1", "-o", s(&out)]);
    assert_eq!(v["preset"]["injection_scale"], 7);
    assert_eq!(v["preset"]["task"], "paint_to_image");
    assert_eq!(v["scale"], 0, "a 2-scale model can only inject at 0");

    let v = run_json(&["harmonize", s(&f.ckpt), s(&f.image), "--preset", "Tree", "-o", s(&out)]);
    assert_eq!(v["preset"]["task"], "harmonization");
}

#[test]
fn failures_exit_nonzero_with_json_error() {
    let f = fixture();
    let out = bin()
        .args(["--json", "inject", s(&f.ckpt), s(&f.image), "--scale", "1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["error"]["message"].as_str().unwrap().contains("scale"), "{v}");

    let out = bin().args(["inject", s(&f.ckpt), s(&f.image), "--preset", "Tree"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--task"));

    let out = bin().args(["sample", "/nonexistent/ckpt"]).output().unwrap();
    assert!(!out.status.success());
    // Usage errors come from the parser.
    assert_eq!(bin().args(["sample"]).output().unwrap().status.code(), Some(2));
}

#[test]
fn animate_writes_frames_and_gif() {
    let f = fixture();
    let dir = f.dir.path().join("frames");
    let gif = f.dir.path().join("anim.gif");
    let v = run_json(&[
        "animate", s(&f.ckpt), "--alpha", "0.1", "--beta", "0.9", "--start-scale", "1", "--frames", "5", "-o", s(&dir),
        "--gif", s(&gif),
    ]);
    assert_eq!(v["frames"].as_array().unwrap().len(), 5);
    assert!(std::fs::read(&gif).unwrap().starts_with(b"GIF8"));
    let bad = bin()
        .args(["animate", s(&f.ckpt), "--alpha", "1.5", "--beta", "0.5", "--start-scale", "1", "-o", s(&dir)])
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn sifid_and_diversity_report_numbers() {
    let f = fixture();
    let fakes = f.dir.path().join("fakes");
    run_json(&["sample", s(&f.ckpt), "--count", "3", "--seed", "1", "-o", s(&fakes)]);
    let v = run_json(&["sifid", s(&f.image), s(&fakes)]);
    assert_eq!(v["per_image"].as_array().unwrap().len(), 3);
    assert!(v["mean"].as_f64().unwrap() >= 0.0);
    assert!(v["extractor"].as_str().unwrap().starts_with("random-conv-v1"));

    let same = f.dir.path().join("same");
    std::fs::create_dir_all(&same).unwrap();
    std::fs::copy(&f.image, same.join("x.png")).unwrap();
    let v = run_json(&["sifid", s(&f.image), s(&same)]);
    assert!(v["mean"].as_f64().unwrap() <= 1e-6, "{v}");

    let v = run_json(&["diversity", s(&f.ckpt), "--count", "8"]);
    assert!(v["diversity"].as_f64().unwrap() > 0.0);
    assert_eq!(v["start_scale"], 1);
}

#[test]
fn sr_factor_four_quadruples_dims() {
    let dir = tempfile::tempdir().unwrap();
    let lr = dir.path().join("lr.png");
    resize(&ImageField::load(toy_path()).unwrap(), (50, 50)).unwrap().save(&lr).unwrap();
    let out = dir.path().join("sr.png");
    let ckpt = dir.path().join("srckpt");
    let v = run_json(&["sr", s(&lr), "--factor", "4", "--iters", "1", "-o", s(&out), "--save-checkpoint", s(&ckpt)]);
    assert_eq!(v["output_dims"], serde_json::json!([200, 200]));
    assert_eq!(v["rounds"], 5);
    assert_eq!(ImageField::load(&out).unwrap().dims(), (200, 200));
    let manifest: Value = serde_json::from_slice(&std::fs::read(ckpt.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["alpha_rec"], 100.0);
}

#[test]
fn train_sr_mode_echoes_config_and_writes_log() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("c");
    let log = dir.path().join("log.csv");
    let v = run_json(&[
        "train", s(&toy_path()), "-o", s(&ckpt), "--iters", "1", "--min-coarse-dim", "19", "--sr-mode", "--sr-factor", "4",
        "--log", s(&log),
    ]);
    assert!((v["r"].as_f64().unwrap() - 4f64.powf(0.2)).abs() < 1e-9, "{v}");
    let manifest: Value = serde_json::from_slice(&std::fs::read(ckpt.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["alpha_rec"], 100.0);
    assert_eq!(manifest["config"]["mode"], "super_resolution");
    let csv = std::fs::read_to_string(log).unwrap();
    assert!(csv.starts_with("iteration,scale,"));
    assert_eq!(csv.lines().count(), 1 + v["num_scales"].as_u64().unwrap() as usize);
}

#[test]
fn human_output_is_one_line() {
    let f = fixture();
    let out = bin()
        .args(["diversity", s(&f.ckpt), "--count", "2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("diversity "));
}
