//! Behavior of the binary: exit codes, artifact layout, and determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use specxai::data::smap::read_smap;
use specxai::net::{load_model, LayerSpec};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_specxai")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("SPECXAI_JOBS")
        .output()
        .expect("binary spawns")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// One cheap checkpoint shared by the read-only tests: a single epoch via a
/// zero cap.
fn fixture_model() -> &'static Path {
    static FIXTURE: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    let (_, path) = FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let out = dir.path().join("model");
        let result = run(&[
            "train",
            "--recipe",
            "raster-32",
            "--beta",
            "inf",
            "--cap",
            "0.0",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
            "--deterministic",
        ]);
        assert_eq!(code(&result), 0, "fixture train failed: {}", stderr(&result));
        (dir, out)
    });
    path
}

#[test]
fn unknown_method_is_usage_error() {
    let out = run(&[
        "explain",
        "--model",
        "/nonexistent.spxm",
        "--data",
        "recipe:raster-32",
        "--method",
        "sobel",
        "--n",
        "1",
        "--out",
        "/tmp/unused",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("sobel"));
}

#[test]
fn unknown_suite_is_usage_error() {
    let out = run(&["kernellab", "--suite", "zeta", "--out", "/tmp/unused"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("zeta"));
}

#[test]
fn unknown_recipe_is_usage_error() {
    let out = run(&["train", "--recipe", "imagenet", "--beta", "1", "--out", "/tmp/unused"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("imagenet"));
}

#[test]
fn missing_flags_are_usage_errors() {
    assert_eq!(code(&run(&["explain"])), 1);
    assert_eq!(code(&run(&["nonsense"])), 1);
}

#[test]
fn missing_map_dir_is_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out_csv = tmp.path().join("ef.csv");
    let out = run(&["ef", "--maps", "/nonexistent-dir", "--out", out_csv.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn empty_map_dir_is_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let maps = tmp.path().join("maps");
    std::fs::create_dir(&maps).unwrap();
    let out_csv = tmp.path().join("ef.csv");
    let out = run(&[
        "ef",
        "--maps",
        maps.to_str().unwrap(),
        "--out",
        out_csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("no .smap files"));
}

#[test]
fn zero_cap_trains_one_epoch_and_relu_config_round_trips() {
    let dir = fixture_model();
    let history = std::fs::read_to_string(dir.join("history.csv")).unwrap();
    let rows: Vec<&str> = history.lines().collect();
    assert_eq!(rows.len(), 2, "header plus exactly one row: {history}");
    assert!(rows[0].starts_with("step,"));

    let (cfg, _) = load_model(&dir.join("model.spxm")).unwrap();
    assert!(cfg
        .layers
        .iter()
        .any(|l| matches!(l, LayerSpec::SPActivation { beta } if beta.is_infinite())));
    assert!(dir.join("run-config.txt").exists());
}

#[test]
fn explain_writes_maps_and_manifest() {
    let model = fixture_model().join("model.spxm");
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("maps");
    let out = run(&[
        "explain",
        "--model",
        model.to_str().unwrap(),
        "--data",
        "recipe:raster-32",
        "--method",
        "gradcam",
        "--n",
        "2",
        "--seed",
        "3",
        "--out",
        out_dir.to_str().unwrap(),
        "--deterministic",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let (map, method_id, seed) = read_smap(&out_dir.join("map-00000.smap")).unwrap();
    assert_eq!(map.shape(), &[32, 32]);
    assert_eq!(method_id, 4);
    assert_eq!(seed, 3);
    let (_, _, seed1) = read_smap(&out_dir.join("map-00001.smap")).unwrap();
    assert_eq!(seed1, 4, "each map gets its own seed");

    let manifest = std::fs::read_to_string(out_dir.join("manifest.csv")).unwrap();
    let rows: Vec<&str> = manifest.lines().collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0], "index,file,method,class,seed");
    assert!(rows[1].starts_with("0,map-00000.smap,gradcam,"));
}

#[test]
fn model_and_data_sizes_must_agree() {
    let model = fixture_model().join("model.spxm");
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "explain",
        "--model",
        model.to_str().unwrap(),
        "--data",
        "recipe:raster-28",
        "--method",
        "vanilla",
        "--n",
        "1",
        "--out",
        tmp.path().join("maps").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn deterministic_reruns_are_byte_identical() {
    let model = fixture_model().join("model.spxm");
    let tmp = tempfile::tempdir().unwrap();
    let maps = tmp.path().join("maps");
    let status = run(&[
        "explain",
        "--model",
        model.to_str().unwrap(),
        "--data",
        "recipe:raster-32",
        "--method",
        "vanilla",
        "--n",
        "2",
        "--out",
        maps.to_str().unwrap(),
        "--deterministic",
    ]);
    assert_eq!(code(&status), 0, "{}", stderr(&status));

    let csv_a = tmp.path().join("a.csv");
    let csv_b = tmp.path().join("b.csv");
    for csv in [&csv_a, &csv_b] {
        let out = run(&[
            "ef",
            "--maps",
            maps.to_str().unwrap(),
            "--out",
            csv.to_str().unwrap(),
            "--deterministic",
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let a = std::fs::read(&csv_a).unwrap();
    let b = std::fs::read(&csv_b).unwrap();
    assert_eq!(a, b);

    // Without the flag the only difference is the leading timestamp line.
    let csv_t = tmp.path().join("t.csv");
    let out = run(&["ef", "--maps", maps.to_str().unwrap(), "--out", csv_t.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let timed = std::fs::read_to_string(&csv_t).unwrap();
    let (first, rest) = timed.split_once('\n').unwrap();
    assert!(first.starts_with("# timestamp: "));
    assert_eq!(rest.as_bytes(), a.as_slice());
}

#[test]
fn jobs_env_overrides_and_validates() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(bin())
        .args(["kernellab", "--suite", "scaling", "--out", tmp.path().join("a").to_str().unwrap()])
        .env("SPECXAI_JOBS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let out = Command::new(bin())
        .args(["kernellab", "--suite", "scaling", "--out", tmp.path().join("b").to_str().unwrap()])
        .env("SPECXAI_JOBS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("SPECXAI_JOBS"));
}

#[test]
fn sweep_single_point_writes_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("sweep");
    let out = run(&[
        "sweep",
        "--betas",
        "inf",
        "--seeds",
        "0",
        "--recipe",
        "raster-32",
        "--out",
        out_dir.to_str().unwrap(),
        "--deterministic",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], "beta,seed,ef,epochs,capped,val_accuracy");
    assert!(rows[1].starts_with("inf,0,"));
    assert!(out_dir.join("beta-inf-seed-0/model.spxm").exists());
    assert!(out_dir.join("beta-inf-seed-0/result.txt").exists());

    let summary = std::fs::read_to_string(out_dir.join("sweep-summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().ends_with("undefined"));
}
