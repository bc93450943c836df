use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bonelayer(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bonelayer"))
        .current_dir(cwd)
        .env_remove("BONELAYER_SEED")
        .args(args)
        .output()
        .unwrap()
}

fn ok(cwd: &Path, args: &[&str]) -> Output {
    let out = bonelayer(cwd, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Phantom with disjoint bones in `dir/ph`, then an overlapped sample in `dir/syn`.
fn sample(dir: &Path) {
    ok(dir, &["phantom", "--side", "96", "--gap", "6", "--seed", "2", "--out-dir", "ph"]);
    ok(
        dir,
        &[
            "synthesize", "--image", "ph/image.png", "--masks", "ph/mask_upper.png", "ph/mask_lower.png",
            "--shift-max", "10", "--seed", "1", "--out-dir", "syn",
        ],
    );
}

#[test]
fn metrics_of_identical_images() {
    let dir = tempfile::tempdir().unwrap();
    sample(dir.path());
    let out = ok(dir.path(), &["metrics", "ph/image.png", "ph/image.png"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["mse"], 0.0);
    assert_eq!(v["ssim"], 1.0);
    assert_eq!(v["psnr"], "inf");
    assert!(text.find("mse").unwrap() < text.find("ssim").unwrap());
    // Stdout-only runs leave no files behind.
    assert!(!dir.path().join("metrics.manifest.json").exists());
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = bonelayer(dir.path(), &["metrics", "absent.png", "other.png"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.png"));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bonelayer(dir.path(), &["separate"]).status.code(), Some(1));
    assert_eq!(bonelayer(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn corrupt_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    sample(dir.path());
    fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
    let out = bonelayer(
        dir.path(),
        &[
            "separate", "--image", "syn/image.png", "--masks", "syn/mask_upper.png", "syn/mask_lower.png",
            "--config", "bad.json", "--out-dir", "sep",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json"));
}

#[test]
fn separate_writes_layers_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    sample(dir.path());
    fs::write(dir.path().join("sep.json"), r#"{"w_tv": 0.01, "max_iterations": 500}"#).unwrap();
    ok(
        dir.path(),
        &[
            "separate", "--image", "syn/image.png", "--masks", "syn/mask_upper.png", "syn/mask_lower.png",
            "--config", "sep.json", "--max-iterations", "800", "--out-dir", "sep",
        ],
    );
    let sep = dir.path().join("sep");
    for name in ["layer_upper.png", "layer_lower.png", "reconstruction.png", "diagnostics.json", "manifest.json"] {
        assert!(sep.join(name).is_file(), "{name} missing");
    }
    let diag = json(&sep.join("diagnostics.json"));
    assert_eq!(diag["converged"], true);
    assert_eq!(diag["k"]["provenance"], "estimated");
    assert!(diag["mse_union"].as_f64().unwrap() < 1e-3);
    let manifest = json(&sep.join("manifest.json"));
    assert_eq!(manifest["command"], "separate");
    assert_eq!(manifest["config"]["separator"]["w_tv"], 0.01);
    assert_eq!(manifest["config"]["separator"]["max_iterations"], 800);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 4);
}

#[test]
fn separate_reports_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    sample(dir.path());
    let out = bonelayer(
        dir.path(),
        &[
            "separate", "--image", "syn/image.png", "--masks", "syn/mask_upper.png", "syn/mask_lower.png",
            "--k", "0.25", "--max-iterations", "1", "--out-dir", "sep",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let diag = json(&dir.path().join("sep/diagnostics.json"));
    assert_eq!(diag["converged"], false);
    assert_eq!(diag["k"]["provenance"], "supplied");
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed_env: &str, out: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_bonelayer"))
            .current_dir(dir.path())
            .env("BONELAYER_SEED", seed_env)
            .args(["phantom", "--side", "64", "--out-dir", out])
            .status()
            .unwrap();
        assert!(status.success());
    };
    run("5", "a");
    ok(dir.path(), &["phantom", "--side", "64", "--seed", "5", "--out-dir", "b"]);
    let a = fs::read(dir.path().join("a/image.png")).unwrap();
    let b = fs::read(dir.path().join("b/image.png")).unwrap();
    assert_eq!(a, b);
    assert_eq!(json(&dir.path().join("a/manifest.json"))["seed"], 5);
}

#[test]
fn reconstruct_from_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    sample(dir.path());
    let k = json(&dir.path().join("syn/meta.json"))["k_used"].as_f64().unwrap().to_string();
    ok(
        dir.path(),
        &[
            "reconstruct", "--layers", "syn/gt_upper.png", "syn/gt_lower.png", "--masks", "syn/mask_upper.png",
            "syn/mask_lower.png", "--k", &k, "--out", "rec.png",
        ],
    );
    assert!(dir.path().join("rec.manifest.json").is_file());
    // Both PNGs are quantized to 16 bits independently.
    let out = ok(dir.path(), &["metrics", "rec.png", "syn/image.png", "--mask", "syn/mask_upper.png"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["mse"].as_f64().unwrap() < 1e-9);

    let out = bonelayer(
        dir.path(),
        &["reconstruct", "--layers", "syn/gt_upper.png", "syn/gt_lower.png", "--masks", "syn/mask_upper.png",
          "syn/mask_lower.png", "--k", "0", "--out", "bad.png"],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn estimate_k_writes_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    sample(dir.path());
    let out = ok(
        dir.path(),
        &["estimate-k", "--image", "syn/image.png", "--masks", "syn/mask_upper.png", "syn/mask_lower.png", "--out", "k.json"],
    );
    let printed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed, json(&dir.path().join("k.json")));
    let k = printed["k"].as_f64().unwrap();
    assert!((k - 0.25).abs() < 0.02, "k = {k}");
    assert_eq!(json(&dir.path().join("k.manifest.json"))["outputs"][0], "k.json");
}

#[test]
fn synthesize_rejects_overlapping_masks() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["phantom", "--side", "96", "--gap", "-6", "--out-dir", "ph"]);
    let out = bonelayer(
        dir.path(),
        &["synthesize", "--image", "ph/image.png", "--masks", "ph/mask_upper.png", "ph/mask_lower.png", "--out-dir", "s"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("overlap"));
}

#[test]
fn regeval_from_saved_trials() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"trials": {"side": 96, "max_shift": 3, "radius": 5, "gap_min": -8, "gap_max": -2}}"#,
    )
    .unwrap();
    ok(
        dir.path(),
        &["--jobs", "2", "regeval", "--generate", "3", "--seed", "1", "--config", "cfg.json", "--save-trials", "trials",
          "--out", "gen.json", "--csv", "gen.csv"],
    );
    ok(dir.path(), &["regeval", "--trials", "trials", "--config", "cfg.json", "--out", "loaded.json"]);
    let generated = json(&dir.path().join("gen.json"));
    let loaded = json(&dir.path().join("loaded.json"));
    assert_eq!(generated["schema_version"], 1);
    assert_eq!(generated["rows"].as_array().unwrap().len(), 3);
    for (a, b) in generated["rows"].as_array().unwrap().iter().zip(loaded["rows"].as_array().unwrap()) {
        assert_eq!(a["true_shifts"], b["true_shifts"]);
        assert_eq!(a["with_separation"]["displacements"], b["with_separation"]["displacements"]);
    }
    let manifest = json(&dir.path().join("gen.manifest.json"));
    assert_eq!(manifest["outputs"], serde_json::json!(["gen.json", "gen.csv"]));
    assert_eq!(manifest["seed"], 1);
}
