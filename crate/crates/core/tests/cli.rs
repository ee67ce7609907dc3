use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_advscale"))
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).output().unwrap();
    let text = format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    (out.status.code().unwrap_or(-1), text)
}

fn run_cmd(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> (i32, String) {
    let mut args = vec![
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn small_zoo() -> Value {
    json!({
        "n_surrogate": 6,
        "n_heldout": 2,
        "n_heldout_at": 1,
        "mixture": {
            "components": [[1.0, {"kind": "mlp", "hidden_widths": [16], "activation": "tanh"}],
                           [1.0, {"kind": "linear-softmax"}]],
            "training": {"epochs": 4, "init_gain": 5.0}
        }
    })
}

/// A default-configuration zoo file shared by the tests that need it.
fn default_zoo_file() -> &'static PathBuf {
    static ZOO: OnceLock<PathBuf> = OnceLock::new();
    ZOO.get_or_init(|| {
        let dir = std::env::temp_dir().join(format!("advscale-cli-default-zoo-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = write_config(&dir, "zoo.json.cfg", &json!({}));
        let (code, text) = run_cmd("zoo-build", &cfg, &dir.join("out"), &[]);
        assert_eq!(code, 0, "{text}");
        dir.join("out").join("zoo.json")
    })
}

#[test]
fn default_zoo_build_reports_the_split() {
    let zoo = default_zoo_file();
    let report = read_json(&zoo.parent().unwrap().join("zoo_report.json"));
    assert_eq!(
        report["counts"],
        json!({"surrogate": 64, "heldout": 8, "heldout_at": 4})
    );
    assert_eq!(report["models"].as_array().unwrap().len(), 76);
}

#[test]
fn zoo_rebuild_has_identical_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &json!({"zoo": small_zoo()}));
    for out in ["a", "b"] {
        assert_eq!(run_cmd("zoo-build", &cfg, &dir.path().join(out), &[]).0, 0);
    }
    let a = std::fs::read(dir.path().join("a/zoo.json")).unwrap();
    let b = std::fs::read(dir.path().join("b/zoo.json")).unwrap();
    assert_eq!(Sha256::digest(&a), Sha256::digest(&b));
}

#[test]
fn oversized_scaling_request_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({"zoo": small_zoo(), "scaling": {"t_values": [1, 2, 7]}}),
    );
    let (code, text) = run_cmd("zoo-build", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(code, 2, "{text}");
    assert!(text.contains("scaling.t_values"), "{text}");
    assert!(!dir.path().join("out/zoo.json").exists());
}

#[test]
fn unknown_key_aborts_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &json!({"zoo": small_zoo(), "atack": {}}));
    let (code, text) = run_cmd("zoo-build", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(code, 2, "{text}");
    assert!(!dir.path().join("out").exists());
    let nested = write_config(dir.path(), "n.json", &json!({"attack": {"stepz": 3}}));
    assert_eq!(run_cmd("attack", &nested, &dir.path().join("out"), &[]).0, 2);
}

#[test]
fn training_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut zoo = small_zoo();
    zoo["mixture"]["training"]["learning_rate"] = json!(1e300);
    zoo["mixture"]["components"] = json!([[1.0, {"kind": "mlp", "hidden_widths": [8], "activation": "relu"}]]);
    let cfg = write_config(dir.path(), "c.json", &json!({"zoo": zoo}));
    let (code, text) = run_cmd("zoo-build", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(code, 3, "{text}");
}

fn small_zoo_file(dir: &Path) -> PathBuf {
    let cfg = write_config(dir, "zoo-cfg.json", &json!({"zoo": small_zoo()}));
    let (code, text) = run_cmd("zoo-build", &cfg, &dir.join("zoo"), &[]);
    assert_eq!(code, 0, "{text}");
    dir.join("zoo/zoo.json")
}

#[test]
fn zero_budget_attack_returns_clamped_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let zoo = small_zoo_file(dir.path());
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({
            "zoo": small_zoo(),
            "zoo_path": zoo,
            "attack": {"budget": 0.0, "method": "mifgsm", "steps": 5},
            "attack_run": {"ensemble_size": 4, "n_images": 6}
        }),
    );
    let (code, text) = run_cmd("attack", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(code, 0, "{text}");
    let summary = read_json(&dir.path().join("out/summary.json"));
    for run in summary["runs"].as_array().unwrap() {
        assert_eq!(run["linf"], json!(0.0));
        assert_eq!(run["heldout_asr"], run["clean_heldout_target_rate"]);
    }
    assert_eq!(
        summary["pooled"]["heldout_asr"],
        summary["pooled"]["clean_heldout_target_rate"]
    );
    let runs = summary["runs"].as_array().unwrap().len();
    assert!((6..=12).contains(&runs));
    assert_eq!(dir.path().join("out/traces").read_dir().unwrap().count(), runs);
}

#[test]
fn degenerate_ssa_matches_micwa_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let zoo = small_zoo_file(dir.path());
    let base = |method: &str| {
        json!({
            "zoo": small_zoo(),
            "zoo_path": zoo,
            "attack": {"method": method, "steps": 6, "seed": 3,
                       "ssa": {"num_samples": 1, "noise_sigma": 0.0, "mask_rho": 0.0}},
            "attack_run": {"ensemble_size": 5, "n_images": 4}
        })
    };
    for m in ["micwa", "ssacwa"] {
        let cfg = write_config(dir.path(), &format!("{m}.json"), &base(m));
        assert_eq!(run_cmd("attack", &cfg, &dir.path().join(m), &[]).0, 0);
    }
    let images = dir.path().join("micwa/images");
    let mut n = 0;
    for entry in images.read_dir().unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(images.join(&name)).unwrap();
        let b = std::fs::read(dir.path().join("ssacwa/images").join(&name)).unwrap();
        assert_eq!(a, b, "{name:?}");
        n += 1;
    }
    let runs = read_json(&dir.path().join("micwa/summary.json"))["runs"]
        .as_array()
        .unwrap()
        .len();
    assert_eq!(n, 2 * runs);
}

#[test]
fn default_ssacwa_transfers_at_sixty_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({"zoo_path": default_zoo_file(), "attack_run": {"ensemble_size": 64, "n_images": 10}}),
    );
    let (code, text) = run_cmd("attack", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(code, 0, "{text}");
    let asr = read_json(&dir.path().join("out/summary.json"))["pooled"]["heldout_asr"]
        .as_f64()
        .unwrap();
    assert!(asr >= 0.5, "held-out ASR {asr}");
}

#[test]
fn unmet_tolerance_exits_with_four_and_keeps_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let zoo = small_zoo_file(dir.path());
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({
            "zoo": small_zoo(),
            "zoo_path": zoo,
            "attack": {"method": "ifgsm", "steps": 2},
            "attack_run": {"ensemble_size": 2, "n_images": 2, "tolerances": {"min_heldout_asr": 1.01}}
        }),
    );
    let (code, _) = run_cmd("attack", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(code, 4);
    assert!(dir.path().join("out/summary.json").exists());
    assert!(dir.path().join("out/manifest.json").exists());
}

#[test]
fn fit_recovers_exact_line() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("points.csv");
    let mut text = String::from("T,asr_mean\n");
    for t in [1u32, 2, 4, 8, 16, 32, 64] {
        text.push_str(&format!("{t},{}\n", 0.123456789 * f64::from(t).ln() + 0.2));
    }
    std::fs::write(&csv, text).unwrap();
    let (code, out) = run(&[
        "fit",
        csv.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("alpha = 0.123456789000"), "{out}");
    assert!(out.contains("C = 0.200000000000"), "{out}");
    assert!(out.contains("R2 = 1.000000000000"), "{out}");
}

#[test]
fn default_theory_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &json!({"theory": {}}));
    let (code, text) = run_cmd("theory", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(code, 0, "{text}");
    let report = read_json(&dir.path().join("out/theory_report.json"));
    let chi = report["chi_mean"].as_f64().unwrap();
    assert!((0.85 * 8.0..=1.15 * 8.0).contains(&chi), "{chi}");
    let samples = std::fs::read_to_string(dir.path().join("out/theory_samples.csv")).unwrap();
    assert!(samples.starts_with("T,trial,delta_loss_stat,dist_l2\n"));
}

fn scaling_config(dir: &Path, zoo: &Path) -> PathBuf {
    write_config(
        dir,
        "scaling.json",
        &json!({
            "zoo": small_zoo(),
            "zoo_path": zoo,
            "attack": {"method": "mifgsm", "steps": 5},
            "scaling": {"t_values": [1, 2, 4], "trials_per_t": 2, "n_images": 4}
        }),
    )
}

#[test]
fn scaling_output_is_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let zoo = small_zoo_file(dir.path());
    let cfg = scaling_config(dir.path(), &zoo);
    for (w, out) in [("1", "w1"), ("8", "w8")] {
        let code = run_cmd("scaling", &cfg, &dir.path().join(out), &["--workers", w]).0;
        assert!(code == 0 || code == 4, "exit {code}");
    }
    for file in [
        "results_heldout.csv",
        "results_heldout_at.csv",
        "plot.csv",
        "summary.json",
    ] {
        let a = std::fs::read(dir.path().join("w1").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("w8").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    let head = std::fs::read_to_string(dir.path().join("w1/results_heldout.csv")).unwrap();
    assert!(head.starts_with("T,trial,image_id,target,heldout_model_id,targeted_success,untargeted_success,ce_loss\n"));
}

fn manifest_files(dir: &Path) -> Vec<(String, String)> {
    let m = read_json(&dir.join("manifest.json"));
    m["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| {
            (
                f["path"].as_str().unwrap().to_string(),
                f["sha256"].as_str().unwrap().to_string(),
            )
        })
        .collect()
}

#[test]
fn manifest_checksums_hold_and_echo_reruns_reproduce_them() {
    let dir = tempfile::tempdir().unwrap();
    let zoo = small_zoo_file(dir.path());
    let cfg = scaling_config(dir.path(), &zoo);
    let first = dir.path().join("first");
    run_cmd("scaling", &cfg, &first, &["--seed", "11"]);
    let manifest = read_json(&first.join("manifest.json"));
    assert_eq!(manifest["version"], json!(env!("CARGO_PKG_VERSION")));
    assert_eq!(manifest["seed"], json!(11));
    let files = manifest_files(&first);
    assert!(files.iter().any(|(p, _)| p == "config_echo.json"));
    for (path, sha) in &files {
        let bytes = std::fs::read(first.join(path)).unwrap();
        assert_eq!(&hex::encode(Sha256::digest(&bytes)), sha, "{path}");
    }
    let echo = first.join("config_echo.json");
    let second = dir.path().join("second");
    run_cmd("scaling", &echo, &second, &[]);
    let rerun = manifest_files(&second);
    for ((p1, s1), (p2, s2)) in files.iter().zip(&rerun) {
        assert_eq!(p1, p2);
        if p1 != "config_echo.json" {
            assert_eq!(s1, s2, "{p1}");
        }
    }
}

#[test]
fn conflict_probe_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let zoo = small_zoo_file(dir.path());
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({
            "zoo": small_zoo(),
            "zoo_path": zoo,
            "conflict": {"t_values": [1, 6], "n_images": 3, "probe": {"trials": 3, "steps": 2}}
        }),
    );
    let (code, text) = run_cmd("conflict", &cfg, &dir.path().join("out"), &[]);
    assert!(code == 0 || code == 4, "{text}");
    let table = std::fs::read_to_string(dir.path().join("out/conflict.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(table.starts_with("method,T,magnitude\nmifgsm,1,"));
}
