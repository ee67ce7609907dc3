use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use advscale_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(advscale_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn small_lab_config() -> CString {
    CString::new(
        r#"{"zoo": {"n_surrogate": 4, "n_heldout": 2, "n_heldout_at": 0,
                    "mixture": {"components": [[1.0, {"kind": "linear-softmax"}]],
                                "training": {"epochs": 3}}}}"#,
    )
    .unwrap()
}

fn small_lab() -> *mut AdvscaleLab {
    let cfg = small_lab_config();
    let mut lab = ptr::null_mut();
    assert_eq!(
        unsafe { advscale_lab_create(cfg.as_ptr(), &mut lab) },
        AdvscaleStatus::Ok,
        "{}",
        last_error()
    );
    assert!(!lab.is_null());
    lab
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(advscale_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_out_pointer_is_reported() {
    let status = unsafe { advscale_lab_create(ptr::null(), ptr::null_mut()) };
    assert_eq!(status, AdvscaleStatus::NullArgument);
    assert!(last_error().contains("out"));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let cfg = CString::new(r#"{"zoo": {"n_surrogates": 3}}"#).unwrap();
    let mut lab = ptr::null_mut();
    let status = unsafe { advscale_lab_create(cfg.as_ptr(), &mut lab) };
    assert_eq!(status, AdvscaleStatus::Config);
    assert!(lab.is_null());
    assert!(last_error().contains("n_surrogates"), "{}", last_error());
}

#[test]
fn invalid_utf8_is_rejected() {
    let bytes = [b'{', 0xff, b'}', 0];
    let mut lab = ptr::null_mut();
    let status = unsafe { advscale_lab_create(bytes.as_ptr().cast(), &mut lab) };
    assert_eq!(status, AdvscaleStatus::InvalidUtf8);
}

#[test]
fn fit_recovers_exact_line() {
    let t = [1.0, 2.0, 4.0, 8.0, 16.0];
    let asr: Vec<f64> = t.iter().map(|v: &f64| 0.07 * v.ln() + 0.3).collect();
    let mut fit = AdvscaleFit::default();
    assert_eq!(
        unsafe { advscale_fit(t.as_ptr(), asr.as_ptr(), t.len(), &mut fit) },
        AdvscaleStatus::Ok
    );
    assert!((fit.alpha - 0.07).abs() < 1e-12);
    assert!((fit.intercept - 0.3).abs() < 1e-12);
    assert!((fit.r_squared - 1.0).abs() < 1e-12);
    assert_eq!(fit.n_points, 5);
}

#[test]
fn fit_on_one_point_fails_cleanly() {
    let mut fit = AdvscaleFit::default();
    let status = unsafe { advscale_fit([4.0].as_ptr(), [0.5].as_ptr(), 1, &mut fit) };
    assert_ne!(status, AdvscaleStatus::Ok);
    assert!(!last_error().is_empty());
    assert_eq!(
        unsafe { advscale_fit(ptr::null(), [0.5].as_ptr(), 1, &mut fit) },
        AdvscaleStatus::NullArgument
    );
}

#[test]
fn lab_round_trip() {
    let lab = small_lab();
    unsafe {
        let mut n = 0;
        assert_eq!(
            advscale_lab_pool_size(lab, AdvscalePool::Surrogate, &mut n),
            AdvscaleStatus::Ok
        );
        assert_eq!(n, 4);
        assert_eq!(
            advscale_lab_pool_size(lab, AdvscalePool::Heldout, &mut n),
            AdvscaleStatus::Ok
        );
        assert_eq!(n, 2);
        assert_eq!(
            advscale_lab_pool_size(lab, AdvscalePool::HeldoutAt, &mut n),
            AdvscaleStatus::Ok
        );
        assert_eq!(n, 0);

        let (mut len, mut count) = (0, 0);
        assert_eq!(advscale_lab_dims(lab, &mut len, &mut count), AdvscaleStatus::Ok);
        assert!(len > 0 && count > 0);

        let mut image = vec![0.0; len];
        let mut label = usize::MAX;
        assert_eq!(
            advscale_lab_test_image(lab, 0, image.as_mut_ptr(), len, &mut label),
            AdvscaleStatus::Ok
        );
        assert!(image.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(
            advscale_lab_test_image(lab, 0, image.as_mut_ptr(), len - 1, &mut label),
            AdvscaleStatus::BufferTooSmall
        );
        assert_eq!(
            advscale_lab_test_image(lab, count, image.as_mut_ptr(), len, &mut label),
            AdvscaleStatus::Contract
        );

        let target = (label + 1) % 2;
        let attack = CString::new(r#"{"method": "mifgsm", "steps": 4}"#).unwrap();
        let mut adv = vec![0.0; len];
        let mut outcome = AdvscaleAttackOutcome::default();
        let status = advscale_lab_attack(lab, attack.as_ptr(), 4, 0, target, adv.as_mut_ptr(), len, &mut outcome);
        assert_eq!(status, AdvscaleStatus::Ok, "{}", last_error());
        assert_eq!(outcome.steps_run, 4);
        assert!(outcome.linf <= 8.0 / 255.0 + 1e-12);
        let max_diff = adv.iter().zip(&image).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert_eq!(max_diff, outcome.linf);
        assert!((0.0..=1.0).contains(&outcome.heldout_asr));

        let zero = CString::new(r#"{"budget": 0.0}"#).unwrap();
        let status = advscale_lab_attack(lab, zero.as_ptr(), 4, 0, target, ptr::null_mut(), 0, &mut outcome);
        assert_eq!(status, AdvscaleStatus::Ok, "{}", last_error());
        assert_eq!(outcome.linf, 0.0);

        let status = advscale_lab_attack(lab, ptr::null(), 5, 0, target, ptr::null_mut(), 0, &mut outcome);
        assert_eq!(status, AdvscaleStatus::Config);

        advscale_lab_free(lab);
    }
}

#[test]
fn lab_is_deterministic() {
    let (a, b) = (small_lab(), small_lab());
    unsafe {
        let mut len = 0;
        let mut count = 0;
        advscale_lab_dims(a, &mut len, &mut count);
        let mut out = [vec![0.0; len], vec![0.0; len]];
        for (lab, buf) in [a, b].into_iter().zip(out.iter_mut()) {
            let mut o = AdvscaleAttackOutcome::default();
            let status = advscale_lab_attack(lab, ptr::null(), 3, 2, 1, buf.as_mut_ptr(), len, &mut o);
            assert_eq!(status, AdvscaleStatus::Ok, "{}", last_error());
        }
        assert_eq!(out[0], out[1]);
        advscale_lab_free(a);
        advscale_lab_free(b);
    }
}

#[test]
fn theory_handle_reports() {
    let cfg = CString::new(r#"{"oracle_size": 1024, "trials_per_t": 8}"#).unwrap();
    let mut theory = ptr::null_mut();
    unsafe {
        assert_eq!(
            advscale_theory_run(cfg.as_ptr(), &mut theory),
            AdvscaleStatus::Ok,
            "{}",
            last_error()
        );
        let (mut passed, mut chi, mut target) = (false, 0.0, 0.0);
        assert_eq!(
            advscale_theory_summary(theory, &mut passed, &mut chi, &mut target),
            AdvscaleStatus::Ok
        );
        assert!(chi.is_finite() && chi > 0.0);
        assert!(target > 0.0);

        let mut json = ptr::null_mut();
        assert_eq!(advscale_theory_report_json(theory, &mut json), AdvscaleStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_string();
        advscale_string_free(json);
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["passed"], serde_json::json!(passed));
        assert_eq!(value["chi_mean"].as_f64().unwrap(), chi);
        advscale_theory_free(theory);
    }
}

#[test]
fn invalid_theory_config_fails() {
    let cfg = CString::new(r#"{"num_classes": 1}"#).unwrap();
    let mut theory = ptr::null_mut();
    assert_eq!(
        unsafe { advscale_theory_run(cfg.as_ptr(), &mut theory) },
        AdvscaleStatus::Config
    );
    assert!(theory.is_null());
}

#[test]
fn freeing_null_is_harmless() {
    unsafe {
        advscale_lab_free(ptr::null_mut());
        advscale_theory_free(ptr::null_mut());
        advscale_string_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_export_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/advscale.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "advscale_last_error",
        "advscale_version",
        "advscale_lab_create",
        "advscale_lab_free",
        "advscale_lab_pool_size",
        "advscale_lab_dims",
        "advscale_lab_test_image",
        "advscale_lab_attack",
        "advscale_fit",
        "advscale_theory_run",
        "advscale_theory_free",
        "advscale_theory_summary",
        "advscale_theory_report_json",
        "advscale_string_free",
        "typedef struct AdvscaleLab AdvscaleLab;",
        "ADVSCALE_STATUS_BUFFER_TOO_SMALL = 8",
    ] {
        assert!(text.contains(name), "{name}");
    }
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(&header)
            .status();
        match status {
            Ok(s) => assert!(s.success(), "{compiler} rejected the header"),
            Err(e) => eprintln!("skipping {compiler}: {e}"),
        }
    }
}
