//! C ABI over the `advscale` library.
//!
//! Every fallible function returns an [`AdvscaleStatus`]; on failure the
//! message is available from [`advscale_last_error`] on the same thread.
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use advscale::attacks::{run_attack, AttackConfig};
use advscale::cli::{obtain_zoo, RunConfig};
use advscale::models::{gen_dataset, SyntheticDataset, TrainedModel, Zoo};
use advscale::scaling::fit_scaling_law;
use advscale::theory::{verify_clt, TheoryConfig, TheoryReport};
use advscale::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvscaleStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Training = 4,
    Contract = 5,
    Io = 6,
    Runtime = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Model pools of each kind inside a lab.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvscalePool {
    Surrogate = 0,
    Heldout = 1,
    HeldoutAt = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AdvscaleFit {
    pub alpha: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Per-image outcome of an attack.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AdvscaleAttackOutcome {
    pub surrogate_asr: f64,
    pub heldout_asr: f64,
    pub linf: f64,
    pub steps_run: usize,
}

/// A dataset together with a trained or loaded zoo.
pub struct AdvscaleLab {
    dataset: SyntheticDataset,
    zoo: Zoo,
}

/// A finished Monte Carlo check of ensemble-minimizer asymptotics.
pub struct AdvscaleTheory {
    report: TheoryReport,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let text = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

struct Failure(AdvscaleStatus, String);

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let status = match &err {
            Error::Config(_) | Error::Json(_) => AdvscaleStatus::Config,
            Error::TrainingDiverged { .. } => AdvscaleStatus::Training,
            Error::Contract(_) => AdvscaleStatus::Contract,
            Error::Io(_) | Error::Truncated(_) | Error::Version(_) | Error::Checksum { .. } => AdvscaleStatus::Io,
            _ => AdvscaleStatus::Runtime,
        };
        Failure(status, err.to_string())
    }
}

fn fail(status: AdvscaleStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AdvscaleStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            AdvscaleStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            AdvscaleStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(fail(AdvscaleStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(AdvscaleStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// Null or empty means "use defaults".
unsafe fn json_or_default<T: Default + serde::de::DeserializeOwned>(
    ptr: *const c_char,
    what: &str,
) -> Result<T, Failure> {
    if ptr.is_null() {
        return Ok(T::default());
    }
    let text = str_arg(ptr, what)?;
    if text.trim().is_empty() {
        return Ok(T::default());
    }
    serde_json::from_str(text).map_err(|e| fail(AdvscaleStatus::Config, format!("{what}: {e}")))
}

unsafe fn out_ref<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut()
        .ok_or_else(|| fail(AdvscaleStatus::NullArgument, format!("{what} is null")))
}

unsafe fn lab_ref<'a>(lab: *const AdvscaleLab) -> Result<&'a AdvscaleLab, Failure> {
    lab.as_ref()
        .ok_or_else(|| fail(AdvscaleStatus::NullArgument, "lab is null"))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn advscale_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn advscale_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Generates the dataset and builds (or, with `zoo_path`, loads) the zoo
/// described by a run-config JSON document. Null or empty selects defaults.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn advscale_lab_create(config_json: *const c_char, out: *mut *mut AdvscaleLab) -> AdvscaleStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = std::ptr::null_mut();
        let mut cfg: RunConfig = json_or_default(config_json, "config_json")?;
        if let Some(seed) = cfg.seed {
            cfg.apply_seed(seed);
        }
        cfg.validate()?;
        let dataset = gen_dataset(&cfg.dataset)?;
        let zoo = obtain_zoo(&cfg, &dataset)?;
        *out = Box::into_raw(Box::new(AdvscaleLab { dataset, zoo }));
        Ok(())
    })
}

/// # Safety
/// `lab` must be null or a handle from [`advscale_lab_create`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn advscale_lab_free(lab: *mut AdvscaleLab) {
    if !lab.is_null() {
        drop(Box::from_raw(lab));
    }
}

/// Number of models in `pool`.
///
/// # Safety
/// `lab` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn advscale_lab_pool_size(
    lab: *const AdvscaleLab,
    pool: AdvscalePool,
    out: *mut usize,
) -> AdvscaleStatus {
    guard(|| {
        let lab = lab_ref(lab)?;
        *out_ref(out, "out")? = pool_models(&lab.zoo, pool).len();
        Ok(())
    })
}

/// Pixel count of one image and the number of test images.
///
/// # Safety
/// `lab` must be a live handle; both outputs valid pointers.
#[no_mangle]
pub unsafe extern "C" fn advscale_lab_dims(
    lab: *const AdvscaleLab,
    image_len: *mut usize,
    test_count: *mut usize,
) -> AdvscaleStatus {
    guard(|| {
        let lab = lab_ref(lab)?;
        *out_ref(image_len, "image_len")? = lab.dataset.input_len();
        *out_ref(test_count, "test_count")? = lab.dataset.test.len();
        Ok(())
    })
}

/// Copies test image `index` into `buf` (`len` ≥ image length) and its label into `label`.
///
/// # Safety
/// `lab` must be a live handle; `buf` must hold `len` doubles; `label` valid.
#[no_mangle]
pub unsafe extern "C" fn advscale_lab_test_image(
    lab: *const AdvscaleLab,
    index: usize,
    buf: *mut f64,
    len: usize,
    label: *mut usize,
) -> AdvscaleStatus {
    guard(|| {
        let lab = lab_ref(lab)?;
        let sample = lab
            .dataset
            .test
            .get(index)
            .ok_or_else(|| fail(AdvscaleStatus::Contract, format!("test index {index} out of range")))?;
        copy_out(sample.image.as_slice(), buf, len)?;
        *out_ref(label, "label")? = sample.label;
        Ok(())
    })
}

/// Attacks test image `index` towards `target` with the first `ensemble_size`
/// surrogates. `attack_json` holds an attack config (null or empty for
/// defaults). The adversarial image is written to `adv` when it is non-null.
///
/// # Safety
/// `lab` must be a live handle; `adv` null or holding `adv_len` doubles;
/// `outcome` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn advscale_lab_attack(
    lab: *const AdvscaleLab,
    attack_json: *const c_char,
    ensemble_size: usize,
    index: usize,
    target: usize,
    adv: *mut f64,
    adv_len: usize,
    outcome: *mut AdvscaleAttackOutcome,
) -> AdvscaleStatus {
    guard(|| {
        let lab = lab_ref(lab)?;
        let outcome = out_ref(outcome, "outcome")?;
        let cfg: AttackConfig = json_or_default(attack_json, "attack_json")?;
        cfg.validate()?;
        if ensemble_size == 0 || ensemble_size > lab.zoo.surrogates.len() {
            return Err(fail(
                AdvscaleStatus::Config,
                format!("ensemble_size must lie in 1..={}", lab.zoo.surrogates.len()),
            ));
        }
        if target >= lab.dataset.num_classes {
            return Err(fail(AdvscaleStatus::Contract, format!("target {target} out of range")));
        }
        let sample = lab
            .dataset
            .test
            .get(index)
            .ok_or_else(|| fail(AdvscaleStatus::Contract, format!("test index {index} out of range")))?;
        let ensemble: Vec<&TrainedModel> = lab.zoo.surrogates[..ensemble_size].iter().collect();
        let result = run_attack(&ensemble, &sample.image, target, &cfg)?;
        let hits = |models: &[&TrainedModel]| {
            models.iter().filter(|m| m.predict(&result.adv) == target).count() as f64 / models.len() as f64
        };
        let heldout: Vec<&TrainedModel> = lab.zoo.heldout.iter().collect();
        if !adv.is_null() {
            copy_out(result.adv.as_slice(), adv, adv_len)?;
        }
        *outcome = AdvscaleAttackOutcome {
            surrogate_asr: hits(&ensemble),
            heldout_asr: if heldout.is_empty() { f64::NAN } else { hits(&heldout) },
            linf: result
                .adv
                .as_slice()
                .iter()
                .zip(sample.image.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
            steps_run: result.steps_run,
        };
        Ok(())
    })
}

/// Least-squares fit of `asr = α ln t + C` over `n` points.
///
/// # Safety
/// `t` and `asr` must each hold `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn advscale_fit(
    t: *const f64,
    asr: *const f64,
    n: usize,
    out: *mut AdvscaleFit,
) -> AdvscaleStatus {
    guard(|| {
        if t.is_null() || asr.is_null() {
            return Err(fail(AdvscaleStatus::NullArgument, "t and asr must be non-null"));
        }
        let out = out_ref(out, "out")?;
        let t = std::slice::from_raw_parts(t, n);
        let asr = std::slice::from_raw_parts(asr, n);
        let points: Vec<(f64, f64)> = t.iter().copied().zip(asr.iter().copied()).collect();
        let fit = fit_scaling_law(&points)?;
        *out = AdvscaleFit {
            alpha: fit.scaling_alpha,
            intercept: fit.intercept,
            r_squared: fit.r_squared,
            n_points: fit.n_points,
        };
        Ok(())
    })
}

/// Runs the Monte Carlo check configured by `config_json` (null or empty for defaults).
///
/// # Safety
/// `config_json` must be null or NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn advscale_theory_run(
    config_json: *const c_char,
    out: *mut *mut AdvscaleTheory,
) -> AdvscaleStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = std::ptr::null_mut();
        let cfg: TheoryConfig = json_or_default(config_json, "config_json")?;
        let report = verify_clt(&cfg)?;
        *out = Box::into_raw(Box::new(AdvscaleTheory { report }));
        Ok(())
    })
}

/// # Safety
/// `theory` must be null or a handle from [`advscale_theory_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn advscale_theory_free(theory: *mut AdvscaleTheory) {
    if !theory.is_null() {
        drop(Box::from_raw(theory));
    }
}

/// Whether every check passed, and the pooled chi-square mean against its target.
///
/// # Safety
/// `theory` must be a live handle; outputs valid pointers.
#[no_mangle]
pub unsafe extern "C" fn advscale_theory_summary(
    theory: *const AdvscaleTheory,
    passed: *mut bool,
    chi_mean: *mut f64,
    chi_target_mean: *mut f64,
) -> AdvscaleStatus {
    guard(|| {
        let theory = theory
            .as_ref()
            .ok_or_else(|| fail(AdvscaleStatus::NullArgument, "theory is null"))?;
        *out_ref(passed, "passed")? = theory.report.passed;
        *out_ref(chi_mean, "chi_mean")? = theory.report.chi_mean;
        *out_ref(chi_target_mean, "chi_target_mean")? = theory.report.chi_target_mean;
        Ok(())
    })
}

/// The full report as JSON in a string owned by the caller; release it with
/// [`advscale_string_free`].
///
/// # Safety
/// `theory` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn advscale_theory_report_json(
    theory: *const AdvscaleTheory,
    out: *mut *mut c_char,
) -> AdvscaleStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = std::ptr::null_mut();
        let theory = theory
            .as_ref()
            .ok_or_else(|| fail(AdvscaleStatus::NullArgument, "theory is null"))?;
        let text = theory.report.to_json()?;
        *out = CString::new(text)
            .map_err(|e| fail(AdvscaleStatus::Runtime, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn advscale_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

fn pool_models(zoo: &Zoo, pool: AdvscalePool) -> &[TrainedModel] {
    match pool {
        AdvscalePool::Surrogate => &zoo.surrogates,
        AdvscalePool::Heldout => &zoo.heldout,
        AdvscalePool::HeldoutAt => &zoo.heldout_at,
    }
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), Failure> {
    if buf.is_null() {
        return Err(fail(AdvscaleStatus::NullArgument, "buffer is null"));
    }
    if len < src.len() {
        return Err(fail(
            AdvscaleStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}
