use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::attacks::export::{perturbation_image, to_pnm, trace_csv};
use crate::attacks::{
    attack_embedding, gradient_conflict_probe, mean_cosine_similarity, run_attack, AttackResult, Method,
};
use crate::cli::config::{RunConfig, ScalingSection};
use crate::cli::output::OutputDir;
use crate::error::{config, Error, Result};
use crate::models::persist::zoo_to_json;
use crate::models::{build_zoo, gen_dataset, zoo_load, Role, SyntheticDataset, TrainedModel, Zoo};
use crate::scaling::{
    at_limitation_from_result, fit_pooled, fit_scaling_law, loss_asr_symmetry, plot_csv, results_csv, run_scaling,
    summary_json, FitResult, Metric, Pool, ScalingConfig, ScalingImage,
};
use crate::tensor::ImageTensor;
use crate::theory::{samples_csv, verify_clt, Check, TheoryConfig};

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    /// Artifacts were written but at least one configured check failed.
    ToleranceFailed,
}

impl Status {
    fn from_checks(checks: &[Check]) -> Self {
        if checks.iter().all(|c| c.pass) {
            Status::Pass
        } else {
            Status::ToleranceFailed
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

struct Prepared {
    cfg: RunConfig,
    out: PathBuf,
}

fn prepare(config_path: &Path, ov: &Overrides) -> Result<Prepared> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(seed) = ov.seed.or(cfg.seed) {
        cfg.apply_seed(seed);
    }
    if ov.workers.is_some() {
        cfg.worker_count = ov.workers;
    }
    let out = ov
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    cfg.output_dir = Some(out.clone());
    cfg.validate()?;
    Ok(Prepared { cfg, out })
}

/// Runs `f` on a dedicated rayon pool of `workers` threads (all cores when unset).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| config(format!("cannot start {workers:?} workers: {e}")))?;
    pool.install(f)
}

pub fn obtain_zoo(cfg: &RunConfig, dataset: &SyntheticDataset) -> Result<Zoo> {
    match &cfg.zoo_path {
        Some(path) => {
            let zoo = zoo_load(path).map_err(|e| config(format!("zoo file {}: {e}", path.display())))?;
            if zoo.dataset_fingerprint != dataset.fingerprint() {
                return Err(config(format!(
                    "zoo file {} was built on a different dataset",
                    path.display()
                )));
            }
            Ok(zoo)
        }
        None => build_zoo(&cfg.zoo, dataset),
    }
}

/// `n` test-split indices spread evenly over the split.
pub fn spread_ids(n: usize, len: usize) -> Result<Vec<usize>> {
    if n == 0 || n > len {
        return Err(config(format!("n_images must lie in 1..={len}")));
    }
    Ok((0..n).map(|i| i * len / n).collect())
}

fn pnm_ext(image: &ImageTensor) -> &'static str {
    if image.shape().channels == 1 {
        "pgm"
    } else {
        "ppm"
    }
}

pub fn cmd_zoo_build(config_path: &Path, ov: &Overrides) -> Result<Status> {
    let Prepared { cfg, out } = prepare(config_path, ov)?;
    with_workers(cfg.worker_count, || {
        let dataset = gen_dataset(&cfg.dataset)?;
        let zoo = build_zoo(&cfg.zoo, &dataset)?;
        let mut dir = OutputDir::create(&out)?;
        dir.write("zoo.json", zoo_to_json(&zoo)?.as_bytes())?;
        let models: Vec<Value> = zoo
            .iter_roles()
            .map(|(role, m)| {
                json!({
                    "role": role,
                    "architecture": m.spec.architecture.label(),
                    "init_seed": m.spec.init_seed,
                    "train_accuracy": m.meta.train_accuracy,
                    "test_accuracy": m.meta.test_accuracy,
                })
            })
            .collect();
        let count = |r: Role| zoo.iter_roles().filter(|(role, _)| *role == r).count();
        dir.write_json(
            "zoo_report.json",
            &json!({
                "zoo_fingerprint": zoo.fingerprint(),
                "dataset_fingerprint": zoo.dataset_fingerprint,
                "counts": {
                    "surrogate": count(Role::Surrogate),
                    "heldout": count(Role::Heldout),
                    "heldout_at": count(Role::HeldoutAt),
                },
                "mean_test_accuracy": {
                    "surrogate": Zoo::mean_test_accuracy(&zoo.surrogates),
                    "heldout": Zoo::mean_test_accuracy(&zoo.heldout),
                    "heldout_at": Zoo::mean_test_accuracy(&zoo.heldout_at),
                },
                "models": models,
            }),
        )?;
        dir.finish("zoo-build", cfg.seed, &cfg)?;
        Ok(Status::Pass)
    })
}

#[derive(Debug, Serialize)]
struct AttackRecord {
    image_id: usize,
    label: usize,
    target: usize,
    surrogate_asr: f64,
    heldout_asr: f64,
    heldout_at_asr: Option<f64>,
    heldout_untargeted: f64,
    clean_heldout_target_rate: f64,
    /// Mean cosine similarity to the target image (embedding method only).
    heldout_cosine_before: Option<f64>,
    heldout_cosine_after: Option<f64>,
    initial_trace: f64,
    final_trace: f64,
    linf: f64,
    steps_run: usize,
    skipped: usize,
    warnings: Vec<String>,
    error: Option<String>,
}

fn rate(models: &[&TrainedModel], x: &ImageTensor, pred: impl Fn(usize) -> bool) -> f64 {
    models.iter().filter(|m| pred(m.predict(x))).count() as f64 / models.len() as f64
}

struct AttackUnit {
    image_id: usize,
    x_nat: ImageTensor,
    label: usize,
    target: usize,
}

fn attack_one(
    unit: &AttackUnit,
    ensemble: &[&TrainedModel],
    zoo: &Zoo,
    dataset: &SyntheticDataset,
    cfg: &RunConfig,
) -> (AttackRecord, Option<AttackResult>) {
    let heldout: Vec<&TrainedModel> = zoo.heldout.iter().collect();
    let heldout_at: Vec<&TrainedModel> = zoo.heldout_at.iter().collect();
    let clean = unit.x_nat.clamp01();
    let mut record = AttackRecord {
        image_id: unit.image_id,
        label: unit.label,
        target: unit.target,
        surrogate_asr: f64::NAN,
        heldout_asr: f64::NAN,
        heldout_at_asr: None,
        heldout_untargeted: f64::NAN,
        clean_heldout_target_rate: rate(&heldout, &clean, |p| p == unit.target),
        heldout_cosine_before: None,
        heldout_cosine_after: None,
        initial_trace: f64::NAN,
        final_trace: f64::NAN,
        linf: f64::NAN,
        steps_run: 0,
        skipped: 0,
        warnings: Vec::new(),
        error: None,
    };
    let outcome = if cfg.attack.method == Method::Embedding {
        match dataset.test.iter().find(|s| s.label == unit.target) {
            Some(tar) => {
                let before = mean_cosine_similarity(&heldout, &unit.x_nat, &tar.image).ok();
                attack_embedding(ensemble, &unit.x_nat, &tar.image, &cfg.attack).map(|r| {
                    record.heldout_cosine_before = before;
                    record.heldout_cosine_after = mean_cosine_similarity(&heldout, &r.adv, &tar.image).ok();
                    r
                })
            }
            None => Err(config(format!("no test image of class {}", unit.target))),
        }
    } else {
        run_attack(ensemble, &unit.x_nat, unit.target, &cfg.attack)
    };
    match outcome {
        Ok(r) => {
            let adv = &r.adv;
            record.surrogate_asr = rate(ensemble, adv, |p| p == unit.target);
            record.heldout_asr = rate(&heldout, adv, |p| p == unit.target);
            if !heldout_at.is_empty() {
                record.heldout_at_asr = Some(rate(&heldout_at, adv, |p| p == unit.target));
            }
            record.heldout_untargeted = heldout
                .iter()
                .filter(|m| m.predict(adv) != m.predict(&unit.x_nat))
                .count() as f64
                / heldout.len() as f64;
            record.initial_trace = r.initial_trace;
            record.final_trace = r.final_trace();
            record.linf = adv
                .as_slice()
                .iter()
                .zip(unit.x_nat.as_slice())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            record.steps_run = r.steps_run;
            record.skipped = r.skipped;
            record.warnings = r.warnings.clone();
            (record, Some(r))
        }
        Err(e) => {
            record.error = Some(e.to_string());
            (record, None)
        }
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn cmd_attack(config_path: &Path, ov: &Overrides) -> Result<Status> {
    let Prepared { cfg, out } = prepare(config_path, ov)?;
    with_workers(cfg.worker_count, || {
        let section = cfg.attack_run.clone().unwrap_or_default();
        let dataset = gen_dataset(&cfg.dataset)?;
        let zoo = obtain_zoo(&cfg, &dataset)?;
        if section.ensemble_size > zoo.surrogates.len() {
            return Err(config(format!(
                "attack_run.ensemble_size {} exceeds the {} surrogates",
                section.ensemble_size,
                zoo.surrogates.len()
            )));
        }
        if zoo.heldout.is_empty() {
            return Err(config("zoo has no held-out models"));
        }
        let ensemble: Vec<&TrainedModel> = zoo.surrogates[..section.ensemble_size].iter().collect();
        let ids = match &section.image_ids {
            Some(ids) => ids.clone(),
            None => spread_ids(section.n_images, dataset.test.len())?,
        };
        let images = ScalingImage::from_samples(&dataset.test, &ids)?;
        let k = dataset.num_classes;
        let units: Vec<AttackUnit> = images
            .iter()
            .flat_map(|img| {
                let mut targets: Vec<usize> = Vec::new();
                for &t in &section.targets {
                    let t = if t == img.label { (t + 1) % k } else { t };
                    if !targets.contains(&t) {
                        targets.push(t);
                    }
                }
                targets.into_iter().map(move |target| AttackUnit {
                    image_id: img.id,
                    x_nat: img.image.clone(),
                    label: img.label,
                    target,
                })
            })
            .collect();
        let results: Vec<(AttackRecord, Option<AttackResult>)> = units
            .par_iter()
            .map(|u| attack_one(u, &ensemble, &zoo, &dataset, &cfg))
            .collect();

        let mut dir = OutputDir::create(&out)?;
        let embedding = cfg.attack.method == Method::Embedding;
        for (unit, (rec, res)) in units.iter().zip(&results) {
            let Some(r) = res else { continue };
            let stem = format!("img{}_t{}", rec.image_id, rec.target);
            dir.write(&format!("traces/{stem}.csv"), trace_csv(r, embedding).as_bytes())?;
            if section.write_images {
                let ext = pnm_ext(&r.adv);
                dir.write(&format!("images/{stem}_adv.{ext}"), &to_pnm(&r.adv)?)?;
                let pert = perturbation_image(&r.adv, &unit.x_nat)?;
                dir.write(&format!("images/{stem}_perturbation.{ext}"), &to_pnm(&pert)?)?;
            }
        }
        let records: Vec<&AttackRecord> = results.iter().map(|(r, _)| r).collect();
        let ok: Vec<&&AttackRecord> = records.iter().filter(|r| r.error.is_none()).collect();
        let heldout_asr = mean_of(ok.iter().map(|r| r.heldout_asr));
        let mut checks = Vec::new();
        if let Some(min) = section.tolerances.min_heldout_asr {
            checks.push(Check::new("heldout_asr", heldout_asr, min, 1.0));
        }
        let failures = records.len() - ok.len();
        dir.write_json(
            "summary.json",
            &json!({
                "method": cfg.attack.method,
                "ensemble_size": section.ensemble_size,
                "pooled": {
                    "surrogate_asr": mean_of(ok.iter().map(|r| r.surrogate_asr)),
                    "heldout_asr": heldout_asr,
                    "heldout_at_asr": mean_of(ok.iter().filter_map(|r| r.heldout_at_asr)),
                    "heldout_untargeted": mean_of(ok.iter().map(|r| r.heldout_untargeted)),
                    "clean_heldout_target_rate": mean_of(ok.iter().map(|r| r.clean_heldout_target_rate)),
                    "heldout_cosine_before": mean_of(ok.iter().filter_map(|r| r.heldout_cosine_before)),
                    "heldout_cosine_after": mean_of(ok.iter().filter_map(|r| r.heldout_cosine_after)),
                    "runs": records.len(),
                    "failures": failures,
                },
                "runs": records,
                "checks": checks,
            }),
        )?;
        dir.finish("attack", cfg.seed, &cfg)?;
        if failures > 0 {
            log::warn!("{failures} of {} attack runs failed; see summary.json", records.len());
        }
        Ok(Status::from_checks(&checks))
    })
}

/// Scaling config for a run section over the dataset's test split.
pub fn scaling_config(cfg: &RunConfig, section: &ScalingSection, dataset: &SyntheticDataset) -> Result<ScalingConfig> {
    let ids = match &section.image_ids {
        Some(ids) => ids.clone(),
        None => spread_ids(section.n_images, dataset.test.len())?,
    };
    Ok(ScalingConfig {
        t_values: section.t_values.clone(),
        trials_per_t: section.trials_per_t,
        images: ScalingImage::from_samples(&dataset.test, &ids)?,
        targets: section.targets.clone(),
        attack: cfg.attack.clone(),
        seed: section.seed,
    })
}

/// Pass/fail checks of a finished scaling run against the section tolerances.
pub fn scaling_checks(result: &crate::scaling::ScalingResult, section: &ScalingSection) -> Vec<Check> {
    let tol = &section.tolerances;
    let window = section.fit_window;
    let mut checks = Vec::new();
    let fit = fit_pooled(result, Pool::Heldout, Metric::Targeted, window);
    let (alpha, r2) = fit
        .as_ref()
        .map_or((f64::NAN, f64::NAN), |f| (f.scaling_alpha, f.r_squared));
    checks.push(Check::greater("heldout_alpha", alpha, tol.min_alpha));
    checks.push(Check::new("heldout_r_squared", r2, tol.min_r_squared, 1.0));
    let pooled = result.pooled(Pool::Heldout);
    let gain = match (pooled.first(), pooled.last()) {
        (Some(a), Some(b)) => b.asr_mean - a.asr_mean,
        _ => f64::NAN,
    };
    checks.push(Check::new("heldout_asr_gain", gain, tol.min_asr_gain, 1.0));
    checks.push(Check::new(
        "loss_asr_spearman",
        loss_asr_symmetry(result),
        -1.0,
        tol.max_loss_asr_spearman,
    ));
    if !result.pooled(Pool::HeldoutAt).is_empty() {
        let (normal, at) = at_limitation_from_result(result, window)
            .map(|(n, a)| (n.scaling_alpha, a.scaling_alpha))
            .unwrap_or((f64::NAN, f64::NAN));
        checks.push(Check::less("at_abs_alpha", at.abs(), tol.at_max_abs_alpha));
        checks.push(Check::greater("normal_alpha", normal, tol.at_normal_ratio * at.abs()));
    }
    checks
}

pub fn cmd_scaling(config_path: &Path, ov: &Overrides) -> Result<Status> {
    let Prepared { cfg, out } = prepare(config_path, ov)?;
    with_workers(cfg.worker_count, || {
        let section = cfg.scaling.clone().unwrap_or_default();
        let dataset = gen_dataset(&cfg.dataset)?;
        let zoo = obtain_zoo(&cfg, &dataset)?;
        let scfg = scaling_config(&cfg, &section, &dataset)?;
        let result = run_scaling(&zoo, &scfg)?;
        let checks = scaling_checks(&result, &section);
        let mut dir = OutputDir::create(&out)?;
        dir.write("results_heldout.csv", results_csv(&result, Pool::Heldout).as_bytes())?;
        if !zoo.heldout_at.is_empty() {
            dir.write(
                "results_heldout_at.csv",
                results_csv(&result, Pool::HeldoutAt).as_bytes(),
            )?;
        }
        dir.write("plot.csv", plot_csv(&result).as_bytes())?;
        dir.write_json(
            "summary.json",
            &summary_json(&result, section.fit_window, json!({ "checks": checks })),
        )?;
        dir.finish("scaling", cfg.seed, &cfg)?;
        Ok(Status::from_checks(&checks))
    })
}

pub fn cmd_theory(config_path: &Path, ov: &Overrides) -> Result<Status> {
    let Prepared { cfg, out } = prepare(config_path, ov)?;
    with_workers(cfg.worker_count, || {
        let theory: TheoryConfig = cfg.theory.clone().unwrap_or_else(|| TheoryConfig {
            seed: cfg.seed.unwrap_or_default(),
            ..TheoryConfig::default()
        });
        let report = verify_clt(&theory)?;
        let mut dir = OutputDir::create(&out)?;
        dir.write("theory_report.json", format!("{}\n", report.to_json()?).as_bytes())?;
        dir.write("theory_samples.csv", samples_csv(&report).as_bytes())?;
        dir.finish("theory", cfg.seed, &cfg)?;
        Ok(Status::from_checks(&report.checks))
    })
}

pub fn cmd_conflict(config_path: &Path, ov: &Overrides) -> Result<Status> {
    let Prepared { cfg, out } = prepare(config_path, ov)?;
    with_workers(cfg.worker_count, || {
        let section = cfg.conflict.clone().unwrap_or_default();
        let dataset = gen_dataset(&cfg.dataset)?;
        let zoo = obtain_zoo(&cfg, &dataset)?;
        let k = dataset.num_classes;
        let instances: Vec<(ImageTensor, usize)> = spread_ids(section.n_images, dataset.test.len())?
            .into_iter()
            .map(|i| {
                let s = &dataset.test[i];
                (s.image.clone(), (s.label + 1) % k)
            })
            .collect();
        let mut csv = String::from("method,T,magnitude\n");
        let mut ratios = serde_json::Map::new();
        let mut checks = Vec::new();
        for &method in &section.methods {
            let table =
                gradient_conflict_probe(&zoo, method, &section.t_values, &instances, &cfg.attack, &section.probe)?;
            for (t, m) in &table {
                csv.push_str(&format!("{},{t},{m}\n", method.name()));
            }
            let ratio = table.last().expect("two sizes").1 / table[0].1;
            ratios.insert(method.name().to_string(), json!(ratio));
            checks.push(match method {
                Method::Mifgsm => Check::less("mifgsm_ratio", ratio, section.tolerances.mifgsm_max_ratio),
                _ => Check::new("micwa_ratio", ratio, section.tolerances.micwa_min_ratio, f64::INFINITY),
            });
        }
        let mut dir = OutputDir::create(&out)?;
        dir.write("conflict.csv", csv.as_bytes())?;
        dir.write_json("summary.json", &json!({ "ratios": ratios, "checks": checks }))?;
        dir.finish("conflict", cfg.seed, &cfg)?;
        Ok(Status::from_checks(&checks))
    })
}

/// Reads `(T, value)` points from a CSV with a `T` column and one of
/// `asr_mean`, `asr`, `value` or `y`. When a `pool` column is present only
/// rows of `pool` are used.
pub fn read_points(path: &Path, pool: &str) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| config(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let t_col = col("T").ok_or_else(|| config("points CSV has no `T` column"))?;
    let v_col = ["asr_mean", "asr", "value", "y"]
        .iter()
        .find_map(|n| col(n))
        .ok_or_else(|| config("points CSV has no asr_mean/asr/value/y column"))?;
    let pool_col = col("pool");
    let mut points = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| config(e.to_string()))?;
        if let Some(p) = pool_col {
            if row.get(p).map(str::trim) != Some(pool) {
                continue;
            }
        }
        let parse = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| config(format!("row {}: unreadable number in column {i}", line + 2)))
        };
        points.push((parse(t_col)?, parse(v_col)?));
    }
    Ok(points)
}

pub fn cmd_fit(csv_path: &Path, ov: &Overrides) -> Result<(Status, FitResult)> {
    let points = read_points(csv_path, "heldout")?;
    let fit = fit_scaling_law(&points).map_err(|e| match e {
        Error::NonFinite(_) | Error::DegenerateDesign(_) | Error::Config(_) => config(e.to_string()),
        other => other,
    })?;
    let out = ov.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let mut dir = OutputDir::create(&out)?;
    dir.write_json("fit.json", &fit)?;
    let input = std::fs::read(csv_path)?;
    let echo = json!({
        "input": csv_path.display().to_string(),
        "input_sha256": hex::encode(<sha2::Sha256 as sha2::Digest>::digest(&input)),
    });
    dir.finish("fit", None, &echo)?;
    Ok((Status::Pass, fit))
}
