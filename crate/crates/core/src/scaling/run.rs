//! The ensemble-size sweep: sample ensembles, attack, score held-out models.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{run_attack, AttackConfig, Method};
use crate::error::{config, contract, Result};
use crate::models::{argmax, Sample, TrainedModel, Zoo};
use crate::rng::{RngStream, Seed};
use crate::tensor::ImageTensor;

const ENSEMBLE_STREAM: u64 = 31;
const ATTACK_STREAM: u64 = 32;
const TARGET_STREAM: u64 = 33;

/// An attacked input with a stable identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingImage {
    pub id: usize,
    pub image: ImageTensor,
    pub label: usize,
}

impl ScalingImage {
    /// Takes the given indices of a sample list.
    pub fn from_samples(samples: &[Sample], ids: &[usize]) -> Result<Vec<Self>> {
        ids.iter()
            .map(|&id| {
                let s = samples
                    .get(id)
                    .ok_or_else(|| config(format!("image id {id} outside 0..{}", samples.len())))?;
                Ok(Self {
                    id,
                    image: s.image.clone(),
                    label: s.label,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingConfig {
    pub t_values: Vec<usize>,
    pub trials_per_t: usize,
    pub images: Vec<ScalingImage>,
    pub targets: Vec<usize>,
    pub attack: AttackConfig,
    pub seed: Seed,
}

impl ScalingConfig {
    pub fn default_t_values() -> Vec<usize> {
        vec![1, 2, 4, 8, 16, 32, 64]
    }

    pub fn validate(&self, zoo: &Zoo) -> Result<()> {
        self.attack.validate()?;
        if self.attack.method == Method::Embedding {
            return Err(config("scaling runs use a cross-entropy attack method"));
        }
        if self.t_values.is_empty() || self.trials_per_t == 0 || self.images.is_empty() || self.targets.is_empty() {
            return Err(config("t_values, trials_per_t, images and targets must be non-empty"));
        }
        if self.t_values.windows(2).any(|w| w[0] >= w[1]) || self.t_values[0] == 0 {
            return Err(config("t_values must be strictly ascending positive integers"));
        }
        let max_t = *self.t_values.last().expect("non-empty");
        if max_t > zoo.surrogates.len() {
            return Err(config(format!(
                "T = {max_t} exceeds the {} available surrogates",
                zoo.surrogates.len()
            )));
        }
        if zoo.heldout.is_empty() {
            return Err(config("zoo has no held-out models"));
        }
        let k = zoo.heldout[0].num_classes;
        if k < 2 {
            return Err(config("targeted attacks need at least two classes"));
        }
        if let Some(t) = self.targets.iter().find(|&&t| t >= k) {
            return Err(config(format!("target {t} outside 0..{k}")));
        }
        if let Some(img) = self.images.iter().find(|i| i.label >= k) {
            return Err(config(format!("image {} has label outside 0..{k}", img.id)));
        }
        Ok(())
    }

    fn num_classes(zoo: &Zoo) -> usize {
        zoo.heldout[0].num_classes
    }
}

/// Which held-out pool a record or row refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    Heldout,
    HeldoutAt,
}

/// One (run, held-out model) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub t: usize,
    pub trial: usize,
    pub image_id: usize,
    pub target: usize,
    pub pool: Pool,
    pub heldout_model_id: usize,
    pub targeted_success: bool,
    pub untargeted_success: bool,
    pub ce_loss: f64,
}

/// Aggregate over runs at one `T`, for one held-out model or the pooled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub pool: Pool,
    /// `None` for the pooled row.
    pub heldout_model_id: Option<usize>,
    pub t: usize,
    pub asr_mean: f64,
    pub asr_std: f64,
    pub loss_mean: f64,
    pub loss_std: f64,
    pub untargeted_mean: f64,
    pub untargeted_std: f64,
    pub n_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub rows: Vec<ScalingRow>,
    pub records: Vec<RunRecord>,
    /// Mean surrogate loss at the returned iterate, per run in record order.
    pub surrogate_losses: Vec<f64>,
}

impl ScalingResult {
    /// Pooled rows of one pool, in ascending `T`.
    pub fn pooled(&self, pool: Pool) -> Vec<&ScalingRow> {
        self.rows
            .iter()
            .filter(|r| r.pool == pool && r.heldout_model_id.is_none())
            .collect()
    }
}

/// Fraction of `(model, adv)` pairs classified as `y_target`.
pub fn asr_eval(models: &[&TrainedModel], advs: &[ImageTensor], y_target: usize) -> f64 {
    assert!(
        !models.is_empty() && !advs.is_empty(),
        "asr_eval needs models and examples"
    );
    let hits: usize = models
        .iter()
        .map(|m| advs.iter().filter(|a| m.predict(a) == y_target).count())
        .sum();
    hits as f64 / (models.len() * advs.len()) as f64
}

/// Fraction of `(model, adv)` pairs whose prediction differs from the
/// prediction on the matching natural input.
pub fn untargeted_eval(models: &[&TrainedModel], advs: &[ImageTensor], naturals: &[ImageTensor]) -> f64 {
    assert!(
        !models.is_empty() && !advs.is_empty(),
        "untargeted_eval needs models and examples"
    );
    assert_eq!(advs.len(), naturals.len(), "one natural input per adversarial example");
    let hits: usize = models
        .iter()
        .map(|m| {
            advs.iter()
                .zip(naturals)
                .filter(|(a, n)| m.predict(a) != m.predict(n))
                .count()
        })
        .sum();
    hits as f64 / (models.len() * advs.len()) as f64
}

fn effective_target(seed: Seed, image: &ScalingImage, target_idx: usize, target: usize, k: usize) -> usize {
    if target != image.label {
        return target;
    }
    let mut rng = RngStream::new(seed, TARGET_STREAM)
        .path(&[image.id as u64, target_idx as u64])
        .rng();
    let other = rng.below(k - 1);
    if other >= image.label {
        other + 1
    } else {
        other
    }
}

struct Unit {
    t: usize,
    trial: usize,
    image: usize,
    target_idx: usize,
}

fn ensemble_for(zoo: &Zoo, seed: Seed, t: usize, trial: usize) -> Vec<usize> {
    RngStream::new(seed, ENSEMBLE_STREAM)
        .path(&[t as u64, trial as u64])
        .rng()
        .sample_without_replacement(zoo.surrogates.len(), t)
}

fn score(
    models: &[TrainedModel],
    pool: Pool,
    u: &Unit,
    cfg: &ScalingConfig,
    target: usize,
    adv: &ImageTensor,
    x_nat: &ImageTensor,
) -> Vec<RunRecord> {
    models
        .iter()
        .enumerate()
        .map(|(id, m)| {
            let logits = m.logits(adv);
            RunRecord {
                t: u.t,
                trial: u.trial,
                image_id: cfg.images[u.image].id,
                target,
                pool,
                heldout_model_id: id,
                targeted_success: argmax(&logits) == target,
                untargeted_success: argmax(&logits) != m.predict(x_nat),
                ce_loss: m.loss_ce(adv, target),
            }
        })
        .collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn aggregate(records: &[RunRecord], t_values: &[usize], pool: Pool, n_models: usize) -> Vec<ScalingRow> {
    let mut rows = Vec::new();
    for &t in t_values {
        let at_t: Vec<&RunRecord> = records.iter().filter(|r| r.t == t && r.pool == pool).collect();
        if at_t.is_empty() {
            continue;
        }
        let row = |heldout_model_id: Option<usize>, asr: Vec<f64>, loss: Vec<f64>, unt: Vec<f64>| {
            let (asr_mean, asr_std) = mean_std(&asr);
            let (loss_mean, loss_std) = mean_std(&loss);
            let (untargeted_mean, untargeted_std) = mean_std(&unt);
            ScalingRow {
                pool,
                heldout_model_id,
                t,
                asr_mean,
                asr_std,
                loss_mean,
                loss_std,
                untargeted_mean,
                untargeted_std,
                n_runs: asr.len(),
            }
        };
        // records of one run are contiguous, one per held-out model
        let runs: Vec<&[&RunRecord]> = at_t.chunks(n_models).collect();
        let per_run = |f: &dyn Fn(&RunRecord) -> f64| -> Vec<f64> {
            runs.iter()
                .map(|run| run.iter().map(|r| f(r)).sum::<f64>() / run.len() as f64)
                .collect()
        };
        rows.push(row(
            None,
            per_run(&|r| f64::from(u8::from(r.targeted_success))),
            per_run(&|r| r.ce_loss),
            per_run(&|r| f64::from(u8::from(r.untargeted_success))),
        ));
        for id in 0..n_models {
            let mine: Vec<&&RunRecord> = at_t.iter().filter(|r| r.heldout_model_id == id).collect();
            rows.push(row(
                Some(id),
                mine.iter().map(|r| f64::from(u8::from(r.targeted_success))).collect(),
                mine.iter().map(|r| r.ce_loss).collect(),
                mine.iter().map(|r| f64::from(u8::from(r.untargeted_success))).collect(),
            ));
        }
    }
    rows
}

/// Runs the sweep. Work units are independent and may execute on any rayon
/// worker; results are assembled in `(T, trial, image, target)` order.
pub fn run_scaling(zoo: &Zoo, cfg: &ScalingConfig) -> Result<ScalingResult> {
    cfg.validate(zoo)?;
    zoo.check_disjoint()?;
    let k = ScalingConfig::num_classes(zoo);
    let units: Vec<Unit> = cfg
        .t_values
        .iter()
        .flat_map(|&t| {
            (0..cfg.trials_per_t).flat_map(move |trial| {
                (0..cfg.images.len()).flat_map(move |image| {
                    (0..cfg.targets.len()).map(move |target_idx| Unit {
                        t,
                        trial,
                        image,
                        target_idx,
                    })
                })
            })
        })
        .collect();
    let heldout_seeds: std::collections::HashSet<u64> = zoo
        .heldout
        .iter()
        .chain(&zoo.heldout_at)
        .map(|m| m.spec.init_seed)
        .collect();

    let outcomes = units
        .par_iter()
        .map(|u| -> Result<(Vec<RunRecord>, f64)> {
            let picks = ensemble_for(zoo, cfg.seed, u.t, u.trial);
            let ensemble: Vec<&TrainedModel> = picks.iter().map(|&i| &zoo.surrogates[i]).collect();
            if ensemble.iter().any(|m| heldout_seeds.contains(&m.spec.init_seed)) {
                return Err(contract("a held-out model was drawn into an ensemble"));
            }
            let img = &cfg.images[u.image];
            let target = effective_target(cfg.seed, img, u.target_idx, cfg.targets[u.target_idx], k);
            let attack = AttackConfig {
                seed: RngStream::new(cfg.seed, ATTACK_STREAM)
                    .path(&[u.t as u64, u.trial as u64, u.image as u64, u.target_idx as u64])
                    .rng()
                    .next_u64(),
                ..cfg.attack.clone()
            };
            let result = run_attack(&ensemble, &img.image, target, &attack)?;
            let mut records = score(&zoo.heldout, Pool::Heldout, u, cfg, target, &result.adv, &img.image);
            records.extend(score(
                &zoo.heldout_at,
                Pool::HeldoutAt,
                u,
                cfg,
                target,
                &result.adv,
                &img.image,
            ));
            Ok((records, result.final_trace()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut surrogate_losses = Vec::with_capacity(outcomes.len());
    for (r, loss) in outcomes {
        records.extend(r);
        surrogate_losses.push(loss);
    }
    let mut rows = aggregate(&records, &cfg.t_values, Pool::Heldout, zoo.heldout.len());
    rows.extend(aggregate(
        &records,
        &cfg.t_values,
        Pool::HeldoutAt,
        zoo.heldout_at.len(),
    ));
    Ok(ScalingResult {
        rows,
        records,
        surrogate_losses,
    })
}
