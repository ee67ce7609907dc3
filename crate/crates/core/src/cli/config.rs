use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, Method, ProbeConfig};
use crate::error::{config, Error, Result};
use crate::models::{DatasetConfig, ZooConfig};
use crate::rng::Seed;
use crate::scaling::{FitWindow, ScalingConfig};
use crate::theory::TheoryConfig;

pub const CONFIG_FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackTolerances {
    /// Minimum pooled held-out targeted ASR; unchecked when absent.
    pub min_heldout_asr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackRunSection {
    /// The first `ensemble_size` surrogates form the ensemble.
    pub ensemble_size: usize,
    pub n_images: usize,
    /// Test-split indices; overrides `n_images` when set.
    pub image_ids: Option<Vec<usize>>,
    pub targets: Vec<usize>,
    pub write_images: bool,
    pub tolerances: AttackTolerances,
}

impl Default for AttackRunSection {
    fn default() -> Self {
        Self {
            ensemble_size: 64,
            n_images: 10,
            image_ids: None,
            targets: vec![0, 1],
            write_images: true,
            tolerances: AttackTolerances::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingTolerances {
    pub min_alpha: f64,
    pub min_r_squared: f64,
    /// Minimum `ASR(T_max) − ASR(T_min)` on the pooled held-out rows.
    pub min_asr_gain: f64,
    pub max_loss_asr_spearman: f64,
    /// Untargeted-metric checks on the adversarially trained pool, when present.
    pub at_max_abs_alpha: f64,
    pub at_normal_ratio: f64,
}

impl Default for ScalingTolerances {
    fn default() -> Self {
        Self {
            min_alpha: 0.0,
            min_r_squared: 0.7,
            min_asr_gain: 0.2,
            max_loss_asr_spearman: -0.8,
            at_max_abs_alpha: 0.05,
            at_normal_ratio: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingSection {
    pub t_values: Vec<usize>,
    pub trials_per_t: usize,
    pub n_images: usize,
    pub image_ids: Option<Vec<usize>>,
    pub targets: Vec<usize>,
    pub fit_window: FitWindow,
    pub tolerances: ScalingTolerances,
    pub seed: Seed,
}

impl Default for ScalingSection {
    fn default() -> Self {
        Self {
            t_values: ScalingConfig::default_t_values(),
            trials_per_t: 5,
            n_images: 10,
            image_ids: None,
            targets: vec![0, 1],
            fit_window: FitWindow::default(),
            tolerances: ScalingTolerances::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConflictTolerances {
    /// Upper bound on `magnitude(T_max) / magnitude(T_min)` for mifgsm.
    pub mifgsm_max_ratio: f64,
    /// Lower bound on the same ratio for micwa.
    pub micwa_min_ratio: f64,
}

impl Default for ConflictTolerances {
    fn default() -> Self {
        Self {
            mifgsm_max_ratio: 0.5,
            micwa_min_ratio: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConflictSection {
    pub methods: Vec<Method>,
    pub t_values: Vec<usize>,
    pub n_images: usize,
    pub probe: ProbeConfig,
    pub tolerances: ConflictTolerances,
}

impl Default for ConflictSection {
    fn default() -> Self {
        Self {
            methods: vec![Method::Mifgsm, Method::Micwa],
            t_values: vec![1, 30],
            n_images: 10,
            probe: ProbeConfig::default(),
            tolerances: ConflictTolerances::default(),
        }
    }
}

/// One JSON file per run; unknown keys anywhere abort parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub format_version: u64,
    /// Written into every section seed when set.
    pub seed: Option<Seed>,
    pub worker_count: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub zoo: ZooConfig,
    /// Load this zoo file instead of training one; relative paths resolve
    /// against the config file's directory.
    pub zoo_path: Option<PathBuf>,
    pub attack: AttackConfig,
    pub attack_run: Option<AttackRunSection>,
    pub scaling: Option<ScalingSection>,
    pub theory: Option<TheoryConfig>,
    pub conflict: Option<ConflictSection>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            seed: None,
            worker_count: None,
            output_dir: None,
            dataset: DatasetConfig::default(),
            zoo: ZooConfig::default(),
            zoo_path: None,
            attack: AttackConfig::default(),
            attack_run: None,
            scaling: None,
            theory: None,
            conflict: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let (Some(zoo), Some(dir)) = (&cfg.zoo_path, path.parent()) {
            if zoo.is_relative() {
                cfg.zoo_path = Some(dir.join(zoo));
            }
        }
        Ok(cfg)
    }

    /// Pushes the global seed into every section.
    pub fn apply_seed(&mut self, seed: Seed) {
        self.seed = Some(seed);
        self.zoo.seed = seed;
        self.attack.seed = seed;
        if let Some(s) = &mut self.scaling {
            s.seed = seed;
        }
        if let Some(t) = &mut self.theory {
            t.seed = seed;
        }
        if let Some(c) = &mut self.conflict {
            c.probe.seed = seed;
        }
    }

    /// Checks every present section, including cross-section constraints
    /// against the zoo sizes.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(config(format!(
                "format_version {} is not supported (expected {CONFIG_FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.worker_count == Some(0) {
            return Err(config("worker_count must be positive"));
        }
        self.dataset.validate()?;
        self.zoo.mixture.validate()?;
        self.attack.validate()?;
        let n_sur = self.zoo.n_surrogate;
        let too_many = |what: &str, t: usize| -> Error {
            config(format!("{what} requests T = {t} but the zoo has {n_sur} surrogates"))
        };
        if let Some(s) = &self.scaling {
            if let Some(&t) = s.t_values.iter().max() {
                if t > n_sur {
                    return Err(too_many("scaling.t_values", t));
                }
            }
            if s.t_values.is_empty() || s.trials_per_t == 0 || s.targets.is_empty() {
                return Err(config("scaling needs t_values, trials_per_t and targets"));
            }
            if s.t_values.windows(2).any(|w| w[0] >= w[1]) || s.t_values[0] == 0 {
                return Err(config("scaling.t_values must be strictly ascending positive integers"));
            }
            if self.attack.method == Method::Embedding {
                return Err(config("scaling runs use a cross-entropy attack method"));
            }
            check_targets(&s.targets, self.dataset.num_classes)?;
        }
        if let Some(a) = &self.attack_run {
            if a.ensemble_size == 0 || a.ensemble_size > n_sur {
                return Err(too_many("attack_run.ensemble_size", a.ensemble_size));
            }
            check_targets(&a.targets, self.dataset.num_classes)?;
        }
        if let Some(c) = &self.conflict {
            if let Some(&t) = c.t_values.iter().max() {
                if t > n_sur {
                    return Err(too_many("conflict.t_values", t));
                }
            }
            if c.t_values.len() < 2 || c.t_values.contains(&0) {
                return Err(config("conflict.t_values needs at least two positive sizes"));
            }
            if c.methods.iter().any(|m| !matches!(m, Method::Mifgsm | Method::Micwa)) {
                return Err(config("conflict.methods may only contain mifgsm and micwa"));
            }
        }
        if let Some(t) = &self.theory {
            t.validate()?;
        }
        Ok(())
    }
}

fn check_targets(targets: &[usize], k: usize) -> Result<()> {
    match targets.iter().find(|&&t| t >= k) {
        Some(t) => Err(config(format!("target {t} outside 0..{k}"))),
        None => Ok(()),
    }
}
