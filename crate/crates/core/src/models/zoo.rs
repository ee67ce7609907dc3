//! Surrogate / held-out / adversarially-trained model pools.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config, contract, Error, Result};
use crate::models::dataset::SyntheticDataset;
use crate::models::network::TrainedModel;
use crate::models::spec::SpecMixture;
use crate::models::train::{train_model, train_model_at};
use crate::rng::{splitmix64, RngStream, Seed};

const MAX_RETRIES: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Surrogate,
    Heldout,
    HeldoutAt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZooConfig {
    pub n_surrogate: usize,
    pub n_heldout: usize,
    pub n_heldout_at: usize,
    pub mixture: SpecMixture,
    /// FGSM radius used for the adversarially trained pool.
    pub at_epsilon: f64,
    pub seed: Seed,
}

impl Default for ZooConfig {
    fn default() -> Self {
        Self {
            n_surrogate: 64,
            n_heldout: 8,
            n_heldout_at: 4,
            mixture: SpecMixture::default(),
            at_epsilon: 8.0 / 255.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Zoo {
    pub surrogates: Vec<TrainedModel>,
    pub heldout: Vec<TrainedModel>,
    pub heldout_at: Vec<TrainedModel>,
    pub dataset_fingerprint: String,
}

impl Zoo {
    pub fn len(&self) -> usize {
        self.surrogates.len() + self.heldout.len() + self.heldout_at.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter_roles(&self) -> impl Iterator<Item = (Role, &TrainedModel)> {
        self.surrogates
            .iter()
            .map(|m| (Role::Surrogate, m))
            .chain(self.heldout.iter().map(|m| (Role::Heldout, m)))
            .chain(self.heldout_at.iter().map(|m| (Role::HeldoutAt, m)))
    }

    /// Pairwise disjointness of the three pools by init seed.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = std::collections::HashMap::new();
        for (role, m) in self.iter_roles() {
            if let Some(prev) = seen.insert(m.spec.init_seed, role) {
                return Err(contract(format!(
                    "init seed {} appears in both {prev:?} and {role:?}",
                    m.spec.init_seed
                )));
            }
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.dataset_fingerprint.as_bytes());
        for (role, m) in self.iter_roles() {
            h.update(format!("{role:?}").as_bytes());
            h.update(m.fingerprint().as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn mean_test_accuracy(models: &[TrainedModel]) -> f64 {
        if models.is_empty() {
            return f64::NAN;
        }
        models.iter().map(|m| m.meta.test_accuracy).sum::<f64>() / models.len() as f64
    }
}

fn slot_seed(zoo_seed: Seed, slot: usize, attempt: u64) -> Seed {
    splitmix64(splitmix64(zoo_seed) ^ splitmix64((slot as u64) << 2 | attempt))
}

fn train_slot(cfg: &ZooConfig, dataset: &SyntheticDataset, slot: usize, adversarial: bool) -> Result<TrainedModel> {
    let mut last = None;
    for attempt in 0..=MAX_RETRIES {
        let init_seed = slot_seed(cfg.seed, slot, attempt);
        // architecture draw depends on the slot only, so a retry keeps the architecture
        let mut rng = RngStream::new(cfg.seed, 2).child(slot as u64).rng();
        let mut spec = cfg.mixture.sample(init_seed, &mut rng);
        let result = if adversarial {
            spec.training.at_flag = true;
            spec.training.at_epsilon = cfg.at_epsilon;
            train_model_at(&spec, dataset, init_seed)
        } else {
            train_model(&spec, dataset, init_seed)
        };
        match result {
            Ok(m) => return Ok(m),
            Err(Error::TrainingDiverged { epoch, .. }) => {
                log::warn!("slot {slot}: training diverged at epoch {epoch} (attempt {attempt})");
                last = Some(Error::TrainingDiverged { slot, epoch });
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Trains every slot (in parallel when a rayon pool is active) and assembles
/// the zoo in slot order.
pub fn build_zoo(cfg: &ZooConfig, dataset: &SyntheticDataset) -> Result<Zoo> {
    cfg.mixture.validate()?;
    if !(cfg.at_epsilon > 0.0 && cfg.at_epsilon <= 1.0) && cfg.n_heldout_at > 0 {
        return Err(config("at_epsilon must lie in (0, 1]"));
    }
    let total = cfg.n_surrogate + cfg.n_heldout + cfg.n_heldout_at;
    let first_at = cfg.n_surrogate + cfg.n_heldout;
    let mut models: Vec<TrainedModel> = (0..total)
        .into_par_iter()
        .map(|slot| train_slot(cfg, dataset, slot, slot >= first_at))
        .collect::<Result<Vec<_>>>()?;
    let heldout_at = models.split_off(first_at);
    let heldout = models.split_off(cfg.n_surrogate);
    let zoo = Zoo {
        surrogates: models,
        heldout,
        heldout_at,
        dataset_fingerprint: dataset.fingerprint(),
    };
    zoo.check_disjoint()?;
    Ok(zoo)
}
