//! Versioned JSON zoo files.
//!
//! ```text
//! { "format_version": 1,
//!   "dataset_fingerprint": "...",
//!   "models": [ { "role", "spec", "input_shape", "num_classes", "weights", "meta" }, ... ],
//!   "checksum": "<sha256 of the compact JSON of the three fields above>" }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::network::{ModelMeta, TrainedModel, Weights};
use crate::models::spec::ModelSpec;
use crate::models::zoo::{Role, Zoo};
use crate::tensor::Shape;

pub const ZOO_FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredModel {
    role: Role,
    spec: ModelSpec,
    input_shape: Shape,
    num_classes: usize,
    weights: Weights,
    meta: ModelMeta,
}

#[derive(Debug, Serialize, Deserialize)]
struct Body {
    format_version: u64,
    dataset_fingerprint: String,
    models: Vec<StoredModel>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ZooFile {
    #[serde(flatten)]
    body: Body,
    checksum: String,
}

fn checksum(body: &Body) -> Result<String> {
    let bytes = serde_json::to_vec(body)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn zoo_to_json(zoo: &Zoo) -> Result<String> {
    let models = zoo
        .iter_roles()
        .map(|(role, m)| StoredModel {
            role,
            spec: m.spec.clone(),
            input_shape: m.input_shape,
            num_classes: m.num_classes,
            weights: m.weights.clone(),
            meta: m.meta.clone(),
        })
        .collect();
    let body = Body {
        format_version: ZOO_FORMAT_VERSION,
        dataset_fingerprint: zoo.dataset_fingerprint.clone(),
        models,
    };
    let checksum = checksum(&body)?;
    Ok(serde_json::to_string(&ZooFile { body, checksum })?)
}

pub fn zoo_from_json(text: &str) -> Result<Zoo> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Truncated(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Truncated("missing format_version".into()))?;
    if version != ZOO_FORMAT_VERSION {
        return Err(Error::Version(version));
    }
    let file: ZooFile = serde_json::from_value(value).map_err(|e| Error::Truncated(e.to_string()))?;
    let found = checksum(&file.body)?;
    if found != file.checksum {
        return Err(Error::Checksum {
            expected: file.checksum,
            found,
        });
    }
    let mut zoo = Zoo {
        surrogates: Vec::new(),
        heldout: Vec::new(),
        heldout_at: Vec::new(),
        dataset_fingerprint: file.body.dataset_fingerprint,
    };
    for s in file.body.models {
        let model = TrainedModel {
            spec: s.spec,
            input_shape: s.input_shape,
            num_classes: s.num_classes,
            weights: s.weights,
            meta: s.meta,
        };
        match s.role {
            Role::Surrogate => zoo.surrogates.push(model),
            Role::Heldout => zoo.heldout.push(model),
            Role::HeldoutAt => zoo.heldout_at.push(model),
        }
    }
    zoo.check_disjoint()?;
    Ok(zoo)
}

pub fn zoo_save(zoo: &Zoo, path: &Path) -> Result<()> {
    std::fs::write(path, zoo_to_json(zoo)?)?;
    Ok(())
}

pub fn zoo_load(path: &Path) -> Result<Zoo> {
    zoo_from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::network::tests::{all_architectures, random_image, random_model};

    fn tiny_zoo() -> Zoo {
        let shape = Shape::new(1, 4, 4).unwrap();
        let mut models: Vec<TrainedModel> = all_architectures()
            .into_iter()
            .enumerate()
            .map(|(i, a)| {
                let mut m = random_model(a, shape, 3, 40 + i as u64);
                m.spec.init_seed = 100 + i as u64;
                m.meta = ModelMeta {
                    train_accuracy: 0.5,
                    test_accuracy: 0.25,
                    dataset_fingerprint: "abc".into(),
                };
                m
            })
            .collect();
        let heldout_at = models.split_off(5);
        let heldout = models.split_off(3);
        Zoo {
            surrogates: models,
            heldout,
            heldout_at,
            dataset_fingerprint: "abc".into(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let zoo = tiny_zoo();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zoo.json");
        zoo_save(&zoo, &path).unwrap();
        let back = zoo_load(&path).unwrap();
        assert_eq!(back, zoo);
        for probe in 0..10 {
            let x = random_image(Shape::new(1, 4, 4).unwrap(), probe);
            for (a, b) in zoo.iter_roles().zip(back.iter_roles()) {
                let (la, lb) = (a.1.logits(&x), b.1.logits(&x));
                assert!(la.iter().zip(&lb).all(|(p, q)| p.to_bits() == q.to_bits()));
            }
        }
    }

    #[test]
    fn unknown_version_is_rejected() {
        let text = zoo_to_json(&tiny_zoo()).unwrap();
        let bumped = text.replacen("\"format_version\":1", "\"format_version\":999", 1);
        assert!(matches!(zoo_from_json(&bumped), Err(Error::Version(999))));
    }

    #[test]
    fn corrupted_weight_byte_fails_checksum() {
        let text = zoo_to_json(&tiny_zoo()).unwrap();
        let start = text.find("\"weight\":[").unwrap() + 12;
        let mut bytes = text.into_bytes();
        let pos = (start..bytes.len())
            .find(|&i| bytes[i].is_ascii_digit() && bytes[i] != b'0')
            .unwrap();
        bytes[pos] = if bytes[pos] == b'9' { b'8' } else { bytes[pos] + 1 };
        let corrupted = String::from_utf8(bytes).unwrap();
        assert!(matches!(zoo_from_json(&corrupted), Err(Error::Checksum { .. })));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let text = zoo_to_json(&tiny_zoo()).unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(zoo_from_json(cut), Err(Error::Truncated(_))));
    }
}
