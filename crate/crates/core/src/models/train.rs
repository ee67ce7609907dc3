//! Mini-batch SGD on cross-entropy, optionally on FGSM examples (FGSM-AT).

use crate::error::{contract, Error, Result};
use crate::models::dataset::{Sample, SyntheticDataset};
use crate::models::network::{argmax, softmax_ce, ModelMeta, TrainedModel, Weights};
use crate::models::spec::ModelSpec;
use crate::rng::{RngStream, Seed};
use crate::tensor::{sign, ImageTensor};

/// Mean cross-entropy over a sample set.
pub fn mean_loss(model: &TrainedModel, samples: &[Sample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples
        .iter()
        .map(|s| softmax_ce(&model.logits(&s.image), s.label).0)
        .sum::<f64>()
        / samples.len() as f64
}

pub fn accuracy(model: &TrainedModel, samples: &[Sample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let hits = samples
        .iter()
        .filter(|s| argmax(&model.logits(&s.image)) == s.label)
        .count();
    hits as f64 / samples.len() as f64
}

pub fn train_model(spec: &ModelSpec, dataset: &SyntheticDataset, seed: Seed) -> Result<TrainedModel> {
    spec.validate()?;
    if spec.training.at_flag {
        return Err(contract("train_model called with at_flag set; use train_model_at"));
    }
    fit(spec, dataset, seed, 0.0)
}

pub fn train_model_at(spec: &ModelSpec, dataset: &SyntheticDataset, seed: Seed) -> Result<TrainedModel> {
    spec.validate()?;
    if !spec.training.at_flag {
        return Err(contract("train_model_at requires at_flag"));
    }
    fit(spec, dataset, seed, spec.training.at_epsilon)
}

fn fgsm_example(model: &TrainedModel, s: &Sample, eps: f64) -> ImageTensor {
    if eps == 0.0 {
        return s.image.clone();
    }
    let g = model.grad_input(&s.image, s.label);
    s.image
        .axpy(eps, &sign(&g))
        .expect("gradient has image shape")
        .clamp01()
}

fn fit(spec: &ModelSpec, dataset: &SyntheticDataset, seed: Seed, at_eps: f64) -> Result<TrainedModel> {
    if dataset.train.is_empty() {
        return Err(contract("dataset has no training samples"));
    }
    let t = &spec.training;
    let weights = Weights::init(
        &spec.architecture,
        dataset.input_len(),
        dataset.num_classes,
        RngStream::new(spec.init_seed, 0),
        t.init_gain,
    );
    let mut model = TrainedModel::from_weights(spec.clone(), dataset.shape, dataset.num_classes, weights);
    let shuffle_root = RngStream::new(seed, 1);
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut grad = model.weights.zeros_like();

    for epoch in 0..t.epochs {
        let mut rng = shuffle_root.child(epoch as u64).rng();
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(t.batch_size) {
            grad = grad.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            let inputs: Vec<ImageTensor> = batch
                .iter()
                .map(|&i| fgsm_example(&model, &dataset.train[i], at_eps))
                .collect();
            for (&i, x) in batch.iter().zip(&inputs) {
                let (loss, _) = model.accumulate_param_grad(x.as_slice(), dataset.train[i].label, &mut grad, scale);
                epoch_loss += loss;
            }
            model.weights.sgd_step(&grad, t.learning_rate);
        }
        if !epoch_loss.is_finite() || !model.weights.all_finite() {
            return Err(Error::TrainingDiverged { slot: 0, epoch });
        }
    }
    model.meta = ModelMeta {
        train_accuracy: accuracy(&model, &dataset.train),
        test_accuracy: accuracy(&model, &dataset.test),
        dataset_fingerprint: dataset.fingerprint(),
    };
    Ok(model)
}
