//! Desk-scale SGD training with the dynamic tail-truncation schedule.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::freqparam::{apportion_truncation, keep_floors, TruncationSchedule};
use crate::nn::{GradStore, ModelGraph};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Fraction of each parameter's coefficients kept at the schedule's end.
    pub keep_fraction: f64,
    pub decay: f64,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(Error::Range(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Range("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Range("batch size must be >= 1".into()));
        }
        if !(0.0 < self.keep_fraction && self.keep_fraction <= 1.0) {
            return Err(Error::Range(format!(
                "keep fraction must lie in (0,1], got {}",
                self.keep_fraction
            )));
        }
        if !(0.0 < self.decay && self.decay < 1.0) {
            return Err(Error::Range(format!(
                "decay must lie in (0,1), got {}",
                self.decay
            )));
        }
        Ok(())
    }
}

/// One JSON line of the training log.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub kept_total: usize,
    pub truncated_this_epoch: usize,
}

/// Labeled image classification data: one `(C,H,W)` tensor per example.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Seeded synthetic blobs: class k is a Gaussian bump at a class-specific
/// position plus pixel noise. Linearly separable for small noise.
pub fn synth_blobs(
    n_per_class: usize,
    num_classes: usize,
    height: usize,
    width: usize,
    noise: f64,
    rng: &mut Rng,
) -> Result<LabeledDataset> {
    if n_per_class == 0 || num_classes == 0 {
        return Err(Error::Argument("need at least one class and one example".into()));
    }
    let sigma = 1.5f64;
    let mut inputs = Vec::with_capacity(n_per_class * num_classes);
    let mut labels = Vec::with_capacity(n_per_class * num_classes);
    for class in 0..num_classes {
        let cy = (class + 1) as f64 * height as f64 / (num_classes + 1) as f64;
        let cx = (class + 1) as f64 * width as f64 / (num_classes + 1) as f64;
        for _ in 0..n_per_class {
            let mut img = Vec::with_capacity(height * width);
            for y in 0..height {
                for x in 0..width {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    img.push((-d2 / (2.0 * sigma * sigma)).exp() + noise * rng.next_normal());
                }
            }
            inputs.push(Tensor::from_vec(&[1, height, width], img)?);
            labels.push(class);
        }
    }
    Ok(LabeledDataset {
        inputs,
        labels,
        num_classes,
    })
}

/// Mean softmax cross-entropy over the batch plus the logit gradient.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; n * k];
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        loss += sum.ln() + max - row[label];
        for j in 0..k {
            grad[i * k + j] = (exps[j] / sum - if j == label { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((loss / n as f64, Tensor::from_vec(&[n, k], grad)?))
}

fn stack_batch(inputs: &[Tensor], indices: &[usize]) -> Result<Tensor> {
    let item_shape = inputs[indices[0]].shape().to_vec();
    let mut shape = vec![indices.len()];
    shape.extend_from_slice(&item_shape);
    let mut data = Vec::with_capacity(indices.len() * inputs[indices[0]].len());
    for &i in indices {
        data.extend_from_slice(inputs[i].data());
    }
    Tensor::from_vec(&shape, data)
}

/// Eval-mode accuracy over the whole dataset.
pub fn evaluate_accuracy(model: &ModelGraph, data: &LabeledDataset) -> Result<f64> {
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(64) {
        let batch = stack_batch(&data.inputs, chunk)?;
        let logits = model.forward_eval(&batch)?;
        let k = logits.shape()[1];
        for (row, &i) in chunk.iter().enumerate() {
            let scores = &logits.data()[row * k..(row + 1) * k];
            let pred = scores
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap();
            correct += usize::from(pred == data.labels[i]);
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Trains with reconstructed spatial weights, SGD on the kept coefficients,
/// and the per-epoch truncation schedule. Returns the per-epoch log.
pub fn train(
    model: &mut ModelGraph,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Argument("dataset is empty".into()));
    }
    let sizes: Vec<usize> = model.named_params().iter().map(|(_, p)| p.total()).collect();
    let floors = keep_floors(&sizes, cfg.keep_fraction);
    let total: usize = sizes.iter().sum();
    let target: usize = floors.iter().sum();
    let mut schedule = TruncationSchedule::new(total, target, cfg.decay)?;

    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = stack_batch(&data.inputs, chunk)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let (logits, ctxs) = model.forward_train(&batch, rng)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                let layer = model
                    .first_nonfinite_layer(&batch)
                    .unwrap_or_else(|| "loss".into());
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("non-finite loss; first non-finite activation: {layer}"),
                });
            }
            epoch_loss += loss;
            batches += 1;
            let mut grads = GradStore::new();
            model.backward(&ctxs, dlogits, &mut grads)?;
            model.apply_sgd(&grads, cfg.lr);
        }

        // end of epoch: advance the schedule and apportion its truncation
        // count across parameters
        let truncate_now = schedule.step();
        let keeps: Vec<usize> = model.named_params().iter().map(|(_, p)| p.keep()).collect();
        let cuts = apportion_truncation(&keeps, &floors, truncate_now);
        let mut idx = 0;
        let mut trunc_err = None;
        model.for_each_param_mut(&mut |_, p| {
            if cuts[idx] > 0 {
                if let Err(e) = p.apply_truncation(p.keep() - cuts[idx]) {
                    trunc_err = Some(e);
                }
            }
            idx += 1;
        });
        if let Some(e) = trunc_err {
            return Err(e);
        }
        let truncated: usize = cuts.iter().sum();
        // realized keeps are the schedule's state for the next epoch
        schedule.current_keep = model.kept_total();

        logs.push(EpochLog {
            epoch,
            loss: epoch_loss / batches as f64,
            accuracy: evaluate_accuracy(model, data)?,
            kept_total: model.kept_total(),
            truncated_this_epoch: truncated,
        });
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ArchPlan;

    fn tiny_setup() -> (ModelGraph, LabeledDataset) {
        let mut rng = Rng::from_seed(7);
        let data = synth_blobs(8, 2, 8, 8, 0.3, &mut rng).unwrap();
        let model =
            ModelGraph::build(ArchPlan::blob_net(2, 1, 8, 8), &mut Rng::from_seed(1)).unwrap();
        (model, data)
    }

    #[test]
    fn zero_lr_only_truncation_changes_params() {
        let (mut model, data) = tiny_setup();
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 2,
            batch_size: 4,
            keep_fraction: 1.0,
            decay: 0.5,
        };
        let before: Vec<Vec<f64>> = model
            .named_params()
            .iter()
            .map(|(_, p)| p.coeffs().data().to_vec())
            .collect();
        train(&mut model, &data, &cfg, &mut Rng::from_seed(3)).unwrap();
        let after: Vec<Vec<f64>> = model
            .named_params()
            .iter()
            .map(|(_, p)| p.coeffs().data().to_vec())
            .collect();
        // keep_fraction 1.0 means no truncation either: bit-identical
        assert_eq!(before, after);
    }

    #[test]
    fn kept_total_never_increases() {
        let (mut model, data) = tiny_setup();
        let cfg = TrainConfig {
            lr: 0.05,
            epochs: 6,
            batch_size: 4,
            keep_fraction: 0.2,
            decay: 0.5,
        };
        let logs = train(&mut model, &data, &cfg, &mut Rng::from_seed(3)).unwrap();
        for pair in logs.windows(2) {
            assert!(pair[1].kept_total <= pair[0].kept_total);
        }
        let last = logs.last().unwrap();
        assert_eq!(
            last.kept_total,
            model.kept_total(),
            "log must reflect the live model"
        );
    }

    #[test]
    fn truncation_counts_non_increasing_and_reach_target() {
        let (mut model, data) = tiny_setup();
        let sizes: Vec<usize> = model.named_params().iter().map(|(_, p)| p.total()).collect();
        let floors = keep_floors(&sizes, 0.1);
        let target: usize = floors.iter().sum();
        let cfg = TrainConfig {
            lr: 0.05,
            epochs: 16,
            batch_size: 4,
            keep_fraction: 0.1,
            decay: 0.5,
        };
        let logs = train(&mut model, &data, &cfg, &mut Rng::from_seed(5)).unwrap();
        for pair in logs.windows(2) {
            assert!(
                pair[1].truncated_this_epoch <= pair[0].truncated_this_epoch,
                "{pair:?}"
            );
        }
        assert_eq!(logs.last().unwrap().kept_total, target);
    }

    #[test]
    fn same_seed_same_log() {
        let (mut m1, data) = tiny_setup();
        let (mut m2, _) = tiny_setup();
        let cfg = TrainConfig {
            lr: 0.05,
            epochs: 3,
            batch_size: 4,
            keep_fraction: 0.5,
            decay: 0.5,
        };
        let l1 = train(&mut m1, &data, &cfg, &mut Rng::from_seed(9)).unwrap();
        let l2 = train(&mut m2, &data, &cfg, &mut Rng::from_seed(9)).unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn softmax_ce_matches_hand_computation() {
        let logits = Tensor::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        assert!((grad.data()[0] + 0.5).abs() < 1e-12);
        assert!((grad.data()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_rejected() {
        let (mut model, _) = tiny_setup();
        let data = LabeledDataset {
            inputs: vec![],
            labels: vec![],
            num_classes: 2,
        };
        let cfg = TrainConfig {
            lr: 0.1,
            epochs: 1,
            batch_size: 4,
            keep_fraction: 1.0,
            decay: 0.5,
        };
        assert!(matches!(
            train(&mut model, &data, &cfg, &mut Rng::from_seed(0)),
            Err(Error::Argument(_))
        ));
    }
}
