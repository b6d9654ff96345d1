use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Activations, MlpArchitecture, MlpWeights, ModelMeta};
use crate::embedding::{EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::race::RaceDistribution;
use crate::tables::{NameTable, VoterRecord};

/// One training row: an embedding, a soft target and a non-negative weight
/// (a name count for Census tables, 1 for individual voter records).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub input: EmbeddingVector,
    pub target: RaceDistribution,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Seed for the train/validation split; `None` uses `seed`. Fixing it
    /// keeps the split identical across search trials.
    #[serde(default)]
    pub split_seed: Option<u64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 30,
            validation_fraction: 0.2,
            seed: 0,
            split_seed: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: 5,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidValue(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidValue(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidValue("batch size and epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::InvalidValue("invalid optimizer parameters".into()));
        }
        Ok(())
    }

    pub fn optimizer_label(&self) -> String {
        format!("adam beta1={} beta2={} eps={:e}", self.beta1, self.beta2, self.epsilon)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Weighted mean cross-entropy over the epoch's mini-batches.
    pub train_loss: f64,
    /// Weighted mean cross-entropy on the validation split, inference mode.
    pub validation_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    /// Validation loss of the returned (f32-rounded) weights.
    pub final_validation_loss: f64,
    pub n_train: usize,
    pub n_validation: usize,
    /// True when no separate validation split was possible and the
    /// training rows were used for validation.
    pub validated_on_train: bool,
    pub stopped_early: bool,
    pub wall_time_secs: f64,
}

impl TrainReport {
    /// Loss sequence without timing, for reproducibility checks.
    pub fn loss_trace(&self) -> Vec<(f64, f64)> {
        self.epochs.iter().map(|e| (e.train_loss, e.validation_loss)).collect()
    }
}

/// Splits row indices into `(train, validation)` by seeded shuffle.
pub(crate) fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut n_val = (n as f64 * fraction).floor() as usize;
    if n_val >= n {
        n_val = n - 1;
    }
    let val = idx.split_off(n - n_val);
    (idx, val)
}

fn mean_loss(w: &MlpWeights, rows: &[&TrainingExample]) -> f64 {
    let mut total = 0.0;
    let mut weight = 0.0;
    for ex in rows {
        let logits = w.run(ex.input.values(), None, &mut Activations::default());
        total += ex.weight * super::cross_entropy_logits(&logits, &ex.target);
        weight += ex.weight;
    }
    if weight > 0.0 {
        total / weight
    } else {
        0.0
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(n: usize, cfg: &TrainingConfig) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Fits a network by mini-batch Adam on the weighted cross-entropy.
///
/// Rows are split by seeded shuffle; the first `1 - validation_fraction`
/// share trains. Each batch minimizes the weight-normalized mean loss.
/// Training stops after `patience` epochs without validation improvement,
/// and the best-validation weights are returned rounded to `f32`.
pub fn train(
    dataset: &[TrainingExample],
    arch: &MlpArchitecture,
    cfg: &TrainingConfig,
    meta: ModelMeta,
) -> Result<(MlpWeights, TrainReport)> {
    let started = Instant::now();
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset".into()));
    }
    arch.validate()?;
    cfg.validate()?;
    for ex in dataset {
        if ex.input.dim() != arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: arch.input_dim,
                found: ex.input.dim(),
            });
        }
        if !(ex.weight >= 0.0 && ex.weight.is_finite()) {
            return Err(Error::InvalidValue(format!("example weight {} must be finite and >= 0", ex.weight)));
        }
    }

    let (train_idx, val_idx) = split_indices(dataset.len(), cfg.validation_fraction, cfg.split_seed.unwrap_or(cfg.seed));
    let validated_on_train = val_idx.is_empty();
    let val_rows: Vec<&TrainingExample> = if validated_on_train {
        train_idx.iter().map(|&i| &dataset[i]).collect()
    } else {
        val_idx.iter().map(|&i| &dataset[i]).collect()
    };

    let mut meta = meta;
    meta.training_seed = cfg.seed;
    let mut weights = MlpWeights::init(arch.clone(), meta, cfg.seed.wrapping_add(1))?;
    let mut params = weights.parameters();
    let mut adam = Adam::new(params.len(), cfg);
    let mut grad = vec![0.0; params.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut cache = Activations::default();
    let mut order = train_idx.clone();

    let mut best_loss = f64::INFINITY;
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_weight = 0.0;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            let mut batch_weight = 0.0;
            for &i in batch {
                let ex = &dataset[i];
                let masks = (arch.dropout > 0.0).then(|| weights.dropout_masks(&mut rng));
                batch_loss += weights.backprop(
                    ex.input.values(),
                    &ex.target,
                    ex.weight,
                    masks.as_deref(),
                    &mut cache,
                    &mut grad,
                );
                batch_weight += ex.weight;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: Some(batch_no),
                    loss: batch_loss,
                });
            }
            if batch_weight <= 0.0 {
                continue;
            }
            let scale = 1.0 / batch_weight;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut params, &grad);
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    batch: Some(batch_no),
                    loss: f64::NAN,
                });
            }
            weights.set_parameters(&params)?;
            epoch_loss += batch_loss;
            epoch_weight += batch_weight;
        }
        let train_loss = if epoch_weight > 0.0 { epoch_loss / epoch_weight } else { 0.0 };
        let validation_loss = mean_loss(&weights, &val_rows);
        if !validation_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: None,
                loss: validation_loss,
            });
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            validation_loss,
        });
        if validation_loss < best_loss {
            best_loss = validation_loss;
            best_params.copy_from_slice(&params);
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = epoch + 1 < cfg.epochs;
                break;
            }
        }
    }

    weights.set_parameters(&best_params)?;
    weights.quantize_f32();
    weights.meta.notes = serde_json::json!({
        "optimizer": cfg.optimizer_label(),
        "training": cfg,
        "input_normalization": "provider output as-is (n-gram provider emits unit-norm vectors)",
    })
    .to_string();
    let final_validation_loss = mean_loss(&weights, &val_rows);
    let report = TrainReport {
        epochs: history,
        best_epoch,
        final_validation_loss,
        n_train: train_idx.len(),
        n_validation: val_idx.len(),
        validated_on_train,
        stopped_early,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok((weights, report))
}

/// One example per listed name: the name's race distribution as a soft
/// target, weighted by its count.
pub fn table_examples(table: &NameTable, provider: &EmbeddingProvider) -> Result<Vec<TrainingExample>> {
    table
        .sorted()
        .into_iter()
        .map(|(name, e)| {
            Ok(TrainingExample {
                input: provider.embed(name)?,
                target: e.dist,
                weight: e.count as f64,
            })
        })
        .collect()
}

/// One example per voter: the embedded full name with a one-hot target
/// for the voter's race.
pub fn voter_examples(voters: &[VoterRecord], provider: &EmbeddingProvider) -> Result<Vec<TrainingExample>> {
    voters
        .iter()
        .map(|v| {
            let race = v
                .race
                .ok_or_else(|| Error::InvalidValue(format!("voter {:?} has no race label", v.id)))?;
            Ok(TrainingExample {
                input: provider.embed(&v.full_name())?,
                target: RaceDistribution::point(race),
                weight: 1.0,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::race::Race;

    fn toy(n: usize) -> Vec<TrainingExample> {
        (0..n)
            .map(|i| {
                let a = (i % 2) as f64;
                TrainingExample {
                    input: EmbeddingVector::new(vec![a, 1.0 - a, 0.1 * (i % 5) as f64]).unwrap(),
                    target: RaceDistribution::point(if a > 0.0 { Race::White } else { Race::Asian }),
                    weight: 1.0,
                }
            })
            .collect()
    }

    #[test]
    fn split_sizes() {
        let (t, v) = split_indices(10, 0.2, 0);
        assert_eq!((t.len(), v.len()), (8, 2));
        let (t, v) = split_indices(1, 0.2, 0);
        assert_eq!((t.len(), v.len()), (1, 0));
        let (t, v) = split_indices(2, 0.99, 0);
        assert_eq!((t.len(), v.len()), (1, 1));
        let mut all: Vec<_> = split_indices(50, 0.3, 4).0;
        all.extend(split_indices(50, 0.3, 4).1);
        all.sort();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn config_validation() {
        let bad = TrainingConfig { learning_rate: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainingConfig { validation_fraction: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(TrainingConfig::default().validate().is_ok());
    }

    #[test]
    fn deterministic_given_seed() {
        let arch = MlpArchitecture::new(3, vec![8], 0.2).unwrap();
        let cfg = TrainingConfig { epochs: 5, batch_size: 4, seed: 9, ..Default::default() };
        let (w1, r1) = train(&toy(40), &arch, &cfg, ModelMeta::new("p", 0)).unwrap();
        let (w2, r2) = train(&toy(40), &arch, &cfg, ModelMeta::new("p", 0)).unwrap();
        assert_eq!(w1, w2);
        assert_eq!(r1.loss_trace(), r2.loss_trace());
        let bits = |r: &TrainReport| -> Vec<(u64, u64)> {
            r.loss_trace().iter().map(|(a, b)| (a.to_bits(), b.to_bits())).collect()
        };
        assert_eq!(bits(&r1), bits(&r2));
    }

    #[test]
    fn single_example_is_fit() {
        let arch = MlpArchitecture::new(3, vec![8], 0.0).unwrap();
        let cfg = TrainingConfig { epochs: 300, learning_rate: 1e-2, patience: 300, ..Default::default() };
        let (w, r) = train(&toy(1), &arch, &cfg, ModelMeta::new("p", 0)).unwrap();
        assert!(r.validated_on_train);
        assert_eq!((r.n_train, r.n_validation), (1, 0));
        assert!(r.final_validation_loss < 1e-2, "{}", r.final_validation_loss);
        assert!(w.is_finite());
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        let arch = MlpArchitecture::new(3, vec![8], 0.0).unwrap();
        let cfg = TrainingConfig::default();
        assert!(matches!(train(&[], &arch, &cfg, ModelMeta::new("p", 0)), Err(Error::Empty(_))));
        let arch4 = MlpArchitecture::new(4, vec![8], 0.0).unwrap();
        assert!(matches!(
            train(&toy(3), &arch4, &cfg, ModelMeta::new("p", 0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn divergence_is_reported_with_location() {
        let arch = MlpArchitecture::new(3, vec![8], 0.0).unwrap();
        let mut data = toy(10);
        for ex in &mut data {
            ex.input = EmbeddingVector::new(vec![f64::MAX, f64::MAX, f64::MAX]).unwrap();
        }
        let cfg = TrainingConfig { batch_size: 100, ..Default::default() };
        match train(&data, &arch, &cfg, ModelMeta::new("p", 0)) {
            Err(Error::Diverged { epoch: 0, batch: Some(0), .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn returned_weights_are_f32_exact() {
        let arch = MlpArchitecture::new(3, vec![8], 0.0).unwrap();
        let cfg = TrainingConfig { epochs: 3, ..Default::default() };
        let (w, _) = train(&toy(20), &arch, &cfg, ModelMeta::new("p", 0)).unwrap();
        assert!(w.parameters().iter().all(|&p| p as f32 as f64 == p));
    }
}
