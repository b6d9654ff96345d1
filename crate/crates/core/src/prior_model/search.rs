use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::{train, TrainingConfig, TrainingExample};
use super::{MlpArchitecture, MlpWeights, ModelMeta};
use crate::error::{Error, Result};

/// Trial budget per model.
pub const DEFAULT_TRIALS: usize = 50;

/// Ranges sampled by [`hyperparameter_search`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub layer_counts: Vec<usize>,
    pub widths: Vec<usize>,
    pub dropout: (f64, f64),
    /// Log-uniform bounds.
    pub learning_rate: (f64, f64),
    pub batch_sizes: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            layer_counts: vec![1, 2, 3],
            widths: vec![64, 128, 256, 512, 1024],
            dropout: (0.0, 0.5),
            learning_rate: (1e-5, 1e-2),
            batch_sizes: vec![32, 64, 128, 256],
        }
    }
}

impl SearchSpace {
    fn validate(&self) -> Result<()> {
        let ok = !self.layer_counts.is_empty()
            && !self.widths.is_empty()
            && !self.batch_sizes.is_empty()
            && self.layer_counts.iter().all(|&n| n >= 1)
            && self.widths.iter().all(|&w| w >= 1)
            && self.dropout.0 >= 0.0
            && self.dropout.0 <= self.dropout.1
            && self.dropout.1 < 1.0
            && self.learning_rate.0 > 0.0
            && self.learning_rate.0 <= self.learning_rate.1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidValue(format!("invalid search space {self:?}")))
        }
    }

    fn sample(&self, input_dim: usize, base: &TrainingConfig, rng: &mut ChaCha8Rng) -> (MlpArchitecture, TrainingConfig) {
        let layers = self.layer_counts[rng.random_range(0..self.layer_counts.len())];
        let hidden = (0..layers)
            .map(|_| self.widths[rng.random_range(0..self.widths.len())])
            .collect();
        let dropout = if self.dropout.0 == self.dropout.1 {
            self.dropout.0
        } else {
            rng.random_range(self.dropout.0..self.dropout.1)
        };
        let (lo, hi) = (self.learning_rate.0.ln(), self.learning_rate.1.ln());
        let learning_rate = if lo == hi { self.learning_rate.0 } else { rng.random_range(lo..hi).exp() };
        let batch_size = self.batch_sizes[rng.random_range(0..self.batch_sizes.len())];
        let cfg = TrainingConfig {
            learning_rate,
            batch_size,
            seed: rng.next_u64(),
            split_seed: Some(base.split_seed.unwrap_or(base.seed)),
            ..base.clone()
        };
        (
            MlpArchitecture {
                input_dim,
                hidden,
                dropout,
            },
            cfg,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub architecture: MlpArchitecture,
    pub config: TrainingConfig,
    pub validation_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub architecture: MlpArchitecture,
    pub config: TrainingConfig,
    pub weights: MlpWeights,
    /// Trials ranked by validation loss; failed trials last.
    pub leaderboard: Vec<TrialResult>,
}

/// Seeded random search over architecture and optimizer settings.
///
/// Trial settings are drawn sequentially from `seed`, so the set of trials
/// does not depend on how many run in parallel. All trials share the
/// train/validation split of `base`.
pub fn hyperparameter_search(
    dataset: &[TrainingExample],
    space: &SearchSpace,
    base: &TrainingConfig,
    trials: usize,
    seed: u64,
    meta: ModelMeta,
) -> Result<SearchOutcome> {
    if trials == 0 {
        return Err(Error::InvalidValue("at least one trial is required".into()));
    }
    space.validate()?;
    let input_dim = dataset
        .first()
        .map(|e| e.input.dim())
        .ok_or_else(|| Error::Empty("training dataset".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plans: Vec<_> = (0..trials).map(|_| space.sample(input_dim, base, &mut rng)).collect();

    let results: Vec<_> = plans
        .into_par_iter()
        .enumerate()
        .map(|(trial, (arch, cfg))| {
            let outcome = train(dataset, &arch, &cfg, meta.clone());
            (trial, arch, cfg, outcome)
        })
        .collect();

    let mut best: Option<(f64, usize, MlpWeights)> = None;
    let mut leaderboard = Vec::with_capacity(trials);
    for (trial, arch, cfg, outcome) in results {
        match outcome {
            Ok((w, report)) => {
                let loss = report.final_validation_loss;
                if best.as_ref().is_none_or(|(b, _, _)| loss < *b) {
                    best = Some((loss, trial, w));
                }
                leaderboard.push(TrialResult {
                    trial,
                    architecture: arch,
                    config: cfg,
                    validation_loss: Some(loss),
                    error: None,
                });
            }
            Err(e) => leaderboard.push(TrialResult {
                trial,
                architecture: arch,
                config: cfg,
                validation_loss: None,
                error: Some(e.to_string()),
            }),
        }
    }
    leaderboard.sort_by(|a, b| match (a.validation_loss, b.validation_loss) {
        (Some(x), Some(y)) => x.total_cmp(&y).then(a.trial.cmp(&b.trial)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.trial.cmp(&b.trial),
    });
    let Some((_, best_trial, weights)) = best else {
        return Err(Error::SearchFailed {
            failures: leaderboard
                .iter()
                .map(|t| format!("trial {}: {}", t.trial, t.error.as_deref().unwrap_or("?")))
                .collect(),
        });
    };
    let winner = leaderboard.iter().find(|t| t.trial == best_trial).expect("winner is on the leaderboard");
    Ok(SearchOutcome {
        architecture: winner.architecture.clone(),
        config: winner.config.clone(),
        weights,
        leaderboard,
    })
}
