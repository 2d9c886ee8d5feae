//! Offline training of the surrogate ensemble.
//!
//! The dataset is shuffled with the seed and split 7:3 into train and test
//! rows. Feature and label scaling are fitted on the train rows only. Every
//! member starts from its own Glorot initialisation and visits the train rows
//! in its own order; all members minimise mean squared error with mini-batch
//! momentum SGD. With a positive `validation_fraction` each member holds out
//! its own random slice of the train rows and keeps the weights of its best
//! validation epoch, stopping after `patience` epochs without improvement.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ensemble::{LabelConvention, SurrogateEnsemble};
use super::mlp::{Gradients, Mlp, Momentum};
use super::standardizer::{Standardizer, STD_FLOOR};
use crate::error::{Error, Result};

/// Fraction of rows used for training.
pub const TRAIN_FRACTION: f64 = 0.7;

/// Labelled rows: one feature vector and one scalar target each.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn push(&mut self, features: Vec<f64>, target: f64) {
        self.features.push(features);
        self.targets.push(target);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub members: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// L2 penalty on weights, added to the gradient.
    pub weight_decay: f64,
    /// Share of each member's train rows held out for early stopping; 0
    /// trains on every row for the full `epochs`.
    pub validation_fraction: f64,
    pub patience: usize,
    pub label_convention: LabelConvention,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            members: 5,
            hidden: vec![64, 64],
            epochs: 400,
            batch_size: 64,
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 0.0,
            validation_fraction: 0.2,
            patience: 20,
            label_convention: LabelConvention::Margin,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members < 2 {
            return Err(Error::Config("an ensemble needs at least 2 members".into()));
        }
        if self.batch_size == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(
                "batch size and hidden widths must be positive".into(),
            ));
        }
        if self.learning_rate.is_nan()
            || self.learning_rate <= 0.0
            || !(0.0..1.0).contains(&self.momentum)
        {
            return Err(Error::Config(
                "learning rate must be positive and momentum in [0, 1)".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(
                "validation_fraction must lie in [0, 1)".into(),
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub rows: usize,
    pub mse: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub train: SplitMetrics,
    pub test: SplitMetrics,
    pub members: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Training loss of each member's kept weights, standardized units.
    pub final_losses: Vec<f64>,
    /// Epoch whose weights each member kept (1-based).
    pub kept_epochs: Vec<usize>,
    pub model_hash: String,
}

/// Seeded 7:3 split; returns `(train, test)` row indices.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * TRAIN_FRACTION).round() as usize;
    let n_train = n_train.clamp(1.min(n), n);
    let test = idx.split_off(n_train);
    (idx, test)
}

fn member_rng(seed: u64, member: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + member as u64);
    rng
}

/// Mean squared error and coefficient of determination.
pub fn regression_metrics(predicted: &[f64], actual: &[f64]) -> SplitMetrics {
    let n = actual.len();
    if n == 0 {
        return SplitMetrics {
            rows: 0,
            mse: f64::NAN,
            r2: f64::NAN,
        };
    }
    let mean = actual.iter().sum::<f64>() / n as f64;
    let ss_res: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    let ss_tot: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    SplitMetrics {
        rows: n,
        mse: ss_res / n as f64,
        r2: if ss_tot > 0.0 {
            1.0 - ss_res / ss_tot
        } else {
            f64::NAN
        },
    }
}

struct Member {
    mlp: Mlp,
    loss: f64,
    epoch: usize,
}

fn mse(mlp: &Mlp, rows: &[usize], inputs: &[Vec<f64>], labels: &[f64]) -> f64 {
    let mut acts = mlp.activations();
    rows.iter()
        .map(|&i| (mlp.forward_into(&inputs[i], &mut acts) - labels[i]).powi(2))
        .sum::<f64>()
        / rows.len() as f64
}

fn train_member(
    member: usize,
    inputs: &[Vec<f64>],
    labels: &[f64],
    config: &TrainingConfig,
    seed: u64,
) -> Result<Member> {
    let mut rng = member_rng(seed, member);
    let mut mlp = Mlp::new(inputs[0].len(), &config.hidden, &mut rng);
    let mut opt = Momentum::new(&mlp, config.learning_rate, config.momentum)
        .with_weight_decay(config.weight_decay);
    let mut grads = Gradients::zeros_like(&mlp);
    let mut acts = mlp.activations();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let n_val = ((inputs.len() as f64) * config.validation_fraction).round() as usize;
    let validation = if n_val > 0 && n_val < inputs.len() {
        order.shuffle(&mut rng);
        order.split_off(inputs.len() - n_val)
    } else {
        Vec::new()
    };
    let mut best: Option<(f64, Member)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.reset();
            let scale = 2.0 / batch.len() as f64;
            for &i in batch {
                let y = mlp.forward_into(&inputs[i], &mut acts);
                let err = y - labels[i];
                loss_sum += err * err;
                mlp.backward(&acts, scale * err, &mut grads);
            }
            opt.apply(&mut mlp, &grads);
        }
        let loss = loss_sum / order.len() as f64;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { member, epoch });
        }
        if validation.is_empty() {
            best = Some((
                loss,
                Member {
                    mlp: mlp.clone(),
                    loss,
                    epoch,
                },
            ));
            continue;
        }
        let val = mse(&mlp, &validation, inputs, labels);
        if !val.is_finite() {
            return Err(Error::TrainingDiverged { member, epoch });
        }
        if best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((
                val,
                Member {
                    mlp: mlp.clone(),
                    loss,
                    epoch,
                },
            ));
        } else if epoch - best.as_ref().map_or(0, |(_, m)| m.epoch) >= config.patience {
            break;
        }
    }
    match best {
        Some((_, m)) => Ok(m),
        None => Ok(Member {
            loss: mse(&mlp, &order, inputs, labels),
            mlp,
            epoch: 0,
        }),
    }
}

/// Trains an ensemble and reports train/test error in label units.
pub fn train(
    dataset: &Dataset,
    config: &TrainingConfig,
    seed: u64,
) -> Result<(SurrogateEnsemble, TrainingReport)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dim = dataset.features[0].len();
    if let Some(bad) = dataset.features.iter().position(|f| f.len() != dim) {
        return Err(Error::LengthMismatch {
            expected: dim,
            actual: dataset.features[bad].len(),
        });
    }
    if dataset.targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::Parse("dataset contains non-finite targets".into()));
    }

    let (train_idx, test_idx) = split_indices(dataset.len(), seed);
    let train_rows: Vec<&[f64]> = train_idx
        .iter()
        .map(|&i| dataset.features[i].as_slice())
        .collect();
    let standardizer = Standardizer::fit(&train_rows);

    let train_targets: Vec<f64> = train_idx.iter().map(|&i| dataset.targets[i]).collect();
    let n = train_targets.len() as f64;
    let label_mean = train_targets.iter().sum::<f64>() / n;
    let label_scale = (train_targets
        .iter()
        .map(|t| (t - label_mean).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        .max(STD_FLOOR);

    let inputs: Vec<Vec<f64>> = train_rows
        .iter()
        .map(|r| standardizer.transform(r))
        .collect();
    let labels: Vec<f64> = train_targets
        .iter()
        .map(|t| (t - label_mean) / label_scale)
        .collect();

    let trained: Vec<Member> = (0..config.members)
        .into_par_iter()
        .map(|m| train_member(m, &inputs, &labels, config, seed))
        .collect::<Result<_>>()?;
    let final_losses = trained.iter().map(|m| m.loss).collect();
    let kept_epochs = trained.iter().map(|m| m.epoch).collect();

    let ensemble = SurrogateEnsemble {
        members: trained.into_iter().map(|m| m.mlp).collect(),
        standardizer,
        label_mean,
        label_scale,
        label_convention: config.label_convention,
    };

    let evaluate = |idx: &[usize]| -> Result<SplitMetrics> {
        let predicted = idx
            .iter()
            .map(|&i| ensemble.predict(&dataset.features[i]).map(|p| p.mean))
            .collect::<Result<Vec<_>>>()?;
        let actual: Vec<f64> = idx.iter().map(|&i| dataset.targets[i]).collect();
        Ok(regression_metrics(&predicted, &actual))
    };
    let report = TrainingReport {
        train: evaluate(&train_idx)?,
        test: evaluate(&test_idx)?,
        members: config.members,
        epochs: config.epochs,
        seed,
        final_losses,
        kept_epochs,
        model_hash: ensemble.content_hash(),
    };
    Ok((ensemble, report))
}
