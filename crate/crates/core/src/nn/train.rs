//! Mini-batch SGD with a seeded shuffle and a step-shrinking learning rate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::TermEncoderParams;
use super::model::{CaptionModel, Example, ModelConfig, ModelDims, ModelKind};
use crate::dataset::{shuffled_batches, Vocabulary};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub initial_lr: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub decay: f64,
    /// The learning rate is divided by this at each milestone.
    pub lr_shrink: f64,
    /// Iterations at which the shrink applies. `None` places them at 1/4,
    /// 1/2 and 3/4 of `max_iterations`.
    pub milestones: Option<Vec<usize>>,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub lambda_theta: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 2.0,
            decay: 0.99,
            lr_shrink: 5.0,
            milestones: None,
            batch_size: 32,
            max_iterations: 2000,
            lambda_theta: 1e-4,
            clip_norm: 5.0,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.initial_lr) || !positive(self.decay) || !positive(self.lr_shrink) {
            return Err(Error::Config("initial_lr, decay and lr_shrink must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if [self.lambda_theta, self.clip_norm]
            .iter()
            .any(|x| x.is_nan() || *x < 0.0)
        {
            return Err(Error::Config("lambda_theta and clip_norm must be non-negative".into()));
        }
        if let Some(ms) = &self.milestones {
            if ms.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Config("milestones must be sorted".into()));
            }
        }
        Ok(())
    }

    pub fn milestones(&self) -> Vec<usize> {
        match &self.milestones {
            Some(ms) => ms.clone(),
            None => [1, 2, 3].iter().map(|q| q * self.max_iterations / 4).collect(),
        }
    }

    /// Learning rate for iteration `it` (0-based) given iterations per epoch.
    pub fn learning_rate(&self, it: usize, iters_per_epoch: usize) -> f64 {
        let epoch = it / iters_per_epoch.max(1);
        let shrinks = self.milestones().iter().filter(|&&m| m > 0 && it >= m).count();
        self.initial_lr * self.decay.powi(epoch as i32) / self.lr_shrink.powi(shrinks as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub iteration: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub points: Vec<LossPoint>,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.points.last().map(|p| p.loss)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,epoch,lr,loss\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{},{}\n", p.iteration, p.epoch, p.lr, p.loss));
        }
        s
    }
}

/// Initializes a model from `cfg.rng_seed` and trains it on `examples`.
pub fn train(
    kind: ModelKind,
    vocab: Vocabulary,
    dims: ModelDims,
    init_scale: f64,
    examples: &[Example],
    cfg: &TrainConfig,
    pretrained: Option<&TermEncoderParams>,
) -> Result<(CaptionModel, TrainLog)> {
    cfg.validate()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let model = CaptionModel::new(kind, dims, vocab, init_scale, &mut init_rng, pretrained)?;
    fit(model, examples, cfg)
}

/// Continues training an existing model.
pub fn fit(mut model: CaptionModel, examples: &[Example], cfg: &TrainConfig) -> Result<(CaptionModel, TrainLog)> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    let mut log = TrainLog::default();
    let iters_per_epoch = examples.len().div_ceil(cfg.batch_size);
    let mut it = 0;
    let mut epoch = 0u64;
    let mut batch = Vec::with_capacity(cfg.batch_size);
    'outer: while it < cfg.max_iterations {
        for idx in shuffled_batches(examples.len(), cfg.batch_size, cfg.rng_seed, epoch)? {
            if it >= cfg.max_iterations {
                break 'outer;
            }
            batch.clear();
            batch.extend(idx.into_iter().map(|i| examples[i].clone()));
            let (loss, mut grad) = model.gradients(&batch, cfg.lambda_theta)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged at iteration {it} (loss {loss})"
                )));
            }
            if cfg.clip_norm > 0.0 {
                let norm = grad.norm_sq().sqrt();
                if norm > cfg.clip_norm {
                    grad.scale(cfg.clip_norm / norm);
                }
            }
            let lr = cfg.learning_rate(it, iters_per_epoch);
            model.params.axpy(-lr, &grad);
            log.points.push(LossPoint {
                iteration: it,
                epoch: epoch as usize,
                lr,
                loss,
            });
            if it % 100 == 0 {
                log::debug!("iteration {it}: loss {loss:.5} lr {lr:.5}");
            }
            it += 1;
        }
        epoch += 1;
    }
    Ok((model, log))
}

/// Result of encoder pretraining: the term encoder plus the caption
/// decoder it was trained against.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainedTermEncoder {
    pub network: CaptionModel,
}

impl PretrainedTermEncoder {
    pub fn encoder(&self) -> &TermEncoderParams {
        &self.network.params.encoders[0]
    }
}

/// Trains the term-list encoder jointly with an image-plus-terms caption
/// decoder. The encoder reads direct terms followed by indirect terms.
pub fn pretrain_term_encoder(
    vocab: Vocabulary,
    model_cfg: &ModelConfig,
    feature_dim: usize,
    term_dim: usize,
    examples: &[Example],
    cfg: &TrainConfig,
) -> Result<(PretrainedTermEncoder, TrainLog)> {
    if examples.is_empty() {
        return Err(Error::invalid("empty pretraining dataset"));
    }
    let dims = ModelDims::new(model_cfg, vocab.len(), feature_dim, term_dim);
    let (network, log) = train(
        ModelKind::Pretrain,
        vocab,
        dims,
        model_cfg.init_scale,
        examples,
        cfg,
        None,
    )?;
    Ok((PretrainedTermEncoder { network }, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        let cfg = TrainConfig {
            initial_lr: 2.0,
            decay: 0.5,
            max_iterations: 100,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.milestones(), vec![25, 50, 75]);
        assert_eq!(cfg.learning_rate(0, 10), 2.0);
        assert_eq!(cfg.learning_rate(10, 10), 1.0);
        assert_eq!(cfg.learning_rate(25, 100), 0.4);
        assert!((cfg.learning_rate(99, 1000) - 2.0 / 125.0).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        let cfg = TrainConfig {
            milestones: Some(vec![5, 3]),
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
