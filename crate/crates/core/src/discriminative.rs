//! Deterministic prompt → embedding head.
//!
//! A four-layer projection maps the (optionally adapted) conditioning vector
//! to a speaker embedding and is trained on the sum of squared L2 distance
//! and cosine dissimilarity to the ground truth.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::embedding::{Provenance, SpeakerEmbedding};
use crate::error::{Error, Result};
use crate::mathcore::{dot, Activation, AdamConfig, AdamState, MlpParams, Parameters};
use crate::prompt::{FrozenEncoder, LoraAdapter, Prompt};
use crate::rng::rng_for;

pub const PROJECTION_LAYERS: usize = 4;

static ZERO_NORM_WARNINGS: AtomicU64 = AtomicU64::new(0);

/// Number of times [`disc_loss`] met a zero-norm prediction in this process.
pub fn zero_norm_warnings() -> u64 {
    ZERO_NORM_WARNINGS.load(Ordering::Relaxed)
}

/// Four affine layers from `o_cls` (d') to the embedding (d).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionNet {
    params: MlpParams,
}

impl ProjectionNet {
    pub fn new<R: rand::Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let dims = [input_dim, hidden_dim, hidden_dim, hidden_dim, output_dim];
        Self::from_params(MlpParams::init(&dims, activation, rng)?)
    }

    pub fn from_params(params: MlpParams) -> Result<Self> {
        if params.layers().len() != PROJECTION_LAYERS {
            return Err(Error::InvalidArgument(format!(
                "projection needs {PROJECTION_LAYERS} layers, got {}",
                params.layers().len()
            )));
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut MlpParams {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.params.output_dim()
    }
}

/// `‖ẽ − e‖² + (1 − cos(ẽ, e))`.
pub fn disc_loss(predicted: &SpeakerEmbedding, target: &SpeakerEmbedding) -> Result<f64> {
    disc_loss_grad(&predicted.values, &target.values).map(|(l, _)| l)
}

/// Loss value and its gradient with respect to the prediction.
///
/// A zero-norm prediction takes the cosine term as 1 with zero gradient and
/// bumps [`zero_norm_warnings`].
pub fn disc_loss_grad(predicted: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if predicted.is_empty() && target.is_empty() {
        return Err(Error::Dimension {
            context: "disc_loss operands".into(),
            expected: 1,
            actual: 0,
        });
    }
    if predicted.len() != target.len() {
        return Err(Error::Dimension {
            context: "disc_loss prediction".into(),
            expected: target.len(),
            actual: predicted.len(),
        });
    }
    let tn = dot(target, target).sqrt();
    if tn == 0.0 {
        return Err(Error::InvalidArgument("target embedding has zero norm".into()));
    }
    let mut grad: Vec<f64> = predicted.iter().zip(target).map(|(p, e)| 2.0 * (p - e)).collect();
    let l2: f64 = predicted.iter().zip(target).map(|(p, e)| (p - e) * (p - e)).sum();
    let pn = dot(predicted, predicted).sqrt();
    if pn == 0.0 {
        ZERO_NORM_WARNINGS.fetch_add(1, Ordering::Relaxed);
        return Ok((l2 + 1.0, grad));
    }
    let cos = dot(predicted, target) / (pn * tn);
    // d(1 − cos)/dp = −(e / (|p||e|) − cos · p / |p|²)
    for ((g, p), e) in grad.iter_mut().zip(predicted).zip(target) {
        *g -= e / (pn * tn) - cos * p / (pn * pn);
    }
    Ok((l2 + 1.0 - cos, grad))
}

/// Projection plus the encoder adapter it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscModel {
    pub projection: ProjectionNet,
    pub adapter: LoraAdapter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Route gradients into the encoder adapter.
    pub use_lora: bool,
    /// Keep the projection fixed and train only the adapter.
    pub freeze_projection: bool,
    pub seed: u64,
}

impl Default for DiscTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            use_lora: true,
            freeze_projection: false,
            seed: 0,
        }
    }
}

/// Per-epoch mean training loss.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

pub fn predict(
    encoder: &FrozenEncoder,
    model: &DiscModel,
    prompt: &Prompt,
) -> Result<SpeakerEmbedding> {
    predict_pooled(encoder, model, &encoder.pool(prompt))
}

pub fn predict_pooled(
    encoder: &FrozenEncoder,
    model: &DiscModel,
    pooled: &[f64],
) -> Result<SpeakerEmbedding> {
    let o = encoder.project(pooled, Some(&model.adapter))?;
    let values = model.projection.params.apply(&o)?;
    SpeakerEmbedding::new(values, Provenance::Discriminative)
}

pub fn train_discriminative(
    encoder: &FrozenEncoder,
    dataset: &[(Prompt, SpeakerEmbedding)],
    model: DiscModel,
    config: &DiscTrainConfig,
) -> Result<(DiscModel, TrainReport)> {
    let pooled: Vec<Vec<f64>> = dataset.iter().map(|(p, _)| encoder.pool(p)).collect();
    let targets: Vec<Vec<f64>> = dataset.iter().map(|(_, e)| e.values.clone()).collect();
    train_discriminative_pooled(encoder, &pooled, &targets, model, config)
}

/// Minibatch Adam on pre-pooled prompts.
pub fn train_discriminative_pooled(
    encoder: &FrozenEncoder,
    pooled: &[Vec<f64>],
    targets: &[Vec<f64>],
    mut model: DiscModel,
    config: &DiscTrainConfig,
) -> Result<(DiscModel, TrainReport)> {
    if pooled.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if pooled.len() != targets.len() {
        return Err(Error::Dimension {
            context: "targets".into(),
            expected: pooled.len(),
            actual: targets.len(),
        });
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let d = model.projection.output_dim();
    if let Some(bad) = targets.iter().find(|t| t.len() != d) {
        return Err(Error::Dimension {
            context: "target embedding".into(),
            expected: d,
            actual: bad.len(),
        });
    }
    if model.projection.input_dim() != encoder.output_dim() {
        return Err(Error::Dimension {
            context: "projection input".into(),
            expected: encoder.output_dim(),
            actual: model.projection.input_dim(),
        });
    }

    let train_projection = !(config.use_lora && config.freeze_projection);
    let adam = AdamConfig::with_learning_rate(config.learning_rate);
    let mut proj_opt = AdamState::new(&model.projection.params, adam);
    let mut lora_opt = AdamState::new(&model.adapter, adam);
    let mut proj_grad = model.projection.params.zeros_like();
    let mut lora_grad = model.adapter.zeros_like();
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng_for(config.seed, &[0xD15C, epoch as u64]));
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            proj_grad.fill_zero();
            lora_grad.fill_zero();
            let mut batch_loss = 0.0;
            for &i in batch {
                let adapter = config.use_lora.then_some(&model.adapter);
                let o = encoder.project(&pooled[i], adapter)?;
                let (out, tape) = model.projection.params.forward(&o)?;
                let (loss, g) = disc_loss_grad(&out, &targets[i])?;
                batch_loss += loss;
                let g_o = model.projection.params.backward_accumulate(&tape, &g, &mut proj_grad)?;
                if config.use_lora {
                    model.adapter.backward_accumulate(&pooled[i], &g_o, &mut lora_grad)?;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    detail: format!("loss {batch_loss}"),
                });
            }
            epoch_loss += batch_loss;
            let inv = 1.0 / batch.len() as f64;
            proj_grad.scale_all(inv);
            lora_grad.scale_all(inv);
            let step = |e: Error| Error::Diverged {
                epoch,
                batch: batch_idx,
                detail: e.to_string(),
            };
            if train_projection {
                proj_opt.step(&mut model.projection.params, &proj_grad).map_err(step)?;
            }
            if config.use_lora {
                lora_opt.step(&mut model.adapter, &lora_grad).map_err(step)?;
            }
        }
        report.epoch_losses.push(epoch_loss / pooled.len() as f64);
    }
    Ok((model, report))
}
