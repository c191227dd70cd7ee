//! Conditional flow matching on the optimal-transport probability path.
//!
//! The path from noise `x0 ~ N(0, I)` to data `x1` is
//! `x_t = t·x1 + (1 − (1 − σ_min)·t)·x0` with conditional field
//! `u_t(x | x1) = (x1 − (1 − σ_min)·x) / (1 − (1 − σ_min)·t)`.
//! A time-conditioned network regresses `u_t`; sampling integrates the
//! learned field from t = 0 to t = 1 with explicit Euler steps.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::discriminative::TrainReport;
use crate::embedding::{Provenance, SpeakerEmbedding};
use crate::error::{check_len, Error, Result};
use crate::mathcore::{Activation, AdamConfig, AdamState, MlpParams, Parameters, Tape};
use crate::prompt::{FrozenEncoder, LoraAdapter};
use crate::rng::{normal_vec, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub sigma_min: f64,
    pub ode_steps: usize,
    /// Number of sinusoid frequencies in the time features (2 features each).
    pub time_frequencies: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            sigma_min: 1e-4,
            ode_steps: 32,
            time_frequencies: 8,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min < 1.0) {
            return Err(Error::Config(format!(
                "sigma_min must lie in (0, 1), got {}",
                self.sigma_min
            )));
        }
        if self.ode_steps == 0 {
            return Err(Error::Config("ode_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// `[sin(kπt), cos(kπt)]` for k = 1..=frequencies.
pub fn time_features(t: f64, frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * frequencies);
    for k in 1..=frequencies {
        let w = k as f64 * PI * t;
        out.push(w.sin());
        out.push(w.cos());
    }
    out
}

/// One draw from the conditional path together with its regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub target_field: Vec<f64>,
    pub condition: Vec<f64>,
}

pub fn sample_ot_path(
    x1: &[f64],
    t: f64,
    x0: &[f64],
    sigma_min: f64,
    condition: Vec<f64>,
) -> Result<PathSample> {
    check_len("path noise", x1.len(), x0.len())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("t must lie in [0, 1), got {t}")));
    }
    if !(0.0..=1.0).contains(&sigma_min) {
        return Err(Error::InvalidArgument(format!("sigma_min must lie in [0, 1], got {sigma_min}")));
    }
    let shrink = 1.0 - sigma_min;
    let std = 1.0 - shrink * t;
    if std <= 0.0 {
        return Err(Error::InvalidArgument(
            "path variance vanishes at t = 1 with sigma_min = 0".into(),
        ));
    }
    let x: Vec<f64> = x1.iter().zip(x0).map(|(a, z)| t * a + std * z).collect();
    let target_field = x1
        .iter()
        .zip(&x)
        .map(|(a, xi)| (a - shrink * xi) / std)
        .collect();
    Ok(PathSample {
        t,
        x,
        target_field,
        condition,
    })
}

/// Anything that can be integrated: `v_t(x, condition)`.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn velocity(&self, x: &[f64], condition: &[f64], t: f64) -> Result<Vec<f64>>;
}

/// Adapts a closure into a [`VectorField`].
pub struct FieldFn<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> VectorField for FieldFn<F>
where
    F: Fn(&[f64], &[f64], f64) -> Vec<f64>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, x: &[f64], condition: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok((self.f)(x, condition, t))
    }
}

/// Network over `concat(x, condition, time features)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldNet {
    params: MlpParams,
    dim: usize,
    condition_dim: usize,
    time_frequencies: usize,
}

impl VectorFieldNet {
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        condition_dim: usize,
        hidden_dim: usize,
        layers: usize,
        activation: Activation,
        time_frequencies: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Config("vector field needs at least one layer".into()));
        }
        let mut dims = vec![dim + condition_dim + 2 * time_frequencies];
        dims.extend(std::iter::repeat_n(hidden_dim, layers - 1));
        dims.push(dim);
        let params = MlpParams::init(&dims, activation, rng)?;
        Self::from_params(params, dim, condition_dim, time_frequencies)
    }

    pub fn from_params(
        params: MlpParams,
        dim: usize,
        condition_dim: usize,
        time_frequencies: usize,
    ) -> Result<Self> {
        check_len(
            "vector field input",
            dim + condition_dim + 2 * time_frequencies,
            params.input_dim(),
        )?;
        check_len("vector field output", dim, params.output_dim())?;
        Ok(Self {
            params,
            dim,
            condition_dim,
            time_frequencies,
        })
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut MlpParams {
        &mut self.params
    }

    pub fn condition_dim(&self) -> usize {
        self.condition_dim
    }

    pub fn time_frequencies(&self) -> usize {
        self.time_frequencies
    }

    fn input(&self, x: &[f64], condition: &[f64], t: f64) -> Result<Vec<f64>> {
        check_len("flow state", self.dim, x.len())?;
        check_len("flow condition", self.condition_dim, condition.len())?;
        let mut input = Vec::with_capacity(self.params.input_dim());
        input.extend_from_slice(x);
        input.extend_from_slice(condition);
        input.extend(time_features(t, self.time_frequencies));
        Ok(input)
    }

    pub fn forward(&self, x: &[f64], condition: &[f64], t: f64) -> Result<(Vec<f64>, Tape)> {
        self.params.forward(&self.input(x, condition, t)?)
    }
}

impl VectorField for VectorFieldNet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, x: &[f64], condition: &[f64], t: f64) -> Result<Vec<f64>> {
        self.params.apply(&self.input(x, condition, t)?)
    }
}

/// Draws `t ~ U[0, 1)` and `x0 ~ N(0, I)` for each `(x1, condition)` in order.
pub fn draw_path_samples<R: Rng + ?Sized>(
    batch: &[(&[f64], &[f64])],
    sigma_min: f64,
    rng: &mut R,
) -> Result<Vec<PathSample>> {
    batch
        .iter()
        .map(|(x1, c)| {
            let t: f64 = rng.gen();
            let x0 = normal_vec(rng, x1.len(), 1.0);
            sample_ot_path(x1, t, &x0, sigma_min, c.to_vec())
        })
        .collect()
}

/// Mean of `‖v_t(x, c) − u_t(x | x1)‖²` over prepared path samples.
pub fn cfm_loss<F: VectorField + ?Sized>(field: &F, samples: &[PathSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty CFM batch".into()));
    }
    let mut total = 0.0;
    for (index, s) in samples.iter().enumerate() {
        let v = field.velocity(&s.x, &s.condition, s.t)?;
        let l = squared_error(&v, &s.target_field);
        if !l.is_finite() {
            return Err(Error::NonFiniteSample { index });
        }
        total += l;
    }
    Ok(total / samples.len() as f64)
}

#[derive(Debug, Clone)]
pub struct CfmGradient {
    pub loss: f64,
    pub params: MlpParams,
    /// `∂loss/∂condition` per sample.
    pub conditions: Vec<Vec<f64>>,
}

/// CFM loss with exact gradients for the network and the conditions.
pub fn cfm_loss_grad(net: &VectorFieldNet, samples: &[PathSample]) -> Result<CfmGradient> {
    let mut params = net.params.zeros_like();
    let (loss, conditions) = cfm_accumulate(net, samples, &mut params)?;
    Ok(CfmGradient {
        loss,
        params,
        conditions,
    })
}

fn cfm_accumulate(
    net: &VectorFieldNet,
    samples: &[PathSample],
    acc: &mut MlpParams,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty CFM batch".into()));
    }
    let scale = 1.0 / samples.len() as f64;
    let mut total = 0.0;
    let mut conditions = Vec::with_capacity(samples.len());
    for (index, s) in samples.iter().enumerate() {
        let (v, tape) = net.forward(&s.x, &s.condition, s.t)?;
        let l = squared_error(&v, &s.target_field);
        if !l.is_finite() {
            return Err(Error::NonFiniteSample { index });
        }
        total += l;
        let g: Vec<f64> = v
            .iter()
            .zip(&s.target_field)
            .map(|(a, b)| 2.0 * scale * (a - b))
            .collect();
        let g_in = net.params.backward_accumulate(&tape, &g, acc)?;
        conditions.push(g_in[net.dim..net.dim + net.condition_dim].to_vec());
    }
    Ok((total * scale, conditions))
}

fn squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Explicit Euler from t = 0 to 1 on the grid `{0, 1/N, …, (N−1)/N}`.
pub fn integrate<F: VectorField + ?Sized>(
    field: &F,
    condition: &[f64],
    x0: &[f64],
    config: &FlowConfig,
) -> Result<SpeakerEmbedding> {
    check_len("initial state", field.dim(), x0.len())?;
    if config.ode_steps == 0 {
        return Err(Error::Config("ode_steps must be at least 1".into()));
    }
    let h = 1.0 / config.ode_steps as f64;
    let mut x = x0.to_vec();
    for step in 0..config.ode_steps {
        let t = step as f64 * h;
        let v = field.velocity(&x, condition, t)?;
        check_len("vector field output", x.len(), v.len())?;
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi += h * vi;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationDiverged(step));
        }
    }
    SpeakerEmbedding::new(x, Provenance::FlowGenerated)
}

/// Where the flow's conditions come from during training.
pub enum FlowConditioning<'a> {
    /// Precomputed condition vectors, e.g. a frozen discriminative head's output.
    Fixed(&'a [Vec<f64>]),
    /// `o_cls` computed on the fly through the adapter, which is trained
    /// jointly unless `train_adapter` is false.
    Prompt {
        encoder: &'a FrozenEncoder,
        pooled: &'a [Vec<f64>],
        adapter: LoraAdapter,
        train_adapter: bool,
    },
}

impl FlowConditioning<'_> {
    fn len(&self) -> usize {
        match self {
            FlowConditioning::Fixed(c) => c.len(),
            FlowConditioning::Prompt { pooled, .. } => pooled.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowTrainOutput {
    pub net: VectorFieldNet,
    pub adapter: Option<LoraAdapter>,
    pub report: TrainReport,
}

pub fn train_flow(
    mut net: VectorFieldNet,
    conditioning: FlowConditioning<'_>,
    targets: &[Vec<f64>],
    flow: &FlowConfig,
    config: &FlowTrainConfig,
) -> Result<FlowTrainOutput> {
    flow.validate()?;
    if targets.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    check_len("flow conditions", targets.len(), conditioning.len())?;
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }

    let (fixed, encoder, pooled, mut adapter, train_adapter) = match conditioning {
        FlowConditioning::Fixed(c) => (Some(c), None, None, None, false),
        FlowConditioning::Prompt {
            encoder,
            pooled,
            adapter,
            train_adapter,
        } => (None, Some(encoder), Some(pooled), Some(adapter), train_adapter),
    };

    let adam = AdamConfig::with_learning_rate(config.learning_rate);
    let mut net_opt = AdamState::new(&net.params, adam);
    let mut net_grad = net.params.zeros_like();
    let mut lora_state = adapter.as_ref().map(|a| (AdamState::new(a, adam), a.zeros_like()));
    let mut order: Vec<usize> = (0..targets.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..config.epochs {
        let mut rng = rng_for(config.seed, &[0xF10, epoch as u64]);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let conds: Vec<Vec<f64>> = batch
                .iter()
                .map(|&i| match (fixed, encoder, pooled) {
                    (Some(c), _, _) => Ok(c[i].clone()),
                    (None, Some(enc), Some(p)) => enc.project(&p[i], adapter.as_ref()),
                    _ => unreachable!("conditioning is either fixed or prompt-driven"),
                })
                .collect::<Result<_>>()?;
            let items: Vec<(&[f64], &[f64])> = batch
                .iter()
                .zip(&conds)
                .map(|(&i, c)| (targets[i].as_slice(), c.as_slice()))
                .collect();
            let samples = draw_path_samples(&items, flow.sigma_min, &mut rng)?;

            net_grad.fill_zero();
            let diverged = |detail: String| Error::Diverged {
                epoch,
                batch: batch_idx,
                detail,
            };
            let (loss, cond_grads) = cfm_accumulate(&net, &samples, &mut net_grad)
                .map_err(|e| diverged(e.to_string()))?;
            epoch_loss += loss * batch.len() as f64;
            net_opt
                .step(&mut net.params, &net_grad)
                .map_err(|e| diverged(e.to_string()))?;

            if let (true, Some(a), Some((opt, grad)), Some(p)) =
                (train_adapter, adapter.as_mut(), lora_state.as_mut(), pooled)
            {
                grad.fill_zero();
                for (&i, g) in batch.iter().zip(&cond_grads) {
                    a.backward_accumulate(&p[i], g, grad)?;
                }
                opt.step(a, grad).map_err(|e| diverged(e.to_string()))?;
            }
        }
        report.epoch_losses.push(epoch_loss / targets.len() as f64);
    }
    Ok(FlowTrainOutput {
        net,
        adapter,
        report,
    })
}
