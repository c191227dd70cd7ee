//! The four prompt→embedding systems compared in the evaluation, with
//! training, sampling, checkpointing and the evaluation protocols.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discriminative::{
    predict_pooled, train_discriminative_pooled, DiscModel, DiscTrainConfig, ProjectionNet,
};
use crate::embedding::{Provenance, SpeakerEmbedding};
use crate::error::{check_len, Error, Result};
use crate::flow::{integrate, train_flow, FlowConditioning, FlowConfig, FlowTrainConfig, VectorFieldNet};
use crate::io::{CheckpointFile, ParamBlock};
use crate::mathcore::Activation;
use crate::metrics::cosine_similarity;
use crate::prompt::{
    build_prompt, full_prompt, subset_prompt, EncoderConfig, FrozenEncoder, ImpressionRecord,
    ImpressionSchema, LoraAdapter, Prompt,
};
use crate::rng::{hash_str, normal_vec, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    DiscNolora,
    DiscLora,
    FlowLora,
    DiscPlusFlow,
}

impl SystemKind {
    pub const ALL: [SystemKind; 4] = [
        SystemKind::DiscNolora,
        SystemKind::DiscLora,
        SystemKind::FlowLora,
        SystemKind::DiscPlusFlow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::DiscNolora => "disc_nolora",
            SystemKind::DiscLora => "disc_lora",
            SystemKind::FlowLora => "flow_lora",
            SystemKind::DiscPlusFlow => "disc_plus_flow",
        }
    }

    /// Whether the system samples (flow head) rather than predicts.
    pub fn is_generative(self) -> bool {
        matches!(self, SystemKind::FlowLora | SystemKind::DiscPlusFlow)
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown system {s:?}")))
    }
}

/// Everything needed to build and train any of the four systems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub projection_hidden: usize,
    pub projection_activation: Activation,
    pub disc: DiscTrainConfig,
    pub flow: FlowConfig,
    pub flow_hidden: usize,
    pub flow_layers: usize,
    pub flow_train: FlowTrainConfig,
    /// Two-stage flow conditions on `concat(ẽ, o_cls)` instead of `ẽ` alone.
    pub two_stage_concat: bool,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            encoder: EncoderConfig::default(),
            lora_rank: 8,
            lora_alpha: 8.0,
            projection_hidden: 64,
            projection_activation: Activation::Identity,
            disc: DiscTrainConfig::default(),
            flow: FlowConfig::default(),
            flow_hidden: 128,
            flow_layers: 3,
            flow_train: FlowTrainConfig::default(),
            two_stage_concat: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Disc(DiscModel),
    Flow { net: VectorFieldNet, adapter: LoraAdapter },
    TwoStage { stage_one: DiscModel, net: VectorFieldNet },
}

/// One row of a training loss log.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub stage: &'static str,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedSystem {
    pub kind: SystemKind,
    pub config: SystemConfig,
    pub dim: usize,
    pub encoder: FrozenEncoder,
    pub head: Head,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    system: SystemKind,
    dim: usize,
    config: SystemConfig,
}

fn init_disc(config: &SystemConfig, encoder: &FrozenEncoder, dim: usize) -> Result<DiscModel> {
    let mut rng = rng_for(config.seed, &[0x1417, 1]);
    Ok(DiscModel {
        projection: ProjectionNet::new(
            encoder.output_dim(),
            config.projection_hidden,
            dim,
            config.projection_activation,
            &mut rng,
        )?,
        adapter: LoraAdapter::for_encoder(encoder, config.lora_rank, config.lora_alpha, &mut rng)?,
    })
}

fn init_flow(config: &SystemConfig, dim: usize, condition_dim: usize) -> Result<VectorFieldNet> {
    VectorFieldNet::new(
        dim,
        condition_dim,
        config.flow_hidden,
        config.flow_layers,
        Activation::Relu,
        config.flow.time_frequencies,
        &mut rng_for(config.seed, &[0x1417, 2]),
    )
}

impl TrainedSystem {
    /// Untrained system; adapters start at `B = 0`.
    pub fn init(kind: SystemKind, config: SystemConfig, schema: &ImpressionSchema, dim: usize) -> Result<Self> {
        config.flow.validate()?;
        let encoder = FrozenEncoder::new(config.encoder.clone(), schema)?;
        let disc = init_disc(&config, &encoder, dim)?;
        let head = match kind {
            SystemKind::DiscNolora | SystemKind::DiscLora => Head::Disc(disc),
            SystemKind::FlowLora => Head::Flow {
                net: init_flow(&config, dim, encoder.output_dim())?,
                adapter: disc.adapter,
            },
            SystemKind::DiscPlusFlow => {
                let cond = dim + if config.two_stage_concat { encoder.output_dim() } else { 0 };
                Head::TwoStage {
                    net: init_flow(&config, dim, cond)?,
                    stage_one: disc,
                }
            }
        };
        Ok(Self {
            kind,
            config,
            dim,
            encoder,
            head,
        })
    }

    /// Trains on full prompts of `records` against `targets`.
    pub fn train(
        kind: SystemKind,
        config: SystemConfig,
        schema: &ImpressionSchema,
        records: &[ImpressionRecord],
        targets: &[Vec<f64>],
    ) -> Result<(Self, Vec<LossRow>)> {
        check_len("training targets", records.len(), targets.len())?;
        let dim = targets
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidArgument("empty training set".into()))?;
        let mut system = Self::init(kind, config, schema, dim)?;
        let pooled: Vec<Vec<f64>> = records
            .iter()
            .map(|r| Ok(system.encoder.pool(&full_prompt(schema, r)?)))
            .collect::<Result<_>>()?;
        let cfg = system.config.clone();
        let mut log = Vec::new();
        let mut push = |stage: &'static str, losses: &[f64]| {
            log.extend(losses.iter().enumerate().map(|(epoch, &loss)| LossRow { stage, epoch, loss }));
        };
        let disc_cfg = DiscTrainConfig {
            use_lora: kind != SystemKind::DiscNolora,
            seed: cfg.seed,
            ..cfg.disc
        };
        let flow_cfg = FlowTrainConfig {
            seed: cfg.seed,
            ..cfg.flow_train
        };

        system.head = match std::mem::replace(&mut system.head, Head::Disc(init_disc(&cfg, &system.encoder, dim)?)) {
            Head::Disc(model) => {
                let (model, report) =
                    train_discriminative_pooled(&system.encoder, &pooled, targets, model, &disc_cfg)?;
                push("disc", &report.epoch_losses);
                Head::Disc(model)
            }
            Head::Flow { net, adapter } => {
                let out = train_flow(
                    net,
                    FlowConditioning::Prompt {
                        encoder: &system.encoder,
                        pooled: &pooled,
                        adapter,
                        train_adapter: true,
                    },
                    targets,
                    &cfg.flow,
                    &flow_cfg,
                )?;
                push("flow", &out.report.epoch_losses);
                Head::Flow {
                    net: out.net,
                    adapter: out.adapter.expect("prompt conditioning returns its adapter"),
                }
            }
            Head::TwoStage { stage_one, net } => {
                let (stage_one, report) =
                    train_discriminative_pooled(&system.encoder, &pooled, targets, stage_one, &disc_cfg)?;
                push("disc", &report.epoch_losses);
                let conditions: Vec<Vec<f64>> = pooled
                    .iter()
                    .map(|p| two_stage_condition(&system.encoder, &stage_one, p, cfg.two_stage_concat))
                    .collect::<Result<_>>()?;
                let out = train_flow(net, FlowConditioning::Fixed(&conditions), targets, &cfg.flow, &flow_cfg)?;
                push("flow", &out.report.epoch_losses);
                Head::TwoStage { stage_one, net: out.net }
            }
        };
        Ok((system, log))
    }

    /// Deterministic prediction `ẽ` of a discriminative head.
    pub fn predict(&self, prompt: &Prompt) -> Result<SpeakerEmbedding> {
        let pooled = self.encoder.pool(prompt);
        match &self.head {
            Head::Disc(m) | Head::TwoStage { stage_one: m, .. } => predict_pooled(&self.encoder, m, &pooled),
            Head::Flow { .. } => Err(Error::InvalidArgument(format!(
                "{} has no discriminative head",
                self.kind
            ))),
        }
    }

    /// Condition vector the flow head sees for this prompt.
    pub fn flow_condition(&self, prompt: &Prompt) -> Result<Vec<f64>> {
        let pooled = self.encoder.pool(prompt);
        match &self.head {
            Head::Flow { adapter, .. } => self.encoder.project(&pooled, Some(adapter)),
            Head::TwoStage { stage_one, .. } => {
                two_stage_condition(&self.encoder, stage_one, &pooled, self.config.two_stage_concat)
            }
            Head::Disc(_) => Err(Error::InvalidArgument(format!("{} has no flow head", self.kind))),
        }
    }

    /// One embedding from the initial noise `x0`, or the prediction for a
    /// discriminative system (which ignores `x0`).
    pub fn generate_from(&self, prompt: &Prompt, x0: &[f64]) -> Result<SpeakerEmbedding> {
        match &self.head {
            Head::Disc(_) => self.predict(prompt),
            Head::Flow { net, .. } | Head::TwoStage { net, .. } => {
                integrate(net, &self.flow_condition(prompt)?, x0, &self.config.flow)
            }
        }
    }

    /// `n` draws for a generative system, seeded by `(seed, key, draw)`;
    /// exactly one prediction for a discriminative one.
    pub fn generate(&self, prompt: &Prompt, n: usize, seed: u64, key: u64) -> Result<Vec<SpeakerEmbedding>> {
        if !self.kind.is_generative() {
            return Ok(vec![self.predict(prompt)?]);
        }
        let condition = self.flow_condition(prompt)?;
        let net = match &self.head {
            Head::Flow { net, .. } | Head::TwoStage { net, .. } => net,
            Head::Disc(_) => unreachable!(),
        };
        (0..n)
            .into_par_iter()
            .map(|j| {
                let x0 = normal_vec(&mut rng_for(seed, &[0x6E4, key, j as u64]), self.dim, 1.0);
                integrate(net, &condition, &x0, &self.config.flow)
            })
            .collect()
    }

    pub fn to_checkpoint(&self) -> Result<CheckpointFile> {
        let metadata = serde_json::to_string(&CheckpointMeta {
            system: self.kind,
            dim: self.dim,
            config: self.config.clone(),
        })?;
        let blocks = match &self.head {
            Head::Disc(m) => vec![
                ParamBlock::Mlp(m.projection.params().clone()),
                ParamBlock::Lora(m.adapter.clone()),
            ],
            Head::Flow { net, adapter } => vec![
                ParamBlock::Mlp(net.params().clone()),
                ParamBlock::Lora(adapter.clone()),
            ],
            Head::TwoStage { stage_one, net } => vec![
                ParamBlock::Mlp(stage_one.projection.params().clone()),
                ParamBlock::Lora(stage_one.adapter.clone()),
                ParamBlock::Mlp(net.params().clone()),
            ],
        };
        Ok(CheckpointFile { metadata, blocks })
    }

    pub fn from_checkpoint(ckpt: CheckpointFile, schema: &ImpressionSchema) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_str(&ckpt.metadata)
            .map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        let mut system = Self::init(meta.system, meta.config, schema, meta.dim)?;
        let wrong = || Error::Format(format!("checkpoint blocks do not match system {}", meta.system));
        let mut blocks = ckpt.blocks.into_iter();
        let mlp = |blocks: &mut std::vec::IntoIter<ParamBlock>| match blocks.next() {
            Some(ParamBlock::Mlp(p)) => Ok(p),
            _ => Err(wrong()),
        };
        let lora = |blocks: &mut std::vec::IntoIter<ParamBlock>| match blocks.next() {
            Some(ParamBlock::Lora(a)) => Ok(a),
            _ => Err(wrong()),
        };
        let fv = |p, cond: usize| VectorFieldNet::from_params(p, meta.dim, cond, system.config.flow.time_frequencies);
        let load_disc = |proj, adapter: LoraAdapter, enc: &FrozenEncoder| -> Result<DiscModel> {
            check_len("adapter input", enc.input_dim(), adapter.in_dim())?;
            check_len("adapter output", enc.output_dim(), adapter.out_dim())?;
            Ok(DiscModel {
                projection: ProjectionNet::from_params(proj)?,
                adapter,
            })
        };
        system.head = match &system.head {
            Head::Disc(_) => {
                let (p, a) = (mlp(&mut blocks)?, lora(&mut blocks)?);
                Head::Disc(load_disc(p, a, &system.encoder)?)
            }
            Head::Flow { net, .. } => {
                let cond = net.condition_dim();
                let (p, a) = (mlp(&mut blocks)?, lora(&mut blocks)?);
                Head::Flow { net: fv(p, cond)?, adapter: a }
            }
            Head::TwoStage { net, .. } => {
                let cond = net.condition_dim();
                let (p, a) = (mlp(&mut blocks)?, lora(&mut blocks)?);
                let stage_one = load_disc(p, a, &system.encoder)?;
                Head::TwoStage { stage_one, net: fv(mlp(&mut blocks)?, cond)? }
            }
        };
        if blocks.next().is_some() {
            return Err(wrong());
        }
        Ok(system)
    }
}

fn two_stage_condition(encoder: &FrozenEncoder, stage_one: &DiscModel, pooled: &[f64], concat: bool) -> Result<Vec<f64>> {
    let mut c = predict_pooled(encoder, stage_one, pooled)?.values;
    if concat {
        c.extend(encoder.project(pooled, Some(&stage_one.adapter))?);
    }
    Ok(c)
}

/// Per-speaker mean cosine similarity between generated embeddings and the
/// speaker's ground truth, averaged over speakers.
pub fn mean_similarity(generated: &[Vec<SpeakerEmbedding>], truth: &[Vec<f64>]) -> Result<f64> {
    check_len("ground-truth speakers", generated.len(), truth.len())?;
    if generated.is_empty() {
        return Err(Error::InvalidArgument("no speakers to compare".into()));
    }
    let mut total = 0.0;
    for (draws, gt) in generated.iter().zip(truth) {
        if draws.is_empty() {
            return Err(Error::InvalidArgument("speaker without generated embeddings".into()));
        }
        let mut s = 0.0;
        for e in draws {
            s += cosine_similarity(&e.values, gt)?;
        }
        total += s / draws.len() as f64;
    }
    Ok(total / generated.len() as f64)
}

pub const ABLATION_PORTIONS: [(&str, f64); 3] = [("1/3", 1.0 / 3.0), ("2/3", 2.0 / 3.0), ("3/3", 1.0)];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub portion: &'static str,
    pub mean_similarity: f64,
}

/// Mean similarity at each prompt portion, averaged over `seeds`. Seed `s`
/// picks the question subsets and the flow noise.
pub fn ablation(
    system: &TrainedSystem,
    schema: &ImpressionSchema,
    records: &[ImpressionRecord],
    truth: &[Vec<f64>],
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one seed".into()));
    }
    ABLATION_PORTIONS
        .iter()
        .map(|&(label, portion)| {
            let mut sum = 0.0;
            for &seed in seeds {
                let generated: Vec<Vec<SpeakerEmbedding>> = records
                    .iter()
                    .map(|r| {
                        let ids = subset_prompt(schema, r, portion, seed)?;
                        let prompt = build_prompt(schema, r, &ids)?;
                        system.generate(&prompt, 1, seed, hash_str(&r.speaker_id))
                    })
                    .collect::<Result<_>>()?;
                sum += mean_similarity(&generated, truth)?;
            }
            Ok(AblationRow {
                portion: label,
                mean_similarity: sum / seeds.len() as f64,
            })
        })
        .collect()
}

/// Marks embeddings with the provenance a system produces.
pub fn provenance_of(kind: SystemKind) -> Provenance {
    if kind.is_generative() {
        Provenance::FlowGenerated
    } else {
        Provenance::Discriminative
    }
}
