//! Run configuration: one flat `key = value` file (a TOML subset without
//! tables). Missing keys take their defaults; unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::discriminative::DiscTrainConfig;
use crate::error::{Error, Result};
use crate::flow::{FlowConfig, FlowTrainConfig};
use crate::mathcore::Activation;
use crate::prompt::{EncoderConfig, ImpressionSchema};
use crate::synthdata::{SplitSizes, SynthWorldConfig};
use crate::system::SystemConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldPreset {
    Default,
    /// Only the encoder's blind questions carry signal.
    LoraStress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed for model initialization, training and sampling.
    pub seed: u64,

    pub world_preset: WorldPreset,
    pub world_seed: u64,
    pub world_dim: usize,
    pub world_effect_scale: f64,
    pub world_noise_scale: f64,
    pub world_modes: usize,
    pub world_mode_separation: f64,
    pub train_speakers: usize,
    pub heldout_speakers: usize,
    pub eval_speakers: usize,

    pub encoder_seed: u64,
    pub encoder_phrase_dim: usize,
    /// d', the width of `o_cls`.
    pub encoder_dim: usize,
    pub encoder_blind_questions: Vec<String>,
    pub lora_rank: usize,
    pub lora_alpha: f64,

    pub projection_hidden: usize,
    pub projection_activation: Activation,
    pub disc_epochs: usize,
    pub disc_batch_size: usize,
    pub disc_learning_rate: f64,
    pub freeze_projection: bool,

    pub flow_sigma_min: f64,
    pub flow_ode_steps: usize,
    pub flow_time_frequencies: usize,
    pub flow_hidden: usize,
    pub flow_layers: usize,
    pub flow_epochs: usize,
    pub flow_batch_size: usize,
    pub flow_learning_rate: f64,
    pub two_stage_concat: bool,

    pub ablation_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let world = SynthWorldConfig::default();
        let sizes = SplitSizes::default();
        let sys = SystemConfig::default();
        Self {
            seed: sys.seed,
            world_preset: WorldPreset::Default,
            world_seed: world.seed,
            world_dim: world.dim,
            world_effect_scale: world.effect_scale,
            world_noise_scale: world.noise_scale,
            world_modes: world.modes,
            world_mode_separation: world.mode_separation,
            train_speakers: sizes.train,
            heldout_speakers: sizes.heldout,
            eval_speakers: sizes.eval,
            encoder_seed: sys.encoder.seed,
            encoder_phrase_dim: sys.encoder.phrase_dim,
            encoder_dim: sys.encoder.output_dim,
            encoder_blind_questions: sys.encoder.blind_questions.clone(),
            lora_rank: sys.lora_rank,
            lora_alpha: sys.lora_alpha,
            projection_hidden: sys.projection_hidden,
            projection_activation: sys.projection_activation,
            disc_epochs: sys.disc.epochs,
            disc_batch_size: sys.disc.batch_size,
            disc_learning_rate: sys.disc.learning_rate,
            freeze_projection: sys.disc.freeze_projection,
            flow_sigma_min: sys.flow.sigma_min,
            flow_ode_steps: sys.flow.ode_steps,
            flow_time_frequencies: sys.flow.time_frequencies,
            flow_hidden: sys.flow_hidden,
            flow_layers: sys.flow_layers,
            flow_epochs: sys.flow_train.epochs,
            flow_batch_size: sys.flow_train.batch_size,
            flow_learning_rate: sys.flow_train.learning_rate,
            two_stage_concat: sys.two_stage_concat,
            ablation_seeds: vec![0, 1, 2],
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.flow().validate()?;
        if self.ablation_seeds.is_empty() {
            return Err(Error::Config("ablation_seeds must not be empty".into()));
        }
        for (name, v) in [
            ("disc_batch_size", self.disc_batch_size),
            ("flow_batch_size", self.flow_batch_size),
            ("lora_rank", self.lora_rank),
            ("encoder_dim", self.encoder_dim),
            ("encoder_phrase_dim", self.encoder_phrase_dim),
            ("flow_layers", self.flow_layers),
            ("train_speakers", self.train_speakers),
            ("heldout_speakers", self.heldout_speakers),
            ("eval_speakers", self.eval_speakers),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn world(&self, schema: &ImpressionSchema) -> SynthWorldConfig {
        let base = match self.world_preset {
            WorldPreset::Default => SynthWorldConfig::default(),
            WorldPreset::LoraStress => SynthWorldConfig::lora_stress(schema, &self.encoder_blind_questions),
        };
        SynthWorldConfig {
            seed: self.world_seed,
            dim: self.world_dim,
            effect_scale: self.world_effect_scale,
            noise_scale: self.world_noise_scale,
            modes: self.world_modes,
            mode_separation: self.world_mode_separation,
            ..base
        }
    }

    pub fn split_sizes(&self) -> SplitSizes {
        SplitSizes {
            train: self.train_speakers,
            heldout: self.heldout_speakers,
            eval: self.eval_speakers,
        }
    }

    pub fn flow(&self) -> FlowConfig {
        FlowConfig {
            sigma_min: self.flow_sigma_min,
            ode_steps: self.flow_ode_steps,
            time_frequencies: self.flow_time_frequencies,
        }
    }

    pub fn system(&self) -> SystemConfig {
        SystemConfig {
            seed: self.seed,
            encoder: EncoderConfig {
                seed: self.encoder_seed,
                phrase_dim: self.encoder_phrase_dim,
                output_dim: self.encoder_dim,
                blind_questions: self.encoder_blind_questions.clone(),
            },
            lora_rank: self.lora_rank,
            lora_alpha: self.lora_alpha,
            projection_hidden: self.projection_hidden,
            projection_activation: self.projection_activation,
            disc: DiscTrainConfig {
                epochs: self.disc_epochs,
                batch_size: self.disc_batch_size,
                learning_rate: self.disc_learning_rate,
                use_lora: true,
                freeze_projection: self.freeze_projection,
                seed: self.seed,
            },
            flow: self.flow(),
            flow_hidden: self.flow_hidden,
            flow_layers: self.flow_layers,
            flow_train: FlowTrainConfig {
                epochs: self.flow_epochs,
                batch_size: self.flow_batch_size,
                learning_rate: self.flow_learning_rate,
                seed: self.seed,
            },
            two_stage_concat: self.two_stage_concat,
        }
    }
}
