//! Synthetic speaker world with a closed-form conditional distribution.
//!
//! A speaker's embedding given its impression record `r` is
//!
//! ```text
//! e = Σ_q (a_q − center_q)·E_q + o_k + σ·z,   k ~ Uniform{1..m}, z ~ N(0, I)
//! ```
//!
//! where `E_q` is question `q`'s effect vector and `o_k` the `k`-th mode
//! offset. Every record therefore has `m` equally likely modes, which is the
//! ambiguity a deterministic head cannot represent.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::SpeakerEmbedding;
use crate::error::{check_len, Error, Result};
use crate::mathcore::{norm, Matrix};
use crate::prompt::{ImpressionRecord, ImpressionSchema};
use crate::rng::{normal_vec, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthWorldConfig {
    pub seed: u64,
    pub dim: usize,
    /// Per-coordinate standard deviation of effect vector entries.
    pub effect_scale: f64,
    /// Questions whose effect is forced to zero.
    pub inactive_questions: Vec<String>,
    /// σ of the isotropic per-speaker noise.
    pub noise_scale: f64,
    pub modes: usize,
    /// Euclidean distance from the conditional center to each mode mean.
    pub mode_separation: f64,
}

impl Default for SynthWorldConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            dim: 16,
            effect_scale: 0.18,
            inactive_questions: Vec::new(),
            noise_scale: 0.1,
            modes: 2,
            mode_separation: 2.0,
        }
    }
}

impl SynthWorldConfig {
    /// World whose only active attributes are the given questions, e.g. the
    /// encoder's blind questions. Used to stress the adapter: a frozen
    /// encoder cannot see any of the signal.
    pub fn lora_stress(schema: &ImpressionSchema, active: &[String]) -> Self {
        let inactive = schema
            .questions()
            .iter()
            .filter(|q| !active.contains(&q.id))
            .map(|q| q.id.clone())
            .collect();
        Self {
            inactive_questions: inactive,
            ..Self::default()
        }
    }

    pub fn validate(&self, schema: &ImpressionSchema) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config(format!("world dim must be ≥ 2, got {}", self.dim)));
        }
        if self.modes == 0 {
            return Err(Error::Config("world needs at least one mode".into()));
        }
        for (name, v) in [
            ("effect_scale", self.effect_scale),
            ("noise_scale", self.noise_scale),
            ("mode_separation", self.mode_separation),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        for id in &self.inactive_questions {
            schema.question(id)?;
        }
        Ok(())
    }
}

/// A concrete world: effect matrix and mode offsets drawn from the config seed.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    config: SynthWorldConfig,
    schema: ImpressionSchema,
    /// Row `q` is the effect vector of the schema's `q`-th question.
    effects: Matrix,
    mode_offsets: Vec<Vec<f64>>,
}

impl SynthWorld {
    pub fn new(config: SynthWorldConfig, schema: ImpressionSchema) -> Result<Self> {
        config.validate(&schema)?;
        let d = config.dim;
        let n_q = schema.questions().len();
        let mut rng = rng_for(config.seed, &[0xEFFEC7]);
        let mut effects = Matrix::from_vec(n_q, d, normal_vec(&mut rng, n_q * d, config.effect_scale))?;
        let inactive: BTreeSet<&str> = config.inactive_questions.iter().map(String::as_str).collect();
        for (i, q) in schema.questions().iter().enumerate() {
            if inactive.contains(q.id.as_str()) {
                for j in 0..d {
                    effects.set(i, j, 0.0);
                }
            }
        }

        let mut rng = rng_for(config.seed, &[0x30DE]);
        let unit = |rng: &mut rand_chacha::ChaCha8Rng| loop {
            let v = normal_vec(rng, d, 1.0);
            let n = norm(&v);
            if n > 1e-6 {
                return v.into_iter().map(|x| x / n).collect::<Vec<_>>();
            }
        };
        let s = config.mode_separation;
        let mode_offsets = match config.modes {
            1 => vec![vec![0.0; d]],
            2 => {
                let u = unit(&mut rng);
                vec![
                    u.iter().map(|x| s * x).collect(),
                    u.iter().map(|x| -s * x).collect(),
                ]
            }
            m => (0..m)
                .map(|_| unit(&mut rng).into_iter().map(|x| s * x).collect())
                .collect(),
        };
        Ok(Self {
            config,
            schema,
            effects,
            mode_offsets,
        })
    }

    pub fn config(&self) -> &SynthWorldConfig {
        &self.config
    }

    pub fn schema(&self) -> &ImpressionSchema {
        &self.schema
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn effects(&self) -> &Matrix {
        &self.effects
    }

    pub fn mode_offsets(&self) -> &[Vec<f64>] {
        &self.mode_offsets
    }

    /// `Σ_q (a_q − center_q)·E_q`; unanswered questions contribute nothing.
    pub fn linear_image(&self, record: &ImpressionRecord) -> Result<Vec<f64>> {
        record.validate(&self.schema)?;
        let mut out = vec![0.0; self.dim()];
        for (i, q) in self.schema.questions().iter().enumerate() {
            if let Some(&a) = record.answers.get(&q.id) {
                let w = a as f64 - q.kind.center();
                for (o, e) in out.iter_mut().zip(self.effects.row(i)) {
                    *o += w * e;
                }
            }
        }
        Ok(out)
    }

    /// Means of the `m` mixture components for this record.
    pub fn mode_means(&self, record: &ImpressionRecord) -> Result<Vec<Vec<f64>>> {
        let center = self.linear_image(record)?;
        Ok(self
            .mode_offsets
            .iter()
            .map(|o| center.iter().zip(o).map(|(c, x)| c + x).collect())
            .collect())
    }

    /// Mean of the full conditional mixture.
    pub fn conditional_mean(&self, record: &ImpressionRecord) -> Result<Vec<f64>> {
        let means = self.mode_means(record)?;
        let m = means.len() as f64;
        let mut out = vec![0.0; self.dim()];
        for v in &means {
            for (o, x) in out.iter_mut().zip(v) {
                *o += x / m;
            }
        }
        Ok(out)
    }

    /// One draw from the conditional mixture, returning the chosen mode index.
    pub fn sample<R: Rng + ?Sized>(&self, record: &ImpressionRecord, rng: &mut R) -> Result<(usize, Vec<f64>)> {
        let means = self.mode_means(record)?;
        Ok(self.sample_from_means(&means, rng))
    }

    fn sample_from_means<R: Rng + ?Sized>(&self, means: &[Vec<f64>], rng: &mut R) -> (usize, Vec<f64>) {
        let k = rng.gen_range(0..means.len());
        let noise = normal_vec(rng, self.dim(), self.config.noise_scale);
        (k, means[k].iter().zip(noise).map(|(m, z)| m + z).collect())
    }

    /// A record with every question answered uniformly at random.
    pub fn random_record<R: Rng + ?Sized>(&self, speaker_id: &str, rng: &mut R) -> ImpressionRecord {
        let answers: BTreeMap<String, i64> = self
            .schema
            .questions()
            .iter()
            .map(|q| (q.id.clone(), rng.gen_range(q.kind.legal_values())))
            .collect();
        ImpressionRecord::new(speaker_id, answers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Heldout,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Heldout, Split::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Heldout => "heldout",
            Split::Eval => "eval",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSizes {
    pub train: usize,
    pub heldout: usize,
    pub eval: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 10_000,
            heldout: 500,
            eval: 30,
        }
    }
}

impl SplitSizes {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Heldout => self.heldout,
            Split::Eval => self.eval,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub split: Split,
    pub record: ImpressionRecord,
    pub embedding: SpeakerEmbedding,
    /// Mixture component the embedding was drawn from.
    pub mode: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub entries: Vec<CorpusEntry>,
}

impl SynthCorpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn records(&self, split: Split) -> Vec<ImpressionRecord> {
        self.split(split).map(|e| e.record.clone()).collect()
    }

    pub fn embeddings(&self, split: Split) -> Vec<Vec<f64>> {
        self.split(split).map(|e| e.embedding.values.clone()).collect()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.embedding.dim())
    }
}

pub fn speaker_id(split: Split, index: usize) -> String {
    format!("{}-{index:05}", split.name())
}

/// Draws every split's speakers; speaker `i` of a split uses its own stream,
/// so a split's content does not depend on the other splits' sizes.
pub fn generate_corpus(world: &SynthWorld, sizes: &SplitSizes) -> Result<SynthCorpus> {
    for split in Split::ALL {
        if sizes.get(split) == 0 {
            return Err(Error::Config(format!("{} split must have ≥ 1 speaker", split.name())));
        }
    }
    let mut entries = Vec::new();
    for split in Split::ALL {
        for i in 0..sizes.get(split) {
            let mut rng = rng_for(world.config.seed, &[0xC0, split.tag(), i as u64]);
            let record = world.random_record(&speaker_id(split, i), &mut rng);
            let (mode, values) = world.sample(&record, &mut rng)?;
            entries.push(CorpusEntry {
                split,
                record,
                embedding: SpeakerEmbedding::ground_truth(values)?,
                mode,
            });
        }
    }
    Ok(SynthCorpus { entries })
}

/// `n` exact draws from the record's true conditional mixture.
pub fn oracle_conditional_samples(
    world: &SynthWorld,
    record: &ImpressionRecord,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let means = world.mode_means(record)?;
    let mut rng = rng_for(seed, &[0x0AC1E, crate::rng::hash_str(&record.speaker_id)]);
    Ok((0..n).map(|_| world.sample_from_means(&means, &mut rng).1).collect())
}

/// Nearest mode mean and its root-mean-square distance (‖x − μ‖ / √d).
pub fn nearest_mode(means: &[Vec<f64>], x: &[f64]) -> Result<(usize, f64)> {
    let mut best = (usize::MAX, f64::INFINITY);
    for (k, m) in means.iter().enumerate() {
        check_len("mode mean", x.len(), m.len())?;
        let ss: f64 = m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        let rms = (ss / x.len() as f64).sqrt();
        if rms < best.1 {
            best = (k, rms);
        }
    }
    if best.0 == usize::MAX {
        return Err(Error::InvalidArgument("no mode means".into()));
    }
    Ok(best)
}
