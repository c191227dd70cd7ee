//! Frozen surrogate text encoder and its low-rank adapter.
//!
//! Each phrase hashes to a fixed standard-normal vector. A prompt is pooled
//! as the mean of its phrase vectors and passed through one frozen affine
//! layer; that layer is the one the adapter modifies:
//!
//! ```text
//! o_cls = W·m + b + (α/r)·B·A·m
//! ```
//!
//! Phrases of the encoder's `blind_questions` are projected out of `W`'s row
//! space, so the frozen path cannot see them while the adapter can.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::builder::Prompt;
use super::schema::ImpressionSchema;
use crate::error::{check_len, Error, Result};
use crate::mathcore::{axpy, dot, Matrix, Parameters};
use crate::rng::{hash_str, normal_vec, rng_for};

/// Gain on the frozen weight so a full 26-phrase prompt encodes at unit scale.
const FROZEN_GAIN: f64 = 5.0;
const FROZEN_BIAS_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub seed: u64,
    pub phrase_dim: usize,
    pub output_dim: usize,
    pub blind_questions: Vec<String>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            seed: 0x5EED,
            phrase_dim: 128,
            output_dim: 128,
            blind_questions: ["expressiveness", "confidence", "energy", "warmth"]
                .map(String::from)
                .to_vec(),
        }
    }
}

/// `o_cls`: the pooled summary of a prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningVector {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FrozenEncoder {
    config: EncoderConfig,
    weight: Matrix,
    bias: Vec<f64>,
    phrase_vectors: HashMap<String, Vec<f64>>,
}

impl FrozenEncoder {
    pub fn new(config: EncoderConfig, schema: &ImpressionSchema) -> Result<Self> {
        if config.phrase_dim == 0 || config.output_dim == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        let mut phrase_vectors = HashMap::new();
        for q in schema.questions() {
            for p in &q.phrases {
                phrase_vectors.insert(p.clone(), phrase_vector(&config, p));
            }
        }

        let mut rng = rng_for(config.seed, &[0xF00D]);
        let scale = FROZEN_GAIN / (config.phrase_dim as f64).sqrt();
        let mut weight = Matrix::from_vec(
            config.output_dim,
            config.phrase_dim,
            normal_vec(&mut rng, config.output_dim * config.phrase_dim, scale),
        )?;
        let bias = normal_vec(&mut rng, config.output_dim, FROZEN_BIAS_SCALE);

        let mut blind = Vec::new();
        for id in &config.blind_questions {
            for p in &schema.question(id)?.phrases {
                blind.push(phrase_vectors[p].clone());
            }
        }
        for q in orthonormal_basis(&blind) {
            // W ← W − (W q) qᵀ
            let wq = weight.matvec(&q);
            weight.add_outer(-1.0, &wq, &q);
        }

        Ok(Self {
            config,
            weight,
            bias,
            phrase_vectors,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.config.phrase_dim
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn phrase_vector(&self, phrase: &str) -> Vec<f64> {
        self.phrase_vectors
            .get(phrase)
            .cloned()
            .unwrap_or_else(|| phrase_vector(&self.config, phrase))
    }

    /// Mean of the phrase vectors; zero for an empty prompt.
    pub fn pool(&self, prompt: &Prompt) -> Vec<f64> {
        let mut m = vec![0.0; self.config.phrase_dim];
        if prompt.is_empty() {
            return m;
        }
        for p in prompt.phrases() {
            match self.phrase_vectors.get(p) {
                Some(v) => axpy(1.0, v, &mut m),
                None => axpy(1.0, &phrase_vector(&self.config, p), &mut m),
            }
        }
        let inv = 1.0 / prompt.phrases().len() as f64;
        m.iter_mut().for_each(|v| *v *= inv);
        m
    }

    /// Frozen layer on an already pooled input, optionally with an adapter.
    pub fn project(&self, pooled: &[f64], adapter: Option<&LoraAdapter>) -> Result<Vec<f64>> {
        check_len("pooled prompt", self.config.phrase_dim, pooled.len())?;
        let mut out = self.weight.matvec(pooled);
        axpy(1.0, &self.bias, &mut out);
        if let Some(adapter) = adapter {
            adapter.check_shape(self)?;
            axpy(1.0, &adapter.delta(pooled), &mut out);
        }
        Ok(out)
    }
}

pub fn frozen_encode(encoder: &FrozenEncoder, prompt: &Prompt) -> ConditioningVector {
    let values = encoder
        .project(&encoder.pool(prompt), None)
        .expect("pooled length matches by construction");
    ConditioningVector { values }
}

pub fn lora_encode(
    encoder: &FrozenEncoder,
    prompt: &Prompt,
    adapter: &LoraAdapter,
) -> Result<ConditioningVector> {
    let values = encoder.project(&encoder.pool(prompt), Some(adapter))?;
    Ok(ConditioningVector { values })
}

fn phrase_vector(config: &EncoderConfig, phrase: &str) -> Vec<f64> {
    let mut rng = rng_for(config.seed, &[hash_str(phrase)]);
    normal_vec(&mut rng, config.phrase_dim, 1.0)
}

/// Modified Gram–Schmidt; near-dependent vectors are dropped.
fn orthonormal_basis(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut u = v.clone();
        for b in &basis {
            let c = dot(&u, b);
            axpy(-c, b, &mut u);
        }
        let n = dot(&u, &u).sqrt();
        if n > 1e-8 * dot(v, v).sqrt().max(1e-300) {
            u.iter_mut().for_each(|x| *x /= n);
            basis.push(u);
        }
    }
    basis
}

/// Trainable low-rank update `ΔW = (α/r)·B·A` of the frozen layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    rank: usize,
    alpha: f64,
    /// `(rank, in_dim)`
    pub a: Matrix,
    /// `(out_dim, rank)`, zero at initialization.
    pub b: Matrix,
}

impl LoraAdapter {
    pub fn new<R: Rng + ?Sized>(
        rank: usize,
        alpha: f64,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Config("LoRA rank must be positive".into()));
        }
        let a = Matrix::from_vec(
            rank,
            in_dim,
            normal_vec(rng, rank * in_dim, 1.0 / (in_dim as f64).sqrt()),
        )?;
        Ok(Self {
            rank,
            alpha,
            a,
            b: Matrix::zeros(out_dim, rank),
        })
    }

    pub fn for_encoder<R: Rng + ?Sized>(
        encoder: &FrozenEncoder,
        rank: usize,
        alpha: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(rank, alpha, encoder.input_dim(), encoder.output_dim(), rng)
    }

    pub fn from_parts(rank: usize, alpha: f64, a: Matrix, b: Matrix) -> Result<Self> {
        if a.rows() != rank || b.cols() != rank {
            return Err(Error::Dimension {
                context: "LoRA factors".into(),
                expected: rank,
                actual: if a.rows() != rank { a.rows() } else { b.cols() },
            });
        }
        Ok(Self { rank, alpha, a, b })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn in_dim(&self) -> usize {
        self.a.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.b.rows()
    }

    pub fn delta_weight(&self) -> Matrix {
        self.b.matmul(&self.a).scaled(self.scaling())
    }

    /// `(α/r)·B·A·x`
    pub fn delta(&self, x: &[f64]) -> Vec<f64> {
        let ax = self.a.matvec(x);
        let mut out = self.b.matvec(&ax);
        let s = self.scaling();
        out.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Accumulates `∂L/∂A` and `∂L/∂B` into `acc` given `∂L/∂o` at input `x`.
    pub fn backward_accumulate(&self, x: &[f64], grad_out: &[f64], acc: &mut LoraAdapter) -> Result<()> {
        check_len("adapter input", self.in_dim(), x.len())?;
        check_len("adapter output gradient", self.out_dim(), grad_out.len())?;
        if acc.a.rows() != self.a.rows() || acc.a.cols() != self.a.cols() || acc.b.rows() != self.b.rows() {
            return Err(Error::InvalidArgument("adapter gradient buffer shape".into()));
        }
        let s = self.scaling();
        let ax = self.a.matvec(x);
        acc.b.add_outer(s, grad_out, &ax);
        let btg = self.b.transpose_matvec(grad_out);
        acc.a.add_outer(s, &btg, x);
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            rank: self.rank,
            alpha: self.alpha,
            a: Matrix::zeros(self.a.rows(), self.a.cols()),
            b: Matrix::zeros(self.b.rows(), self.b.cols()),
        }
    }

    fn check_shape(&self, encoder: &FrozenEncoder) -> Result<()> {
        check_len("adapter input dim", encoder.input_dim(), self.in_dim())?;
        check_len("adapter output dim", encoder.output_dim(), self.out_dim())
    }
}

impl Parameters for LoraAdapter {
    fn slices(&self) -> Vec<&[f64]> {
        vec![self.a.data(), self.b.data()]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.a.data_mut(), self.b.data_mut()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{build_prompt, full_prompt, ImpressionRecord};
    use std::collections::{BTreeMap, BTreeSet};

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            seed: 9,
            phrase_dim: 24,
            output_dim: 12,
            blind_questions: vec!["speed".into()],
        }
    }

    fn record() -> ImpressionRecord {
        ImpressionRecord::new(
            "x",
            BTreeMap::from([
                ("pitch".to_string(), 0),
                ("age".to_string(), 1),
                ("speed".to_string(), 4),
                ("energy".to_string(), 2),
            ]),
        )
    }

    #[test]
    fn empty_prompt_encodes_to_bias() {
        let schema = ImpressionSchema::builtin();
        let enc = FrozenEncoder::new(small_config(), &schema).unwrap();
        let p = build_prompt(&schema, &record(), &BTreeSet::new()).unwrap();
        assert_eq!(frozen_encode(&enc, &p).values, enc.bias());
    }

    #[test]
    fn permuted_phrases_encode_identically() {
        let schema = ImpressionSchema::builtin();
        let enc = FrozenEncoder::new(small_config(), &schema).unwrap();
        let p = full_prompt(&schema, &record()).unwrap();
        let q = p.with_phrase_order(&[3, 1, 0, 2]);
        let (a, b) = (frozen_encode(&enc, &p).values, frozen_encode(&enc, &q).values);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn fresh_adapter_matches_frozen_path() {
        let schema = ImpressionSchema::builtin();
        let enc = FrozenEncoder::new(small_config(), &schema).unwrap();
        let adapter = LoraAdapter::for_encoder(&enc, 8, 8.0, &mut rng_for(1, &[])).unwrap();
        let p = full_prompt(&schema, &record()).unwrap();
        assert_eq!(lora_encode(&enc, &p, &adapter).unwrap(), frozen_encode(&enc, &p));
    }

    #[test]
    fn blind_question_is_invisible_to_frozen_path() {
        let schema = ImpressionSchema::builtin();
        let enc = FrozenEncoder::new(small_config(), &schema).unwrap();
        let mut other = record();
        other.answers.insert("speed".into(), 1);
        let a = frozen_encode(&enc, &full_prompt(&schema, &record()).unwrap());
        let b = frozen_encode(&enc, &full_prompt(&schema, &other).unwrap());
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-10);
        }
        // ...but not to a non-blind one
        other.answers.insert("pitch".into(), 1);
        let c = frozen_encode(&enc, &full_prompt(&schema, &other).unwrap());
        assert!(a.values.iter().zip(&c.values).any(|(x, y)| (x - y).abs() > 1e-3));
    }

    #[test]
    fn adapter_shape_mismatch() {
        let schema = ImpressionSchema::builtin();
        let enc = FrozenEncoder::new(small_config(), &schema).unwrap();
        let adapter = LoraAdapter::new(4, 4.0, 10, 12, &mut rng_for(2, &[])).unwrap();
        let p = full_prompt(&schema, &record()).unwrap();
        assert!(lora_encode(&enc, &p, &adapter).is_err());
        assert!(LoraAdapter::new(0, 1.0, 3, 3, &mut rng_for(2, &[])).is_err());
    }
}
