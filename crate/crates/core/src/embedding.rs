use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    GroundTruth,
    Discriminative,
    FlowGenerated,
}

/// A speaker embedding together with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl SpeakerEmbedding {
    pub fn new(values: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("speaker embedding".into()));
        }
        Ok(Self { values, provenance })
    }

    pub fn ground_truth(values: Vec<f64>) -> Result<Self> {
        Self::new(values, Provenance::GroundTruth)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}
