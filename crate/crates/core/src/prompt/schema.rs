use std::collections::HashSet;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const QUESTION_COUNT: usize = 26;

/// Separators used by the prompt template; phrases may not contain them.
pub(crate) const PHRASE_SEPARATOR: &str = ", ";
pub(crate) const SLOT_SEPARATOR: &str = " and who speaks ";

const BUILTIN_SCHEMA: &str = include_str!("../../fixtures/impression_schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    Binary,
    FivePoint,
}

impl QuestionKind {
    pub fn legal_values(self) -> RangeInclusive<i64> {
        match self {
            QuestionKind::Binary => 0..=1,
            QuestionKind::FivePoint => 1..=5,
        }
    }

    /// Midpoint of the answer scale.
    pub fn center(self) -> f64 {
        match self {
            QuestionKind::Binary => 0.5,
            QuestionKind::FivePoint => 3.0,
        }
    }
}

/// Template slot a question's phrase is rendered into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Voice,
    Delivery,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub kind: QuestionKind,
    pub slot: Slot,
    /// One phrase per legal answer, in ascending answer order.
    pub phrases: Vec<String>,
}

impl Question {
    pub fn is_legal(&self, value: i64) -> bool {
        self.kind.legal_values().contains(&value)
    }

    pub fn phrase_for(&self, value: i64) -> Result<&str> {
        if !self.is_legal(value) {
            return Err(Error::AnswerOutOfRange {
                question: self.id.clone(),
                value,
            });
        }
        let offset = value - self.kind.legal_values().start();
        Ok(&self.phrases[offset as usize])
    }
}

/// The ordered 26-question listener-impression questionnaire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpressionSchema {
    pub version: u32,
    questions: Vec<Question>,
}

impl ImpressionSchema {
    pub fn new(version: u32, questions: Vec<Question>) -> Result<Self> {
        let schema = Self { version, questions };
        schema.validate()?;
        Ok(schema)
    }

    /// The English phrase table shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_SCHEMA).expect("bundled schema fixture is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: Self = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.questions.iter().position(|q| q.id == id)
    }

    pub fn question(&self, id: &str) -> Result<&Question> {
        self.questions
            .iter()
            .find(|q| q.id == id)
            .ok_or_else(|| Error::UnknownQuestion(id.to_string()))
    }

    fn validate(&self) -> Result<()> {
        if self.questions.len() != QUESTION_COUNT {
            return Err(Error::Schema(format!(
                "expected {QUESTION_COUNT} questions, found {}",
                self.questions.len()
            )));
        }
        let mut ids = HashSet::new();
        for q in &self.questions {
            if !ids.insert(q.id.as_str()) {
                return Err(Error::Schema(format!("duplicate question id `{}`", q.id)));
            }
            let expected = q.kind.legal_values().count();
            if q.phrases.len() != expected {
                return Err(Error::Schema(format!(
                    "question `{}` needs {expected} phrases, has {}",
                    q.id,
                    q.phrases.len()
                )));
            }
            let mut seen = HashSet::new();
            for p in &q.phrases {
                if p.trim().is_empty() {
                    return Err(Error::Schema(format!("empty phrase in `{}`", q.id)));
                }
                if p.contains(PHRASE_SEPARATOR.trim()) || p.contains(SLOT_SEPARATOR) {
                    return Err(Error::Schema(format!(
                        "phrase `{p}` contains a template separator"
                    )));
                }
                if !seen.insert(p.as_str()) {
                    return Err(Error::Schema(format!("duplicate phrase `{p}` in `{}`", q.id)));
                }
            }
        }
        Ok(())
    }
}
