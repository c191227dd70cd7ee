use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::record::ImpressionRecord;
use super::schema::{ImpressionSchema, Slot, PHRASE_SEPARATOR, SLOT_SEPARATOR};
use crate::error::{Error, Result};
use crate::rng::{hash_str, rng_for};

const TEMPLATE_HEAD: &str = "A speaker whose voice is ";
const TEMPLATE_TAIL: &str = ".";

/// Impression phrases in schema order plus the rendered sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    phrases: Vec<String>,
    text: String,
}

impl Prompt {
    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    /// Same prompt with its phrase list reordered; the rendered text is kept.
    pub fn with_phrase_order(&self, order: &[usize]) -> Prompt {
        Prompt {
            phrases: order.iter().map(|&i| self.phrases[i].clone()).collect(),
            text: self.text.clone(),
        }
    }
}

/// "A speaker whose voice is {voice} and who speaks {delivery}."
pub fn render(voice: &[&str], delivery: &[&str]) -> String {
    format!(
        "{TEMPLATE_HEAD}{}{SLOT_SEPARATOR}{}{TEMPLATE_TAIL}",
        voice.join(PHRASE_SEPARATOR),
        delivery.join(PHRASE_SEPARATOR)
    )
}

/// Slot-fills the phrases of the `include`d questions, in schema order.
pub fn build_prompt(
    schema: &ImpressionSchema,
    record: &ImpressionRecord,
    include: &BTreeSet<String>,
) -> Result<Prompt> {
    for id in include {
        schema.question(id)?;
        if !record.answers.contains_key(id) {
            return Err(Error::Unanswered(id.clone()));
        }
    }
    let mut phrases = Vec::with_capacity(include.len());
    let mut voice = Vec::new();
    let mut delivery = Vec::new();
    for q in schema.questions() {
        if !include.contains(&q.id) {
            continue;
        }
        let phrase = q.phrase_for(record.answers[&q.id])?;
        phrases.push(phrase.to_string());
        match q.slot {
            Slot::Voice => voice.push(phrase),
            Slot::Delivery => delivery.push(phrase),
        }
    }
    Ok(Prompt {
        text: render(&voice, &delivery),
        phrases,
    })
}

/// Prompt over every answered question.
pub fn full_prompt(schema: &ImpressionSchema, record: &ImpressionRecord) -> Result<Prompt> {
    let include: BTreeSet<String> = record.answers.keys().cloned().collect();
    build_prompt(schema, record, &include)
}

/// Seeded subset of ⌈portion · answered⌉ answered question ids.
///
/// The answered ids are shuffled once per (seed, speaker) and a prefix is
/// taken, so for a fixed seed smaller portions give subsets of larger ones.
pub fn subset_prompt(
    schema: &ImpressionSchema,
    record: &ImpressionRecord,
    portion: f64,
    seed: u64,
) -> Result<BTreeSet<String>> {
    if !(portion > 0.0 && portion <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "portion must lie in (0, 1], got {portion}"
        )));
    }
    record.validate(schema)?;
    let mut ids = record.answered_ids(schema);
    let n = ids.len();
    let take = ((portion * n as f64) - 1e-9).ceil().clamp(0.0, n as f64) as usize;
    let mut rng = rng_for(seed, &[hash_str(&record.speaker_id)]);
    ids.shuffle(&mut rng);
    ids.truncate(take);
    Ok(ids.into_iter().collect())
}
