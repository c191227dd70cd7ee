use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::schema::ImpressionSchema;
use crate::error::{Error, Result};

/// One speaker's listener-impression answers, keyed by question id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpressionRecord {
    pub speaker_id: String,
    pub answers: BTreeMap<String, i64>,
}

impl ImpressionRecord {
    pub fn new(speaker_id: impl Into<String>, answers: BTreeMap<String, i64>) -> Self {
        Self {
            speaker_id: speaker_id.into(),
            answers,
        }
    }

    pub fn validate(&self, schema: &ImpressionSchema) -> Result<()> {
        for (id, &value) in &self.answers {
            let q = schema.question(id)?;
            if !q.is_legal(value) {
                return Err(Error::AnswerOutOfRange {
                    question: id.clone(),
                    value,
                });
            }
        }
        Ok(())
    }

    /// Answered question ids in schema order.
    pub fn answered_ids(&self, schema: &ImpressionSchema) -> Vec<String> {
        schema
            .questions()
            .iter()
            .filter(|q| self.answers.contains_key(&q.id))
            .map(|q| q.id.clone())
            .collect()
    }
}

/// Reads one JSON record per line; blank lines are skipped.
pub fn read_records_jsonl<R: BufRead>(reader: R) -> Result<Vec<ImpressionRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ImpressionRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("records line {}: {e}", lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records_jsonl<W: Write>(mut writer: W, records: &[ImpressionRecord]) -> Result<()> {
    for rec in records {
        serde_json::to_writer(&mut writer, rec)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
