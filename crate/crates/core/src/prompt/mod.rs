//! Listener-impression prompts: the questionnaire schema, slot-filled
//! prompt text, and the adapted surrogate encoder that turns a prompt into a
//! conditioning vector.

mod builder;
mod encoder;
mod record;
mod schema;

pub use builder::{build_prompt, full_prompt, render, subset_prompt, Prompt};
pub use encoder::{
    frozen_encode, lora_encode, ConditioningVector, EncoderConfig, FrozenEncoder, LoraAdapter,
};
pub use record::{read_records_jsonl, write_records_jsonl, ImpressionRecord};
pub use schema::{ImpressionSchema, Question, QuestionKind, Slot, QUESTION_COUNT};
