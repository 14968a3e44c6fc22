//! Metamorphic bias evaluation for image-editing generative models.
//!
//! Seed portraits from balanced demographic groups are edited with neutral
//! prompts; any systematic shift in the predicted gender, age or skin tone
//! of the edited face is attributed to the prompt word and aggregated into
//! word- and model-level bias scores.

pub mod backend;
pub mod corpus;
pub mod fixtures;
pub mod http;
pub mod jsonl;
pub mod report;
pub mod sampling;
pub mod scoring;
pub mod vision;
