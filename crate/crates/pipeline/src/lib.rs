//! Data pipelines orchestrated through a mockable LLM gateway.
//!
//! - [`critique`] turns forum comment threads into unified critiques, then
//!   filters them and derives per-aspect conversations and MCQ sets.
//! - [`bench`] builds a multiple-choice benchmark: it generates MCQs from
//!   the most detailed critiques, removes questions answerable without the
//!   image, then scores and ranks the rest.
//! - [`eval`] runs a model over an MCQ set and reports per-topic accuracy.
//!
//! Every LLM call goes through [`llm::Gateway`]. The gateway applies a
//! concurrency bound, retries and a resumable on-disk response cache.

pub mod bench;
pub mod critique;
pub mod error;
pub mod eval;
pub mod jsonl;
pub mod llm;
pub mod mcq;
pub mod offline;
pub mod prompts;
pub mod stats;

pub use error::{PipelineError, Result};
