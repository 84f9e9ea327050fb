pub mod eval;
pub mod llm;
pub mod pipeline;
pub mod toy;
