//! Language-guided multi-view vision fusion at desk scale.
//!
//! A fusor merges `N` encoder feature maps into one token sequence. An
//! instruction embedding selects a query from a learnable bank; each layer
//! cross-attends that query over every encoder view, gates the per-encoder
//! results with an MLP conditioned on the instruction, fuses them, and runs a
//! residual transformer block whose output becomes the next layer's query.
//!
//! Besides the model this crate ships deterministic mock encoder views, a
//! synthetic instruction-routing task with a trainer and gradient checker,
//! and introspection tools over trained gates.

pub mod adapters;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod exec;
pub mod feature;
pub mod introspect;
pub mod model;
pub mod param;
pub mod state;
pub mod tape;
pub mod tensor;
pub mod train;

pub use config::{FusorConfig, FusorMode};
pub use error::{FusorError, Result};
pub use exec::Execution;
pub use feature::{interpolate, FeatureMap, FeatureSet};
pub use model::{
    block_forward, extract_features, fuse, fusor_forward, gate_weights, generate_query, FusorOutput,
    GateVector, InstructionEmbedding,
};
pub use param::{Gradients, ParamGroup, Parameterized};
pub use state::FusorState;
pub use tensor::Matrix;
