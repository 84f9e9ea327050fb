//! Synthetic routing task, trainer, probes and gradient verification.

pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod probe;
pub mod task;
pub mod trainer;

pub use gradcheck::{check_gradients, grad_check, GradCheckProblem, GradCheckReport, GroupError};
pub use model::{Prediction, RoutingModel};
pub use optim::{Optimizer, OptimizerKind};
pub use probe::{probe_accuracy, probe_matrix};
pub use task::{encode_samples, generate_task, ClassRule, EncodedSample, Factor, RoutingTaskSpec, TaskSample};
pub use trainer::{evaluate, train, train_observed, write_metrics_jsonl, Evaluation, MetricRecord, TrainConfig, TrainOutcome};
