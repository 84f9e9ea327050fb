//! Mini-batch training and evaluation of a [`RoutingModel`].

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::FusorMode;
use crate::error::{FusorError, Result};
use crate::exec::{self, Execution};
use crate::model::GateVector;
use crate::param::sum_gradients;

use super::model::RoutingModel;
use super::optim::{Optimizer, OptimizerKind};
use super::task::EncodedSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub mode: FusorMode,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            lr: 3e-4,
            batch_size: 32,
            steps: 2000,
            seed: 0,
            mode: FusorMode::Full,
            execution: Execution::Parallel,
        }
    }
}

impl TrainConfig {
    /// `lr = 0` and `steps = 0` are accepted as no-op training runs.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(FusorError::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(FusorError::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One line of the metrics stream. `acc` is the training-batch accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub loss: f64,
    pub acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: RoutingModel,
    pub losses: Vec<f64>,
    pub metrics: Vec<MetricRecord>,
}

pub fn write_metrics_jsonl(records: &[MetricRecord], mut out: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Draws batch indices with replacement. A batch at least as large as the
/// dataset is the whole dataset in order.
fn draw_batch(rng: &mut ChaCha8Rng, n: usize, batch_size: usize) -> Vec<usize> {
    if batch_size >= n {
        return (0..n).collect();
    }
    (0..batch_size).map(|_| rng.random_range(0..n)).collect()
}

pub fn train(model: RoutingModel, data: &[EncodedSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(model, data, cfg, &mut |_| {})
}

/// Like [`train`], calling `observe` after every step.
///
/// Per-sample gradients may be computed in parallel; they are summed in
/// batch order, so the result is identical for every [`Execution`].
pub fn train_observed(
    mut model: RoutingModel,
    data: &[EncodedSample],
    cfg: &TrainConfig,
    observe: &mut dyn FnMut(&MetricRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(FusorError::InvalidArgument("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut metrics = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = draw_batch(&mut rng, data.len(), cfg.batch_size);
        let parts = exec::map(cfg.execution, &batch, |&i| model.sample_grad(&data[i], cfg.mode));
        let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
        let inv = 1.0 / parts.len() as f64;
        let loss = parts.iter().map(|p| p.loss).sum::<f64>() * inv;
        let acc = parts.iter().filter(|p| p.correct).count() as f64 * inv;
        let grads: Vec<_> = parts.into_iter().map(|p| p.grads).collect();
        let mut grads = sum_gradients(&grads);
        grads.scale(inv);
        if !loss.is_finite() || !grads.is_finite() {
            return Err(FusorError::Diverged { step, loss });
        }
        opt.step(&mut model, &grads);
        let record = MetricRecord { step, loss, acc };
        observe(&record);
        losses.push(loss);
        metrics.push(record);
    }
    Ok(TrainOutcome {
        model,
        losses,
        metrics,
    })
}

/// Accuracy on a labelled set, broken down by class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub correct: usize,
    pub total: usize,
    /// `(correct, total)` per class index.
    pub per_class: Vec<(usize, usize)>,
    /// Gate trace of every sample, in input order.
    #[serde(skip)]
    pub traces: Vec<Vec<GateVector>>,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    pub fn class_accuracy(&self, class: usize) -> f64 {
        match self.per_class.get(class) {
            Some(&(c, t)) if t > 0 => c as f64 / t as f64,
            _ => 0.0,
        }
    }
}

pub fn evaluate(
    model: &RoutingModel,
    data: &[EncodedSample],
    mode: FusorMode,
    execution: Execution,
) -> Result<Evaluation> {
    let preds = exec::map(execution, data, |s| model.predict(s, mode))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let classes = data.iter().map(|s| s.class + 1).max().unwrap_or(0);
    let mut per_class = vec![(0, 0); classes];
    let mut correct = 0;
    let mut traces = Vec::with_capacity(data.len());
    for (s, p) in data.iter().zip(preds) {
        let hit = p.predicted == s.label;
        correct += usize::from(hit);
        per_class[s.class].0 += usize::from(hit);
        per_class[s.class].1 += 1;
        traces.push(p.output.gate_trace);
    }
    Ok(Evaluation {
        correct,
        total: data.len(),
        per_class,
        traces,
    })
}
