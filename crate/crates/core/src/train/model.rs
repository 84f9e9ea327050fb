//! The fusor with a linear classification head on mean-pooled tokens.

use crate::config::{FusorConfig, FusorMode};
use crate::error::{FusorError, Result};
use crate::model::{forward_graph, linear_graph, FusorOutput};
use crate::param::{Gradients, Param, ParamBuilder, ParamGroup, Parameterized};
use crate::state::{FusorState, Linear};
use crate::tape::Tape;

use super::task::EncodedSample;

const HEAD_SEED_SALT: u64 = 0x4ead;

#[derive(Clone, Debug, PartialEq)]
pub struct RoutingModel {
    pub fusor: FusorState,
    /// `D_out → K`
    pub head: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub predicted: usize,
    pub output: FusorOutput,
}

/// Loss, correctness and parameter gradients for one sample.
#[derive(Clone, Debug)]
pub struct SampleGrad {
    pub loss: f64,
    pub correct: bool,
    pub grads: Gradients,
}

impl RoutingModel {
    pub fn new(config: &FusorConfig, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(FusorError::Config("num_classes must be >= 1".into()));
        }
        let fusor = FusorState::new(config)?;
        let mut b = ParamBuilder::starting_at(fusor.num_tensors(), config.seed ^ HEAD_SEED_SALT);
        let head = Linear::new(&mut b, "head", ParamGroup::Head, config.out_dim, num_classes, false);
        Ok(Self { fusor, head })
    }

    pub fn from_parts(fusor: FusorState, head: Linear) -> Result<Self> {
        if head.weight.value.rows() != fusor.config().out_dim {
            return Err(FusorError::Config(format!(
                "head expects {} inputs, fusor emits {}",
                head.weight.value.rows(),
                fusor.config().out_dim
            )));
        }
        Ok(Self { fusor, head })
    }

    pub fn num_classes(&self) -> usize {
        self.head.weight.value.cols()
    }

    pub fn config(&self) -> &FusorConfig {
        self.fusor.config()
    }

    fn check_label(&self, sample: &EncodedSample) -> Result<()> {
        if sample.label >= self.num_classes() {
            return Err(FusorError::InvalidArgument(format!(
                "label {} outside 0..{}",
                sample.label,
                self.num_classes()
            )));
        }
        Ok(())
    }

    /// Cross-entropy of one sample and its gradients for every parameter it
    /// touches.
    pub fn sample_grad(&self, sample: &EncodedSample, mode: FusorMode) -> Result<SampleGrad> {
        self.check_label(sample)?;
        let mut tape = Tape::new();
        let g = forward_graph(&mut tape, &self.fusor, mode, &sample.views, &sample.text)?;
        let pooled = tape.mean_rows(g.tokens);
        let logits = linear_graph(&mut tape, pooled, &self.head);
        let correct = crate::model::argmax(tape.value(logits).as_slice()) == sample.label;
        let loss = tape.cross_entropy(logits, sample.label);
        Ok(SampleGrad {
            loss: tape.value(loss).get(0, 0),
            correct,
            grads: tape.backward(loss),
        })
    }

    pub fn predict(&self, sample: &EncodedSample, mode: FusorMode) -> Result<Prediction> {
        let mut tape = Tape::new();
        let g = forward_graph(&mut tape, &self.fusor, mode, &sample.views, &sample.text)?;
        let pooled = tape.mean_rows(g.tokens);
        let logits = linear_graph(&mut tape, pooled, &self.head);
        let logits = tape.value(logits).as_slice().to_vec();
        Ok(Prediction {
            predicted: crate::model::argmax(&logits),
            logits,
            output: g.read(&tape),
        })
    }
}

impl Parameterized for RoutingModel {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.fusor.visit_params(f);
        self.head.visit(&mut |p| f(p));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.fusor.visit_params_mut(f);
        self.head.visit_mut(f);
    }
}
