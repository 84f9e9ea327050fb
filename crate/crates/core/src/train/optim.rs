//! First-order optimizers over a [`Parameterized`] model.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::param::{Gradients, ParamId, Parameterized};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Parameters without a gradient in a step are left untouched, and their
/// Adam moments do not advance.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    moments: HashMap<ParamId, (Matrix, Matrix, u64)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            moments: HashMap::new(),
        }
    }

    pub fn step(&mut self, model: &mut dyn Parameterized, grads: &Gradients) {
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => model.visit_params_mut(&mut |p| {
                if let Some(g) = grads.get(p.id()) {
                    p.value.scaled_add_assign(-lr, g);
                }
            }),
            OptimizerKind::Adam => {
                let moments = &mut self.moments;
                model.visit_params_mut(&mut |p| {
                    let Some(g) = grads.get(p.id()) else { return };
                    let (m, v, t) = moments.entry(p.id()).or_insert_with(|| {
                        let (r, c) = g.shape();
                        (Matrix::zeros(r, c), Matrix::zeros(r, c), 0)
                    });
                    *t += 1;
                    let c1 = 1.0 - ADAM_BETA1.powi(*t as i32);
                    let c2 = 1.0 - ADAM_BETA2.powi(*t as i32);
                    let (ms, vs) = (m.as_mut_slice(), v.as_mut_slice());
                    for (i, (w, &gi)) in p.value.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
                        ms[i] = ADAM_BETA1 * ms[i] + (1.0 - ADAM_BETA1) * gi;
                        vs[i] = ADAM_BETA2 * vs[i] + (1.0 - ADAM_BETA2) * gi * gi;
                        let m_hat = ms[i] / c1;
                        let v_hat = vs[i] / c2;
                        *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                });
            }
        }
    }
}
