//! Finite-difference verification of the fusor's analytic gradients.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{FusorConfig, FusorMode};
use crate::error::{FusorError, Result};
use crate::model::forward_graph;
use crate::param::{randomize, Gradients, ParamGroup, Parameterized};
use crate::state::FusorState;
use crate::tape::Tape;
use crate::tensor::Matrix;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so entries whose true gradient
/// is near zero are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Standard deviation used to move parameters off their initialization.
pub const PARAM_STD: f64 = 0.5;

/// A fixed scalar loss `Σ tokens ⊙ R` on a randomized fusor with random
/// inputs, where `R` is a fixed random matrix.
pub struct GradCheckProblem {
    pub state: FusorState,
    pub mode: FusorMode,
    views: Vec<Matrix>,
    text: Matrix,
    weights: Matrix,
}

impl GradCheckProblem {
    pub fn new(config: &FusorConfig, seed: u64) -> Result<Self> {
        let mut state = FusorState::new(config)?;
        randomize(&mut state, seed, PARAM_STD);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9c);
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let mut draw = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| unit.sample(&mut rng));
        let views = config
            .encoder_channels
            .iter()
            .map(|&cin| draw(config.tokens(), cin))
            .collect();
        let text = draw(1, config.text_dim);
        let weights = draw(config.tokens(), config.out_dim);
        Ok(Self {
            state,
            mode: config.mode,
            views,
            text,
            weights,
        })
    }

    pub fn loss(&self, state: &FusorState) -> Result<f64> {
        let mut tape = Tape::new();
        let out = forward_graph(&mut tape, state, self.mode, &self.views, &self.text)?;
        let loss = tape.dot_const(out.tokens, self.weights.clone());
        Ok(tape.value(loss).get(0, 0))
    }

    pub fn analytic(&self) -> Result<Gradients> {
        let mut tape = Tape::new();
        let out = forward_graph(&mut tape, &self.state, self.mode, &self.views, &self.text)?;
        let loss = tape.dot_const(out.tokens, self.weights.clone());
        Ok(tape.backward(loss))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub group: ParamGroup,
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub floor: f64,
    pub num_params: usize,
    pub groups: Vec<GroupError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.groups.iter().all(|g| g.max_rel_error < tolerance)
    }

    pub fn group(&self, group: ParamGroup) -> Option<&GroupError> {
        self.groups.iter().find(|g| g.group == group)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic` against central differences of `problem.loss` for
/// every parameter outside `frozen`. Frozen groups are absent from the report.
pub fn check_gradients(
    problem: &GradCheckProblem,
    analytic: &Gradients,
    frozen: &[ParamGroup],
) -> Result<GradCheckReport> {
    let mut targets = Vec::new();
    problem.state.visit_params(&mut |p| {
        if !frozen.contains(&p.group()) {
            targets.push((p.id(), p.group(), p.value.len()));
        }
    });
    let mut probe = problem.state.clone();
    let mut groups: BTreeMap<ParamGroup, GroupError> = BTreeMap::new();
    let mut num_params = 0;
    for (id, group, len) in targets {
        let entry = groups.entry(group).or_insert(GroupError {
            group,
            entries: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        });
        for i in 0..len {
            let orig = probe_value(&probe, id, i);
            set_value(&mut probe, id, i, orig + FD_STEP);
            let up = problem.loss(&probe)?;
            set_value(&mut probe, id, i, orig - FD_STEP);
            let down = problem.loss(&probe)?;
            set_value(&mut probe, id, i, orig);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.get(id).map_or(0.0, |g| g.as_slice()[i]);
            if !numeric.is_finite() {
                return Err(FusorError::InvalidArgument(format!(
                    "non-finite finite difference for {group} entry {i}"
                )));
            }
            entry.entries += 1;
            entry.max_rel_error = entry.max_rel_error.max(relative_error(a, numeric));
            entry.max_abs_error = entry.max_abs_error.max((a - numeric).abs());
            num_params += 1;
        }
    }
    Ok(GradCheckReport {
        step: FD_STEP,
        floor: REL_ERROR_FLOOR,
        num_params,
        groups: groups.into_values().collect(),
    })
}

fn probe_value(state: &FusorState, id: crate::param::ParamId, i: usize) -> f64 {
    let mut v = f64::NAN;
    state.visit_params(&mut |p| {
        if p.id() == id {
            v = p.value.as_slice()[i];
        }
    });
    v
}

fn set_value(state: &mut FusorState, id: crate::param::ParamId, i: usize, value: f64) {
    state.visit_params_mut(&mut |p| {
        if p.id() == id {
            p.value.as_mut_slice()[i] = value;
        }
    });
}

/// Gradient check of `config` with every group active.
pub fn grad_check(config: &FusorConfig, seed: u64) -> Result<GradCheckReport> {
    let problem = GradCheckProblem::new(config, seed)?;
    let analytic = problem.analytic()?;
    check_gradients(&problem, &analytic, &[])
}
