//! Named learnable tensors, their initialization, and gradient containers.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Coarse grouping used by gradient-check reports and freezing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    QueryBank,
    QueryGen,
    TextAlign,
    ChannelProj,
    Extract,
    Gate,
    Block,
    OutProj,
    Head,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 9] = [
        ParamGroup::QueryBank,
        ParamGroup::QueryGen,
        ParamGroup::TextAlign,
        ParamGroup::ChannelProj,
        ParamGroup::Extract,
        ParamGroup::Gate,
        ParamGroup::Block,
        ParamGroup::OutProj,
        ParamGroup::Head,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::QueryBank => "query_bank",
            ParamGroup::QueryGen => "query_gen",
            ParamGroup::TextAlign => "text_align",
            ParamGroup::ChannelProj => "channel_proj",
            ParamGroup::Extract => "extract",
            ParamGroup::Gate => "gate",
            ParamGroup::Block => "block",
            ParamGroup::OutProj => "out_proj",
            ParamGroup::Head => "head",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    id: ParamId,
    name: String,
    group: ParamGroup,
    pub value: Matrix,
}

impl Param {
    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn group(&self) -> ParamGroup {
        self.group
    }
}

/// Visitor access to every parameter of a model, in a fixed order.
pub trait Parameterized {
    fn visit_params(&self, f: &mut dyn FnMut(&Param));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.len());
        n
    }

    fn num_tensors(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_| n += 1);
        n
    }
}

/// Initialization scheme for a freshly created parameter.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// `U(-1/√fan_in, 1/√fan_in)`
    FanIn(usize),
    Normal(f64),
}

/// Allocates parameter ids in creation order and draws initial values from
/// one seeded stream, so a model is reproducible from its seed.
pub struct ParamBuilder {
    next_id: usize,
    rng: ChaCha8Rng,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        Self::starting_at(0, seed)
    }

    pub fn starting_at(first_id: usize, seed: u64) -> Self {
        Self {
            next_id: first_id,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_id(&self) -> usize {
        self.next_id
    }

    pub fn param(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        rows: usize,
        cols: usize,
        init: Init,
    ) -> Param {
        let value = match init {
            Init::Zeros => Matrix::zeros(rows, cols),
            Init::Ones => Matrix::filled(rows, cols, 1.0),
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                Matrix::from_fn(rows, cols, |_, _| self.rng.random_range(-bound..=bound))
            }
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("positive std");
                Matrix::from_fn(rows, cols, |_, _| dist.sample(&mut self.rng))
            }
        };
        let id = ParamId(self.next_id);
        self.next_id += 1;
        Param {
            id,
            name: name.into(),
            group,
            value,
        }
    }
}

/// Parameter gradients keyed by id. Missing entries are zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: HashMap<ParamId, Matrix>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(&id)
    }

    pub fn insert(&mut self, id: ParamId, grad: Matrix) {
        self.grads.insert(id, grad);
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Matrix) {
        match self.grads.get_mut(&id) {
            Some(existing) => existing.add_assign(grad),
            None => {
                self.grads.insert(id, grad.clone());
            }
        }
    }

    /// Adds `other` into `self`.
    pub fn merge(&mut self, other: &Gradients) {
        let mut ids: Vec<_> = other.grads.keys().copied().collect();
        ids.sort();
        for id in ids {
            self.accumulate(id, &other.grads[&id]);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.values_mut() {
            for v in g.as_mut_slice() {
                *v *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(Matrix::is_finite)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Mutable access for test fixtures that tamper with analytic gradients.
    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Matrix> {
        self.grads.get_mut(&id)
    }
}

/// Sums per-sample gradients in slice order.
pub fn sum_gradients(parts: &[Gradients]) -> Gradients {
    let mut total = Gradients::new();
    for g in parts {
        total.merge(g);
    }
    total
}

/// Re-draws every parameter of `model` from `N(0, std)` using `seed`.
///
/// Used to move off the identity initialization before gradient checks and
/// equivariance tests, where zero-initialized projections would hide bugs.
pub fn randomize(model: &mut dyn Parameterized, seed: u64, std: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, std).expect("positive std");
    model.visit_params_mut(&mut |p| {
        for v in p.value.as_mut_slice() {
            *v = dist.sample(&mut rng);
        }
    });
}
