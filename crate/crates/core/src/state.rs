//! Learnable parameters of the fusor.

use crate::config::FusorConfig;
use crate::error::{FusorError, Result};
use crate::param::{Init, Param, ParamBuilder, ParamGroup, Parameterized};

/// `x · weight + bias`, with `weight: in × out` and `bias: 1 × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(
        b: &mut ParamBuilder,
        name: &str,
        group: ParamGroup,
        fan_in: usize,
        fan_out: usize,
        zero: bool,
    ) -> Self {
        let init = if zero { Init::Zeros } else { Init::FanIn(fan_in) };
        Self {
            weight: b.param(format!("{name}.weight"), group, fan_in, fan_out, init),
            bias: b.param(format!("{name}.bias"), group, 1, fan_out, Init::Zeros),
        }
    }

    pub(crate) fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(&self.weight);
        f(&self.bias);
    }

    pub(crate) fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Two linear layers with a GELU between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub(crate) fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.fc1.visit(f);
        self.fc2.visit(f);
    }

    pub(crate) fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.fc1.visit_mut(f);
        self.fc2.visit_mut(f);
    }
}

/// `M` learnable queries, each stored as `(H·W) × C` tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryBank {
    pub queries: Vec<Param>,
}

/// Projections of the language-guided query generator.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryGenParams {
    /// `D_t × C`
    pub wq: Param,
    /// `C × C`, applied to pooled query descriptors
    pub wk: Param,
    /// `C × C`, applied to full query tokens
    pub wv: Param,
}

/// Query/key/value projections of one attention, each `C × C`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnProj {
    pub wq: Param,
    pub wk: Param,
    pub wv: Param,
}

impl AttnProj {
    fn new(b: &mut ParamBuilder, name: &str, group: ParamGroup, c: usize) -> Self {
        Self {
            wq: b.param(format!("{name}.wq"), group, c, c, Init::FanIn(c)),
            wk: b.param(format!("{name}.wk"), group, c, c, Init::FanIn(c)),
            wv: b.param(format!("{name}.wv"), group, c, c, Init::FanIn(c)),
        }
    }

    pub(crate) fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(&self.wq);
        f(&self.wk);
        f(&self.wv);
    }

    pub(crate) fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.wq);
        f(&mut self.wk);
        f(&mut self.wv);
    }
}

/// Pre-norm transformer block: self-attention then feedforward, both residual.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub ln1_gain: Param,
    pub ln1_bias: Param,
    pub attn: AttnProj,
    /// Attention output projection; zero at init.
    pub wo: Param,
    pub ln2_gain: Param,
    pub ln2_bias: Param,
    /// `fc2` is zero at init.
    pub ffn: Mlp,
}

impl BlockParams {
    fn new(b: &mut ParamBuilder, name: &str, c: usize, ffn_hidden: usize) -> Self {
        let g = ParamGroup::Block;
        Self {
            ln1_gain: b.param(format!("{name}.ln1.gain"), g, 1, c, Init::Ones),
            ln1_bias: b.param(format!("{name}.ln1.bias"), g, 1, c, Init::Zeros),
            attn: AttnProj::new(b, &format!("{name}.attn"), g, c),
            wo: b.param(format!("{name}.attn.wo"), g, c, c, Init::Zeros),
            ln2_gain: b.param(format!("{name}.ln2.gain"), g, 1, c, Init::Ones),
            ln2_bias: b.param(format!("{name}.ln2.bias"), g, 1, c, Init::Zeros),
            ffn: Mlp {
                fc1: Linear::new(b, &format!("{name}.ffn.fc1"), g, c, ffn_hidden, false),
                fc2: Linear::new(b, &format!("{name}.ffn.fc2"), g, ffn_hidden, c, true),
            },
        }
    }

    pub(crate) fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(&self.ln1_gain);
        f(&self.ln1_bias);
        self.attn.visit(f);
        f(&self.wo);
        f(&self.ln2_gain);
        f(&self.ln2_bias);
        self.ffn.visit(f);
    }

    pub(crate) fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.ln1_gain);
        f(&mut self.ln1_bias);
        self.attn.visit_mut(f);
        f(&mut self.wo);
        f(&mut self.ln2_gain);
        f(&mut self.ln2_bias);
        self.ffn.visit_mut(f);
    }
}

/// Parameters of one fusion layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionLayer {
    /// One projection set per encoder.
    pub extract: Vec<AttnProj>,
    /// Input `C·(N+1)`: aligned text first, then each encoder's pooled feature.
    /// `fc2` is zero at init so gates start uniform.
    pub gate: Mlp,
    pub block: BlockParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusorState {
    config: FusorConfig,
    pub query_bank: QueryBank,
    pub query_gen: QueryGenParams,
    /// `D_t × C`, shared by every layer's gate.
    pub text_align: Param,
    /// Present for encoders whose native channels differ from `C`.
    pub channel_proj: Vec<Option<Linear>>,
    pub layers: Vec<FusionLayer>,
    /// Per-token `C → C → D_out`.
    pub out_proj: Mlp,
}

impl FusorState {
    /// Builds the initial state for `config`, reproducible from `config.seed`.
    pub fn new(config: &FusorConfig) -> Result<Self> {
        config.validate()?;
        let mut b = ParamBuilder::new(config.seed);
        let c = config.channels;
        let n = config.num_encoders;
        let hw = config.tokens();

        let query_bank = QueryBank {
            queries: (0..config.num_queries)
                .map(|m| {
                    b.param(
                        format!("query_bank.{m}"),
                        ParamGroup::QueryBank,
                        hw,
                        c,
                        Init::Normal(0.5),
                    )
                })
                .collect(),
        };
        let qg = ParamGroup::QueryGen;
        let query_gen = QueryGenParams {
            wq: b.param("query_gen.wq", qg, config.text_dim, c, Init::FanIn(config.text_dim)),
            wk: b.param("query_gen.wk", qg, c, c, Init::FanIn(c)),
            wv: b.param("query_gen.wv", qg, c, c, Init::FanIn(c)),
        };
        let text_align = b.param(
            "text_align",
            ParamGroup::TextAlign,
            config.text_dim,
            c,
            Init::FanIn(config.text_dim),
        );
        let channel_proj = config
            .encoder_channels
            .iter()
            .enumerate()
            .map(|(i, &cin)| {
                (cin != c).then(|| {
                    Linear::new(
                        &mut b,
                        &format!("channel_proj.{i}"),
                        ParamGroup::ChannelProj,
                        cin,
                        c,
                        false,
                    )
                })
            })
            .collect();
        let layers = (0..config.num_layers)
            .map(|l| {
                let extract = (0..n)
                    .map(|i| AttnProj::new(&mut b, &format!("layers.{l}.extract.{i}"), ParamGroup::Extract, c))
                    .collect();
                let gin = c * (n + 1);
                let gate = Mlp {
                    fc1: Linear::new(
                        &mut b,
                        &format!("layers.{l}.gate.fc1"),
                        ParamGroup::Gate,
                        gin,
                        config.gate_hidden,
                        false,
                    ),
                    fc2: Linear::new(
                        &mut b,
                        &format!("layers.{l}.gate.fc2"),
                        ParamGroup::Gate,
                        config.gate_hidden,
                        n,
                        true,
                    ),
                };
                let block = BlockParams::new(&mut b, &format!("layers.{l}.block"), c, config.ffn_hidden);
                FusionLayer {
                    extract,
                    gate,
                    block,
                }
            })
            .collect();
        let out_proj = Mlp {
            fc1: Linear::new(&mut b, "out_proj.fc1", ParamGroup::OutProj, c, c, false),
            fc2: Linear::new(&mut b, "out_proj.fc2", ParamGroup::OutProj, c, config.out_dim, false),
        };
        Ok(Self {
            config: config.clone(),
            query_bank,
            query_gen,
            text_align,
            channel_proj,
            layers,
            out_proj,
        })
    }

    pub fn config(&self) -> &FusorConfig {
        &self.config
    }

    /// Fails unless `config` describes the same parameter shapes as this state.
    pub fn check_compatible(&self, config: &FusorConfig) -> Result<()> {
        let a = &self.config;
        let same = a.num_encoders == config.num_encoders
            && a.num_queries == config.num_queries
            && a.num_layers == config.num_layers
            && a.channels == config.channels
            && a.height == config.height
            && a.width == config.width
            && a.text_dim == config.text_dim
            && a.heads == config.heads
            && a.gate_hidden == config.gate_hidden
            && a.ffn_hidden == config.ffn_hidden
            && a.out_dim == config.out_dim
            && a.encoder_channels == config.encoder_channels;
        if same {
            Ok(())
        } else {
            Err(FusorError::Config(
                "fusor state shapes do not match the supplied configuration".into(),
            ))
        }
    }

    /// Returns the state with encoders reordered so new encoder `i` is old
    /// encoder `perm[i]`. Gate input blocks and output units move with them.
    pub fn permute_encoders(&self, perm: &[usize]) -> Result<FusorState> {
        let n = self.config.num_encoders;
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(FusorError::InvalidArgument(format!(
                "{perm:?} is not a permutation of 0..{n}"
            )));
        }
        let c = self.config.channels;
        let mut config = self.config.clone();
        config.encoder_channels = perm.iter().map(|&p| self.config.encoder_channels[p]).collect();
        let mut out = FusorState::new(&config)?;

        out.query_bank = self.query_bank.clone();
        out.query_gen = self.query_gen.clone();
        out.text_align = self.text_align.clone();
        out.out_proj = self.out_proj.clone();
        for (i, &p) in perm.iter().enumerate() {
            if let (Some(dst), Some(src)) = (&mut out.channel_proj[i], &self.channel_proj[p]) {
                dst.weight.value = src.weight.value.clone();
                dst.bias.value = src.bias.value.clone();
            }
        }
        for (dst, src) in out.layers.iter_mut().zip(&self.layers) {
            for (i, &p) in perm.iter().enumerate() {
                dst.extract[i].wq.value = src.extract[p].wq.value.clone();
                dst.extract[i].wk.value = src.extract[p].wk.value.clone();
                dst.extract[i].wv.value = src.extract[p].wv.value.clone();
            }
            let w1 = &src.gate.fc1.weight.value;
            let new_w1 = &mut dst.gate.fc1.weight.value;
            for r in 0..w1.rows() {
                let block = r / c;
                let src_row = if block == 0 { r } else { (perm[block - 1] + 1) * c + r % c };
                new_w1.row_mut(r).copy_from_slice(w1.row(src_row));
            }
            dst.gate.fc1.bias.value = src.gate.fc1.bias.value.clone();
            let w2 = &src.gate.fc2.weight.value;
            let b2 = &src.gate.fc2.bias.value;
            for (i, &p) in perm.iter().enumerate() {
                for r in 0..w2.rows() {
                    dst.gate.fc2.weight.value.set(r, i, w2.get(r, p));
                }
                dst.gate.fc2.bias.value.set(0, i, b2.get(0, p));
            }
            dst.block = src.block.clone();
        }
        Ok(out)
    }
}

impl Parameterized for FusorState {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.visit_refs(&mut |p| f(p));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for q in &mut self.query_bank.queries {
            f(q);
        }
        f(&mut self.query_gen.wq);
        f(&mut self.query_gen.wk);
        f(&mut self.query_gen.wv);
        f(&mut self.text_align);
        for proj in self.channel_proj.iter_mut().flatten() {
            proj.visit_mut(f);
        }
        for layer in &mut self.layers {
            for e in &mut layer.extract {
                e.visit_mut(f);
            }
            layer.gate.visit_mut(f);
            layer.block.visit_mut(f);
        }
        self.out_proj.visit_mut(f);
    }
}

impl FusorState {
    /// Like [`Parameterized::visit_params`] but yields references that live as
    /// long as the state, for binding onto a tape.
    pub fn visit_refs<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        for q in &self.query_bank.queries {
            f(q);
        }
        f(&self.query_gen.wq);
        f(&self.query_gen.wk);
        f(&self.query_gen.wv);
        f(&self.text_align);
        for proj in self.channel_proj.iter().flatten() {
            proj.visit(f);
        }
        for layer in &self.layers {
            for e in &layer.extract {
                e.visit(f);
            }
            layer.gate.visit(f);
            layer.block.visit(f);
        }
        self.out_proj.visit(f);
    }
}
