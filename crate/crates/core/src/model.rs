//! The fusion mathematics.
//!
//! Each stage exists twice: as a graph builder over a [`Tape`] (used for
//! training and gradient checks) and as a value-level function that builds a
//! throwaway tape and reads the result back. Both paths share the same code,
//! so their outputs are identical.
//!
//! Layout: a `C × H × W` feature map enters the graph as `(H·W) × C` tokens.

use serde::{Deserialize, Serialize};

use crate::config::{FusorConfig, FusorMode};
use crate::error::{shape_err, FusorError, Result};
use crate::feature::{align_spatial, FeatureMap, FeatureSet};
use crate::param::Param;
use crate::state::{AttnProj, BlockParams, FusionLayer, FusorState, Linear, Mlp, QueryBank, QueryGenParams};
use crate::tape::{Tape, Var};
use crate::tensor::{self, Matrix};

/// Text embedding of an instruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionEmbedding {
    vector: Vec<f64>,
}

impl InstructionEmbedding {
    pub fn new(vector: Vec<f64>) -> Result<Self> {
        if vector.is_empty() {
            return Err(FusorError::InvalidArgument("empty instruction embedding".into()));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(FusorError::InvalidArgument(
                "instruction embedding contains non-finite values".into(),
            ));
        }
        Ok(Self { vector })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn to_row(&self) -> Matrix {
        Matrix::row_vector(self.vector.clone())
    }
}

/// Per-layer encoder importances; nonnegative and unit-sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateVector {
    pub weights: Vec<f64>,
    /// 1-based fusion layer index.
    pub layer_index: usize,
}

impl GateVector {
    pub fn one_hot(n: usize, k: usize, layer_index: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[k] = 1.0;
        Self {
            weights,
            layer_index,
        }
    }

    /// Index of the largest weight; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.weights)
    }
}

/// Lowest index of the maximum value.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusorOutput {
    /// `(H·W) × D_out`
    pub tokens: Matrix,
    /// One gate per layer. Forced modes record the forced one-hot.
    pub gate_trace: Vec<GateVector>,
    /// Attention over the query bank; empty in `BaselineNoFusor` mode.
    pub query_attention: Vec<f64>,
}

/// Tape nodes produced by [`forward_graph`].
pub struct GraphOutput {
    pub tokens: Var,
    pub gates: Vec<GateNode>,
    pub query_attention: Option<Var>,
}

pub enum GateNode {
    Learned(Var),
    Forced(GateVector),
}

pub(crate) fn linear_graph<'p>(tape: &mut Tape<'p>, x: Var, lin: &'p Linear) -> Var {
    let w = tape.param(&lin.weight);
    let b = tape.param(&lin.bias);
    let y = tape.matmul(x, w);
    tape.add_row(y, b)
}

fn mlp_graph<'p>(tape: &mut Tape<'p>, x: Var, mlp: &'p Mlp) -> Var {
    let h = linear_graph(tape, x, &mlp.fc1);
    let h = tape.gelu(h);
    linear_graph(tape, h, &mlp.fc2)
}

/// Scaled dot-product attention over already projected tokens.
fn heads_attention(tape: &mut Tape<'_>, q: Var, k: Var, v: Var, heads: usize) -> Var {
    let c = tape.value(q).cols();
    let d = c / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let one_head = |tape: &mut Tape<'_>, q: Var, k: Var, v: Var| {
        let s = tape.matmul_t(q, k);
        let s = tape.scale(s, scale);
        let a = tape.softmax_rows(s);
        tape.matmul(a, v)
    };
    if heads == 1 {
        return one_head(tape, q, k, v);
    }
    let outs: Vec<Var> = (0..heads)
        .map(|h| {
            let qh = tape.slice_cols(q, h * d, (h + 1) * d);
            let kh = tape.slice_cols(k, h * d, (h + 1) * d);
            let vh = tape.slice_cols(v, h * d, (h + 1) * d);
            one_head(tape, qh, kh, vh)
        })
        .collect();
    tape.concat_cols(&outs)
}

/// Multi-head attention of `query_in` over `kv_in` with projections `proj`.
pub fn attention_graph<'p>(
    tape: &mut Tape<'p>,
    query_in: Var,
    kv_in: Var,
    proj: &'p AttnProj,
    heads: usize,
) -> Var {
    let wq = tape.param(&proj.wq);
    let wk = tape.param(&proj.wk);
    let wv = tape.param(&proj.wv);
    let q = tape.matmul(query_in, wq);
    let k = tape.matmul(kv_in, wk);
    let v = tape.matmul(kv_in, wv);
    heads_attention(tape, q, k, v, heads)
}

/// Language-guided query generation. `text` is `1 × D_t`; returns the
/// `(H·W) × C` query and its `1 × M` attention over the bank.
///
/// Each bank entry is scored through its spatially pooled descriptor; the
/// result is the attention-weighted sum of value-projected entries.
pub fn query_graph<'p>(
    tape: &mut Tape<'p>,
    text: Var,
    bank: &'p QueryBank,
    params: &'p QueryGenParams,
) -> (Var, Var) {
    let wq = tape.param(&params.wq);
    let wk = tape.param(&params.wk);
    let wv = tape.param(&params.wv);
    let tq = tape.matmul(text, wq);
    let c = tape.value(tq).cols();
    let entries: Vec<Var> = bank.queries.iter().map(|q| tape.param(q)).collect();
    let descs: Vec<Var> = entries.iter().map(|&e| tape.mean_rows(e)).collect();
    let descs = tape.concat_rows(&descs);
    let keys = tape.matmul(descs, wk);
    let scores = tape.matmul_t(tq, keys);
    let scores = tape.scale(scores, 1.0 / (c as f64).sqrt());
    let attention = tape.softmax_rows(scores);
    let values: Vec<Var> = entries.iter().map(|&e| tape.matmul(e, wv)).collect();
    let query = tape.weighted_sum(&values, attention);
    (query, attention)
}

/// Per-encoder cross-attention of the layer query over each aligned view.
pub fn extract_graph<'p>(
    tape: &mut Tape<'p>,
    query: Var,
    views: &[Var],
    layer: &'p FusionLayer,
    heads: usize,
) -> Vec<Var> {
    views
        .iter()
        .zip(&layer.extract)
        .map(|(&x, proj)| attention_graph(tape, query, x, proj, heads))
        .collect()
}

/// Gating MLP over `[aligned text ; pooled F_1 ; … ; pooled F_N]`, softmaxed.
pub fn gate_graph<'p>(tape: &mut Tape<'p>, aligned_text: Var, features: &[Var], gate: &'p Mlp) -> Var {
    let mut parts = Vec::with_capacity(features.len() + 1);
    parts.push(aligned_text);
    parts.extend(features.iter().map(|&f| tape.mean_rows(f)));
    let input = tape.concat_cols(&parts);
    let logits = mlp_graph(tape, input, gate);
    tape.softmax_rows(logits)
}

fn affine_norm<'p>(tape: &mut Tape<'p>, x: Var, gain: &'p Param, bias: &'p Param) -> Var {
    let n = tape.layer_norm(x);
    let g = tape.param(gain);
    let b = tape.param(bias);
    let n = tape.mul_row(n, g);
    tape.add_row(n, b)
}

/// Pre-norm self-attention and feedforward sublayers with residual adds.
pub fn block_graph<'p>(tape: &mut Tape<'p>, x: Var, block: &'p BlockParams, heads: usize) -> Var {
    let h = affine_norm(tape, x, &block.ln1_gain, &block.ln1_bias);
    let a = attention_graph(tape, h, h, &block.attn, heads);
    let wo = tape.param(&block.wo);
    let a = tape.matmul(a, wo);
    let x = tape.add(x, a);
    let h = affine_norm(tape, x, &block.ln2_gain, &block.ln2_bias);
    let f = mlp_graph(tape, h, &block.ffn);
    tape.add(x, f)
}

/// Full forward pass over spatially aligned views (`(H·W) × C_n` tokens each).
pub fn forward_graph<'p>(
    tape: &mut Tape<'p>,
    state: &'p FusorState,
    mode: FusorMode,
    views: &'p [Matrix],
    text: &'p Matrix,
) -> Result<GraphOutput> {
    let cfg = state.config();
    check_views(cfg, views)?;
    if text.shape() != (1, cfg.text_dim) {
        return Err(FusorError::Config(format!(
            "instruction embedding has dim {}, configured text_dim is {}",
            text.cols(),
            cfg.text_dim
        )));
    }
    let n = cfg.num_encoders;

    let project = |tape: &mut Tape<'p>, i: usize| {
        let x = tape.input(&views[i]);
        match &state.channel_proj[i] {
            Some(lin) => linear_graph(tape, x, lin),
            None => x,
        }
    };

    if mode == FusorMode::BaselineNoFusor {
        let x = project(tape, 0);
        let tokens = mlp_graph(tape, x, &state.out_proj);
        let gates = (1..=cfg.num_layers)
            .map(|l| GateNode::Forced(GateVector::one_hot(n, 0, l)))
            .collect();
        return Ok(GraphOutput {
            tokens,
            gates,
            query_attention: None,
        });
    }
    if let FusorMode::SingleEncoder(k) = mode {
        if k == 0 || k > n {
            return Err(FusorError::Config(format!(
                "single_encoder({k}) requires 1 <= k <= {n}"
            )));
        }
    }

    let projected: Vec<Var> = (0..n).map(|i| project(tape, i)).collect();
    let t = tape.input(text);
    let (mut query, attention) = query_graph(tape, t, &state.query_bank, &state.query_gen);
    let ta = tape.param(&state.text_align);
    let aligned_text = tape.matmul(t, ta);

    let mut gates = Vec::with_capacity(cfg.num_layers);
    for (l, layer) in state.layers.iter().enumerate() {
        let features = extract_graph(tape, query, &projected, layer, cfg.heads);
        let (weights, node) = match mode {
            FusorMode::SingleEncoder(k) => {
                let forced = GateVector::one_hot(n, k - 1, l + 1);
                let w = tape.constant(Matrix::row_vector(forced.weights.clone()));
                (w, GateNode::Forced(forced))
            }
            _ => {
                let w = gate_graph(tape, aligned_text, &features, &layer.gate);
                (w, GateNode::Learned(w))
            }
        };
        gates.push(node);
        let fused = tape.weighted_sum(&features, weights);
        query = block_graph(tape, fused, &layer.block, cfg.heads);
    }
    let tokens = mlp_graph(tape, query, &state.out_proj);
    Ok(GraphOutput {
        tokens,
        gates,
        query_attention: Some(attention),
    })
}

fn check_views(cfg: &FusorConfig, views: &[Matrix]) -> Result<()> {
    if views.len() != cfg.num_encoders {
        return Err(FusorError::Config(format!(
            "expected {} encoder views, got {}",
            cfg.num_encoders,
            views.len()
        )));
    }
    for (i, (v, &cin)) in views.iter().zip(&cfg.encoder_channels).enumerate() {
        if v.shape() != (cfg.tokens(), cin) {
            return Err(shape_err(
                format!("encoder {i}: {} tokens x {cin} channels", cfg.tokens()),
                format!("{} tokens x {} channels", v.rows(), v.cols()),
            ));
        }
    }
    Ok(())
}

impl GraphOutput {
    /// Reads gate values off the tape.
    pub fn gate_trace(&self, tape: &Tape<'_>) -> Vec<GateVector> {
        self.gates
            .iter()
            .enumerate()
            .map(|(l, g)| match g {
                GateNode::Learned(v) => GateVector {
                    weights: tape.value(*v).as_slice().to_vec(),
                    layer_index: l + 1,
                },
                GateNode::Forced(g) => g.clone(),
            })
            .collect()
    }

    pub fn read(&self, tape: &Tape<'_>) -> FusorOutput {
        FusorOutput {
            tokens: tape.value(self.tokens).clone(),
            gate_trace: self.gate_trace(tape),
            query_attention: self
                .query_attention
                .map(|a| tape.value(a).as_slice().to_vec())
                .unwrap_or_default(),
        }
    }
}

/// Runs the fusor on raw encoder outputs at their native shapes.
///
/// Maps are bilinearly aligned to the canonical spatial shape; channel
/// mismatches are handled by the state's learned 1×1 projections.
pub fn fusor_forward(
    raw: &[FeatureMap],
    text: &InstructionEmbedding,
    state: &FusorState,
    config: &FusorConfig,
) -> Result<FusorOutput> {
    config.validate()?;
    state.check_compatible(config)?;
    if raw.len() != config.num_encoders {
        return Err(FusorError::Config(format!(
            "expected {} encoder feature maps, got {}",
            config.num_encoders,
            raw.len()
        )));
    }
    let aligned = align_spatial(raw, config.height, config.width)?;
    let views: Vec<Matrix> = aligned.iter().map(FeatureMap::to_tokens).collect();
    forward_tokens(&views, &text.to_row(), state, config.mode)
}

/// Runs the fusor on pre-aligned token views.
pub fn forward_tokens(
    views: &[Matrix],
    text: &Matrix,
    state: &FusorState,
    mode: FusorMode,
) -> Result<FusorOutput> {
    let mut tape = Tape::new();
    let out = forward_graph(&mut tape, state, mode, views, text)?;
    Ok(out.read(&tape))
}

/// Generates a `C × H × W` query from the bank, with its attention over `M`.
pub fn generate_query(
    text: &InstructionEmbedding,
    bank: &QueryBank,
    params: &QueryGenParams,
    height: usize,
    width: usize,
) -> Result<(FeatureMap, Vec<f64>)> {
    let first = bank
        .queries
        .first()
        .ok_or_else(|| FusorError::InvalidArgument("query bank is empty".into()))?;
    if params.wq.value.rows() != text.dim() {
        return Err(FusorError::Config(format!(
            "instruction embedding has dim {}, query projection expects {}",
            text.dim(),
            params.wq.value.rows()
        )));
    }
    if first.value.rows() != height * width {
        return Err(shape_err(
            format!("{} query tokens", height * width),
            format!("{}", first.value.rows()),
        ));
    }
    let row = text.to_row();
    let mut tape = Tape::new();
    let t = tape.input(&row);
    let (q, a) = query_graph(&mut tape, t, bank, params);
    Ok((
        FeatureMap::from_tokens(tape.value(q), height, width)?,
        tape.value(a).as_slice().to_vec(),
    ))
}

/// Extracts one feature map per encoder by cross-attending `query` over each view.
pub fn extract_features(
    query: &FeatureMap,
    views: &FeatureSet,
    layer: &FusionLayer,
    heads: usize,
) -> Result<Vec<FeatureMap>> {
    if views.len() != layer.extract.len() {
        return Err(FusorError::Config(format!(
            "{} feature maps for {} configured encoder projections",
            views.len(),
            layer.extract.len()
        )));
    }
    if views.canonical_shape() != query.shape() {
        return Err(shape_err(
            format!("{:?}", query.shape()),
            format!("{:?}", views.canonical_shape()),
        ));
    }
    check_heads(query.channels(), heads)?;
    let q_tokens = query.to_tokens();
    let x_tokens: Vec<Matrix> = views.maps().iter().map(FeatureMap::to_tokens).collect();
    let mut tape = Tape::new();
    let q = tape.input(&q_tokens);
    let xs: Vec<Var> = x_tokens.iter().map(|x| tape.input(x)).collect();
    let fs = extract_graph(&mut tape, q, &xs, layer, heads);
    fs.into_iter()
        .map(|f| FeatureMap::from_tokens(tape.value(f), query.height(), query.width()))
        .collect()
}

/// Gate weights for one layer from the instruction and extracted features.
pub fn gate_weights(
    text: &InstructionEmbedding,
    features: &[FeatureMap],
    gate: &Mlp,
    text_align: &Param,
    layer_index: usize,
) -> Result<GateVector> {
    let set = FeatureSet::new(features.to_vec())?;
    let (c, _, _) = set.canonical_shape();
    if text_align.value.shape() != (text.dim(), c) {
        return Err(FusorError::Config(format!(
            "text alignment is {:?}, expected {}x{c}",
            text_align.value.shape(),
            text.dim()
        )));
    }
    if gate.fc1.weight.value.rows() != c * (features.len() + 1) {
        return Err(FusorError::Config(format!(
            "gate input width {} does not match {} features of {c} channels",
            gate.fc1.weight.value.rows(),
            features.len()
        )));
    }
    let row = text.to_row();
    let tokens: Vec<Matrix> = features.iter().map(FeatureMap::to_tokens).collect();
    let mut tape = Tape::new();
    let t = tape.input(&row);
    let ta = tape.param(text_align);
    let aligned = tape.matmul(t, ta);
    let fs: Vec<Var> = tokens.iter().map(|f| tape.input(f)).collect();
    let w = gate_graph(&mut tape, aligned, &fs, gate);
    Ok(GateVector {
        weights: tape.value(w).as_slice().to_vec(),
        layer_index,
    })
}

/// `Σ_i w_i · F_i`.
pub fn fuse(w: &GateVector, features: &[FeatureMap]) -> Result<FeatureMap> {
    if w.weights.len() != features.len() || features.is_empty() {
        return Err(FusorError::InvalidArgument(format!(
            "{} gate weights for {} feature maps",
            w.weights.len(),
            features.len()
        )));
    }
    let set = FeatureSet::new(features.to_vec())?;
    let (c, h, wd) = set.canonical_shape();
    let tokens: Vec<Matrix> = features.iter().map(FeatureMap::to_tokens).collect();
    let refs: Vec<&Matrix> = tokens.iter().collect();
    let fused = tensor::weighted_sum(&w.weights, &refs);
    debug_assert_eq!(fused.cols(), c);
    FeatureMap::from_tokens(&fused, h, wd)
}

/// One transformer block over a canonical feature map.
pub fn block_forward(f: &FeatureMap, block: &BlockParams, heads: usize) -> Result<FeatureMap> {
    if block.ln1_gain.value.cols() != f.channels() {
        return Err(shape_err(
            format!("{} channels", block.ln1_gain.value.cols()),
            format!("{} channels", f.channels()),
        ));
    }
    check_heads(f.channels(), heads)?;
    let tokens = f.to_tokens();
    let mut tape = Tape::new();
    let x = tape.input(&tokens);
    let y = block_graph(&mut tape, x, block, heads);
    FeatureMap::from_tokens(tape.value(y), f.height(), f.width())
}

fn check_heads(channels: usize, heads: usize) -> Result<()> {
    if heads == 0 || !channels.is_multiple_of(heads) {
        return Err(FusorError::Config(format!(
            "heads ({heads}) must divide channels ({channels})"
        )));
    }
    Ok(())
}
