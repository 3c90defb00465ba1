//! The gated encoder–decoder forecaster.
//!
//! Forward pass over a `[B, C, T]` history batch:
//!
//! 1. time encoding — calendar/store embeddings drive a top-k softmax gate
//!    `[B, T, T']` whose columns compress the T axis: `T_t = X . T_te`;
//! 2. channel encoding — two logit branches (one sees the item embedding)
//!    add into a `[B, C, C']` gate that compresses the channel axis:
//!    `T_e = T_ce^t . T_t`;
//! 3. a shape-preserving nonlinear block over `[B, C', T']` (a two-sided MLP
//!    or a transformer encoder across the C' token axis);
//! 4. channel decoding — a third gate maps back to C channels with a skip
//!    connection: `T_pre = T_cd . R_b + T_t`;
//! 5. time decoding — future-calendar logits gate `[B, P, T']` rows that mix
//!    compressed time slots into the forecast: `T_out = T_pre . T_td^t`.
//!
//! Every gate normalizes along the axis contracted by the matmul that
//! consumes it, so each output slot is a convex combination of its sources.

use rand::Rng;

use crate::data::WindowBatch;
use crate::embedding::CALENDAR_VOCABS;
use crate::error::{Error, Result};
use crate::gate::retention_to_k;
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Nonlinear block choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Mlp,
    Transformer,
}

impl std::str::FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(BlockKind::Mlp),
            "transformer" => Ok(BlockKind::Transformer),
            other => Err(Error::config(format!(
                "unknown block kind {other:?} (expected mlp or transformer)"
            ))),
        }
    }
}

/// Model hyperparameters. `T' = max(1, T / time_compression)` and
/// `C' = max(1, C / channel_compression)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub time_compression: usize,
    pub channel_compression: usize,
    pub r_time: f64,
    pub r_channel: f64,
    pub d_embed: usize,
    pub block: BlockKind,
    /// Hidden width of the gate-logit MLPs.
    pub mlp_hidden: usize,
    /// 1 = single affine logit map, 2 = affine-ReLU-affine.
    pub gate_mlp_depth: usize,
    pub tf_layers: usize,
    pub tf_heads: usize,
    pub store_vocab: usize,
}

impl ModelConfig {
    /// Defaults for a dataset with `channels` series, lookback `T`, horizon `P`.
    pub fn new(channels: usize, lookback: usize, horizon: usize) -> Self {
        ModelConfig {
            channels,
            lookback,
            horizon,
            time_compression: 2,
            channel_compression: 2,
            r_time: 0.5,
            r_channel: 0.7,
            d_embed: 32,
            block: BlockKind::Mlp,
            mlp_hidden: 32,
            gate_mlp_depth: 2,
            tf_layers: 1,
            tf_heads: 4,
            store_vocab: 1,
        }
    }

    /// Compressed time extent T'.
    pub fn t_compressed(&self) -> usize {
        (self.lookback / self.time_compression).max(1)
    }

    /// Compressed channel extent C'.
    pub fn c_compressed(&self) -> usize {
        (self.channels / self.channel_compression).max(1)
    }

    /// Attention heads actually used: falls back to 1 when T' is not
    /// divisible by `tf_heads`.
    pub fn effective_heads(&self) -> usize {
        if self.tf_heads > 0 && self.t_compressed() % self.tf_heads == 0 {
            self.tf_heads
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.lookback == 0 || self.horizon == 0 {
            return Err(Error::config(
                "channels, lookback and horizon must be positive".to_string(),
            ));
        }
        if self.time_compression == 0 || self.channel_compression == 0 {
            return Err(Error::config("compression levels must be >= 1".to_string()));
        }
        if !(self.r_time > 0.0 && self.r_time <= 1.0) || !(self.r_channel > 0.0 && self.r_channel <= 1.0) {
            return Err(Error::config(format!(
                "retention rates must be in (0, 1], got time {} channel {}",
                self.r_time, self.r_channel
            )));
        }
        if self.d_embed == 0 || self.mlp_hidden == 0 {
            return Err(Error::config("embedding and hidden widths must be positive".to_string()));
        }
        if !(self.gate_mlp_depth == 1 || self.gate_mlp_depth == 2) {
            return Err(Error::config(format!(
                "gate_mlp_depth must be 1 or 2, got {}",
                self.gate_mlp_depth
            )));
        }
        if self.block == BlockKind::Transformer && (self.tf_layers == 0 || self.tf_heads == 0) {
            return Err(Error::config("transformer block needs >= 1 layer and head".to_string()));
        }
        if self.store_vocab == 0 {
            return Err(Error::config("store vocabulary must be >= 1".to_string()));
        }
        Ok(())
    }
}

// ── Parameter containers ────────────────────────────────────────────────
//
// Structs are generic over the slot type so the same layout serves owned
// tensors (`ModelParams<T>`) and tape leaf ids (`ParamIds`).

#[derive(Clone, Debug, PartialEq)]
pub struct AffineOf<S> {
    pub weight: S,
    pub bias: S,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateMlpOf<S> {
    pub layers: Vec<AffineOf<S>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayerOf<S> {
    pub ln1_scale: S,
    pub ln1_shift: S,
    pub query: AffineOf<S>,
    pub key: AffineOf<S>,
    pub value: AffineOf<S>,
    pub out: AffineOf<S>,
    pub ln2_scale: S,
    pub ln2_shift: S,
    pub ffn_in: AffineOf<S>,
    pub ffn_out: AffineOf<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlockOf<S> {
    Mlp {
        time_mix: AffineOf<S>,
        channel_mix: AffineOf<S>,
    },
    Transformer {
        layers: Vec<EncoderLayerOf<S>>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSetOf<S> {
    pub day_of_week: S,
    pub day_of_month: S,
    pub month: S,
    pub hour: S,
    pub store: S,
    pub item: S,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamsOf<S> {
    pub embed: EmbeddingSetOf<S>,
    pub time_encode: GateMlpOf<S>,
    pub channel_encode_1: GateMlpOf<S>,
    pub channel_encode_2: GateMlpOf<S>,
    pub channel_decode: GateMlpOf<S>,
    pub time_decode: GateMlpOf<S>,
    pub block: BlockOf<S>,
}

pub type ModelParams<T> = ParamsOf<Tensor<T>>;
pub type ParamIds = ParamsOf<NodeId>;

impl<S> AffineOf<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a S)) {
        f(format!("{prefix}.weight"), &self.weight);
        f(format!("{prefix}.bias"), &self.bias);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut impl FnMut(String, &'a mut S)) {
        f(format!("{prefix}.weight"), &mut self.weight);
        f(format!("{prefix}.bias"), &mut self.bias);
    }

    fn map<U>(&self, f: &mut impl FnMut(&S) -> U) -> AffineOf<U> {
        AffineOf {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }
}

impl<S> GateMlpOf<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a S)) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&format!("{prefix}.{i}"), f);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut impl FnMut(String, &'a mut S)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&format!("{prefix}.{i}"), f);
        }
    }

    fn map<U>(&self, f: &mut impl FnMut(&S) -> U) -> GateMlpOf<U> {
        GateMlpOf {
            layers: self.layers.iter().map(|l| l.map(f)).collect(),
        }
    }
}

impl<S> EncoderLayerOf<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a S)) {
        f(format!("{prefix}.ln1.scale"), &self.ln1_scale);
        f(format!("{prefix}.ln1.shift"), &self.ln1_shift);
        self.query.visit(&format!("{prefix}.attn.query"), f);
        self.key.visit(&format!("{prefix}.attn.key"), f);
        self.value.visit(&format!("{prefix}.attn.value"), f);
        self.out.visit(&format!("{prefix}.attn.out"), f);
        f(format!("{prefix}.ln2.scale"), &self.ln2_scale);
        f(format!("{prefix}.ln2.shift"), &self.ln2_shift);
        self.ffn_in.visit(&format!("{prefix}.ffn.0"), f);
        self.ffn_out.visit(&format!("{prefix}.ffn.1"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut impl FnMut(String, &'a mut S)) {
        f(format!("{prefix}.ln1.scale"), &mut self.ln1_scale);
        f(format!("{prefix}.ln1.shift"), &mut self.ln1_shift);
        self.query.visit_mut(&format!("{prefix}.attn.query"), f);
        self.key.visit_mut(&format!("{prefix}.attn.key"), f);
        self.value.visit_mut(&format!("{prefix}.attn.value"), f);
        self.out.visit_mut(&format!("{prefix}.attn.out"), f);
        f(format!("{prefix}.ln2.scale"), &mut self.ln2_scale);
        f(format!("{prefix}.ln2.shift"), &mut self.ln2_shift);
        self.ffn_in.visit_mut(&format!("{prefix}.ffn.0"), f);
        self.ffn_out.visit_mut(&format!("{prefix}.ffn.1"), f);
    }

    fn map<U>(&self, f: &mut impl FnMut(&S) -> U) -> EncoderLayerOf<U> {
        EncoderLayerOf {
            ln1_scale: f(&self.ln1_scale),
            ln1_shift: f(&self.ln1_shift),
            query: self.query.map(f),
            key: self.key.map(f),
            value: self.value.map(f),
            out: self.out.map(f),
            ln2_scale: f(&self.ln2_scale),
            ln2_shift: f(&self.ln2_shift),
            ffn_in: self.ffn_in.map(f),
            ffn_out: self.ffn_out.map(f),
        }
    }
}

impl<S> ParamsOf<S> {
    /// Walks every named tensor slot in canonical (checkpoint) order.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a S)) {
        f("embed.day_of_week".to_string(), &self.embed.day_of_week);
        f("embed.day_of_month".to_string(), &self.embed.day_of_month);
        f("embed.month".to_string(), &self.embed.month);
        f("embed.hour".to_string(), &self.embed.hour);
        f("embed.store".to_string(), &self.embed.store);
        f("embed.item".to_string(), &self.embed.item);
        self.time_encode.visit("time_encode", f);
        self.channel_encode_1.visit("channel_encode_1", f);
        self.channel_encode_2.visit("channel_encode_2", f);
        self.channel_decode.visit("channel_decode", f);
        self.time_decode.visit("time_decode", f);
        match &self.block {
            BlockOf::Mlp { time_mix, channel_mix } => {
                time_mix.visit("block.time_mix", f);
                channel_mix.visit("block.channel_mix", f);
            }
            BlockOf::Transformer { layers } => {
                for (i, layer) in layers.iter().enumerate() {
                    layer.visit(&format!("block.layer{i}"), f);
                }
            }
        }
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(String, &'a mut S)) {
        f("embed.day_of_week".to_string(), &mut self.embed.day_of_week);
        f("embed.day_of_month".to_string(), &mut self.embed.day_of_month);
        f("embed.month".to_string(), &mut self.embed.month);
        f("embed.hour".to_string(), &mut self.embed.hour);
        f("embed.store".to_string(), &mut self.embed.store);
        f("embed.item".to_string(), &mut self.embed.item);
        self.time_encode.visit_mut("time_encode", f);
        self.channel_encode_1.visit_mut("channel_encode_1", f);
        self.channel_encode_2.visit_mut("channel_encode_2", f);
        self.channel_decode.visit_mut("channel_decode", f);
        self.time_decode.visit_mut("time_decode", f);
        match &mut self.block {
            BlockOf::Mlp { time_mix, channel_mix } => {
                time_mix.visit_mut("block.time_mix", f);
                channel_mix.visit_mut("block.channel_mix", f);
            }
            BlockOf::Transformer { layers } => {
                for (i, layer) in layers.iter_mut().enumerate() {
                    layer.visit_mut(&format!("block.layer{i}"), f);
                }
            }
        }
    }

    /// Maps every slot, preserving structure and traversal order.
    pub fn map<U>(&self, mut f: impl FnMut(&S) -> U) -> ParamsOf<U> {
        ParamsOf {
            embed: EmbeddingSetOf {
                day_of_week: f(&self.embed.day_of_week),
                day_of_month: f(&self.embed.day_of_month),
                month: f(&self.embed.month),
                hour: f(&self.embed.hour),
                store: f(&self.embed.store),
                item: f(&self.embed.item),
            },
            time_encode: self.time_encode.map(&mut f),
            channel_encode_1: self.channel_encode_1.map(&mut f),
            channel_encode_2: self.channel_encode_2.map(&mut f),
            channel_decode: self.channel_decode.map(&mut f),
            time_decode: self.time_decode.map(&mut f),
            block: match &self.block {
                BlockOf::Mlp { time_mix, channel_mix } => BlockOf::Mlp {
                    time_mix: time_mix.map(&mut f),
                    channel_mix: channel_mix.map(&mut f),
                },
                BlockOf::Transformer { layers } => BlockOf::Transformer {
                    layers: layers.iter().map(|l| l.map(&mut f)).collect(),
                },
            },
        }
    }
}

// ── Initialization ──────────────────────────────────────────────────────

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
fn init_weight<T: Scalar>(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Result<Tensor<T>> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(&[fan_in, fan_out], |_| {
        T::from_f64((rng.random::<f64>() * 2.0 - 1.0) * limit)
    })
}

fn init_affine<T: Scalar>(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Result<AffineOf<Tensor<T>>> {
    Ok(AffineOf {
        weight: init_weight(fan_in, fan_out, rng)?,
        bias: Tensor::zeros(&[fan_out])?,
    })
}

fn init_gate_mlp<T: Scalar>(
    input: usize,
    hidden: usize,
    output: usize,
    depth: usize,
    rng: &mut impl Rng,
) -> Result<GateMlpOf<Tensor<T>>> {
    let layers = if depth == 1 {
        vec![init_affine(input, output, rng)?]
    } else {
        vec![
            init_affine(input, hidden, rng)?,
            init_affine(hidden, output, rng)?,
        ]
    };
    Ok(GateMlpOf { layers })
}

fn init_embedding<T: Scalar>(vocab: usize, dim: usize, rng: &mut impl Rng) -> Result<Tensor<T>> {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0f64, 0.02).expect("valid std");
    Tensor::from_fn(&[vocab, dim], |_| T::from_f64(normal.sample(rng)))
}

impl<T: Scalar> ModelParams<T> {
    /// Fresh parameters for `cfg`, drawn from a seeded generator.
    pub fn seeded(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let (tp, cp) = (cfg.t_compressed(), cfg.c_compressed());
        let d = cfg.d_embed;
        let h = cfg.mlp_hidden;
        let depth = cfg.gate_mlp_depth;
        let embed = EmbeddingSetOf {
            day_of_week: init_embedding(CALENDAR_VOCABS[0], d, rng)?,
            day_of_month: init_embedding(CALENDAR_VOCABS[1], d, rng)?,
            month: init_embedding(CALENDAR_VOCABS[2], d, rng)?,
            hour: init_embedding(CALENDAR_VOCABS[3], d, rng)?,
            store: init_embedding(cfg.store_vocab, d, rng)?,
            item: init_embedding(cfg.channels, d, rng)?,
        };
        let block = match cfg.block {
            BlockKind::Mlp => BlockOf::Mlp {
                time_mix: init_affine(tp, tp, rng)?,
                channel_mix: init_affine(cp, cp, rng)?,
            },
            BlockKind::Transformer => {
                let mut layers = Vec::with_capacity(cfg.tf_layers);
                for _ in 0..cfg.tf_layers {
                    layers.push(EncoderLayerOf {
                        ln1_scale: Tensor::full(&[tp], T::one())?,
                        ln1_shift: Tensor::zeros(&[tp])?,
                        query: init_affine(tp, tp, rng)?,
                        key: init_affine(tp, tp, rng)?,
                        value: init_affine(tp, tp, rng)?,
                        out: init_affine(tp, tp, rng)?,
                        ln2_scale: Tensor::full(&[tp], T::one())?,
                        ln2_shift: Tensor::zeros(&[tp])?,
                        ffn_in: init_affine(tp, 4 * tp, rng)?,
                        ffn_out: init_affine(4 * tp, tp, rng)?,
                    });
                }
                BlockOf::Transformer { layers }
            }
        };
        Ok(ParamsOf {
            embed,
            time_encode: init_gate_mlp(2 * d, h, tp, depth, rng)?,
            channel_encode_1: init_gate_mlp(tp + d, h, cp, depth, rng)?,
            channel_encode_2: init_gate_mlp(tp, h, cp, depth, rng)?,
            channel_decode: init_gate_mlp(tp, h, cp, depth, rng)?,
            time_decode: init_gate_mlp(2 * d, h, tp, depth, rng)?,
            block,
        })
    }

    /// Registers every parameter as a gradient-tracked leaf.
    pub fn register(&self, tape: &mut Tape<T>) -> ParamIds {
        self.map(|t| tape.leaf(t.clone(), true))
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }
}

/// Exact scalar-parameter count implied by a config, from the shape rules.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let (tp, cp) = (cfg.t_compressed(), cfg.c_compressed());
    let d = cfg.d_embed;
    let h = cfg.mlp_hidden;
    let gate_mlp = |input: usize, output: usize| -> usize {
        if cfg.gate_mlp_depth == 1 {
            input * output + output
        } else {
            input * h + h + h * output + output
        }
    };
    let embeddings: usize = CALENDAR_VOCABS.iter().sum::<usize>() * d
        + cfg.store_vocab * d
        + cfg.channels * d;
    let block = match cfg.block {
        BlockKind::Mlp => tp * tp + tp + cp * cp + cp,
        BlockKind::Transformer => {
            let per_layer = 2 * tp            // ln1
                + 4 * (tp * tp + tp)          // q, k, v, out projections
                + 2 * tp                      // ln2
                + (tp * 4 * tp + 4 * tp)      // ffn in
                + (4 * tp * tp + tp); // ffn out
            cfg.tf_layers * per_layer
        }
    };
    embeddings
        + gate_mlp(2 * d, tp)      // time encode
        + gate_mlp(tp + d, cp)     // channel encode branch 1
        + gate_mlp(tp, cp)         // channel encode branch 2
        + gate_mlp(tp, cp)         // channel decode
        + gate_mlp(2 * d, tp)      // time decode
        + block
}

/// Serialized model footprint in bytes at the given element width.
pub fn model_bytes(cfg: &ModelConfig, element_width: usize) -> usize {
    param_count(cfg) * element_width
}

// ── Forward pass ────────────────────────────────────────────────────────

/// Gate selection behavior during a forward pass.
#[derive(Clone, Copy)]
pub enum GateMode<'a> {
    /// Select the top-k logits per lane.
    TopK,
    /// Reuse previously captured masks (keeps the function differentiable
    /// at a point for finite-difference checks).
    Frozen(&'a GateMasks),
}

/// Boolean selection masks of the four gates, in tensor layout.
#[derive(Clone, Debug, PartialEq)]
pub struct GateMasks {
    pub time_encode: Vec<bool>,
    pub channel_encode: Vec<bool>,
    pub channel_decode: Vec<bool>,
    pub time_decode: Vec<bool>,
}

/// Gate axes: the contraction axis of the matmul that consumes each gate.
pub const TIME_ENCODE_GATE_AXIS: usize = 1; // [B,T,T'] contracts over T
pub const CHANNEL_ENCODE_GATE_AXIS: usize = 1; // [B,C,C'] contracts over C
pub const CHANNEL_DECODE_GATE_AXIS: usize = 2; // [B,C,C'] contracts over C'
pub const TIME_DECODE_GATE_AXIS: usize = 2; // [B,P,T'] contracts over T'

/// Applies the gate-logit MLP independently per (batch, slot):
/// `[B, n, F_in] -> [B, n, F_out]` (affine, or affine-ReLU-affine).
pub fn mlp_logits<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    mlp: &GateMlpOf<NodeId>,
) -> Result<NodeId> {
    let mut h = x;
    let last = mlp.layers.len() - 1;
    for (i, layer) in mlp.layers.iter().enumerate() {
        let z = tape.matmul(h, layer.weight)?;
        h = tape.add_bias(z, layer.bias)?;
        if i < last {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

fn apply_gate<T: Scalar>(
    tape: &mut Tape<T>,
    logits: NodeId,
    axis: usize,
    k: usize,
    mode: GateMode<'_>,
    which: fn(&GateMasks) -> &Vec<bool>,
) -> Result<NodeId> {
    match mode {
        GateMode::TopK => tape.topk_softmax(logits, axis, k),
        GateMode::Frozen(masks) => tape.subset_softmax(logits, axis, which(masks).clone()),
    }
}

pub struct TimeEncodeOut {
    /// Compressed series `[B, C, T']`.
    pub t_t: NodeId,
    /// Time gate weights `[B, T, T']`.
    pub t_te: NodeId,
}

/// Time encoding: calendar-driven gate columns compress the T axis.
pub fn time_encode<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    hist_date_emb: NodeId,
    hist_store_emb: NodeId,
    mlp: &GateMlpOf<NodeId>,
    cfg: &ModelConfig,
    mode: GateMode<'_>,
) -> Result<TimeEncodeOut> {
    let features = tape.concat_last(&[hist_date_emb, hist_store_emb])?;
    let logits = mlp_logits(tape, features, mlp)?; // [B, T, T']
    let k = retention_to_k(cfg.r_time, cfg.lookback)?;
    let t_te = apply_gate(tape, logits, TIME_ENCODE_GATE_AXIS, k, mode, |m| {
        &m.time_encode
    })?;
    let t_t = tape.matmul(x, t_te)?; // [B, C, T']
    Ok(TimeEncodeOut { t_t, t_te })
}

pub struct ChannelEncodeOut {
    /// Encoded features `[B, C', T']`.
    pub t_e: NodeId,
    /// Channel gate weights `[B, C, C']`.
    pub t_ce: NodeId,
    pub t_ce1: NodeId,
    /// Second logit branch, reused by the channel decoder.
    pub t_ce2: NodeId,
}

/// Channel encoding: two logit branches add into one gate over the C axis.
pub fn channel_encode<T: Scalar>(
    tape: &mut Tape<T>,
    t_t: NodeId,
    item_emb: NodeId,
    branch1: &GateMlpOf<NodeId>,
    branch2: &GateMlpOf<NodeId>,
    cfg: &ModelConfig,
    mode: GateMode<'_>,
) -> Result<ChannelEncodeOut> {
    let with_item = tape.concat_last(&[t_t, item_emb])?; // [B, C, T'+D]
    let t_ce1 = mlp_logits(tape, with_item, branch1)?; // [B, C, C']
    let t_ce2 = mlp_logits(tape, t_t, branch2)?; // [B, C, C']
    let logits = tape.add(t_ce1, t_ce2)?;
    let k = retention_to_k(cfg.r_channel, cfg.channels)?;
    let t_ce = apply_gate(tape, logits, CHANNEL_ENCODE_GATE_AXIS, k, mode, |m| {
        &m.channel_encode
    })?;
    let t_ce_t = tape.transpose_last2(t_ce)?; // [B, C', C]
    let t_e = tape.matmul(t_ce_t, t_t)?; // [B, C', T']
    Ok(ChannelEncodeOut {
        t_e,
        t_ce,
        t_ce1,
        t_ce2,
    })
}

/// Two-sided MLP block: ReLU affine over T', then over C', shape preserved.
pub fn nonlinear_block_mlp<T: Scalar>(
    tape: &mut Tape<T>,
    t_e: NodeId,
    time_mix: &AffineOf<NodeId>,
    channel_mix: &AffineOf<NodeId>,
) -> Result<NodeId> {
    let z = tape.matmul(t_e, time_mix.weight)?; // [B, C', T']
    let z = tape.add_bias(z, time_mix.bias)?;
    let r_t = tape.relu(z);
    let r_t_t = tape.transpose_last2(r_t)?; // [B, T', C']
    let z = tape.matmul(r_t_t, channel_mix.weight)?;
    let z = tape.add_bias(z, channel_mix.bias)?;
    let r_c = tape.relu(z);
    tape.transpose_last2(r_c) // [B, C', T']
}

/// Pre-norm transformer encoder over the C'-length token axis; token width
/// is T'. Returns the output and the per-layer attention probabilities.
pub fn nonlinear_block_transformer<T: Scalar>(
    tape: &mut Tape<T>,
    t_e: NodeId,
    layers: &[EncoderLayerOf<NodeId>],
    cfg: &ModelConfig,
) -> Result<(NodeId, Vec<NodeId>)> {
    let tp = cfg.t_compressed();
    let heads = cfg.effective_heads();
    let dh = tp / heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut x = t_e;
    let mut attn_probs = Vec::new();
    for layer in layers {
        // attention sublayer
        let h = tape.layer_norm(x, layer.ln1_scale, layer.ln1_shift, 1e-5)?;
        let q = tape.matmul(h, layer.query.weight)?;
        let q = tape.add_bias(q, layer.query.bias)?;
        let kx = tape.matmul(h, layer.key.weight)?;
        let kx = tape.add_bias(kx, layer.key.bias)?;
        let v = tape.matmul(h, layer.value.weight)?;
        let v = tape.add_bias(v, layer.value.bias)?;
        let mut head_outs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let qh = tape.slice_last(q, hd * dh, dh)?;
            let kh = tape.slice_last(kx, hd * dh, dh)?;
            let vh = tape.slice_last(v, hd * dh, dh)?;
            let kht = tape.transpose_last2(kh)?;
            let scores = tape.matmul(qh, kht)?; // [B, C', C']
            let scores = tape.scale(scores, scale);
            let probs = tape.softmax_axis(scores, 2)?;
            attn_probs.push(probs);
            head_outs.push(tape.matmul(probs, vh)?);
        }
        let ctx = tape.concat_last(&head_outs)?;
        let o = tape.matmul(ctx, layer.out.weight)?;
        let o = tape.add_bias(o, layer.out.bias)?;
        x = tape.add(x, o)?;
        // feed-forward sublayer
        let h2 = tape.layer_norm(x, layer.ln2_scale, layer.ln2_shift, 1e-5)?;
        let f = tape.matmul(h2, layer.ffn_in.weight)?;
        let f = tape.add_bias(f, layer.ffn_in.bias)?;
        let f = tape.relu(f);
        let f = tape.matmul(f, layer.ffn_out.weight)?;
        let f = tape.add_bias(f, layer.ffn_out.bias)?;
        x = tape.add(x, f)?;
    }
    Ok((x, attn_probs))
}

pub struct ChannelDecodeOut {
    /// Decoded-plus-skip features `[B, C, T']`.
    pub t_pre: NodeId,
    /// Channel decode gate `[B, C, C']`.
    pub t_cd: NodeId,
}

/// Channel decoding with skip connection: `T_pre = T_cd . R_b + T_t`.
pub fn channel_decode<T: Scalar>(
    tape: &mut Tape<T>,
    r_b: NodeId,
    t_t: NodeId,
    t_ce2: NodeId,
    mlp: &GateMlpOf<NodeId>,
    cfg: &ModelConfig,
    mode: GateMode<'_>,
) -> Result<ChannelDecodeOut> {
    let logits2 = mlp_logits(tape, t_t, mlp)?; // [B, C, C']
    let logits = tape.add(logits2, t_ce2)?;
    let k = retention_to_k(cfg.r_channel, cfg.c_compressed())?;
    let t_cd = apply_gate(tape, logits, CHANNEL_DECODE_GATE_AXIS, k, mode, |m| {
        &m.channel_decode
    })?;
    let t_c = tape.matmul(t_cd, r_b)?; // [B, C, T']
    let t_pre = tape.add(t_c, t_t)?;
    Ok(ChannelDecodeOut { t_pre, t_cd })
}

pub struct TimeDecodeOut {
    /// Forecast `[B, C, P]`.
    pub t_out: NodeId,
    /// Time decode gate `[B, P, T']`.
    pub t_td: NodeId,
}

/// Time decoding: future-calendar gate rows mix compressed time slots into
/// each horizon step.
pub fn time_decode<T: Scalar>(
    tape: &mut Tape<T>,
    t_pre: NodeId,
    fut_date_emb: NodeId,
    fut_store_emb: NodeId,
    mlp: &GateMlpOf<NodeId>,
    cfg: &ModelConfig,
    mode: GateMode<'_>,
) -> Result<TimeDecodeOut> {
    let features = tape.concat_last(&[fut_date_emb, fut_store_emb])?;
    let logits = mlp_logits(tape, features, mlp)?; // [B, P, T']
    let k = retention_to_k(cfg.r_time, cfg.t_compressed())?;
    let t_td = apply_gate(tape, logits, TIME_DECODE_GATE_AXIS, k, mode, |m| {
        &m.time_decode
    })?;
    let t_td_t = tape.transpose_last2(t_td)?; // [B, T', P]
    let t_out = tape.matmul(t_pre, t_td_t)?; // [B, C, P]
    Ok(TimeDecodeOut { t_out, t_td })
}

/// Embedded gate inputs for one batch.
pub struct EmbeddedIds {
    pub hist_date: NodeId,
    pub hist_store: NodeId,
    pub fut_date: NodeId,
    pub fut_store: NodeId,
    pub item: NodeId,
}

/// Builds the five embedding input tensors for a batch.
///
/// Learned mode looks rows up from the tables (differentiable); zeroed mode
/// feeds constant zeros (the no-embedding ablation); batches carrying
/// file-loaded vectors feed those as constants.
pub fn embed_batch<T: Scalar>(
    tape: &mut Tape<T>,
    embed: &EmbeddingSetOf<NodeId>,
    batch: &WindowBatch<T>,
    cfg: &ModelConfig,
    zero_embeddings: bool,
) -> Result<EmbeddedIds> {
    let b = batch.x.shape()[0];
    let (t, p, c, d) = (cfg.lookback, cfg.horizon, cfg.channels, cfg.d_embed);
    if zero_embeddings {
        return Ok(EmbeddedIds {
            hist_date: tape.constant(Tensor::zeros(&[b, t, d])?),
            hist_store: tape.constant(Tensor::zeros(&[b, t, d])?),
            fut_date: tape.constant(Tensor::zeros(&[b, p, d])?),
            fut_store: tape.constant(Tensor::zeros(&[b, p, d])?),
            item: tape.constant(Tensor::zeros(&[b, c, d])?),
        });
    }
    if let Some(file) = &batch.file_embeddings {
        return Ok(EmbeddedIds {
            hist_date: tape.constant(file.hist_date.clone()),
            hist_store: tape.constant(file.hist_store.clone()),
            fut_date: tape.constant(file.fut_date.clone()),
            fut_store: tape.constant(file.fut_store.clone()),
            item: tape.constant(file.item.clone()),
        });
    }
    // calendar features: sum of the four per-field lookups
    let cal = |tape: &mut Tape<T>, feats: &[crate::embedding::CalendarFeatures], steps: usize| -> Result<NodeId> {
        let mut dow = Vec::with_capacity(b * steps);
        let mut dom = Vec::with_capacity(b * steps);
        let mut month = Vec::with_capacity(b * steps);
        let mut hour = Vec::with_capacity(b * steps);
        for f in feats {
            let [i0, i1, i2, i3] = f.indices();
            dow.push(i0);
            dom.push(i1);
            month.push(i2);
            hour.push(i3);
        }
        let leading = [b, steps];
        let e0 = tape.embedding_lookup(embed.day_of_week, &dow, &leading)?;
        let e1 = tape.embedding_lookup(embed.day_of_month, &dom, &leading)?;
        let e2 = tape.embedding_lookup(embed.month, &month, &leading)?;
        let e3 = tape.embedding_lookup(embed.hour, &hour, &leading)?;
        let s = tape.add(e0, e1)?;
        let s = tape.add(s, e2)?;
        tape.add(s, e3)
    };
    let hist_date = cal(tape, &batch.hist_calendar, t)?;
    let fut_date = cal(tape, &batch.fut_calendar, p)?;
    // per-series store id broadcast across steps
    let store_hist: Vec<usize> = batch
        .store_ids
        .iter()
        .flat_map(|&s| std::iter::repeat(s).take(t))
        .collect();
    let store_fut: Vec<usize> = batch
        .store_ids
        .iter()
        .flat_map(|&s| std::iter::repeat(s).take(p))
        .collect();
    let hist_store = tape.embedding_lookup(embed.store, &store_hist, &[b, t])?;
    let fut_store = tape.embedding_lookup(embed.store, &store_fut, &[b, p])?;
    // per-channel item id, same for every batch row
    let item_idx: Vec<usize> = (0..b).flat_map(|_| batch.item_ids.iter().copied()).collect();
    let item = tape.embedding_lookup(embed.item, &item_idx, &[b, c])?;
    Ok(EmbeddedIds {
        hist_date,
        hist_store,
        fut_date,
        fut_store,
        item,
    })
}

/// Tape node ids of every intermediate the forward pass produces.
#[derive(Debug)]
pub struct TraceIds {
    pub t_te: NodeId,
    pub t_t: NodeId,
    pub t_ce1: NodeId,
    pub t_ce2: NodeId,
    pub t_ce: NodeId,
    pub t_e: NodeId,
    pub r_b: NodeId,
    pub t_cd: NodeId,
    pub t_pre: NodeId,
    pub t_td: NodeId,
    pub t_out: NodeId,
}

impl TraceIds {
    /// Clones the gate masks out of the tape.
    pub fn masks<T: Scalar>(&self, tape: &Tape<T>) -> GateMasks {
        GateMasks {
            time_encode: tape.gate_mask(self.t_te).expect("gate node").to_vec(),
            channel_encode: tape.gate_mask(self.t_ce).expect("gate node").to_vec(),
            channel_decode: tape.gate_mask(self.t_cd).expect("gate node").to_vec(),
            time_decode: tape.gate_mask(self.t_td).expect("gate node").to_vec(),
        }
    }
}

/// All intermediate tensors of one forward pass, with gate masks.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T: Scalar> {
    pub t_te: Tensor<T>,
    pub t_t: Tensor<T>,
    pub t_ce1: Tensor<T>,
    pub t_ce2: Tensor<T>,
    pub t_ce: Tensor<T>,
    pub t_e: Tensor<T>,
    pub r_b: Tensor<T>,
    pub t_cd: Tensor<T>,
    pub t_pre: Tensor<T>,
    pub t_td: Tensor<T>,
    pub t_out: Tensor<T>,
    pub masks: GateMasks,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn from_ids(tape: &Tape<T>, ids: &TraceIds) -> Self {
        ForwardTrace {
            t_te: tape.tensor(ids.t_te),
            t_t: tape.tensor(ids.t_t),
            t_ce1: tape.tensor(ids.t_ce1),
            t_ce2: tape.tensor(ids.t_ce2),
            t_ce: tape.tensor(ids.t_ce),
            t_e: tape.tensor(ids.t_e),
            r_b: tape.tensor(ids.r_b),
            t_cd: tape.tensor(ids.t_cd),
            t_pre: tape.tensor(ids.t_pre),
            t_td: tape.tensor(ids.t_td),
            t_out: tape.tensor(ids.t_out),
            masks: ids.masks(tape),
        }
    }
}

fn check_batch<T: Scalar>(batch: &WindowBatch<T>, cfg: &ModelConfig) -> Result<usize> {
    let xs = batch.x.shape();
    if xs.len() != 3 || xs[1] != cfg.channels || xs[2] != cfg.lookback {
        return Err(Error::config(format!(
            "batch x shape {xs:?} does not match config [B, {}, {}]",
            cfg.channels, cfg.lookback
        )));
    }
    let b = xs[0];
    let ys = batch.y.shape();
    if ys != [b, cfg.channels, cfg.horizon] {
        return Err(Error::config(format!(
            "batch y shape {ys:?} does not match [{b}, {}, {}]",
            cfg.channels, cfg.horizon
        )));
    }
    if batch.hist_calendar.len() != b * cfg.lookback
        || batch.fut_calendar.len() != b * cfg.horizon
        || batch.store_ids.len() != b
        || batch.item_ids.len() != cfg.channels
    {
        return Err(Error::config(
            "batch calendar/id lengths do not match extents".to_string(),
        ));
    }
    Ok(b)
}

/// Full composed forward pass over registered parameter ids.
pub fn forward_ids<T: Scalar>(
    tape: &mut Tape<T>,
    ids: &ParamIds,
    batch: &WindowBatch<T>,
    cfg: &ModelConfig,
    mode: GateMode<'_>,
    zero_embeddings: bool,
) -> Result<TraceIds> {
    check_batch(batch, cfg)?;
    let x = tape.constant(batch.x.clone());
    let emb = embed_batch(tape, &ids.embed, batch, cfg, zero_embeddings)?;
    let te = time_encode(tape, x, emb.hist_date, emb.hist_store, &ids.time_encode, cfg, mode)?;
    let ce = channel_encode(
        tape,
        te.t_t,
        emb.item,
        &ids.channel_encode_1,
        &ids.channel_encode_2,
        cfg,
        mode,
    )?;
    let r_b = match &ids.block {
        BlockOf::Mlp { time_mix, channel_mix } => {
            nonlinear_block_mlp(tape, ce.t_e, time_mix, channel_mix)?
        }
        BlockOf::Transformer { layers } => {
            nonlinear_block_transformer(tape, ce.t_e, layers, cfg)?.0
        }
    };
    let cd = channel_decode(tape, r_b, te.t_t, ce.t_ce2, &ids.channel_decode, cfg, mode)?;
    let td = time_decode(
        tape,
        cd.t_pre,
        emb.fut_date,
        emb.fut_store,
        &ids.time_decode,
        cfg,
        mode,
    )?;
    Ok(TraceIds {
        t_te: te.t_te,
        t_t: te.t_t,
        t_ce1: ce.t_ce1,
        t_ce2: ce.t_ce2,
        t_ce: ce.t_ce,
        t_e: ce.t_e,
        r_b,
        t_cd: cd.t_cd,
        t_pre: cd.t_pre,
        t_td: td.t_td,
        t_out: td.t_out,
    })
}

/// One-call inference: forward a batch and materialize the full trace.
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    batch: &WindowBatch<T>,
) -> Result<(Tensor<T>, ForwardTrace<T>)> {
    let mut tape = Tape::new();
    let ids = params.register(&mut tape);
    let trace = forward_ids(&mut tape, &ids, batch, cfg, GateMode::TopK, false)?;
    Ok((
        tape.tensor(trace.t_out),
        ForwardTrace::from_ids(&tape, &trace),
    ))
}

// ── Three-layer MLP ablation ────────────────────────────────────────────

/// Parameters of the flattened three-layer MLP ablation:
/// `[C*T] -> hidden -> hidden -> [C*P]` with ReLU between layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp3Of<S> {
    pub layers: [AffineOf<S>; 3],
}

pub type Mlp3Params<T> = Mlp3Of<Tensor<T>>;
pub type Mlp3Ids = Mlp3Of<NodeId>;

impl<S> Mlp3Of<S> {
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a S)) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&format!("mlp3.{i}"), f);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(String, &'a mut S)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&format!("mlp3.{i}"), f);
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&S) -> U) -> Mlp3Of<U> {
        Mlp3Of {
            layers: [
                self.layers[0].map(&mut f),
                self.layers[1].map(&mut f),
                self.layers[2].map(&mut f),
            ],
        }
    }
}

/// Default hidden width of the three-layer MLP: 4 * C * T'.
pub fn mlp3_default_hidden(cfg: &ModelConfig) -> usize {
    4 * cfg.channels * cfg.t_compressed()
}

impl<T: Scalar> Mlp3Params<T> {
    pub fn seeded(cfg: &ModelConfig, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        let input = cfg.channels * cfg.lookback;
        let output = cfg.channels * cfg.horizon;
        Ok(Mlp3Of {
            layers: [
                init_affine(input, hidden, rng)?,
                init_affine(hidden, hidden, rng)?,
                init_affine(hidden, output, rng)?,
            ],
        })
    }

    pub fn register(&self, tape: &mut Tape<T>) -> Mlp3Ids {
        self.map(|t| tape.leaf(t.clone(), true))
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }
}

/// Forward pass of the three-layer MLP ablation.
pub fn mlp3_forward<T: Scalar>(
    tape: &mut Tape<T>,
    ids: &Mlp3Ids,
    batch: &WindowBatch<T>,
    cfg: &ModelConfig,
) -> Result<NodeId> {
    let b = check_batch(batch, cfg)?;
    let x = tape.constant(batch.x.clone());
    let flat = tape.reshape(x, &[b, 1, cfg.channels * cfg.lookback])?;
    let mut h = flat;
    for (i, layer) in ids.layers.iter().enumerate() {
        let z = tape.matmul(h, layer.weight)?;
        h = tape.add_bias(z, layer.bias)?;
        if i < 2 {
            h = tape.relu(h);
        }
    }
    tape.reshape(h, &[b, cfg.channels, cfg.horizon])
}
