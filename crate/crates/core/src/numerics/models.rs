//! The toy model family: an MLP classifier, an attention classifier and a
//! masked-token model with segment embeddings and a next-sentence head.
//!
//! Every model returns an unnormalized loss sum together with its weight so
//! that ranks with different batch sizes can be combined exactly.

use std::collections::BTreeMap;

use super::attention::{attention_param_shapes, multi_head, sinusoidal_positions, AttentionVars};
use super::{DType, Gradients, NumericsError, ParamShape, Parameters, Tape, Tensor, Var};
use crate::checkpoint::SeededRng;
use crate::data::Record;
use crate::registry::Registry;

/// What a rank's loss weight counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightPolicy {
    Sentences,
    Tokens,
}

impl WeightPolicy {
    pub fn code(self) -> u8 {
        match self {
            WeightPolicy::Sentences => 0,
            WeightPolicy::Tokens => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(WeightPolicy::Sentences),
            1 => Some(WeightPolicy::Tokens),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WeightPolicy::Sentences => "sentences",
            WeightPolicy::Tokens => "tokens",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sentences" => Some(WeightPolicy::Sentences),
            "tokens" => Some(WeightPolicy::Tokens),
            _ => None,
        }
    }
}

/// Architecture description; every parameter shape follows from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub arch: String,
    /// MLP widths, input first and class count last.
    pub layers: Vec<usize>,
    pub vocab_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub max_len: usize,
    pub ffn_dim: usize,
    pub num_classes: usize,
    /// Whether the masked-token model adds the next-sentence loss.
    pub nsp: bool,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub dtype: DType,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            arch: "mlp".into(),
            layers: vec![20, 64, 5],
            vocab_size: 64,
            d_model: 16,
            heads: 2,
            max_len: 32,
            ffn_dim: 32,
            num_classes: 2,
            nsp: true,
            dropout: 0.0,
            label_smoothing: 0.0,
            dtype: DType::F64,
        }
    }
}

impl ModelSpec {
    pub fn mlp(layers: Vec<usize>) -> Self {
        Self { arch: "mlp".into(), layers, ..Self::default() }
    }

    pub fn attention_classifier(
        vocab_size: usize,
        d_model: usize,
        heads: usize,
        max_len: usize,
        num_classes: usize,
    ) -> Self {
        Self {
            arch: "attention_classifier".into(),
            vocab_size,
            d_model,
            heads,
            max_len,
            ffn_dim: 2 * d_model,
            num_classes,
            ..Self::default()
        }
    }

    pub fn masked_token_model(vocab_size: usize, d_model: usize, heads: usize, max_len: usize) -> Self {
        Self {
            arch: "masked_token_model".into(),
            vocab_size,
            d_model,
            heads,
            max_len,
            ffn_dim: 2 * d_model,
            ..Self::default()
        }
    }

    /// `key=value` pairs in a fixed order (the checkpoint spec block).
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let layers = self.layers.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("model".into(), self.arch.clone()),
            ("mlp_layers".into(), layers),
            ("vocab_size".into(), self.vocab_size.to_string()),
            ("d_model".into(), self.d_model.to_string()),
            ("heads".into(), self.heads.to_string()),
            ("max_len".into(), self.max_len.to_string()),
            ("ffn_dim".into(), self.ffn_dim.to_string()),
            ("num_classes".into(), self.num_classes.to_string()),
            ("nsp".into(), self.nsp.to_string()),
            ("dropout".into(), format!("{:?}", self.dropout)),
            ("label_smoothing".into(), format!("{:?}", self.label_smoothing)),
            ("dtype".into(), self.dtype.name().into()),
        ]
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self, NumericsError> {
        fn field<T: std::str::FromStr>(pairs: &BTreeMap<String, String>, key: &str) -> Result<T, NumericsError> {
            let raw = pairs.get(key).ok_or_else(|| NumericsError::Config(format!("model spec lacks {key}")))?;
            raw.parse().map_err(|_| NumericsError::Config(format!("bad {key}: {raw}")))
        }
        let layers_raw: String = field(pairs, "mlp_layers")?;
        let layers = if layers_raw.is_empty() {
            Vec::new()
        } else {
            layers_raw
                .split(',')
                .map(|x| x.trim().parse().map_err(|_| NumericsError::Config(format!("bad mlp_layers: {layers_raw}"))))
                .collect::<Result<_, _>>()?
        };
        let dtype_raw: String = field(pairs, "dtype")?;
        Ok(Self {
            arch: field(pairs, "model")?,
            layers,
            vocab_size: field(pairs, "vocab_size")?,
            d_model: field(pairs, "d_model")?,
            heads: field(pairs, "heads")?,
            max_len: field(pairs, "max_len")?,
            ffn_dim: field(pairs, "ffn_dim")?,
            num_classes: field(pairs, "num_classes")?,
            nsp: field(pairs, "nsp")?,
            dropout: field(pairs, "dropout")?,
            label_smoothing: field(pairs, "label_smoothing")?,
            dtype: DType::parse(&dtype_raw).ok_or_else(|| NumericsError::Config(format!("bad dtype {dtype_raw}")))?,
        })
    }
}

/// Per-call forward options.
pub struct ForwardCtx<'a> {
    pub policy: WeightPolicy,
    /// Source of dropout masks; `None` disables dropout.
    pub rng: Option<&'a mut SeededRng>,
}

impl ForwardCtx<'_> {
    pub fn plain(policy: WeightPolicy) -> Self {
        Self { policy, rng: None }
    }
}

pub struct ForwardOutput {
    pub loss: Var,
    pub weight: f64,
}

pub trait Model: Send + Sync {
    fn spec(&self) -> &ModelSpec;

    fn parameter_shapes(&self) -> Vec<ParamShape>;

    /// Records the summed loss of `batch` on `tape`.
    fn forward(
        &self,
        tape: &mut Tape,
        params: &Parameters,
        batch: &[Record],
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<ForwardOutput, NumericsError>;
}

pub type ModelFactory = fn(&ModelSpec) -> Result<Box<dyn Model>, NumericsError>;

pub fn model_registry() -> Registry<ModelFactory> {
    Registry::<ModelFactory>::new("model")
        .with("mlp", |s| Ok(Box::new(Mlp::new(s)?)))
        .with("attention_classifier", |s| Ok(Box::new(AttentionClassifier::new(s)?)))
        .with("masked_token_model", |s| Ok(Box::new(MaskedTokenModel::new(s)?)))
}

pub fn build_model(spec: &ModelSpec) -> Result<Box<dyn Model>, NumericsError> {
    let registry = model_registry();
    let factory = registry.get(&spec.arch).map_err(|e| NumericsError::Config(e.to_string()))?;
    factory(spec)
}

/// A recorded forward pass.
pub struct Forward {
    pub tape: Tape,
    pub loss: Var,
    /// Unnormalized loss summed over the batch.
    pub loss_sum: f64,
    pub weight: f64,
}

pub fn model_forward(
    model: &dyn Model,
    params: &Parameters,
    batch: &[Record],
    ctx: &mut ForwardCtx<'_>,
) -> Result<Forward, NumericsError> {
    if batch.is_empty() {
        return Err(NumericsError::Input("empty batch; ranks without data take the dummy path".into()));
    }
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, params, batch, ctx)?;
    let loss_sum = tape.value(out.loss).data()[0];
    if !loss_sum.is_finite() {
        return Err(NumericsError::NonFinite("loss".into()));
    }
    Ok(Forward { tape, loss: out.loss, loss_sum, weight: out.weight })
}

/// ∂loss_sum/∂θ for every parameter.
pub fn backward(forward: &Forward, params: &Parameters) -> Result<Gradients, NumericsError> {
    forward.tape.backward(forward.loss, params)
}

fn record_params(tape: &mut Tape, params: &Parameters, names: &[&str]) -> Result<Vec<Var>, NumericsError> {
    names
        .iter()
        .map(|n| {
            let t = params.get(n).ok_or_else(|| NumericsError::Config(format!("missing parameter {n}")))?;
            Ok(tape.param(n, t.clone()))
        })
        .collect()
}

fn dropout(tape: &mut Tape, x: Var, rate: f64, ctx: &mut ForwardCtx<'_>) -> Result<Var, NumericsError> {
    let Some(rng) = ctx.rng.as_deref_mut() else { return Ok(x) };
    if rate <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - rate;
    let mask = (0..tape.value(x).len()).map(|_| if rng.next_f64() < keep { 1.0 / keep } else { 0.0 }).collect();
    tape.mask(x, mask)
}

fn input_err(e: crate::data::DataError) -> NumericsError {
    NumericsError::Input(e.to_string())
}

fn sum_losses(tape: &mut Tape, losses: Vec<Var>, dtype: DType) -> Result<Var, NumericsError> {
    let mut iter = losses.into_iter();
    let Some(mut acc) = iter.next() else { return Ok(tape.constant(Tensor::scalar(0.0, dtype))) };
    for l in iter {
        acc = tape.add(acc, l)?;
    }
    Ok(acc)
}

fn policy_weight(batch: &[Record], policy: WeightPolicy) -> f64 {
    match policy {
        WeightPolicy::Sentences => batch.len() as f64,
        WeightPolicy::Tokens => batch.iter().map(|r| r.token_len as f64).sum(),
    }
}

/// Fully connected ReLU network over a dense feature field `x` with class label `y`.
pub struct Mlp {
    spec: ModelSpec,
}

impl Mlp {
    pub fn new(spec: &ModelSpec) -> Result<Self, NumericsError> {
        if spec.layers.len() < 2 || spec.layers.contains(&0) {
            return Err(NumericsError::Config(format!("mlp needs ≥2 nonzero widths, got {:?}", spec.layers)));
        }
        Ok(Self { spec: spec.clone() })
    }
}

impl Model for Mlp {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn parameter_shapes(&self) -> Vec<ParamShape> {
        self.spec
            .layers
            .windows(2)
            .enumerate()
            .flat_map(|(i, w)| {
                [
                    ParamShape::weight(format!("l{i}.w"), vec![w[0], w[1]], w[0]),
                    ParamShape::bias(format!("l{i}.b"), w[1]),
                ]
            })
            .collect()
    }

    fn forward(
        &self,
        tape: &mut Tape,
        params: &Parameters,
        batch: &[Record],
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<ForwardOutput, NumericsError> {
        let d_in = self.spec.layers[0];
        let mut features = Vec::with_capacity(batch.len() * d_in);
        let mut labels = Vec::with_capacity(batch.len());
        for r in batch {
            let x = r.f64s("x").map_err(input_err)?;
            if x.len() != d_in {
                return Err(NumericsError::Shape(format!("feature width {} but model expects {d_in}", x.len())));
            }
            features.extend(x);
            labels.push(
                *r.indices("y")
                    .map_err(input_err)?
                    .first()
                    .ok_or_else(|| NumericsError::Input("empty label".into()))?,
            );
        }
        let x = Tensor::with_dtype(vec![batch.len(), d_in], features, self.spec.dtype)?;
        let mut h = tape.constant(x);
        let n_layers = self.spec.layers.len() - 1;
        for i in 0..n_layers {
            let wb = record_params(tape, params, &[&format!("l{i}.w"), &format!("l{i}.b")])?;
            let z = tape.matmul(h, wb[0])?;
            h = tape.add_bias(z, wb[1])?;
            if i + 1 < n_layers {
                h = tape.relu(h);
                h = dropout(tape, h, self.spec.dropout, ctx)?;
            }
        }
        let loss = tape.cross_entropy(h, &labels, self.spec.label_smoothing)?;
        Ok(ForwardOutput { loss, weight: policy_weight(batch, ctx.policy) })
    }
}

/// Single-block Transformer encoder shared by the token models.
struct Encoder {
    spec: ModelSpec,
    positions: Tensor,
    segments: bool,
}

struct EncoderVars {
    tok_emb: Var,
    seg_emb: Option<Var>,
    attn: AttentionVars,
    ffn: Vec<Var>,
}

impl Encoder {
    fn new(spec: &ModelSpec, segments: bool) -> Result<Self, NumericsError> {
        if spec.vocab_size == 0 || spec.max_len == 0 || spec.ffn_dim == 0 {
            return Err(NumericsError::Config("vocab_size, max_len and ffn_dim must be nonzero".into()));
        }
        attention_param_shapes("attn", spec.d_model, spec.heads)?;
        let positions = sinusoidal_positions(spec.max_len, spec.d_model, spec.dtype)?;
        Ok(Self { spec: spec.clone(), positions, segments })
    }

    fn shapes(&self) -> Vec<ParamShape> {
        let d = self.spec.d_model;
        let f = self.spec.ffn_dim;
        let mut out = vec![ParamShape::weight("tok_emb", vec![self.spec.vocab_size, d], d)];
        if self.segments {
            // rows are the Seg_0 and Seg_1 embeddings
            out.push(ParamShape::weight("seg_emb", vec![2, d], d));
        }
        out.extend(
            attention_param_shapes("attn", d, self.spec.heads)
                .expect("validated in new")
                .into_iter()
                .map(|(name, shape)| ParamShape::weight(name, shape, d)),
        );
        out.push(ParamShape::weight("ffn.w1", vec![d, f], d));
        out.push(ParamShape::bias("ffn.b1", f));
        out.push(ParamShape::weight("ffn.w2", vec![f, d], f));
        out.push(ParamShape::bias("ffn.b2", d));
        out
    }

    fn record(&self, tape: &mut Tape, params: &Parameters) -> Result<EncoderVars, NumericsError> {
        let tok_emb = record_params(tape, params, &["tok_emb"])?[0];
        let seg_emb = if self.segments { Some(record_params(tape, params, &["seg_emb"])?[0]) } else { None };
        let attn = AttentionVars::record(tape, params, "attn", self.spec.heads)?;
        let ffn = record_params(tape, params, &["ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2"])?;
        Ok(EncoderVars { tok_emb, seg_emb, attn, ffn })
    }

    /// Hidden states (len × d_model) for one token sequence.
    fn encode(
        &self,
        tape: &mut Tape,
        vars: &EncoderVars,
        tokens: &[usize],
        segments: Option<&[usize]>,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var, NumericsError> {
        let len = tokens.len();
        if len == 0 || len > self.spec.max_len {
            return Err(NumericsError::Input(format!("sequence length {len} outside 1..={}", self.spec.max_len)));
        }
        let d = self.spec.d_model;
        let emb = tape.gather_rows(vars.tok_emb, tokens)?;
        let pos = Tensor::from_parts(vec![len, d], self.positions.data()[..len * d].to_vec(), self.spec.dtype);
        let pos = tape.constant(pos);
        let mut x = tape.add(emb, pos)?;
        if let (Some(seg_table), Some(segs)) = (vars.seg_emb, segments) {
            if segs.len() != len {
                return Err(NumericsError::Input("segment ids and tokens differ in length".into()));
            }
            let seg = tape.gather_rows(seg_table, segs)?;
            x = tape.add(x, seg)?;
        }
        let x = dropout(tape, x, self.spec.dropout, ctx)?;
        let a = multi_head(tape, x, x, x, &vars.attn)?;
        let h1 = tape.add(x, a)?;
        let f = tape.matmul(h1, vars.ffn[0])?;
        let f = tape.add_bias(f, vars.ffn[1])?;
        let f = tape.relu(f);
        let f = tape.matmul(f, vars.ffn[2])?;
        let f = tape.add_bias(f, vars.ffn[3])?;
        tape.add(h1, f)
    }
}

/// Sequence classifier: encoder, mean pooling over positions, linear output.
///
/// Record fields: `tokens` (i64 ids), `label` (i64 class).
pub struct AttentionClassifier {
    encoder: Encoder,
}

impl AttentionClassifier {
    pub fn new(spec: &ModelSpec) -> Result<Self, NumericsError> {
        if spec.num_classes < 2 {
            return Err(NumericsError::Config("attention_classifier needs ≥2 classes".into()));
        }
        Ok(Self { encoder: Encoder::new(spec, false)? })
    }
}

impl Model for AttentionClassifier {
    fn spec(&self) -> &ModelSpec {
        &self.encoder.spec
    }

    fn parameter_shapes(&self) -> Vec<ParamShape> {
        let d = self.encoder.spec.d_model;
        let mut out = self.encoder.shapes();
        out.push(ParamShape::weight("out.w", vec![d, self.encoder.spec.num_classes], d));
        out.push(ParamShape::bias("out.b", self.encoder.spec.num_classes));
        out
    }

    fn forward(
        &self,
        tape: &mut Tape,
        params: &Parameters,
        batch: &[Record],
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<ForwardOutput, NumericsError> {
        let vars = self.encoder.record(tape, params)?;
        let out = record_params(tape, params, &["out.w", "out.b"])?;
        let dtype = self.encoder.spec.dtype;
        let mut losses = Vec::with_capacity(batch.len());
        for r in batch {
            let tokens = r.indices("tokens").map_err(input_err)?;
            let label = *r
                .indices("label")
                .map_err(input_err)?
                .first()
                .ok_or_else(|| NumericsError::Input("empty label".into()))?;
            let h = self.encoder.encode(tape, &vars, &tokens, None, ctx)?;
            let n = tokens.len();
            let mean = tape.constant(Tensor::with_dtype(vec![1, n], vec![1.0 / n as f64; n], dtype)?);
            let pooled = tape.matmul(mean, h)?;
            let logits = tape.matmul(pooled, out[0])?;
            let logits = tape.add_bias(logits, out[1])?;
            losses.push(tape.cross_entropy(logits, &[label], self.encoder.spec.label_smoothing)?);
        }
        let loss = sum_losses(tape, losses, dtype)?;
        Ok(ForwardOutput { loss, weight: policy_weight(batch, ctx.policy) })
    }
}

/// Masked-token model with segment embeddings, a masked-token head over the
/// vocabulary and (optionally) a next-sentence head on the first position.
///
/// Record fields: `tokens`, `segments`, `mask_pos`, `mask_orig`, `nsp`.
/// Under the tokens policy the weight counts masked positions only.
pub struct MaskedTokenModel {
    encoder: Encoder,
}

impl MaskedTokenModel {
    pub fn new(spec: &ModelSpec) -> Result<Self, NumericsError> {
        Ok(Self { encoder: Encoder::new(spec, true)? })
    }
}

impl Model for MaskedTokenModel {
    fn spec(&self) -> &ModelSpec {
        &self.encoder.spec
    }

    fn parameter_shapes(&self) -> Vec<ParamShape> {
        let d = self.encoder.spec.d_model;
        let v = self.encoder.spec.vocab_size;
        let mut out = self.encoder.shapes();
        out.push(ParamShape::weight("mlm.w", vec![d, v], d));
        out.push(ParamShape::bias("mlm.b", v));
        if self.encoder.spec.nsp {
            out.push(ParamShape::weight("nsp.w", vec![d, 2], d));
            out.push(ParamShape::bias("nsp.b", 2));
        }
        out
    }

    fn forward(
        &self,
        tape: &mut Tape,
        params: &Parameters,
        batch: &[Record],
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<ForwardOutput, NumericsError> {
        let spec = &self.encoder.spec;
        let vars = self.encoder.record(tape, params)?;
        let mlm = record_params(tape, params, &["mlm.w", "mlm.b"])?;
        let nsp = if spec.nsp { Some(record_params(tape, params, &["nsp.w", "nsp.b"])?) } else { None };
        let mut losses = Vec::new();
        let mut masked = 0usize;
        for r in batch {
            let tokens = r.indices("tokens").map_err(input_err)?;
            let segments = r.indices("segments").map_err(input_err)?;
            let positions = r.indices("mask_pos").map_err(input_err)?;
            let originals = r.indices("mask_orig").map_err(input_err)?;
            if positions.len() != originals.len() {
                return Err(NumericsError::Input("mask_pos and mask_orig differ in length".into()));
            }
            let h = self.encoder.encode(tape, &vars, &tokens, Some(&segments), ctx)?;
            if !positions.is_empty() {
                let rows = tape.gather_rows(h, &positions)?;
                let logits = tape.matmul(rows, mlm[0])?;
                let logits = tape.add_bias(logits, mlm[1])?;
                losses.push(tape.cross_entropy(logits, &originals, spec.label_smoothing)?);
            }
            masked += positions.len();
            if let Some(nsp) = &nsp {
                let label = *r
                    .indices("nsp")
                    .map_err(input_err)?
                    .first()
                    .ok_or_else(|| NumericsError::Input("empty nsp label".into()))?;
                let cls = tape.gather_rows(h, &[0])?;
                let logits = tape.matmul(cls, nsp[0])?;
                let logits = tape.add_bias(logits, nsp[1])?;
                losses.push(tape.cross_entropy(logits, &[label], spec.label_smoothing)?);
            }
        }
        let loss = sum_losses(tape, losses, spec.dtype)?;
        let weight = match ctx.policy {
            WeightPolicy::Sentences => batch.len() as f64,
            WeightPolicy::Tokens => masked as f64,
        };
        Ok(ForwardOutput { loss, weight })
    }
}
