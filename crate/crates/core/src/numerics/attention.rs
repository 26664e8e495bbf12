//! Scaled dot-product and multi-head attention, plus sinusoidal positions.

use super::{DType, NumericsError, Parameters, Tape, Tensor, Var};

/// Projection weights of one attention layer as recorded on a tape.
///
/// Head `i` projects with `query[i]`, `key[i]`, `value[i]`
/// (each `d_model × d_model/h`); the concatenated heads go through `output`.
#[derive(Debug, Clone)]
pub struct AttentionVars {
    pub query: Vec<Var>,
    pub key: Vec<Var>,
    pub value: Vec<Var>,
    pub output: Var,
}

impl AttentionVars {
    /// Records the parameters `{prefix}.wq.{i}`, `.wk.{i}`, `.wv.{i}` and `{prefix}.wo`.
    pub fn record(tape: &mut Tape, params: &Parameters, prefix: &str, heads: usize) -> Result<Self, NumericsError> {
        let mut fetch = |name: String| -> Result<Var, NumericsError> {
            let t = params
                .get(&name)
                .ok_or_else(|| NumericsError::Config(format!("missing attention parameter {name}")))?;
            Ok(tape.param(&name, t.clone()))
        };
        let mut query = Vec::with_capacity(heads);
        let mut key = Vec::with_capacity(heads);
        let mut value = Vec::with_capacity(heads);
        for i in 0..heads {
            query.push(fetch(format!("{prefix}.wq.{i}"))?);
            key.push(fetch(format!("{prefix}.wk.{i}"))?);
            value.push(fetch(format!("{prefix}.wv.{i}"))?);
        }
        let output = fetch(format!("{prefix}.wo"))?;
        Ok(Self { query, key, value, output })
    }

    pub fn heads(&self) -> usize {
        self.query.len()
    }
}

/// Shapes of the attention parameters for a `d_model`-wide layer with `heads` heads.
pub fn attention_param_shapes(
    prefix: &str,
    d_model: usize,
    heads: usize,
) -> Result<Vec<(String, Vec<usize>)>, NumericsError> {
    if heads == 0 || !d_model.is_multiple_of(heads) {
        return Err(NumericsError::Config(format!("model dimension {d_model} is not divisible by {heads} heads")));
    }
    let d_k = d_model / heads;
    let mut out = Vec::with_capacity(3 * heads + 1);
    for i in 0..heads {
        for w in ["wq", "wk", "wv"] {
            out.push((format!("{prefix}.{w}.{i}"), vec![d_model, d_k]));
        }
    }
    out.push((format!("{prefix}.wo"), vec![d_model, d_model]));
    Ok(out)
}

/// `softmax(q·kᵀ / √d_k) · v` on the tape.
pub fn attend(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var, NumericsError> {
    let (_, d_k) = tape.value(q).dims2();
    let (_, d_k2) = tape.value(k).dims2();
    if d_k != d_k2 {
        return Err(NumericsError::Shape(format!("query width {d_k} vs key width {d_k2}")));
    }
    let (k_rows, _) = tape.value(k).dims2();
    let (v_rows, _) = tape.value(v).dims2();
    if k_rows != v_rows {
        return Err(NumericsError::Shape(format!("{k_rows} keys but {v_rows} values")));
    }
    let scores = tape.matmul_t(q, k)?;
    let scaled = tape.scale(scores, 1.0 / (d_k as f64).sqrt())?;
    let weights = tape.softmax_rows(scaled)?;
    tape.matmul(weights, v)
}

/// `Concat(head_1, …, head_h) · W^O` with `head_i = attend(x_q W_i^Q, x_k W_i^K, x_v W_i^V)`.
pub fn multi_head(tape: &mut Tape, x_q: Var, x_k: Var, x_v: Var, w: &AttentionVars) -> Result<Var, NumericsError> {
    let (_, d_model) = tape.value(x_q).dims2();
    let heads = w.heads();
    if heads == 0 || d_model % heads != 0 {
        return Err(NumericsError::Config(format!("model dimension {d_model} is not divisible by {heads} heads")));
    }
    let mut outs = Vec::with_capacity(heads);
    for i in 0..heads {
        let q = tape.matmul(x_q, w.query[i])?;
        let k = tape.matmul(x_k, w.key[i])?;
        let v = tape.matmul(x_v, w.value[i])?;
        outs.push(attend(tape, q, k, v)?);
    }
    let concat = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    tape.matmul(concat, w.output)
}

/// Tensor-level [`attend`].
pub fn scaled_dot_product_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor, NumericsError> {
    let mut tape = Tape::new();
    let (q, k, v) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
    let out = attend(&mut tape, q, k, v)?;
    Ok(tape.value(out).clone())
}

/// Tensor-level [`multi_head`] reading `{prefix}.*` projections from `params`.
pub fn multi_head_attention(
    x_q: &Tensor,
    x_k: &Tensor,
    x_v: &Tensor,
    params: &Parameters,
    prefix: &str,
    heads: usize,
) -> Result<Tensor, NumericsError> {
    let (_, d_model) = x_q.dims2();
    if heads == 0 || d_model % heads != 0 {
        return Err(NumericsError::Config(format!("model dimension {d_model} is not divisible by {heads} heads")));
    }
    let mut tape = Tape::new();
    let w = AttentionVars::record(&mut tape, params, prefix, heads)?;
    let (q, k, v) = (tape.constant(x_q.clone()), tape.constant(x_k.clone()), tape.constant(x_v.clone()));
    let out = multi_head(&mut tape, q, k, v, &w)?;
    Ok(tape.value(out).clone())
}

/// Sinusoidal position table: `sin(pos / 10000^(2i/d))` at column `2i`, `cos` at `2i+1`.
pub fn sinusoidal_positions(seq_len: usize, d_model: usize, dtype: DType) -> Result<Tensor, NumericsError> {
    if !d_model.is_multiple_of(2) {
        return Err(NumericsError::Config(format!("d_model {d_model} must be even")));
    }
    let mut data = Vec::with_capacity(seq_len * d_model);
    for pos in 0..seq_len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data.push(angle.sin());
            data.push(angle.cos());
        }
    }
    Tensor::with_dtype(vec![seq_len, d_model], data, dtype)
}
