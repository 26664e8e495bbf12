//! Reverse-mode differentiation over a fixed set of matrix primitives.
//!
//! A [`Tape`] records every primitive application in evaluation order, so
//! walking it from the end visits nodes in reverse topological order.
//! Gradients reaching a node from several consumers are summed.

use std::collections::BTreeMap;

use super::{NumericsError, Parameters, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, transpose_rhs: bool },
    Add(Var, Var),
    Scale(Var, f64),
    AddBias { a: Var, bias: Var },
    Relu(Var),
    SoftmaxRows(Var),
    GatherRows { table: Var, rows: Vec<usize> },
    ConcatCols(Vec<Var>),
    Mask { a: Var, mask: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<usize>, epsilon: f64, probs: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    param: Option<String>,
    tracked: bool,
}

/// Per-parameter gradients, keyed like [`Parameters`].
pub type Gradients = BTreeMap<String, Tensor>;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node { value, op, param: None, tracked });
        Var(self.nodes.len() - 1)
    }

    /// Records a named parameter; its gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, name: &str, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, param: Some(name.to_string()), tracked: true });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, param: None, tracked: false });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul { a, b, transpose_rhs: false }, &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).matmul_ext(self.value(b), true)?;
        Ok(self.push(value, Op::MatMul { a, b, transpose_rhs: true }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, NumericsError> {
        let value = self.value(a).scale(s)?;
        Ok(self.push(value, Op::Scale(a, s), &[a]))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).add_row_bias(self.value(bias))?;
        Ok(self.push(value, Op::AddBias { a, bias }, &[a, bias]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).relu();
        self.push(value, Op::Relu(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).softmax_rows()?;
        Ok(self.push(value, Op::SoftmaxRows(a), &[a]))
    }

    /// Embedding lookup: row `rows[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(table);
        let (r, c) = t.dims2();
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(NumericsError::Index(format!("row {bad} of a {r}-row table")));
        }
        let data = rows.iter().flat_map(|&i| t.row(i).iter().copied()).collect();
        let value = Tensor::from_parts(vec![rows.len(), c], data, t.dtype());
        Ok(self.push(value, Op::GatherRows { table, rows: rows.to_vec() }, &[table]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = parts.first().ok_or_else(|| NumericsError::Shape("empty concat".into()))?;
        let (rows, _) = self.value(*first).dims2();
        let dtype = self.value(*first).dtype();
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).dims2().1).collect();
        if parts.iter().any(|p| self.value(*p).dims2().0 != rows) {
            return Err(NumericsError::Shape("concat: row counts differ".into()));
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let value = Tensor::from_parts(vec![rows, total], data, dtype);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var, NumericsError> {
        let t = self.value(a);
        if mask.len() != t.len() {
            return Err(NumericsError::Shape("mask length".into()));
        }
        let data = t.data().iter().zip(&mask).map(|(x, m)| t.dtype().round(x * m)).collect();
        let value = Tensor::from_parts(t.shape().to_vec(), data, t.dtype());
        value.ensure_finite("mask")?;
        Ok(self.push(value, Op::Mask { a, mask }, &[a]))
    }

    /// Summed label-smoothed cross entropy over the rows of `logits`; a 1×1 result.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], epsilon: f64) -> Result<Var, NumericsError> {
        let (total, probs) = super::loss::label_smoothed_cross_entropy_parts(self.value(logits), targets, epsilon)?;
        let dtype = probs.dtype();
        let value = Tensor::scalar(total, dtype);
        value.ensure_finite("cross_entropy")?;
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), epsilon, probs };
        Ok(self.push(value, op, &[logits]))
    }

    /// Gradients of the scalar `root` with respect to every recorded parameter.
    ///
    /// Parameters in `params` that the tape never touched get zero gradients;
    /// a recorded parameter that is missing from `params` or has a different
    /// shape is a mismatch error.
    pub fn backward(&self, root: Var, params: &Parameters) -> Result<Gradients, NumericsError> {
        let out = self.value(root);
        if out.len() != 1 {
            return Err(NumericsError::Shape(format!("backward from non-scalar {:?}", out.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::from_parts(out.shape().to_vec(), vec![1.0], out.dtype()));

        let mut result = Gradients::new();
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    if let Some(name) = &node.param {
                        accumulate_named(&mut result, name, g)?;
                    }
                }
                Op::MatMul { a, b, transpose_rhs } => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    if self.tracked(*a) {
                        // C = A·B → dA = dC·Bᵀ ; C = A·Bᵀ → dA = dC·B
                        let da = g.matmul_ext(bv, !transpose_rhs)?;
                        add_grad(&mut grads, *a, da)?;
                    }
                    if self.tracked(*b) {
                        let db = if *transpose_rhs { g.t_matmul(av)? } else { av.t_matmul(&g)? };
                        add_grad(&mut grads, *b, db)?;
                    }
                }
                Op::Add(a, b) => {
                    if self.tracked(*b) {
                        add_grad(&mut grads, *b, g.clone())?;
                    }
                    if self.tracked(*a) {
                        add_grad(&mut grads, *a, g)?;
                    }
                }
                Op::Scale(a, s) => add_grad(&mut grads, *a, g.scale(*s)?)?,
                Op::AddBias { a, bias } => {
                    if self.tracked(*bias) {
                        let shape = self.value(*bias).shape().to_vec();
                        let (_, c) = g.dims2();
                        let mut sums = vec![0.0; c];
                        for row in g.data().chunks(c) {
                            for (s, x) in sums.iter_mut().zip(row) {
                                *s += x;
                            }
                        }
                        add_grad(&mut grads, *bias, Tensor::with_dtype(shape, sums, g.dtype())?)?;
                    }
                    if self.tracked(*a) {
                        add_grad(&mut grads, *a, g)?;
                    }
                }
                Op::Relu(a) => {
                    let input = self.value(*a);
                    let data =
                        g.data().iter().zip(input.data()).map(|(d, x)| if *x > 0.0 { *d } else { 0.0 }).collect();
                    add_grad(&mut grads, *a, Tensor::from_parts(g.shape().to_vec(), data, g.dtype()))?;
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let (_, c) = y.dims2();
                    let mut data = Vec::with_capacity(y.len());
                    for (yr, gr) in y.data().chunks(c).zip(g.data().chunks(c)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        data.extend(yr.iter().zip(gr).map(|(yi, gi)| yi * (gi - dot)));
                    }
                    let dx = Tensor::with_dtype(y.shape().to_vec(), data, y.dtype())?;
                    add_grad(&mut grads, *a, dx)?;
                }
                Op::GatherRows { table, rows } => {
                    let t = self.value(*table);
                    let (_, c) = t.dims2();
                    let mut data = vec![0.0; t.len()];
                    for (i, &r) in rows.iter().enumerate() {
                        for (dst, src) in data[r * c..(r + 1) * c].iter_mut().zip(g.row(i)) {
                            *dst += src;
                        }
                    }
                    add_grad(&mut grads, *table, Tensor::with_dtype(t.shape().to_vec(), data, t.dtype())?)?;
                }
                Op::ConcatCols(parts) => {
                    let (rows, total) = g.dims2();
                    let mut offset = 0;
                    for p in parts {
                        let (_, w) = self.value(*p).dims2();
                        if self.tracked(*p) {
                            let mut data = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                            }
                            add_grad(&mut grads, *p, Tensor::from_parts(vec![rows, w], data, g.dtype()))?;
                        }
                        offset += w;
                    }
                }
                Op::Mask { a, mask } => {
                    let data = g.data().iter().zip(mask).map(|(d, m)| d * m).collect();
                    let shape = self.value(*a).shape().to_vec();
                    add_grad(&mut grads, *a, Tensor::with_dtype(shape, data, g.dtype())?)?;
                }
                Op::CrossEntropy { logits, targets, epsilon, probs } => {
                    let upstream = g.data()[0];
                    let (_, v) = probs.dims2();
                    let off = epsilon / v as f64;
                    let mut data = probs.data().to_vec();
                    for (row, &t) in data.chunks_mut(v).zip(targets) {
                        for (c, x) in row.iter_mut().enumerate() {
                            let q = if c == t { 1.0 - epsilon + off } else { off };
                            *x = (*x - q) * upstream;
                        }
                    }
                    let shape = self.value(*logits).shape().to_vec();
                    add_grad(&mut grads, *logits, Tensor::with_dtype(shape, data, probs.dtype())?)?;
                }
            }
        }

        for (name, g) in &result {
            match params.get(name) {
                Some(p) if p.shape() == g.shape() => {}
                Some(p) => {
                    return Err(NumericsError::TapeMismatch(format!(
                        "parameter {name}: tape shape {:?}, parameter shape {:?}",
                        g.shape(),
                        p.shape()
                    )))
                }
                None => return Err(NumericsError::TapeMismatch(format!("tape parameter {name} is unknown"))),
            }
        }
        for (name, p) in params.iter() {
            result.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape().to_vec(), p.dtype()));
        }
        Ok(result)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }
}

fn add_grad(grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<(), NumericsError> {
    let slot = &mut grads[v.0];
    *slot = Some(match slot.take() {
        Some(prev) => prev.add(&g)?,
        None => g,
    });
    Ok(())
}

fn accumulate_named(result: &mut Gradients, name: &str, g: Tensor) -> Result<(), NumericsError> {
    let merged = match result.remove(name) {
        Some(prev) => prev.add(&g)?,
        None => g,
    };
    result.insert(name.to_string(), merged);
    Ok(())
}

/// Elementwise sum of two gradient sets with identical keys.
pub fn add_gradients(a: &Gradients, b: &Gradients) -> Result<Gradients, NumericsError> {
    if a.len() != b.len() {
        return Err(NumericsError::TapeMismatch("gradient sets differ".into()));
    }
    a.iter()
        .map(|(k, ga)| {
            let gb = b.get(k).ok_or_else(|| NumericsError::TapeMismatch(format!("missing {k}")))?;
            Ok((k.clone(), ga.add(gb)?))
        })
        .collect()
}

/// Zero gradients shaped like `params`.
pub fn zero_gradients(params: &Parameters) -> Gradients {
    params.iter().map(|(k, p)| (k.clone(), Tensor::zeros(p.shape().to_vec(), p.dtype()))).collect()
}

/// Flattens gradients in key order into one vector.
pub fn flatten_gradients(grads: &Gradients) -> Vec<f64> {
    grads.values().flat_map(|g| g.data().iter().copied()).collect()
}

/// Inverse of [`flatten_gradients`], using `like` for keys, shapes and dtypes.
pub fn unflatten_gradients(flat: &[f64], like: &Parameters) -> Result<Gradients, NumericsError> {
    let mut offset = 0;
    let mut out = Gradients::new();
    for (name, p) in like.iter() {
        let n = p.len();
        let chunk =
            flat.get(offset..offset + n).ok_or_else(|| NumericsError::Shape("flat gradient too short".into()))?;
        out.insert(name.clone(), Tensor::with_dtype(p.shape().to_vec(), chunk.to_vec(), p.dtype())?);
        offset += n;
    }
    if offset != flat.len() {
        return Err(NumericsError::Shape("flat gradient too long".into()));
    }
    Ok(out)
}
