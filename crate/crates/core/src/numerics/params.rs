use std::collections::BTreeMap;

use super::{DType, NumericsError, Tensor};
use crate::checkpoint::SeededRng;
use crate::codec::{put_u16, put_u32, Reader};

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform on `(−a, a)` with `a = 1/√fan_in`.
    Uniform {
        fan_in: usize,
    },
    Zero,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamShape {
    pub fn weight(name: impl Into<String>, shape: Vec<usize>, fan_in: usize) -> Self {
        Self { name: name.into(), shape, init: Init::Uniform { fan_in } }
    }

    pub fn bias(name: impl Into<String>, len: usize) -> Self {
        Self { name: name.into(), shape: vec![len], init: Init::Zero }
    }
}

/// Named model parameters in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Parameters {
    tensors: BTreeMap<String, Tensor>,
}

impl Parameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        self.tensors.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn as_map(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Serialized state dictionary: `u32 count`, then per tensor
    /// `u16 name len, name, u8 dtype, u8 rank, u32 dims[rank], payload`.
    pub fn export_state(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_u32(&mut out, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            write_tensor_block(&mut out, name, t);
        }
        out
    }

    pub fn import_state(bytes: &[u8]) -> Result<Self, NumericsError> {
        let mut r = Reader::new(bytes);
        let params = Self::read_state(&mut r)?;
        if r.remaining() != 0 {
            return Err(NumericsError::Format("trailing bytes after state dictionary".into()));
        }
        Ok(params)
    }

    pub(crate) fn read_state(r: &mut Reader<'_>) -> Result<Self, NumericsError> {
        let count = r.u32()?;
        let mut params = Self::new();
        for _ in 0..count {
            let (name, t) = read_tensor_block(r)?;
            params.insert(&name, t);
        }
        Ok(params)
    }

    /// FNV-1a over the exported state; equal digests mean equal bytes.
    pub fn digest(&self) -> u64 {
        crate::codec::fnv1a64(&self.export_state())
    }
}

pub(crate) fn write_tensor_block(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_u16(out, name.len() as u16);
    out.extend_from_slice(name.as_bytes());
    out.push(t.dtype().code());
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    out.extend_from_slice(&t.to_le_bytes());
}

pub(crate) fn read_tensor_block(r: &mut Reader<'_>) -> Result<(String, Tensor), NumericsError> {
    let name_len = r.u16()? as usize;
    let name = String::from_utf8(r.take(name_len)?.to_vec())
        .map_err(|_| NumericsError::Format("parameter name is not UTF-8".into()))?;
    let code = r.u8()?;
    let dtype = DType::from_code(code).ok_or_else(|| NumericsError::Format(format!("dtype code {code}")))?;
    let rank = r.u8()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    let n: usize = shape.iter().product();
    let payload = r.take(n * dtype.size_of())?;
    Ok((name, Tensor::from_le_bytes(shape, dtype, payload)?))
}

/// Deterministic initialization: weights uniform on `±1/√fan_in`, biases zero.
///
/// Shapes are visited in name order so the result depends only on the shape
/// list contents and the generator state.
pub fn init_parameters(shapes: &[ParamShape], dtype: DType, rng: &mut SeededRng) -> Parameters {
    let mut ordered: Vec<&ParamShape> = shapes.iter().collect();
    ordered.sort_by(|a, b| a.name.cmp(&b.name));
    let mut params = Parameters::new();
    for s in ordered {
        let n: usize = s.shape.iter().product();
        let data = match s.init {
            Init::Zero => vec![0.0; n],
            Init::Uniform { fan_in } => {
                let a = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| (rng.next_f64() * 2.0 - 1.0) * a).collect()
            }
        };
        let t = Tensor::with_dtype(s.shape.clone(), data, dtype).expect("initializer output is finite");
        params.insert(&s.name, t);
    }
    params
}
