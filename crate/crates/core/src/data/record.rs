use super::DataError;

/// Element type of a record field (shard dtype codes 1, 2, 3).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldType {
    F32,
    F64,
    I64,
}

impl FieldType {
    pub fn code(self) -> u8 {
        match self {
            FieldType::F32 => 1,
            FieldType::F64 => 2,
            FieldType::I64 => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(FieldType::F32),
            2 => Some(FieldType::F64),
            3 => Some(FieldType::I64),
            _ => None,
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            FieldType::F32 => 4,
            FieldType::F64 | FieldType::I64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldType::F32 => "f32",
            FieldType::F64 => "f64",
            FieldType::I64 => "i64",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl FieldData {
    pub fn field_type(&self) -> FieldType {
        match self {
            FieldData::F32(_) => FieldType::F32,
            FieldData::F64(_) => FieldType::F64,
            FieldData::I64(_) => FieldType::I64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            FieldData::F32(v) => v.len(),
            FieldData::F64(v) => v.len(),
            FieldData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            FieldData::F32(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
            FieldData::F64(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
            FieldData::I64(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
        }
    }

    pub(crate) fn read_le(ty: FieldType, bytes: &[u8]) -> Self {
        match ty {
            FieldType::F32 => {
                FieldData::F32(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
            }
            FieldType::F64 => {
                FieldData::F64(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
            }
            FieldType::I64 => {
                FieldData::I64(bytes.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect())
            }
        }
    }
}

/// One named tensor inside a record.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: FieldData,
}

impl Field {
    pub fn new(name: &str, dims: Vec<u32>, data: FieldData) -> Result<Self, DataError> {
        let n: u64 = dims.iter().map(|&d| d as u64).product();
        if n != data.len() as u64 {
            return Err(DataError::Schema(format!(
                "field {name}: dims {dims:?} hold {n} elements, data has {}",
                data.len()
            )));
        }
        Ok(Self { name: name.to_string(), dims, data })
    }

    pub fn vector_f64(name: &str, values: Vec<f64>) -> Self {
        Self { name: name.to_string(), dims: vec![values.len() as u32], data: FieldData::F64(values) }
    }

    pub fn vector_i64(name: &str, values: Vec<i64>) -> Self {
        Self { name: name.to_string(), dims: vec![values.len() as u32], data: FieldData::I64(values) }
    }
}

/// Schema entry: field name, element type and tensor rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: String,
    pub ty: FieldType,
    pub rank: u8,
}

/// A training instance: a group of heterogeneous named tensors plus its token length.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub fields: Vec<Field>,
    pub token_len: u32,
}

impl Record {
    pub fn new(fields: Vec<Field>, token_len: u32) -> Self {
        Self { fields, token_len }
    }

    pub fn schema(&self) -> Vec<FieldSpec> {
        self.fields
            .iter()
            .map(|f| FieldSpec { name: f.name.clone(), ty: f.data.field_type(), rank: f.dims.len() as u8 })
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<&Field> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// Field values widened to `f64` (integers included).
    pub fn f64s(&self, name: &str) -> Result<Vec<f64>, DataError> {
        let f = self.get(name).ok_or_else(|| DataError::MissingField(name.to_string()))?;
        Ok(match &f.data {
            FieldData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            FieldData::F64(v) => v.clone(),
            FieldData::I64(v) => v.iter().map(|&x| x as f64).collect(),
        })
    }

    /// Integer field values; non-negative integers as indices.
    pub fn indices(&self, name: &str) -> Result<Vec<usize>, DataError> {
        let f = self.get(name).ok_or_else(|| DataError::MissingField(name.to_string()))?;
        match &f.data {
            FieldData::I64(v) => v
                .iter()
                .map(|&x| usize::try_from(x).map_err(|_| DataError::Schema(format!("negative index in {name}"))))
                .collect(),
            _ => Err(DataError::Schema(format!("field {name} is not integer"))),
        }
    }
}
