//! Self-describing binary shard files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "HSD1" | u16 version | u16 field count F
//! F × (u8 name length, name, u8 dtype code, u8 rank)
//! u64 record count R | u64 offset of the token-length table
//! R × record: per field u32 dims[rank], then the payload
//! footer: u64 record offsets[R], u32 token lengths[R]
//! ```
//!
//! The header and footer are enough to address any record, so batching never
//! touches payloads.

use std::fs::{self, File};
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use super::record::{Field, FieldData, FieldSpec, FieldType, Record};
use super::DataError;
use crate::codec::{put_u16, put_u32, put_u64, Reader};

pub const SHARD_MAGIC: &[u8; 4] = b"HSD1";
pub const SHARD_VERSION: u16 = 1;

/// Metadata of one shard file. Holds no open file handle.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    path: PathBuf,
    schema: Vec<FieldSpec>,
    offsets: Vec<u64>,
    token_lens: Vec<u32>,
    /// End of the record region (start of the offset table).
    data_end: u64,
    file_len: u64,
}

impl Shard {
    /// Reads header and footer of an existing shard.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::open(&path)?;
        let file_len = file.metadata()?.len();

        let magic = read_vec(&mut file, 4)?;
        if magic != SHARD_MAGIC {
            return Err(DataError::Format(format!("{}: unrecognized magic {magic:02x?}", path.display())));
        }
        let head = read_vec(&mut file, 4)?;
        let mut r = Reader::new(&head);
        let version = r.u16()?;
        if version != SHARD_VERSION {
            return Err(DataError::Format(format!(
                "{}: shard version {version}, expected {SHARD_VERSION}",
                path.display()
            )));
        }
        let field_count = r.u16()?;
        let mut schema = Vec::with_capacity(field_count as usize);
        for _ in 0..field_count {
            let name_len = read_vec(&mut file, 1)?[0] as usize;
            let name = String::from_utf8(read_vec(&mut file, name_len)?)
                .map_err(|_| DataError::Format("field name is not UTF-8".into()))?;
            let tail = read_vec(&mut file, 2)?;
            let ty =
                FieldType::from_code(tail[0]).ok_or_else(|| DataError::Format(format!("dtype code {}", tail[0])))?;
            schema.push(FieldSpec { name, ty, rank: tail[1] });
        }
        let counts = read_vec(&mut file, 16)?;
        let mut r = Reader::new(&counts);
        let count = r.u64()?;
        let tl_offset = r.u64()?;
        let footer_start = tl_offset
            .checked_sub(8 * count)
            .ok_or_else(|| DataError::Format("token-length table offset precedes offset table".into()))?;
        if tl_offset + 4 * count != file_len {
            return Err(DataError::Format(format!(
                "{}: footer ends at {} but file is {file_len} bytes",
                path.display(),
                tl_offset + 4 * count
            )));
        }
        let header_end = file.stream_position()?;
        file.seek(SeekFrom::Start(footer_start))?;
        let footer = read_vec(&mut file, (12 * count) as usize)?;
        let mut fixed = Reader::new(&footer);
        let mut offsets = Vec::with_capacity(count as usize);
        for _ in 0..count {
            offsets.push(fixed.u64()?);
        }
        let mut token_lens = Vec::with_capacity(count as usize);
        for _ in 0..count {
            token_lens.push(fixed.u32()?);
        }
        let mut prev = header_end;
        for &o in &offsets {
            if o < prev || o > footer_start {
                return Err(DataError::Format(format!("{}: record offset {o} out of order", path.display())));
            }
            prev = o;
        }
        Ok(Self { path, schema, offsets, token_lens, data_end: footer_start, file_len })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn schema(&self) -> &[FieldSpec] {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn token_lens(&self) -> &[u32] {
        &self.token_lens
    }

    pub fn file_len(&self) -> u64 {
        self.file_len
    }

    /// Byte range `[start, end)` of record `i` within the file.
    pub fn record_range(&self, i: usize) -> Result<(u64, u64), DataError> {
        let start = *self.offsets.get(i).ok_or(DataError::OutOfRange { index: i as u64, len: self.len() as u64 })?;
        let end = self.offsets.get(i + 1).copied().unwrap_or(self.data_end);
        Ok((start, end))
    }

    /// Reads record `i` through a freshly opened handle.
    pub fn read_record(&self, i: usize) -> Result<Record, DataError> {
        let (start, end) = self.record_range(i)?;
        let mut file = File::open(&self.path)?;
        file.seek(SeekFrom::Start(start))?;
        let bytes = read_vec(&mut file, (end - start) as usize)?;
        self.decode_record(&bytes, self.token_lens[i])
    }

    pub(crate) fn decode_record(&self, bytes: &[u8], token_len: u32) -> Result<Record, DataError> {
        let mut r = Reader::new(bytes);
        let mut fields = Vec::with_capacity(self.schema.len());
        for spec in &self.schema {
            let mut dims = Vec::with_capacity(spec.rank as usize);
            for _ in 0..spec.rank {
                dims.push(r.u32()?);
            }
            let n: usize = dims.iter().map(|&d| d as usize).product();
            let payload = r.take(n * spec.ty.size_of())?;
            fields.push(Field { name: spec.name.clone(), dims, data: FieldData::read_le(spec.ty, payload) });
        }
        if r.remaining() != 0 {
            return Err(DataError::Format(format!("{} trailing bytes in record", r.remaining())));
        }
        Ok(Record { fields, token_len })
    }
}

/// Reader that opens its file handle on first use, so each thread owns its own.
pub struct ShardReader<'a> {
    shard: &'a Shard,
    file: Option<File>,
}

impl<'a> ShardReader<'a> {
    pub fn new(shard: &'a Shard) -> Self {
        Self { shard, file: None }
    }

    pub fn read(&mut self, i: usize) -> Result<Record, DataError> {
        let (start, end) = self.shard.record_range(i)?;
        let file = match &mut self.file {
            Some(f) => f,
            slot => slot.insert(File::open(&self.shard.path)?),
        };
        file.seek(SeekFrom::Start(start))?;
        let bytes = read_vec(file, (end - start) as usize)?;
        self.shard.decode_record(&bytes, self.shard.token_lens[i])
    }
}

pub(crate) fn read_vec(file: &mut File, n: usize) -> Result<Vec<u8>, DataError> {
    let mut buf = vec![0u8; n];
    file.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            DataError::Format("unexpected end of file".into())
        } else {
            DataError::Io(e)
        }
    })?;
    Ok(buf)
}

/// Serializes `records` (all sharing `schema`) into shard bytes.
pub fn encode_shard(schema: &[FieldSpec], records: &[Record]) -> Result<Vec<u8>, DataError> {
    for (i, rec) in records.iter().enumerate() {
        if rec.schema() != schema {
            return Err(DataError::Schema(format!("record {i} does not match the shard schema")));
        }
        for f in &rec.fields {
            let n: u64 = f.dims.iter().map(|&d| d as u64).product();
            if n != f.data.len() as u64 {
                return Err(DataError::Schema(format!("record {i} field {} has inconsistent dims", f.name)));
            }
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(SHARD_MAGIC);
    put_u16(&mut out, SHARD_VERSION);
    put_u16(&mut out, schema.len() as u16);
    for f in schema {
        out.push(f.name.len() as u8);
        out.extend_from_slice(f.name.as_bytes());
        out.push(f.ty.code());
        out.push(f.rank);
    }
    put_u64(&mut out, records.len() as u64);
    let tl_slot = out.len();
    put_u64(&mut out, 0);
    let mut offsets = Vec::with_capacity(records.len());
    for rec in records {
        offsets.push(out.len() as u64);
        for f in &rec.fields {
            for &d in &f.dims {
                put_u32(&mut out, d);
            }
            f.data.write_le(&mut out);
        }
    }
    for o in offsets {
        put_u64(&mut out, o);
    }
    let tl_offset = out.len() as u64;
    out[tl_slot..tl_slot + 8].copy_from_slice(&tl_offset.to_le_bytes());
    for rec in records {
        put_u32(&mut out, rec.token_len);
    }
    Ok(out)
}

/// Writes a shard whose schema is taken from the first record.
pub fn write_shard(records: &[Record], path: impl AsRef<Path>) -> Result<Shard, DataError> {
    let schema = records.first().map(Record::schema).unwrap_or_default();
    write_shard_with_schema(&schema, records, path)
}

pub fn write_shard_with_schema(
    schema: &[FieldSpec],
    records: &[Record],
    path: impl AsRef<Path>,
) -> Result<Shard, DataError> {
    for f in schema {
        if f.name.len() > u8::MAX as usize {
            return Err(DataError::Schema(format!("field name {} is too long", f.name)));
        }
    }
    let bytes = encode_shard(schema, records)?;
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Shard::open(path)
}
