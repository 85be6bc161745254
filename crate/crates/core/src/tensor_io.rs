//! OMSB v1 tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "OMSB"            4 bytes magic
//! version           u8, currently 1
//! header_len        u32
//! header            header_len bytes of UTF-8 JSON
//! payload           raw tensor bytes, referenced by the header
//! ```
//!
//! The header is `{"entries": [...], "meta": {...}}` where each entry is
//! `{"name", "dtype", "shape", "offset", "length"}` and offsets are relative
//! to the start of the payload. `meta` is optional free-form JSON. See
//! `docs/omsb-format.md` for a worked hex dump.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"OMSB";
pub const VERSION: u8 = 1;

const PREFIX_LEN: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    I32,
}

impl DType {
    pub fn size(self) -> usize {
        4
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I32(Vec<i32>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I32(v) => v.len(),
        }
    }
}

/// A dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

fn element_count(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let expected = element_count(&shape).ok_or_else(|| Error::format(format!("shape {shape:?} overflows")))?;
        if expected != data.len() {
            return Err(Error::format(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        Self::new(shape, TensorData::F32(values))
    }

    pub fn from_i32(shape: Vec<usize>, values: Vec<i32>) -> Result<Self> {
        Self::new(shape, TensorData::I32(values))
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::I32(_) => DType::I32,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            TensorData::I32(_) => None,
        }
    }

    pub fn as_i32(&self) -> Option<&[i32]> {
        match &self.data {
            TensorData::I32(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }

    fn byte_length(&self) -> usize {
        self.data.len() * self.dtype().size()
    }
}

/// Named tensors plus optional JSON metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorContainer {
    entries: BTreeMap<String, Tensor>,
    meta: Option<serde_json::Value>,
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entry. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::format(format!("duplicate entry name {name:?}")));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn meta(&self) -> Option<&serde_json::Value> {
        self.meta.as_ref()
    }

    pub fn set_meta(&mut self, meta: serde_json::Value) {
        self.meta = Some(meta);
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderEntry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    entries: Vec<HeaderEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
}

/// Serializes `container` to `dest`, returning the number of bytes written.
pub fn write_container<W: Write>(container: &TensorContainer, mut dest: W) -> Result<usize> {
    let mut entries = Vec::with_capacity(container.len());
    let mut offset = 0u64;
    for (name, tensor) in container.entries() {
        if let TensorData::F32(values) = tensor.data() {
            if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::format(format!(
                    "entry {name:?} has non-finite value at element {pos}"
                )));
            }
        }
        let length = tensor.byte_length() as u64;
        entries.push(HeaderEntry {
            name: name.to_owned(),
            dtype: tensor.dtype(),
            shape: tensor.shape().to_vec(),
            offset,
            length,
        });
        offset += length;
    }
    let header = serde_json::to_vec(&Header {
        entries,
        meta: container.meta.clone(),
    })
    .map_err(|e| Error::format(format!("header encoding: {e}")))?;
    let header_len = u32::try_from(header.len()).map_err(|_| Error::format("header larger than 4 GiB"))?;

    let mut written = 0;
    dest.write_all(&MAGIC)?;
    dest.write_all(&[VERSION])?;
    dest.write_all(&header_len.to_le_bytes())?;
    dest.write_all(&header)?;
    written += PREFIX_LEN + header.len();

    for (_, tensor) in container.entries() {
        let mut buf = Vec::with_capacity(tensor.byte_length());
        match tensor.data() {
            TensorData::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            TensorData::I32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        }
        dest.write_all(&buf)?;
        written += buf.len();
    }
    Ok(written)
}

pub fn encode_container(container: &TensorContainer) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_container(container, &mut out)?;
    Ok(out)
}

fn truncated(e: io::Error, what: &str) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::format(format!("truncated {what}"))
    } else {
        Error::Io(e)
    }
}

/// Parses a container from `source`, consuming it to the end.
pub fn read_container<R: Read>(mut source: R) -> Result<TensorContainer> {
    let mut prefix = [0u8; PREFIX_LEN];
    source.read_exact(&mut prefix).map_err(|e| truncated(e, "prefix"))?;
    if prefix[..4] != MAGIC {
        return Err(Error::format(format!("bad magic {:?}", &prefix[..4])));
    }
    if prefix[4] != VERSION {
        return Err(Error::format(format!("unsupported version {}", prefix[4])));
    }
    let header_len = u32::from_le_bytes([prefix[5], prefix[6], prefix[7], prefix[8]]) as u64;

    // `take` avoids trusting header_len for an up-front allocation.
    let mut header_bytes = Vec::new();
    source.by_ref().take(header_len).read_to_end(&mut header_bytes)?;
    if (header_bytes.len() as u64) < header_len {
        return Err(Error::format("truncated header"));
    }
    let header: Header = serde_json::from_slice(&header_bytes).map_err(|e| Error::format(format!("header: {e}")))?;

    let mut payload = Vec::new();
    source.read_to_end(&mut payload)?;

    let mut seen = HashSet::new();
    let mut spans = Vec::with_capacity(header.entries.len());
    for entry in &header.entries {
        if !seen.insert(entry.name.as_str()) {
            return Err(Error::format(format!("duplicate entry name {:?}", entry.name)));
        }
        let count = element_count(&entry.shape)
            .ok_or_else(|| Error::format(format!("entry {:?}: shape overflows", entry.name)))?;
        let expected = (count as u64).checked_mul(entry.dtype.size() as u64);
        if expected != Some(entry.length) {
            return Err(Error::format(format!(
                "entry {:?}: shape {:?} does not match byte length {}",
                entry.name, entry.shape, entry.length
            )));
        }
        let end = entry
            .offset
            .checked_add(entry.length)
            .filter(|&end| end <= payload.len() as u64)
            .ok_or_else(|| {
                Error::format(format!(
                    "entry {:?} not covered by payload of {} bytes",
                    entry.name,
                    payload.len()
                ))
            })?;
        if entry.length > 0 {
            spans.push((entry.offset, end, entry.name.as_str()));
        }
    }
    spans.sort_unstable();
    for pair in spans.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(Error::format(format!(
                "entries {:?} and {:?} overlap",
                pair[0].2, pair[1].2
            )));
        }
    }

    let mut container = TensorContainer {
        entries: BTreeMap::new(),
        meta: header.meta,
    };
    for entry in header.entries {
        let bytes = &payload[entry.offset as usize..(entry.offset + entry.length) as usize];
        let words = bytes.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
        let data = match entry.dtype {
            DType::F32 => {
                let values: Vec<f32> = words.map(f32::from_le_bytes).collect();
                if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
                    return Err(Error::format(format!(
                        "entry {:?} has non-finite value at element {pos}",
                        entry.name
                    )));
                }
                TensorData::F32(values)
            }
            DType::I32 => TensorData::I32(words.map(i32::from_le_bytes).collect()),
        };
        container.entries.insert(
            entry.name,
            Tensor {
                shape: entry.shape,
                data,
            },
        );
    }
    Ok(container)
}

pub fn decode_container(bytes: &[u8]) -> Result<TensorContainer> {
    read_container(bytes)
}
