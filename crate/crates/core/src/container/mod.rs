//! JSON-header tensor container (the safetensors layout).
//!
//! ```text
//! [u64 LE header length N][N bytes UTF-8 JSON][data section]
//! ```
//!
//! The header maps each tensor name to
//! `{"data_offsets":[begin,end],"dtype":"F32","shape":[..]}` with offsets
//! relative to the start of the data section; an optional `"__metadata__"`
//! entry holds a string-to-string map. Payloads are little-endian, row-major.
//!
//! Headers are written with sorted keys, no whitespace and no padding, and the
//! data section is laid out contiguously in entry order, so identical containers
//! always serialise to identical bytes.

mod artifact;
mod dtype;
mod naming;

pub use artifact::{read_artifact, write_artifact, ArtifactLayer, LayerRecord, ARTIFACT_FORMAT};
pub use dtype::{decode, encode, f64_to_bf16, f64_to_f16, Dtype};
pub use naming::{load_layer, store_layer, LayerNamingConfig, LayerTensorNames, TransposeFlags};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Largest accepted header, in bytes.
pub const MAX_HEADER_LEN: u64 = 100_000_000;
const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    bytes: Vec<u8>,
}

impl TensorEntry {
    pub fn new(dtype: Dtype, shape: Vec<usize>, bytes: Vec<u8>) -> Result<Self> {
        let expected = shape.iter().product::<usize>() * dtype.size();
        if bytes.len() != expected {
            return Err(Error::Shape(format!(
                "{dtype} tensor of shape {shape:?} needs {expected} bytes, got {}",
                bytes.len()
            )));
        }
        Ok(Self { dtype, shape, bytes })
    }

    pub fn from_tensor(t: &DenseTensor, dtype: Dtype) -> Self {
        Self {
            dtype,
            shape: t.shape().to_vec(),
            bytes: encode(dtype, t.data()),
        }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    /// Values upcast to `f64`. Scalars (shape `[]`) come back with shape `[1]`.
    pub fn to_tensor(&self) -> Result<DenseTensor> {
        let shape = if self.shape.is_empty() {
            vec![1]
        } else {
            self.shape.clone()
        };
        DenseTensor::new(shape, decode(self.dtype, &self.bytes))
    }
}

/// An in-memory checkpoint: named tensors in data-section order plus metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorContainer {
    entries: IndexMap<String, TensorEntry>,
    metadata: BTreeMap<String, String>,
}

fn parse_usize_array(v: &Value, what: &str, name: &str) -> Result<Vec<usize>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Format(format!("`{name}`: {what} is not an array")))?;
    arr.iter()
        .map(|x| {
            x.as_u64()
                .and_then(|x| usize::try_from(x).ok())
                .ok_or_else(|| Error::Format(format!("`{name}`: {what} holds a non-integer")))
        })
        .collect()
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &TensorEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn entry(&self, name: &str) -> Option<&TensorEntry> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn tensor(&self, name: &str) -> Result<DenseTensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?
            .to_tensor()
    }

    /// Inserts or replaces an entry. A replaced entry keeps its position.
    pub fn insert(&mut self, name: impl Into<String>, entry: TensorEntry) {
        self.entries.insert(name.into(), entry);
    }

    pub fn insert_tensor(&mut self, name: impl Into<String>, t: &DenseTensor, dtype: Dtype) {
        self.insert(name, TensorEntry::from_tensor(t, dtype));
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 8 {
            return Err(Error::Format(format!(
                "file is {} bytes, too short for the 8-byte header length",
                buf.len()
            )));
        }
        let header_len = u64::from_le_bytes(buf[..8].try_into().expect("8 bytes"));
        if header_len > MAX_HEADER_LEN {
            return Err(Error::Format(format!(
                "header length {header_len} exceeds the {MAX_HEADER_LEN}-byte limit"
            )));
        }
        let header_end = 8usize
            .checked_add(header_len as usize)
            .filter(|&end| end <= buf.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "header length {header_len} overflows a {}-byte file",
                    buf.len()
                ))
            })?;
        let header: Map<String, Value> = serde_json::from_slice(&buf[8..header_end])
            .map_err(|e| Error::Format(format!("header is not a JSON object: {e}")))?;
        let data = &buf[header_end..];

        let mut metadata = BTreeMap::new();
        let mut spans = Vec::new();
        for (name, value) in &header {
            if name == METADATA_KEY {
                let obj = value
                    .as_object()
                    .ok_or_else(|| Error::Format("__metadata__ is not an object".into()))?;
                for (k, v) in obj {
                    let v = v.as_str().ok_or_else(|| {
                        Error::Format(format!("metadata value for `{k}` is not a string"))
                    })?;
                    metadata.insert(k.clone(), v.to_string());
                }
                continue;
            }
            let obj = value
                .as_object()
                .ok_or_else(|| Error::Format(format!("entry `{name}` is not an object")))?;
            let dtype = obj
                .get("dtype")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::Format(format!("`{name}`: missing dtype")))?;
            let dtype = Dtype::parse(dtype)?;
            let shape = parse_usize_array(
                obj.get("shape")
                    .ok_or_else(|| Error::Format(format!("`{name}`: missing shape")))?,
                "shape",
                name,
            )?;
            let offsets = parse_usize_array(
                obj.get("data_offsets")
                    .ok_or_else(|| Error::Format(format!("`{name}`: missing data_offsets")))?,
                "data_offsets",
                name,
            )?;
            let [begin, end] = offsets[..] else {
                return Err(Error::Format(format!(
                    "`{name}`: data_offsets must have two elements"
                )));
            };
            if end < begin {
                return Err(Error::Format(format!(
                    "`{name}`: data_offsets [{begin}, {end}] are reversed"
                )));
            }
            let expected = shape
                .iter()
                .try_fold(dtype.size(), |acc, &e| acc.checked_mul(e))
                .ok_or_else(|| Error::Format(format!("`{name}`: shape overflows")))?;
            if end - begin != expected {
                return Err(Error::Format(format!(
                    "`{name}`: {} bytes in range but {dtype} shape {shape:?} needs {expected}",
                    end - begin
                )));
            }
            if end > data.len() {
                return Err(Error::OutOfBounds {
                    name: name.clone(),
                    detail: format!(
                        "data range [{begin}, {end}) exceeds the {}-byte data section",
                        data.len()
                    ),
                });
            }
            spans.push((begin, end, name.clone(), dtype, shape));
        }

        spans.sort_by(|a, b| (a.0, a.1, &a.2).cmp(&(b.0, b.1, &b.2)));
        let mut entries = IndexMap::with_capacity(spans.len());
        let mut cursor = 0usize;
        let mut prev: Option<&str> = None;
        for (begin, end, name, dtype, shape) in &spans {
            if *begin < cursor {
                return Err(Error::Format(format!(
                    "`{name}` overlaps `{}`",
                    prev.unwrap_or("?")
                )));
            }
            cursor = cursor.max(*end);
            if *end > *begin {
                prev = Some(name);
            }
            entries.insert(
                name.clone(),
                TensorEntry {
                    dtype: *dtype,
                    shape: shape.clone(),
                    bytes: data[*begin..*end].to_vec(),
                },
            );
        }
        Ok(Self { entries, metadata })
    }

    /// The canonical header JSON (sorted keys, compact).
    fn header_json(&self) -> Vec<u8> {
        let mut header = Map::new();
        if !self.metadata.is_empty() {
            let meta: Map<String, Value> = self
                .metadata
                .iter()
                .map(|(k, v)| (k.clone(), Value::String(v.clone())))
                .collect();
            header.insert(METADATA_KEY.into(), Value::Object(meta));
        }
        let mut offset = 0usize;
        for (name, e) in &self.entries {
            let end = offset + e.bytes.len();
            let mut obj = Map::new();
            obj.insert("data_offsets".into(), Value::from(vec![offset as u64, end as u64]));
            obj.insert("dtype".into(), Value::from(e.dtype.as_str()));
            obj.insert(
                "shape".into(),
                Value::from(e.shape.iter().map(|&s| s as u64).collect::<Vec<_>>()),
            );
            header.insert(name.clone(), Value::Object(obj));
            offset = end;
        }
        serde_json::to_vec(&Value::Object(header)).expect("plain JSON")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = self.header_json();
        let data_len: usize = self.entries.values().map(|e| e.bytes.len()).sum();
        let mut out = Vec::with_capacity(8 + header.len() + data_len);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for e in self.entries.values() {
            out.extend_from_slice(&e.bytes);
        }
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Writes to a sibling temporary file and renames it over `path`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file_name = path
            .file_name()
            .ok_or_else(|| Error::Format(format!("`{}` is not a file path", path.display())))?;
        let mut tmp_name = file_name.to_os_string();
        tmp_name.push(format!(".tmp{}", std::process::id()));
        let tmp = path.with_file_name(tmp_name);
        let result = (|| -> Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, path)?;
            Ok(())
        })();
        if result.is_err() {
            let _ = fs::remove_file(&tmp);
        }
        result
    }
}
