//! On-disk layout: 8-byte LE header length, UTF-8 JSON header, raw buffer.
//!
//! Header JSON maps each tensor name to `{"data_offsets": [begin, end],
//! "dtype": "F32"|"F16", "shape": [..]}` plus an optional `"__metadata__"`
//! string map. Offsets are relative to the data buffer, scalars are
//! little-endian and row-major.

use crate::error::{Error, Result};
use crate::tensorio::{Dtype, Tensor, TensorArchive};
use half::f16;
use serde_json::{json, Map, Value};
use std::fs;
use std::path::Path;

/// One tensor as declared in the header, offsets relative to the data buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct HeaderEntry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub begin: usize,
    pub end: usize,
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<TensorArchive> {
    let bytes = fs::read(path)?;
    read_archive_bytes(&bytes)
}

/// Parse just the header: tensor entries, metadata, and the buffer start.
pub fn read_header(
    bytes: &[u8],
) -> Result<(Vec<HeaderEntry>, std::collections::BTreeMap<String, String>, usize)> {
    if bytes.len() < 8 {
        return Err(Error::MalformedHeader(
            "file shorter than 8-byte length prefix".into(),
        ));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap());
    let header_end = 8u64
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or_else(|| {
            Error::MalformedHeader(format!(
                "declared header length {header_len} exceeds file size {}",
                bytes.len()
            ))
        })? as usize;
    let header_text = std::str::from_utf8(&bytes[8..header_end])
        .map_err(|_| Error::MalformedHeader("header is not valid UTF-8".into()))?;
    let header: Value = serde_json::from_str(header_text)
        .map_err(|e| Error::MalformedHeader(format!("header is not valid JSON: {e}")))?;
    let header = header
        .as_object()
        .ok_or_else(|| Error::MalformedHeader("header is not a JSON object".into()))?;

    let mut entries = Vec::new();
    let mut metadata = std::collections::BTreeMap::new();

    for (name, entry) in header {
        if name == "__metadata__" {
            let map = entry.as_object().ok_or_else(|| {
                Error::MalformedHeader("__metadata__ is not an object".into())
            })?;
            for (k, v) in map {
                let v = v.as_str().ok_or_else(|| {
                    Error::MalformedHeader(format!("metadata value for {k:?} is not a string"))
                })?;
                metadata.insert(k.clone(), v.to_string());
            }
            continue;
        }
        let entry = entry.as_object().ok_or_else(|| {
            Error::MalformedHeader(format!("entry for {name:?} is not an object"))
        })?;
        let dtype_str = entry
            .get("dtype")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::MalformedHeader(format!("{name:?} missing dtype")))?;
        let dtype = Dtype::parse(dtype_str)?;
        let shape: Vec<usize> = entry
            .get("shape")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::MalformedHeader(format!("{name:?} missing shape")))?
            .iter()
            .map(|v| {
                v.as_u64()
                    .map(|n| n as usize)
                    .ok_or_else(|| Error::MalformedHeader(format!("{name:?} bad shape entry")))
            })
            .collect::<Result<_>>()?;
        let offsets = entry
            .get("data_offsets")
            .and_then(Value::as_array)
            .filter(|a| a.len() == 2)
            .ok_or_else(|| Error::MalformedHeader(format!("{name:?} missing data_offsets")))?;
        let begin = offsets[0].as_u64().ok_or_else(|| {
            Error::MalformedHeader(format!("{name:?} bad data_offsets"))
        })? as usize;
        let end = offsets[1].as_u64().ok_or_else(|| {
            Error::MalformedHeader(format!("{name:?} bad data_offsets"))
        })? as usize;

        entries.push(HeaderEntry {
            name: name.clone(),
            dtype,
            shape,
            begin,
            end,
        });
    }
    Ok((entries, metadata, header_end))
}

pub fn read_archive_bytes(bytes: &[u8]) -> Result<TensorArchive> {
    let (entries, metadata, data_start) = read_header(bytes)?;
    let buffer = &bytes[data_start..];

    let mut archive = TensorArchive::new();
    for (k, v) in metadata {
        archive.set_metadata(k, v);
    }

    let mut ranges: Vec<(usize, usize, &str)> = Vec::new();
    for entry in &entries {
        let HeaderEntry {
            name,
            dtype,
            shape,
            begin,
            end,
        } = entry;
        let (begin, end) = (*begin, *end);
        let elements = shape.iter().try_fold(1usize, |acc, &d| {
            acc.checked_mul(d)
                .ok_or_else(|| Error::MalformedHeader(format!("{name:?} shape overflows")))
        })?;
        let expected_bytes = elements
            .checked_mul(dtype.byte_width())
            .ok_or_else(|| Error::MalformedHeader(format!("{name:?} shape overflows")))?;
        if end < begin || end > buffer.len() {
            return Err(Error::OffsetOverlap(format!(
                "{name:?} range {begin}..{end} exceeds buffer of {} bytes",
                buffer.len()
            )));
        }
        if end - begin != expected_bytes {
            return Err(Error::OffsetOverlap(format!(
                "{name:?} range {begin}..{end} holds {} bytes, shape {shape:?} ({}) needs {expected_bytes}",
                end - begin,
                dtype.as_str()
            )));
        }
        let raw = &buffer[begin..end];
        let data: Vec<f32> = match dtype {
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            Dtype::F16 => raw
                .chunks_exact(2)
                .map(|c| f16::from_bits(u16::from_le_bytes(c.try_into().unwrap())).to_f32())
                .collect(),
        };
        ranges.push((begin, end, name));
        archive.insert(name.clone(), Tensor::new(*dtype, shape.clone(), data)?)?;
    }

    ranges.sort();
    for pair in ranges.windows(2) {
        let (_, end_a, name_a) = pair[0];
        let (begin_b, _, name_b) = pair[1];
        if begin_b < end_a {
            return Err(Error::OffsetOverlap(format!(
                "{name_a:?} and {name_b:?} byte ranges overlap"
            )));
        }
    }
    Ok(archive)
}

pub fn write_archive(archive: &TensorArchive, path: impl AsRef<Path>) -> Result<()> {
    let bytes = write_archive_bytes(archive);
    fs::write(path, bytes)?;
    Ok(())
}

/// Serialize in canonical form: header keys sorted, tensor data packed
/// contiguously in sorted-name order.
pub fn write_archive_bytes(archive: &TensorArchive) -> Vec<u8> {
    // serde_json's Map keeps keys sorted, which is exactly the canonical order
    let mut header = Map::new();
    if !archive.metadata().is_empty() {
        let meta: Map<String, Value> = archive
            .metadata()
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        header.insert("__metadata__".into(), Value::Object(meta));
    }

    let mut buffer = Vec::new();
    for (name, tensor) in archive.iter() {
        let begin = buffer.len();
        match tensor.dtype() {
            Dtype::F32 => {
                for &v in tensor.data() {
                    buffer.extend_from_slice(&v.to_le_bytes());
                }
            }
            Dtype::F16 => {
                for &v in tensor.data() {
                    buffer.extend_from_slice(&f16::from_f32(v).to_bits().to_le_bytes());
                }
            }
        }
        header.insert(
            name.to_string(),
            json!({
                "data_offsets": [begin, buffer.len()],
                "dtype": tensor.dtype().as_str(),
                "shape": tensor.shape(),
            }),
        );
    }

    let header_text = Value::Object(header).to_string();
    let mut out = Vec::with_capacity(8 + header_text.len() + buffer.len());
    out.extend_from_slice(&(header_text.len() as u64).to_le_bytes());
    out.extend_from_slice(header_text.as_bytes());
    out.extend_from_slice(&buffer);
    out
}
