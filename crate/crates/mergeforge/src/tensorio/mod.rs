//! Single-file tensor archives: the on-disk checkpoint unit.
//!
//! An archive is an 8-byte little-endian length prefix, a UTF-8 JSON header
//! mapping tensor names to dtype/shape/offsets, and a raw little-endian data
//! buffer. Writing is canonical: tensor entries sorted by name, data packed
//! contiguously in that order, so byte-level golden tests are possible.

mod format;

pub use format::{
    read_archive, read_archive_bytes, read_header, write_archive, write_archive_bytes,
    HeaderEntry,
};

use crate::error::{Error, Result};
use half::f16;
use std::collections::BTreeMap;

/// Element type of a stored tensor. All merge arithmetic happens in f32
/// regardless of the stored dtype.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F16,
}

impl Dtype {
    pub fn byte_width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F16 => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "F32",
            Dtype::F16 => "F16",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "F32" => Ok(Dtype::F32),
            "F16" => Ok(Dtype::F16),
            other => Err(Error::UnknownDtype(other.to_string())),
        }
    }
}

/// A dense row-major tensor. Scalars are held as f32 in memory; F16 tensors
/// hold exactly-representable f16 values widened to f32.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dtype: Dtype,
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dtype: Dtype, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvariantViolation(format!(
                "shape {:?} implies {} elements but data has {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor { dtype, shape, data })
    }

    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Tensor::new(Dtype::F32, shape, data)
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn num_elements(&self) -> usize {
        self.data.len()
    }

    /// Cast to `target`. Shape is preserved; F16 -> F32 is exact and
    /// F32 -> F16 rounds to nearest-even. Casting to the same dtype is
    /// the identity.
    pub fn cast(&self, target: Dtype) -> Tensor {
        if self.dtype == target {
            return self.clone();
        }
        let data = match target {
            // values were already exact f16, widening changes nothing
            Dtype::F32 => self.data.clone(),
            Dtype::F16 => self.data.iter().map(|&v| f16::from_f32(v).to_f32()).collect(),
        };
        Tensor {
            dtype: target,
            shape: self.shape.clone(),
            data,
        }
    }
}

fn valid_tensor_name(name: &str) -> bool {
    !name.is_empty() && !name.chars().any(|c| c.is_control())
}

/// Named collection of tensors plus free-form string metadata. Immutable
/// after load; tensor names are unique, nonempty and control-character free.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    tensors: BTreeMap<String, Tensor>,
    metadata: BTreeMap<String, String>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if !valid_tensor_name(&name) {
            return Err(Error::InvariantViolation(format!(
                "invalid tensor name {name:?}"
            )));
        }
        if self.tensors.contains_key(&name) {
            return Err(Error::InvariantViolation(format!(
                "duplicate tensor name {name:?}"
            )));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Tensors in canonical (sorted-name) order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    /// Identifier used for deterministic ordering decisions in merge drivers.
    /// Falls back to the empty string when the archive carries no id.
    pub fn model_id(&self) -> &str {
        self.metadata.get("model_id").map(String::as_str).unwrap_or("")
    }
}

/// Structural mismatch found by [`validate_compat`].
#[derive(Debug, Clone, PartialEq)]
pub enum CompatIssue {
    /// Tensor exists in some archive but not in archive `archive_index`.
    Missing { name: String, archive_index: usize },
    /// Tensor shapes disagree between archive 0 (or first holder) and `archive_index`.
    ShapeMismatch {
        name: String,
        archive_index: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompatReport {
    pub issues: Vec<CompatIssue>,
}

impl CompatReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Check that all archives share the same tensor-name set with identical
/// per-name shapes. Mismatch is reported as data, not as an error; the
/// OK/not-OK verdict is order-insensitive.
pub fn validate_compat(archives: &[&TensorArchive]) -> CompatReport {
    let mut report = CompatReport::default();
    let mut union: BTreeMap<&str, &[usize]> = BTreeMap::new();
    for archive in archives {
        for (name, tensor) in archive.iter() {
            union.entry(name).or_insert_with(|| tensor.shape());
        }
    }
    for (idx, archive) in archives.iter().enumerate() {
        for (&name, &shape) in &union {
            match archive.get(name) {
                None => report.issues.push(CompatIssue::Missing {
                    name: name.to_string(),
                    archive_index: idx,
                }),
                Some(t) if t.shape() != shape => report.issues.push(CompatIssue::ShapeMismatch {
                    name: name.to_string(),
                    archive_index: idx,
                    expected: shape.to_vec(),
                    found: t.shape().to_vec(),
                }),
                Some(_) => {}
            }
        }
    }
    report
}
