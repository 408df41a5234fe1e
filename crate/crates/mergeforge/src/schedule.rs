//! Blend schedules: an anchor list of blend ratios stretched across layer
//! depth by piecewise-linear interpolation, yielding a per-tensor
//! coefficient. Throughout, `t` is the fraction of model 1, so `t = 0`
//! means 100% of model 2's parameters.

use crate::error::{Error, Result};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct BlendSchedule {
    anchors: Vec<f64>,
    default_t: f64,
}

impl BlendSchedule {
    /// `default_t` applies to tensors without a layer index; when `None` it
    /// falls back to the schedule value at the midpoint.
    pub fn new(anchors: Vec<f64>, default_t: Option<f64>) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::InvariantViolation("anchor list is empty".into()));
        }
        if anchors.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
            return Err(Error::InvariantViolation(
                "anchors must lie in [0, 1]".into(),
            ));
        }
        if let Some(t) = default_t {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvariantViolation(
                    "default_t must lie in [0, 1]".into(),
                ));
            }
        }
        let mut s = BlendSchedule {
            anchors,
            default_t: 0.0,
        };
        s.default_t = default_t.unwrap_or_else(|| s.eval(0.5));
        Ok(s)
    }

    pub fn constant(t: f64) -> Result<Self> {
        BlendSchedule::new(vec![t], None)
    }

    pub fn anchors(&self) -> &[f64] {
        &self.anchors
    }

    pub fn default_t(&self) -> f64 {
        self.default_t
    }

    /// Piecewise-linear interpolation with anchors at equally spaced
    /// positions in [0, 1]. Anchor positions are hit exactly.
    pub fn eval(&self, position: f64) -> f64 {
        let n = self.anchors.len();
        if n == 1 {
            return self.anchors[0];
        }
        let x = position.clamp(0.0, 1.0) * (n - 1) as f64;
        let i = (x.floor() as usize).min(n - 2);
        let frac = x - i as f64;
        if frac == 0.0 {
            self.anchors[i]
        } else if frac == 1.0 {
            self.anchors[i + 1]
        } else {
            self.anchors[i] + frac * (self.anchors[i + 1] - self.anchors[i])
        }
    }
}

/// Layer index per tensor name, detected as the first dotted path segment
/// that parses as a base-10 integer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerMap {
    entries: BTreeMap<String, Option<usize>>,
    layer_count: usize,
}

pub fn layer_index_of(name: &str) -> Option<usize> {
    name.split('.').find_map(|seg| seg.parse::<usize>().ok())
}

impl LayerMap {
    pub fn from_names<'a>(names: impl IntoIterator<Item = &'a str>) -> Self {
        let mut entries = BTreeMap::new();
        let mut max_index = None;
        for name in names {
            let idx = layer_index_of(name);
            if let Some(i) = idx {
                max_index = Some(max_index.map_or(i, |m: usize| m.max(i)));
            }
            entries.insert(name.to_string(), idx);
        }
        LayerMap {
            entries,
            layer_count: max_index.map_or(0, |m| m + 1),
        }
    }

    pub fn layer_count(&self) -> usize {
        self.layer_count
    }

    pub fn layer_of(&self, name: &str) -> Option<Option<usize>> {
        self.entries.get(name).copied()
    }
}

/// Coefficient for one tensor: layered tensors evaluate the schedule at
/// index/(layer_count−1), unlayered tensors use the schedule default.
pub fn per_tensor_t(schedule: &BlendSchedule, layers: &LayerMap, name: &str) -> Result<f64> {
    let entry = layers
        .layer_of(name)
        .ok_or_else(|| Error::UnknownTensor(name.to_string()))?;
    Ok(match entry {
        None => schedule.default_t(),
        Some(idx) => {
            let position = if layers.layer_count() <= 1 {
                0.0
            } else {
                idx as f64 / (layers.layer_count() - 1) as f64
            };
            schedule.eval(position)
        }
    })
}
