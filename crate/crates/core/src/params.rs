//! Named, ordered parameter groups with a flat view for optimizers and
//! gradient checks.

use std::ops::Range;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One parameter group: a flat array plus the shape descriptor that produced
/// it (layer widths for MLP groups, `[n, m]` for RNN/CTRNN groups).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamGroup {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Self {
        Self { shape, values }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            values: vec![0.0; self.values.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Insertion-ordered map of parameter groups. Serializes to
/// `{name: {shape, values}}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamStore {
    groups: IndexMap<String, ParamGroup>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, group: ParamGroup) {
        self.groups.insert(name.into(), group);
    }

    pub fn get(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamGroup> {
        self.groups.get_mut(name)
    }

    pub fn group(&self, name: &str) -> Result<&ParamGroup> {
        self.groups
            .get(name)
            .ok_or_else(|| Error::InvalidInput(format!("missing parameter group `{name}`")))
    }

    pub fn group_mut(&mut self, name: &str) -> Result<&mut ParamGroup> {
        self.groups
            .get_mut(name)
            .ok_or_else(|| Error::InvalidInput(format!("missing parameter group `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamGroup)> {
        self.groups.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamGroup)> {
        self.groups.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Total number of scalars over all groups.
    pub fn total_len(&self) -> usize {
        self.groups.values().map(ParamGroup::len).sum()
    }

    /// Same layout, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            groups: self
                .groups
                .iter()
                .map(|(k, g)| (k.clone(), g.zeros_like()))
                .collect(),
        }
    }

    /// Concatenate every group in iteration order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_len());
        for g in self.groups.values() {
            out.extend_from_slice(&g.values);
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten) using `self` as the layout.
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.assign_flat(flat)?;
        Ok(out)
    }

    /// Overwrite all values from a flat vector laid out like `flatten`.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.total_len() {
            return Err(Error::dim("ParamStore::unflatten", self.total_len(), flat.len()));
        }
        let mut offset = 0;
        for g in self.groups.values_mut() {
            let n = g.values.len();
            g.values.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Range each group occupies in the flat layout.
    pub fn group_ranges(&self) -> Vec<(String, Range<usize>)> {
        let mut offset = 0;
        self.groups
            .iter()
            .map(|(k, g)| {
                let r = offset..offset + g.len();
                offset = r.end;
                (k.clone(), r)
            })
            .collect()
    }

    /// True when both stores have identical group names, order and sizes.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.groups.len() == other.groups.len()
            && self
                .groups
                .iter()
                .zip(other.groups.iter())
                .all(|((ka, a), (kb, b))| ka == kb && a.shape == b.shape && a.len() == b.len())
    }

    pub fn all_finite(&self) -> bool {
        self.groups
            .values()
            .all(|g| g.values.iter().all(|v| v.is_finite()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
