use std::ops::Range;

use crate::discrete::ComplexOps;
use crate::error::{Error, Result};
use crate::grid::EntitySpace;

/// Ordered direct sum of slot spaces; block vectors are stored by
/// concatenating the slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    slots: Vec<EntitySpace>,
    names: Vec<String>,
    offsets: Vec<usize>,
}

impl Layout {
    pub fn new(slots: Vec<EntitySpace>, names: Vec<String>) -> Self {
        assert_eq!(slots.len(), names.len());
        let mut offsets = Vec::with_capacity(slots.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for s in &slots {
            acc += s.dofs;
            offsets.push(acc);
        }
        Self {
            slots,
            names,
            offsets,
        }
    }

    fn named(slots: Vec<EntitySpace>, names: &[&str]) -> Self {
        Self::new(slots, names.iter().map(|s| s.to_string()).collect())
    }

    /// scalar ⊕ vector ⊕ vector ⊕ scalar.
    pub fn extended(ops: &ComplexOps) -> Self {
        Self::named(
            vec![
                ops.scalar0.clone(),
                ops.vector1.clone(),
                ops.vector2.clone(),
                ops.scalar3.clone(),
            ],
            &["V0", "V1", "V2", "V3"],
        )
    }

    /// (E, H).
    pub fn maxwell(ops: &ComplexOps) -> Self {
        Self::named(vec![ops.vector1.clone(), ops.vector2.clone()], &["E", "H"])
    }

    /// (C, E, H).
    pub fn gem(ops: &ComplexOps) -> Self {
        Self::named(
            vec![ops.scalar0.clone(), ops.vector1.clone(), ops.vector2.clone()],
            &["C", "E", "H"],
        )
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[EntitySpace] {
        &self.slots
    }

    pub fn slot(&self, i: usize) -> &EntitySpace {
        &self.slots[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Space of the flattened block vector.
    pub fn stacked_space(&self) -> EntitySpace {
        EntitySpace::stacked(self.len(), self.total())
    }

    /// Field components per point for each slot.
    pub fn components(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.components()).collect()
    }

    pub fn scalar_component_count(&self) -> usize {
        self.components().iter().sum()
    }

    /// Sub-layout made of the listed slots, in that order.
    pub fn select(&self, slots: &[usize]) -> Self {
        Self::new(
            slots.iter().map(|&i| self.slots[i].clone()).collect(),
            slots.iter().map(|&i| self.names[i].clone()).collect(),
        )
    }

    /// Concatenation of two layouts.
    pub fn concat(&self, other: &Layout) -> Self {
        let mut slots = self.slots.clone();
        slots.extend(other.slots.iter().cloned());
        let mut names = self.names.clone();
        names.extend(other.names.iter().cloned());
        Self::new(slots, names)
    }

    pub fn rename(mut self, names: &[&str]) -> Self {
        assert_eq!(names.len(), self.slots.len());
        self.names = names.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn zeros(&self) -> Vec<f64> {
        vec![0.0; self.total()]
    }

    pub fn check_vec(&self, v: &[f64], op: &'static str) -> Result<()> {
        if v.len() != self.total() {
            return Err(Error::DimensionMismatch {
                op,
                left: format!("layout[{}]", self.total()),
                right: format!("vector[{}]", v.len()),
            });
        }
        Ok(())
    }

    /// Assemble a block vector from per-slot parts.
    pub fn join(&self, parts: &[&[f64]]) -> Vec<f64> {
        assert_eq!(parts.len(), self.len());
        let mut v = Vec::with_capacity(self.total());
        for (i, p) in parts.iter().enumerate() {
            assert_eq!(p.len(), self.slots[i].dofs);
            v.extend_from_slice(p);
        }
        v
    }

    /// Same slot spaces and order (names are ignored).
    pub fn same_spaces(&self, other: &Layout) -> bool {
        self.slots == other.slots
    }
}
