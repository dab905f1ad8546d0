use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamRecord {
    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.size()
    }
}

/// Ordered, contiguous description of a flat parameter vector.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    records: Vec<ParamRecord>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a block of parameters and returns its offset.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let offset = self.len();
        self.records.push(ParamRecord {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
        });
        offset
    }

    /// Rebuilds a layout from stored records, checking they tile `0..len` in order.
    pub fn from_records(records: Vec<ParamRecord>) -> Result<Self> {
        let mut next = 0usize;
        for r in &records {
            if r.offset != next {
                return Err(Error::Shape(format!(
                    "parameter {} starts at {} but the previous block ends at {next}",
                    r.name, r.offset
                )));
            }
            let size = r
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Shape(format!("parameter {} is too large", r.name)))?;
            next = next
                .checked_add(size)
                .ok_or_else(|| Error::Shape("layout length overflows".into()))?;
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[ParamRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.last().map_or(0, |r| r.offset + r.size())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn find(&self, name: &str) -> Option<&ParamRecord> {
        self.records.iter().find(|r| r.name == name)
    }
}

/// Flat vector of every trainable network parameter plus its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    layout: ParamLayout,
    values: Vec<f64>,
}

impl ParamSet {
    pub fn zeros(layout: ParamLayout) -> Self {
        let values = vec![0.0; layout.len()];
        Self { layout, values }
    }

    pub fn from_values(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Shape(format!(
                "layout describes {} values, got {}",
                layout.len(),
                values.len()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.layout.find(name).map(|r| &self.values[r.range()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.find(name)?.range();
        Some(&mut self.values[range])
    }

    fn check_compatible(&self, other: &ParamSet) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::Shape("parameter sets have different layouts".into()));
        }
        Ok(())
    }

    /// `self - other`, elementwise.
    pub fn delta(&self, other: &ParamSet) -> Result<ParamSet> {
        self.check_compatible(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(ParamSet {
            layout: self.layout.clone(),
            values,
        })
    }

    /// `self += scale * other`, elementwise.
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }
}
