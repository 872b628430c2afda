//! Example-by-class matrices shared by the loss, curriculum and metric code.

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::taxonomy::{ClassId, Taxonomy};

/// Ground truth over {-1, +1}; rows are examples, columns classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix(Array2<i8>);

impl LabelMatrix {
    /// Wraps a sign matrix. Only the value domain is checked here; use
    /// [`LabelMatrix::validate`] for the hierarchy invariants.
    pub fn from_signs(values: Array2<i8>) -> Result<Self> {
        if let Some(v) = values.iter().find(|&&v| v != 1 && v != -1) {
            return Err(Error::Labels(format!("label value {v} is not -1 or +1")));
        }
        Ok(Self(values))
    }

    /// Builds an ancestor-closed matrix from per-example positive sets.
    pub fn from_positive_sets(sets: &[Vec<ClassId>], tax: &Taxonomy) -> Result<Self> {
        let mut values = Array2::from_elem((sets.len(), tax.len()), -1i8);
        for (i, set) in sets.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::Labels(format!("example {i} has no positive class")));
            }
            for &c in set {
                values[[i, tax.check(c)?]] = 1;
                for a in tax.ancestors(c)? {
                    values[[i, a.0]] = 1;
                }
            }
        }
        Ok(Self(values))
    }

    /// Checks ancestor closure and that every example has a positive.
    pub fn validate(&self, tax: &Taxonomy) -> Result<()> {
        if self.n_classes() != tax.len() {
            return Err(Error::Shape(format!(
                "label matrix has {} columns, taxonomy has {} classes",
                self.n_classes(),
                tax.len()
            )));
        }
        for (i, row) in self.0.outer_iter().enumerate() {
            if !row.iter().any(|&v| v == 1) {
                return Err(Error::Labels(format!("example {i} has no positive class")));
            }
            for (c, &v) in row.iter().enumerate() {
                if v == 1 {
                    if let Some(p) = tax.parent_index(c) {
                        if row[p] != 1 {
                            return Err(Error::Labels(format!(
                                "example {i}: class `{}` is positive but its parent `{}` is not",
                                tax.names()[c],
                                tax.names()[p]
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn values(&self) -> &Array2<i8> {
        &self.0
    }

    pub fn n_examples(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, i8> {
        self.0.row(i)
    }

    pub fn positives(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.0
            .row(i)
            .into_iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(c, _)| c)
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self(self.0.select(ndarray::Axis(0), rows))
    }
}

/// Per-class sigmoid outputs in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix(Array2<f64>);

impl ScoreMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "scores must lie in [0, 1]".to_string(),
            ));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn n_examples(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.0.ncols()
    }
}

/// Non-negative per-element loss values.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSurface(Array2<f64>);

impl LossSurface {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidArgument(
                "loss values must be finite and non-negative".to_string(),
            ));
        }
        Ok(Self(values))
    }

    pub(crate) fn from_raw(values: Array2<f64>) -> Self {
        debug_assert!(values.iter().all(|&v| v >= 0.0));
        Self(values)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Element-wise `self <= other`.
    pub fn le(&self, other: &LossSurface) -> bool {
        self.0.dim() == other.0.dim() && self.0.iter().zip(other.0.iter()).all(|(a, b)| a <= b)
    }
}

pub(crate) fn check_same_shape(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!(
            "{what}: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}
