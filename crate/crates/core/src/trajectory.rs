use nalgebra::{DVector, DVectorView};

use crate::error::{Error, Result};

/// A sequence of `N+1` states of dimension `m`, stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    dim: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: data.len(),
                context: "trajectory storage must hold a positive number of whole states",
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: pos / dim });
        }
        Ok(Self { dim, data })
    }

    pub fn from_states(states: &[DVector<f64>]) -> Result<Self> {
        let dim = states.first().map_or(0, |s| s.len());
        if let Some(bad) = states.iter().find(|s| s.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
                context: "trajectory state",
            });
        }
        Self::from_flat(dim, states.iter().flat_map(|s| s.iter().copied()).collect())
    }

    /// The same state repeated `N+1` times.
    pub fn constant(state: &DVector<f64>, horizon: usize) -> Result<Self> {
        let data = (0..=horizon).flat_map(|_| state.iter().copied()).collect();
        Self::from_flat(state.len(), data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of states, `N+1`.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The horizon `N`, i.e. the number of transitions.
    pub fn horizon(&self) -> usize {
        self.len() - 1
    }

    pub fn state(&self, n: usize) -> DVectorView<'_, f64> {
        DVectorView::from_slice(self.state_slice(n), self.dim)
    }

    pub fn state_slice(&self, n: usize) -> &[f64] {
        &self.data[n * self.dim..(n + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// `self + delta`, rejecting non-finite results.
    pub fn add(&self, delta: &[f64]) -> Result<Self> {
        if delta.len() != self.data.len() {
            return Err(Error::DimensionMismatch {
                expected: self.data.len(),
                actual: delta.len(),
                context: "trajectory update",
            });
        }
        let data = self.data.iter().zip(delta).map(|(a, b)| a + b).collect();
        Self::from_flat(self.dim, data)
    }

    pub fn max_abs_diff(&self, other: &Trajectory) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
