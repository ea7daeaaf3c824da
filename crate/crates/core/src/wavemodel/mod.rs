//! Concrete wave physics: a dense 1D frequency-domain Helmholtz operator and
//! the analytic constant-velocity 3D propagator with its correlation kernel.

mod analytic;
mod helmholtz;

pub use analytic::{
    adjoint_f, forward_f, kernel_k, kernel_matrix, Acquisition, ConstantVelocityPropagator, Dataset,
    KernelPanels, TimeGrid,
};
pub use helmholtz::{Boundary, HelmholtzModel1D};

use crate::error::{Error, Result};

/// Medium parameters: squared slowness (s^2/km^2) per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct MediumModel {
    values: Vec<f64>,
}

impl MediumModel {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("medium model is empty".into()));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "medium entry {i} must be positive and finite, got {v}"
            )));
        }
        Ok(Self { values })
    }

    /// Uniform medium of velocity `c` km/s, stored as squared slowness.
    pub fn from_velocity(n: usize, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidInput(format!("velocity must be positive, got {c}")));
        }
        Self::new(vec![1.0 / (c * c); n])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `m + step * e_k`, which must stay admissible.
    pub fn perturbed(&self, k: usize, step: f64) -> Result<Self> {
        if k >= self.values.len() {
            return Err(Error::IndexOutOfRange {
                index: k,
                dim: self.values.len(),
            });
        }
        let mut values = self.values.clone();
        values[k] += step;
        Self::new(values)
    }
}
