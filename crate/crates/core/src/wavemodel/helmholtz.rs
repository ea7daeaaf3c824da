use serde::{Deserialize, Serialize};

use super::MediumModel;
use crate::error::{check_dim, Error, Result};
use crate::linops::{CMatrix, DenseOperator, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Boundary {
    Dirichlet,
    /// First-order Sommerfeld closure `-i omega sqrt(m_ref) / h` on both end
    /// rows. The impedance uses a fixed reference squared slowness so that
    /// `A(m)` stays affine in `m`.
    Absorbing { reference_slowness_sq: f64 },
}

/// `A(m) = L + omega^2 diag(m)` on `n` points with spacing `h`, where `L` is
/// the 3-point operator `-(u[k-1] - 2 u[k] + u[k+1]) / h^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct HelmholtzModel1D {
    n: usize,
    h: f64,
    omega: f64,
    boundary: Boundary,
}

impl HelmholtzModel1D {
    pub fn new(n: usize, h: f64, omega: f64, boundary: Boundary) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidInput(format!("Helmholtz grid needs n >= 3, got {n}")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidInput(format!("grid spacing must be positive, got {h}")));
        }
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::InvalidInput(format!("angular frequency must be positive, got {omega}")));
        }
        if let Boundary::Absorbing { reference_slowness_sq } = boundary {
            if !(reference_slowness_sq > 0.0 && reference_slowness_sq.is_finite()) {
                return Err(Error::InvalidInput(
                    "absorbing boundary needs a positive reference slowness".into(),
                ));
            }
        }
        Ok(Self { n, h, omega, boundary })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// The `m`-independent part: Laplacian plus boundary closure.
    pub fn stiffness(&self) -> CMatrix {
        let n = self.n;
        let inv_h2 = 1.0 / (self.h * self.h);
        let mut a = CMatrix::zeros(n, n);
        for k in 0..n {
            a[(k, k)] = C64::new(2.0 * inv_h2, 0.0);
            if k > 0 {
                a[(k, k - 1)] = C64::new(-inv_h2, 0.0);
            }
            if k + 1 < n {
                a[(k, k + 1)] = C64::new(-inv_h2, 0.0);
            }
        }
        if let Boundary::Absorbing { reference_slowness_sq } = self.boundary {
            let impedance = C64::new(0.0, -self.omega * reference_slowness_sq.sqrt() / self.h);
            a[(0, 0)] += impedance;
            a[(n - 1, n - 1)] += impedance;
        }
        a
    }

    pub fn assemble_a(&self, m: &MediumModel) -> Result<DenseOperator> {
        check_dim("Helmholtz medium", self.n, m.len())?;
        let mut a = self.stiffness();
        let w2 = self.omega * self.omega;
        for (k, mk) in m.values().iter().enumerate() {
            a[(k, k)] += C64::new(w2 * mk, 0.0);
        }
        Ok(DenseOperator::new(a))
    }

    /// `dA/dm_k = omega^2 e_k e_k^T`.
    pub fn d_a_dm(&self, k: usize) -> Result<DenseOperator> {
        if k >= self.n {
            return Err(Error::IndexOutOfRange { index: k, dim: self.n });
        }
        let mut d = CMatrix::zeros(self.n, self.n);
        d[(k, k)] = C64::new(self.omega * self.omega, 0.0);
        Ok(DenseOperator::new(d))
    }
}
