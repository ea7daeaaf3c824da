//! Objective functions of extended waveform inversion.
//!
//! The joint problem `min_u |P u - d|^2_{Sm} + |A(m) u - q|^2_{Sp}` and the
//! reduced problem `|P A(m)^{-1} q - d|^2_{K(m) + Sm}` with
//! `K(m) = P (A^* Sp^{-1} A)^{-1} P^*` are implemented independently, so that
//! their agreement is a real check.
//!
//! Sign convention: residuals are `r = P A^{-1} q - d` everywhere except in
//! [`verify_equivalence`], which follows the `d - P A^{-1} q` bookkeeping of
//! the elimination argument. The sign cancels in every quadratic form.

mod extended;
mod gradient;
pub mod instances;
mod objectives;
mod verify;

pub use extended::{
    minimize_contrast_source, minimize_extended_source, phi_contrast_source, phi_extended_source,
};
pub use gradient::{
    central_difference_gradient, grad_conventional, gradient_check_floor, grad_phi, gradient_relative_errors, richardson_difference_gradient,
    GradientVariant,
};
pub use objectives::{phi_conventional, phi_equation_error, phi_joint, phi_reduced, sigma_of_m, solve_state};
pub use verify::{verify_equivalence, verify_matrix_identity, EquivalenceReport, EquivalenceRow};

use nalgebra::{DVector, LU};

use crate::error::{check_dim, Error, Result};
use crate::linops::{
    estimate_norm1, matrix_norm1, CMatrix, CVector, CovarianceSpec, DenseOperator, LinearOperator,
    SamplingOperator, MAX_CONDITION,
};
use crate::solvers::{MddMethod, DEFAULT_TOLERANCE, DENSE_LIMIT};
use crate::wavemodel::{HelmholtzModel1D, MediumModel};

/// A parameterized family of state operators `m -> A(m)`.
pub trait OperatorFamily {
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn assemble(&self, m: &MediumModel) -> Result<DenseOperator>;
    /// `dA/dm_k`. Families in this crate are affine in `m`, so the
    /// derivative does not depend on the model.
    fn derivative(&self, k: usize) -> Result<DenseOperator>;
}

impl OperatorFamily for HelmholtzModel1D {
    fn state_dim(&self) -> usize {
        self.n()
    }
    fn param_dim(&self) -> usize {
        self.n()
    }
    fn assemble(&self, m: &MediumModel) -> Result<DenseOperator> {
        self.assemble_a(m)
    }
    fn derivative(&self, k: usize) -> Result<DenseOperator> {
        self.d_a_dm(k)
    }
}

/// `A(m) = base + sum_k m_k directions[k]`.
#[derive(Debug, Clone)]
pub struct AffineFamily {
    base: CMatrix,
    directions: Vec<CMatrix>,
}

impl AffineFamily {
    pub fn new(base: CMatrix, directions: Vec<CMatrix>) -> Result<Self> {
        if !base.is_square() {
            return Err(Error::InvalidInput("affine family needs a square base".into()));
        }
        if directions.is_empty() {
            return Err(Error::InvalidInput("affine family needs at least one direction".into()));
        }
        for d in &directions {
            if d.shape() != base.shape() {
                return Err(Error::DimensionMismatch {
                    context: "affine family direction",
                    expected: base.nrows(),
                    actual: d.nrows(),
                });
            }
        }
        Ok(Self { base, directions })
    }

    /// A model-independent operator (one inert parameter).
    pub fn fixed(base: CMatrix) -> Result<Self> {
        let zero = CMatrix::zeros(base.nrows(), base.ncols());
        Self::new(base, vec![zero])
    }
}

impl OperatorFamily for AffineFamily {
    fn state_dim(&self) -> usize {
        self.base.nrows()
    }
    fn param_dim(&self) -> usize {
        self.directions.len()
    }
    fn assemble(&self, m: &MediumModel) -> Result<DenseOperator> {
        check_dim("affine family parameters", self.directions.len(), m.len())?;
        let mut a = self.base.clone();
        for (mk, d) in m.values().iter().zip(&self.directions) {
            a += d * crate::linops::C64::new(*mk, 0.0);
        }
        Ok(DenseOperator::new(a))
    }
    fn derivative(&self, k: usize) -> Result<DenseOperator> {
        self.directions
            .get(k)
            .cloned()
            .map(DenseOperator::new)
            .ok_or(Error::IndexOutOfRange {
                index: k,
                dim: self.directions.len(),
            })
    }
}

/// Thresholds selecting dense factorizations versus iterative solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverPolicy {
    /// Normal equations for the state are factored densely up to this size.
    pub dense_state_limit: usize,
    /// Solver for `(K + Sm) r~ = r`; `Auto` factors densely up to
    /// [`DENSE_LIMIT`] data samples.
    pub reduced_solver: MddMethod,
    pub tolerance: f64,
}

impl Default for SolverPolicy {
    fn default() -> Self {
        Self {
            dense_state_limit: 2000,
            reduced_solver: MddMethod::Auto,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

impl SolverPolicy {
    pub(crate) fn reduced_method(&self, data_dim: usize) -> MddMethod {
        match self.reduced_solver {
            MddMethod::Auto if data_dim <= DENSE_LIMIT => MddMethod::Cholesky,
            MddMethod::Auto => MddMethod::Cg,
            other => other,
        }
    }
}

/// Everything that defines an extended inversion problem except the model.
#[derive(Debug, Clone)]
pub struct Problem<F> {
    family: F,
    sampling: SamplingOperator,
    source: CVector,
    data: CVector,
    sigma_m: CovarianceSpec,
    sigma_p: CovarianceSpec,
    policy: SolverPolicy,
}

impl<F: OperatorFamily> Problem<F> {
    pub fn new(
        family: F,
        sampling: SamplingOperator,
        source: CVector,
        data: CVector,
        sigma_m: CovarianceSpec,
        sigma_p: CovarianceSpec,
    ) -> Result<Self> {
        let n = family.state_dim();
        check_dim("sampling operator state", n, sampling.state_dim())?;
        check_dim("source vector", n, source.len())?;
        check_dim("data vector", sampling.data_dim(), data.len())?;
        check_dim("measurement covariance", sampling.data_dim(), sigma_m.dim())?;
        check_dim("process covariance", n, sigma_p.dim())?;
        Ok(Self {
            family,
            sampling,
            source,
            data,
            sigma_m,
            sigma_p,
            policy: SolverPolicy::default(),
        })
    }

    pub fn with_policy(mut self, policy: SolverPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_data(&self, data: CVector) -> Result<Self>
    where
        F: Clone,
    {
        Self::new(
            self.family.clone(),
            self.sampling.clone(),
            self.source.clone(),
            data,
            self.sigma_m.clone(),
            self.sigma_p.clone(),
        )
        .map(|p| p.with_policy(self.policy))
    }

    pub fn with_covariances(&self, sigma_m: CovarianceSpec, sigma_p: CovarianceSpec) -> Result<Self>
    where
        F: Clone,
    {
        Self::new(
            self.family.clone(),
            self.sampling.clone(),
            self.source.clone(),
            self.data.clone(),
            sigma_m,
            sigma_p,
        )
        .map(|p| p.with_policy(self.policy))
    }

    pub fn family(&self) -> &F {
        &self.family
    }
    pub fn sampling(&self) -> &SamplingOperator {
        &self.sampling
    }
    pub fn source(&self) -> &CVector {
        &self.source
    }
    pub fn data(&self) -> &CVector {
        &self.data
    }
    pub fn sigma_m(&self) -> &CovarianceSpec {
        &self.sigma_m
    }
    pub fn sigma_p(&self) -> &CovarianceSpec {
        &self.sigma_p
    }
    pub fn policy(&self) -> &SolverPolicy {
        &self.policy
    }
    pub fn state_dim(&self) -> usize {
        self.family.state_dim()
    }
    pub fn data_dim(&self) -> usize {
        self.sampling.data_dim()
    }

    /// Noise-free data `P A(m)^{-1} q`.
    pub fn clean_data(&self, m: &MediumModel) -> Result<CVector> {
        let state = StateFactor::new(&self.family, m)?;
        Ok(self.sampling.matvec(&state.solve(&self.source)))
    }

    pub(crate) fn factor(&self, m: &MediumModel) -> Result<StateFactor> {
        StateFactor::new(&self.family, m)
    }
}

/// LU factors of `A(m)` and `A(m)^*`.
pub(crate) struct StateFactor {
    matrix: CMatrix,
    lu: LU<crate::linops::C64, nalgebra::Dyn, nalgebra::Dyn>,
    lu_adjoint: LU<crate::linops::C64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl StateFactor {
    pub(crate) fn new<F: OperatorFamily>(family: &F, m: &MediumModel) -> Result<Self> {
        let matrix = family.assemble(m)?.into_matrix();
        check_dim("state operator", family.state_dim(), matrix.nrows())?;
        let lu = matrix.clone().lu();
        let lu_adjoint = matrix.adjoint().lu();
        if !lu.is_invertible() {
            return Err(Error::IllConditioned {
                what: "state operator A(m)",
                condition: f64::INFINITY,
            });
        }
        let inverse_norm = estimate_norm1(
            matrix.nrows(),
            |x| lu.solve(x).unwrap_or_else(|| x.map(|_| crate::linops::C64::new(f64::INFINITY, 0.0))),
            |x| lu_adjoint.solve(x).unwrap_or_else(|| x.map(|_| crate::linops::C64::new(f64::INFINITY, 0.0))),
        );
        let condition = matrix_norm1(&matrix) * inverse_norm;
        if !(condition < MAX_CONDITION) {
            return Err(Error::IllConditioned {
                what: "state operator A(m)",
                condition,
            });
        }
        Ok(Self {
            matrix,
            lu,
            lu_adjoint,
        })
    }

    pub(crate) fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    /// `A^{-1} b`.
    pub(crate) fn solve(&self, b: &CVector) -> CVector {
        self.lu.solve(b).expect("state operator checked invertible")
    }

    /// `A^{-*} b`.
    pub(crate) fn solve_adjoint(&self, b: &CVector) -> CVector {
        self.lu_adjoint.solve(b).expect("state operator checked invertible")
    }

    pub(crate) fn solve_matrix(&self, b: &CMatrix) -> CMatrix {
        self.lu.solve(b).expect("state operator checked invertible")
    }

    pub(crate) fn solve_adjoint_matrix(&self, b: &CMatrix) -> CMatrix {
        self.lu_adjoint.solve(b).expect("state operator checked invertible")
    }
}

/// Objective value plus the vectors it was computed from.
#[derive(Debug, Clone)]
pub struct ObjectiveReport {
    pub value: f64,
    /// Data residual. For the reduced and conventional objectives this is
    /// `P A^{-1} q - d`; for the joint objective it is `P u(m) - d`; for the
    /// equation-error objective it is the process residual `A P^{-1} d - q`.
    pub residual: CVector,
    /// The residual after the inverse weight: `(K + Sm)^{-1} r` for the
    /// reduced objective, the covariance inverse applied to `residual`
    /// otherwise.
    pub weighted_residual: CVector,
    pub gradient: Option<DVector<f64>>,
    pub solver_iterations: usize,
    pub solver_relres: f64,
}
