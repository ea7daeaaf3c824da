//! Matrix-free linear operators, covariance operators and the adjoint dot-test.
//!
//! Everything is complex-valued; real problems are embedded with zero
//! imaginary parts. The inner product is `<x, y> = sum_i conj(x_i) y_i`, which
//! fixes what "adjoint" means for every operator in the crate.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};

pub type C64 = Complex64;
pub type CVector = DVector<C64>;
pub type CMatrix = DMatrix<C64>;

/// Largest condition estimate accepted for matrices that must be inverted.
pub const MAX_CONDITION: f64 = 1e14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarKind {
    Real,
    Complex,
}

/// A linear map between complex vector spaces together with its adjoint.
///
/// Implementors provide `matvec` and `rmatvec`, which may assume correctly
/// sized input. Callers outside hot loops should prefer the checked
/// [`apply`](LinearOperator::apply) and [`adjoint_apply`](LinearOperator::adjoint_apply).
pub trait LinearOperator {
    fn domain_dim(&self) -> usize;
    fn range_dim(&self) -> usize;

    /// `y = A x` for `x` of length `domain_dim`.
    fn matvec(&self, x: &CVector) -> CVector;

    /// `x = A^* y` for `y` of length `range_dim`.
    fn rmatvec(&self, y: &CVector) -> CVector;

    /// Whether the operator maps real vectors to real vectors.
    fn scalar_kind(&self) -> ScalarKind {
        ScalarKind::Complex
    }

    fn apply(&self, x: &CVector) -> Result<CVector> {
        check_dim("operator apply", self.domain_dim(), x.len())?;
        Ok(self.matvec(x))
    }

    fn adjoint_apply(&self, y: &CVector) -> Result<CVector> {
        check_dim("operator adjoint apply", self.range_dim(), y.len())?;
        Ok(self.rmatvec(y))
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn domain_dim(&self) -> usize {
        (**self).domain_dim()
    }
    fn range_dim(&self) -> usize {
        (**self).range_dim()
    }
    fn matvec(&self, x: &CVector) -> CVector {
        (**self).matvec(x)
    }
    fn rmatvec(&self, y: &CVector) -> CVector {
        (**self).rmatvec(y)
    }
    fn scalar_kind(&self) -> ScalarKind {
        (**self).scalar_kind()
    }
}

/// The identity on `C^n`.
#[derive(Debug, Clone, Copy)]
pub struct Identity {
    pub dim: usize,
}

impl Identity {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl LinearOperator for Identity {
    fn domain_dim(&self) -> usize {
        self.dim
    }
    fn range_dim(&self) -> usize {
        self.dim
    }
    fn matvec(&self, x: &CVector) -> CVector {
        x.clone()
    }
    fn rmatvec(&self, y: &CVector) -> CVector {
        y.clone()
    }
    fn scalar_kind(&self) -> ScalarKind {
        ScalarKind::Real
    }
}

/// An explicitly stored dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    matrix: CMatrix,
}

impl DenseOperator {
    pub fn new(matrix: CMatrix) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }
}

impl LinearOperator for DenseOperator {
    fn domain_dim(&self) -> usize {
        self.matrix.ncols()
    }
    fn range_dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn matvec(&self, x: &CVector) -> CVector {
        &self.matrix * x
    }
    fn rmatvec(&self, y: &CVector) -> CVector {
        self.matrix.ad_mul(y)
    }
    fn scalar_kind(&self) -> ScalarKind {
        if self.matrix.iter().all(|z| z.im == 0.0) {
            ScalarKind::Real
        } else {
            ScalarKind::Complex
        }
    }
}

/// Operator defined by a pair of closures. Used to build composite operators
/// (normal operators, shifted kernels) without materializing them.
pub struct FnOperator<F, G> {
    domain_dim: usize,
    range_dim: usize,
    forward: F,
    adjoint: G,
}

impl<F, G> FnOperator<F, G>
where
    F: Fn(&CVector) -> CVector,
    G: Fn(&CVector) -> CVector,
{
    pub fn new(domain_dim: usize, range_dim: usize, forward: F, adjoint: G) -> Self {
        Self {
            domain_dim,
            range_dim,
            forward,
            adjoint,
        }
    }
}

impl<F, G> LinearOperator for FnOperator<F, G>
where
    F: Fn(&CVector) -> CVector,
    G: Fn(&CVector) -> CVector,
{
    fn domain_dim(&self) -> usize {
        self.domain_dim
    }
    fn range_dim(&self) -> usize {
        self.range_dim
    }
    fn matvec(&self, x: &CVector) -> CVector {
        (self.forward)(x)
    }
    fn rmatvec(&self, y: &CVector) -> CVector {
        (self.adjoint)(y)
    }
}

/// Selection of state entries at receiver locations: each row of `P` holds a
/// single unit entry, so `P P^T = I` on the receiver space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingOperator {
    receiver_indices: Vec<usize>,
    state_dim: usize,
}

impl SamplingOperator {
    pub fn new(receiver_indices: Vec<usize>, state_dim: usize) -> Result<Self> {
        if receiver_indices.is_empty() {
            return Err(Error::InvalidInput("sampling operator needs at least one receiver".into()));
        }
        let mut seen = vec![false; state_dim];
        for &index in &receiver_indices {
            if index >= state_dim {
                return Err(Error::IndexOutOfRange {
                    index,
                    dim: state_dim,
                });
            }
            if seen[index] {
                return Err(Error::InvalidInput(format!("receiver index {index} repeated")));
            }
            seen[index] = true;
        }
        Ok(Self {
            receiver_indices,
            state_dim,
        })
    }

    /// Full-state measurement, `P = I`.
    pub fn full(state_dim: usize) -> Self {
        Self {
            receiver_indices: (0..state_dim).collect(),
            state_dim,
        }
    }

    pub fn receiver_indices(&self) -> &[usize] {
        &self.receiver_indices
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn data_dim(&self) -> usize {
        self.receiver_indices.len()
    }

    /// True when `P` is a permutation, hence invertible with `P^{-1} = P^T`.
    pub fn is_invertible(&self) -> bool {
        self.data_dim() == self.state_dim
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut p = CMatrix::zeros(self.data_dim(), self.state_dim);
        for (row, &col) in self.receiver_indices.iter().enumerate() {
            p[(row, col)] = C64::new(1.0, 0.0);
        }
        p
    }

    /// `P^{-1} d`, defined only for square sampling.
    pub fn inverse_apply(&self, d: &CVector) -> Result<CVector> {
        if !self.is_invertible() {
            return Err(Error::UnsupportedGeometry(format!(
                "sampling operator is {}x{}, not invertible",
                self.data_dim(),
                self.state_dim
            )));
        }
        self.adjoint_apply(d)
    }
}

impl LinearOperator for SamplingOperator {
    fn domain_dim(&self) -> usize {
        self.state_dim
    }
    fn range_dim(&self) -> usize {
        self.receiver_indices.len()
    }
    fn matvec(&self, x: &CVector) -> CVector {
        CVector::from_iterator(self.data_dim(), self.receiver_indices.iter().map(|&i| x[i]))
    }
    fn rmatvec(&self, y: &CVector) -> CVector {
        let mut x = CVector::zeros(self.state_dim);
        for (row, &col) in self.receiver_indices.iter().enumerate() {
            x[col] += y[row];
        }
        x
    }
    fn scalar_kind(&self) -> ScalarKind {
        ScalarKind::Real
    }
}

#[derive(Debug, Clone)]
enum CovarianceKind {
    ScaledIdentity(f64),
    Diagonal(Vec<f64>),
    Dense {
        matrix: CMatrix,
        factor: Cholesky<C64, Dyn>,
    },
}

/// A symmetric positive definite covariance `W`, supporting `W x`, `W^{-1} x`
/// and the weighted norm `r^* W^{-1} r`.
#[derive(Debug, Clone)]
pub struct CovarianceSpec {
    dim: usize,
    kind: CovarianceKind,
}

impl CovarianceSpec {
    pub fn scaled_identity(dim: usize, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "covariance variance must be positive and finite, got {variance}"
            )));
        }
        Ok(Self {
            dim,
            kind: CovarianceKind::ScaledIdentity(variance),
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            kind: CovarianceKind::ScaledIdentity(1.0),
        }
    }

    pub fn diagonal(variances: Vec<f64>) -> Result<Self> {
        if let Some(bad) = variances.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "diagonal covariance entries must be positive, got {bad}"
            )));
        }
        Ok(Self {
            dim: variances.len(),
            kind: CovarianceKind::Diagonal(variances),
        })
    }

    /// Dense Hermitian positive definite covariance. The Cholesky factor is
    /// computed once here and reused by every solve.
    pub fn dense(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidInput("dense covariance must be square".into()));
        }
        let scale = matrix.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidInput("dense covariance must be finite and nonzero".into()));
        }
        let asym = (&matrix - matrix.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if asym > 1e-12 * scale {
            return Err(Error::InvalidInput(format!(
                "dense covariance is not Hermitian (asymmetry {asym:.3e})"
            )));
        }
        let factor = hpd_cholesky(matrix.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("dense covariance".into()))?;
        let cond = cholesky_condition_estimate(&matrix, &factor);
        if !(cond < MAX_CONDITION) {
            return Err(Error::IllConditioned {
                what: "dense covariance",
                condition: cond,
            });
        }
        Ok(Self {
            dim: matrix.nrows(),
            kind: CovarianceKind::Dense { matrix, factor },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Returns `alpha * W`.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidInput(format!("covariance scale must be positive, got {alpha}")));
        }
        match &self.kind {
            CovarianceKind::ScaledIdentity(v) => Self::scaled_identity(self.dim, v * alpha),
            CovarianceKind::Diagonal(d) => Self::diagonal(d.iter().map(|v| v * alpha).collect()),
            CovarianceKind::Dense { matrix, .. } => Self::dense(matrix * C64::new(alpha, 0.0)),
        }
    }

    /// `W x`.
    pub fn apply(&self, x: &CVector) -> Result<CVector> {
        check_dim("covariance apply", self.dim, x.len())?;
        Ok(match &self.kind {
            CovarianceKind::ScaledIdentity(v) => x * C64::new(*v, 0.0),
            CovarianceKind::Diagonal(d) => x.zip_map(&DVector::from_column_slice(d), |xi, di| xi * di),
            CovarianceKind::Dense { matrix, .. } => matrix * x,
        })
    }

    /// `W^{-1} x`.
    pub fn solve(&self, x: &CVector) -> Result<CVector> {
        check_dim("covariance solve", self.dim, x.len())?;
        Ok(match &self.kind {
            CovarianceKind::ScaledIdentity(v) => x / C64::new(*v, 0.0),
            CovarianceKind::Diagonal(d) => x.zip_map(&DVector::from_column_slice(d), |xi, di| xi / di),
            CovarianceKind::Dense { factor, .. } => factor.solve(x),
        })
    }

    /// `W^{-1} M`, column by column.
    pub fn solve_matrix(&self, m: &CMatrix) -> Result<CMatrix> {
        check_dim("covariance solve", self.dim, m.nrows())?;
        Ok(match &self.kind {
            CovarianceKind::ScaledIdentity(v) => m / C64::new(*v, 0.0),
            CovarianceKind::Diagonal(d) => {
                let mut out = m.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row /= C64::new(d[i], 0.0);
                }
                out
            }
            CovarianceKind::Dense { factor, .. } => factor.solve(m),
        })
    }

    /// `W M`, column by column.
    pub fn apply_matrix(&self, m: &CMatrix) -> Result<CMatrix> {
        check_dim("covariance apply", self.dim, m.nrows())?;
        Ok(match &self.kind {
            CovarianceKind::ScaledIdentity(v) => m * C64::new(*v, 0.0),
            CovarianceKind::Diagonal(d) => {
                let mut out = m.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row *= C64::new(d[i], 0.0);
                }
                out
            }
            CovarianceKind::Dense { matrix, .. } => matrix * m,
        })
    }

    /// `L^{-1} M` for the Cholesky factor `W = L L^*`, so that
    /// `(L^{-1} x)^* (L^{-1} x) = x^* W^{-1} x`.
    pub fn whiten_matrix(&self, m: &CMatrix) -> Result<CMatrix> {
        check_dim("covariance whiten", self.dim, m.nrows())?;
        Ok(match &self.kind {
            CovarianceKind::ScaledIdentity(v) => m / C64::new(v.sqrt(), 0.0),
            CovarianceKind::Diagonal(d) => {
                let mut out = m.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row /= C64::new(d[i].sqrt(), 0.0);
                }
                out
            }
            CovarianceKind::Dense { factor, .. } => factor
                .l()
                .solve_lower_triangular(m)
                .expect("Cholesky factor has a positive diagonal"),
        })
    }

    pub fn whiten(&self, x: &CVector) -> Result<CVector> {
        let m = self.whiten_matrix(&CMatrix::from_column_slice(x.len(), 1, x.as_slice()))?;
        Ok(m.column(0).into_owned())
    }

    pub fn to_dense(&self) -> CMatrix {
        match &self.kind {
            CovarianceKind::ScaledIdentity(v) => CMatrix::identity(self.dim, self.dim) * C64::new(*v, 0.0),
            CovarianceKind::Diagonal(d) => {
                CMatrix::from_diagonal(&CVector::from_iterator(d.len(), d.iter().map(|v| C64::new(*v, 0.0))))
            }
            CovarianceKind::Dense { matrix, .. } => matrix.clone(),
        }
    }

    /// `r^* W^{-1} r`.
    pub fn weighted_norm_sq(&self, r: &CVector) -> Result<f64> {
        let w = self.solve(r)?;
        real_quadratic_form(r.dotc(&w))
    }
}

/// `r^* W^{-1} r` for an SPD covariance `W`.
pub fn weighted_norm_sq(cov: &CovarianceSpec, r: &CVector) -> Result<f64> {
    cov.weighted_norm_sq(r)
}

/// Real part of a Hermitian quadratic form, after checking that the
/// imaginary part is round-off.
pub(crate) fn real_quadratic_form(value: C64) -> Result<f64> {
    if value.im.abs() > 1e-10 * value.re.abs() + 1e-300 {
        return Err(Error::Numerical(format!(
            "quadratic form has non-negligible imaginary part {:e} (real part {:e})",
            value.im, value.re
        )));
    }
    Ok(value.re)
}

/// Maximum over `trials` random pairs of
/// `|<Ax, y> - <x, A^* y>| / (|Ax||y| + |x||A^* y|)`.
///
/// Draws are complex standard normal from a ChaCha stream seeded with `seed`,
/// so the result is reproducible.
pub fn dot_test<A: LinearOperator + ?Sized>(op: &A, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials.max(1) {
        let x = random_complex_vector(op.domain_dim(), &mut rng);
        let y = random_complex_vector(op.range_dim(), &mut rng);
        let ax = op.matvec(&x);
        let aty = op.rmatvec(&y);
        let lhs = ax.dotc(&y);
        let rhs = x.dotc(&aty);
        let scale = ax.norm() * y.norm() + x.norm() * aty.norm();
        let mismatch = if scale > 0.0 { (lhs - rhs).norm() / scale } else { 0.0 };
        worst = worst.max(mismatch);
    }
    worst
}

pub fn random_complex_vector<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> CVector {
    CVector::from_fn(n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im)
    })
}

/// Hager's estimate of `||B||_1` from products with `B` and `B^*`.
pub fn estimate_norm1<F, G>(n: usize, apply: F, apply_adjoint: G) -> f64
where
    F: Fn(&CVector) -> CVector,
    G: Fn(&CVector) -> CVector,
{
    if n == 0 {
        return 0.0;
    }
    let mut x = CVector::from_element(n, C64::new(1.0 / n as f64, 0.0));
    let mut estimate = 0.0;
    let mut last_index = usize::MAX;
    for iter in 0..5 {
        let y = apply(&x);
        estimate = y.iter().map(|z| z.norm()).sum::<f64>();
        let xi = y.map(|z| if z.norm() > 0.0 { z / z.norm() } else { C64::new(1.0, 0.0) });
        let z = apply_adjoint(&xi);
        let (j, zmax) = z
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.norm()))
            .fold((0, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        if iter > 0 && (zmax <= z.dotc(&x).re || j == last_index) {
            break;
        }
        last_index = j;
        x = CVector::zeros(n);
        x[j] = C64::new(1.0, 0.0);
    }
    // Higham's alternating-sign probe guards against the estimate stalling.
    let alt = CVector::from_fn(n, |i, _| {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        C64::new(sign * (1.0 + i as f64 / (n.max(2) - 1) as f64), 0.0)
    });
    let alt_est = 2.0 * apply(&alt).iter().map(|z| z.norm()).sum::<f64>() / (3.0 * n as f64);
    estimate.max(alt_est)
}

/// Cholesky factor of a Hermitian positive definite matrix, or `None`.
///
/// The complex factorization takes complex square roots and so succeeds on
/// indefinite input; the pivots are checked to be real and positive here.
pub fn hpd_cholesky(m: CMatrix) -> Option<Cholesky<C64, Dyn>> {
    let factor = Cholesky::new(m)?;
    let l = factor.l_dirty();
    let ok = (0..l.nrows()).all(|i| {
        let d = l[(i, i)];
        d.re > 0.0 && d.re.is_finite() && d.im.abs() <= 1e-12 * d.re
    });
    ok.then_some(factor)
}

pub fn matrix_norm1(m: &CMatrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn cholesky_condition_estimate(matrix: &CMatrix, factor: &Cholesky<C64, Dyn>) -> f64 {
    let inv_norm = estimate_norm1(matrix.nrows(), |x| factor.solve(x), |x| factor.solve(x));
    matrix_norm1(matrix) * inv_norm
}
