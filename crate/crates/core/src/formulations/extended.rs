//! Extended-source and contrast-source reparameterizations of the joint
//! objective, with dense minimizers over the auxiliary variable.


use super::{OperatorFamily, Problem, StateFactor};
use crate::error::{check_dim, Error, Result};
use crate::linops::{hpd_cholesky, CMatrix, CVector, LinearOperator, C64};
use crate::wavemodel::MediumModel;

/// `|P A^{-1} (q + f) - d|^2_{Sm} + |f|^2_{Sp}`.
pub fn phi_extended_source<F: OperatorFamily>(prob: &Problem<F>, m: &MediumModel, f: &CVector) -> Result<f64> {
    check_dim("source extension", prob.state_dim(), f.len())?;
    let state = prob.factor(m)?;
    let data_misfit = prob.sampling().matvec(&state.solve(&(prob.source() + f))) - prob.data();
    Ok(prob.sigma_m().weighted_norm_sq(&data_misfit)? + prob.sigma_p().weighted_norm_sq(f)?)
}

/// `|P A0^{-1} (w + q) - d|^2_{Sm} + |dA A0^{-1} (w + q) - w|^2_{Sp}` with
/// `A0 = A(m0)` and contrast `dA = A0 - A(m)`.
///
/// With this sign `A0^{-1} (w + q)` plays the role of the wavefield `u`,
/// `w = A0 u - q`, and the second term equals `|A(m) u - q|^2_{Sp}`.
pub fn phi_contrast_source<F: OperatorFamily>(
    prob: &Problem<F>,
    m: &MediumModel,
    w: &CVector,
    m0: &MediumModel,
) -> Result<f64> {
    check_dim("contrast source", prob.state_dim(), w.len())?;
    let background = prob.factor(m0)?;
    let contrast = background.matrix() - prob.family().assemble(m)?.matrix();
    let field = background.solve(&(w + prob.source()));
    let data_misfit = prob.sampling().matvec(&field) - prob.data();
    let process_misfit = &contrast * &field - w;
    Ok(prob.sigma_m().weighted_norm_sq(&data_misfit)? + prob.sigma_p().weighted_norm_sq(&process_misfit)?)
}

/// Dense solution of `min_x |B x - b|^2_{Sm} + |C x - c|^2_{Sp}`.
fn weighted_least_squares<F: OperatorFamily>(
    prob: &Problem<F>,
    b_mat: &CMatrix,
    b_vec: &CVector,
    c_mat: &CMatrix,
    c_vec: &CVector,
) -> Result<CVector> {
    let sm_b = prob.sigma_m().solve_matrix(b_mat)?;
    let sp_c = prob.sigma_p().solve_matrix(c_mat)?;
    let normal = b_mat.ad_mul(&sm_b) + c_mat.ad_mul(&sp_c);
    let normal = (&normal + normal.adjoint()) * C64::new(0.5, 0.0);
    let rhs = sm_b.ad_mul(b_vec) + sp_c.ad_mul(c_vec);
    let factor = hpd_cholesky(normal).ok_or(Error::IllConditioned {
        what: "auxiliary-variable normal matrix",
        condition: f64::INFINITY,
    })?;
    Ok(factor.solve(&rhs))
}

/// `P A^{-1}` as a dense matrix.
fn sampled_inverse(prob: &Problem<impl OperatorFamily>, state: &StateFactor) -> CMatrix {
    let pt = prob.sampling().to_dense().adjoint();
    state.solve_adjoint_matrix(&pt).adjoint()
}

/// Minimizes [`phi_extended_source`] over `f`; returns the minimizer and the
/// minimum value.
pub fn minimize_extended_source<F: OperatorFamily>(prob: &Problem<F>, m: &MediumModel) -> Result<(CVector, f64)> {
    let state = prob.factor(m)?;
    let b = sampled_inverse(prob, &state);
    let target = prob.data() - &b * prob.source();
    let n = prob.state_dim();
    let f = weighted_least_squares(prob, &b, &target, &CMatrix::identity(n, n), &CVector::zeros(n))?;
    let value = phi_extended_source(prob, m, &f)?;
    Ok((f, value))
}

/// Minimizes [`phi_contrast_source`] over `w` for a fixed background `m0`.
pub fn minimize_contrast_source<F: OperatorFamily>(
    prob: &Problem<F>,
    m: &MediumModel,
    m0: &MediumModel,
) -> Result<(CVector, f64)> {
    let background = prob.factor(m0)?;
    let contrast = background.matrix() - prob.family().assemble(m)?.matrix();
    let n = prob.state_dim();
    let b0 = sampled_inverse(prob, &background);
    let data_target = prob.data() - &b0 * prob.source();
    // dA A0^{-1} = (A0^{-*} dA^*)^*
    let contrast_inv = background.solve_adjoint_matrix(&contrast.adjoint()).adjoint();
    let c_mat = &contrast_inv - CMatrix::identity(n, n);
    let c_vec = -(&contrast_inv * prob.source());
    let w = weighted_least_squares(prob, &b0, &data_target, &c_mat, &c_vec)?;
    let value = phi_contrast_source(prob, m, &w, m0)?;
    Ok((w, value))
}
