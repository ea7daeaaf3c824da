//! Numerical checks of the elimination argument: the matrix identity that
//! moves the data precision through the normal matrix, and the chain of
//! intermediate quantities from the joint objective to the reduced form.

use super::objectives::{kernel_with, normal_matrix, reduced_with, solve_state_with};
use super::{OperatorFamily, Problem};
use crate::error::{Error, Result};
use crate::linops::{CMatrix, CVector, LinearOperator};
use crate::wavemodel::MediumModel;

const DENSE_VERIFY_LIMIT: usize = 200;

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Builds both sides of
/// `(P^* Sm^{-1} P + A^* Sp^{-1} A)^{-1} P^* Sm^{-1} = (A^* Sp^{-1} A)^{-1} P^* (P (A^* Sp^{-1} A)^{-1} P^* + Sm)^{-1}`
/// densely and returns `max |LHS - RHS| / max |RHS|`.
pub fn verify_matrix_identity<F: OperatorFamily>(prob: &Problem<F>, m: &MediumModel) -> Result<f64> {
    let n = prob.state_dim();
    let nd = prob.data_dim();
    if n > DENSE_VERIFY_LIMIT || nd > DENSE_VERIFY_LIMIT {
        return Err(Error::InvalidInput(format!(
            "dense identity check limited to dimension {DENSE_VERIFY_LIMIT}, got state {n}, data {nd}"
        )));
    }
    let state = prob.factor(m)?;
    let a = state.matrix();
    let p = prob.sampling().to_dense();
    let pt = p.adjoint();
    let gram = a.ad_mul(&prob.sigma_p().solve_matrix(a)?);
    let gram = (&gram + gram.adjoint()) * crate::linops::C64::new(0.5, 0.0);

    let normal = normal_matrix(prob, &state)?;
    let pt_sm_inv = prob.sigma_m().solve_matrix(&p)?.adjoint();
    let lhs = normal
        .lu()
        .solve(&pt_sm_inv)
        .ok_or(Error::IllConditioned {
            what: "state normal matrix",
            condition: f64::INFINITY,
        })?;

    let gram_inv_pt = gram.lu().solve(&pt).ok_or(Error::IllConditioned {
        what: "A^* Sp^{-1} A",
        condition: f64::INFINITY,
    })?;
    let inner = &p * &gram_inv_pt + prob.sigma_m().to_dense();
    let inner_inv = inner
        .lu()
        .try_inverse()
        .ok_or(Error::IllConditioned {
            what: "K + Sm",
            condition: f64::INFINITY,
        })?;
    let rhs = gram_inv_pt * inner_inv;
    let scale = max_abs(&rhs);
    Ok(if scale > 0.0 { max_abs(&(lhs - &rhs)) / scale } else { max_abs(&lhs) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceRow {
    pub phi_joint: f64,
    pub phi_reduced: f64,
    /// `|phi_joint - phi_reduced| / (1 + phi_joint)`.
    pub rel_gap: f64,
    /// Relative error of `P v = K (K + Sm)^{-1} r`.
    pub sampled_shift_error: f64,
    /// Relative error of `A v = Sp A^{-*} P^* (K + Sm)^{-1} r`.
    pub process_shift_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub rows: Vec<EquivalenceRow>,
    /// Largest of all gaps and intermediate errors.
    pub worst: f64,
}

fn relative_error(a: &CVector, b: &CVector, scale: f64) -> f64 {
    let denom = a.norm().max(b.norm()).max(1e-6 * scale).max(f64::MIN_POSITIVE);
    (a - b).norm() / denom
}

/// Evaluates the joint and reduced objectives at every model and checks the
/// intermediate identities with `v = u - A^{-1} q` and `r = d - P A^{-1} q`.
pub fn verify_equivalence<F: OperatorFamily>(prob: &Problem<F>, m_samples: &[MediumModel]) -> Result<EquivalenceReport> {
    let mut rows = Vec::with_capacity(m_samples.len());
    for m in m_samples {
        let state = prob.factor(m)?;
        let u = solve_state_with(prob, &state)?.u;
        let u0 = state.solve(prob.source());
        let p = prob.sampling();

        let data_misfit = p.matvec(&u) - prob.data();
        let process_misfit = state.matrix() * &u - prob.source();
        let phi_joint = prob.sigma_m().weighted_norm_sq(&data_misfit)? + prob.sigma_p().weighted_norm_sq(&process_misfit)?;
        let phi_reduced = reduced_with(prob, &state)?.value;

        let shift = &u - &u0;
        let r = prob.data() - p.matvec(&u0);
        let kernel = kernel_with(prob, &state)?;
        let system = &kernel + prob.sigma_m().to_dense();
        let s = system.lu().solve(&r).ok_or(Error::IllConditioned {
            what: "K + Sm",
            condition: f64::INFINITY,
        })?;
        let sampled_expected = &kernel * &s;
        let process_expected = prob.sigma_p().apply(&state.solve_adjoint(&p.rmatvec(&s)))?;
        let data_scale = prob.data().norm() + p.matvec(&u0).norm();
        let source_scale = prob.source().norm();

        rows.push(EquivalenceRow {
            phi_joint,
            phi_reduced,
            rel_gap: (phi_joint - phi_reduced).abs() / (1.0 + phi_joint),
            sampled_shift_error: relative_error(&p.matvec(&shift), &sampled_expected, data_scale),
            process_shift_error: relative_error(&(state.matrix() * &shift), &process_expected, source_scale),
        });
    }
    let worst = rows
        .iter()
        .flat_map(|r| [r.rel_gap, r.sampled_shift_error, r.process_shift_error])
        .fold(0.0, f64::max);
    Ok(EquivalenceReport { rows, worst })
}
