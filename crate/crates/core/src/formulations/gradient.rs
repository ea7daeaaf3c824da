use nalgebra::DVector;

use super::objectives::{kernel_with, solve_reduced_system};
use super::{OperatorFamily, Problem, StateFactor};
use crate::error::{Error, Result};
use crate::linops::{hpd_cholesky, CVector, LinearOperator};
use crate::wavemodel::MediumModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientVariant {
    /// Differentiates `r^* (K + Sm)^{-1} r` directly:
    /// `v0 = A^{-*} P^* (K + Sm)^{-1} r`, `w0 = A^{-1} Sp v0`.
    #[default]
    Derived,
    /// The published expression taken literally:
    /// `v0 = A^{-*} P^* (K^{-1} + Sm^{-1}) r`, `w0 = A^{-1} Sp^{-1} v0`.
    /// Kept for comparison only; it does not match finite differences in
    /// general.
    PaperVerbatim,
}

/// Gradient of [`phi_reduced`](super::phi_reduced) with respect to `m`.
///
/// Needs `u0 = A^{-1} q`, one adjoint solve for `v0` and one more forward
/// solve for `w0`; component `k` is `2 Re <v0, dA_k (w0 - u0)>`.
pub fn grad_phi<F: OperatorFamily>(
    prob: &Problem<F>,
    m: &MediumModel,
    variant: GradientVariant,
) -> Result<DVector<f64>> {
    let state = prob.factor(m)?;
    let u0 = state.solve(prob.source());
    let residual = prob.sampling().matvec(&u0) - prob.data();
    match variant {
        GradientVariant::Derived => {
            let weighted = solve_reduced_system(prob, &state, &residual)?.weighted;
            let v0 = state.solve_adjoint(&prob.sampling().rmatvec(&weighted));
            let w0 = state.solve(&prob.sigma_p().apply(&v0)?);
            let direction = &w0 - &u0;
            assemble(prob, |dak| 2.0 * v0.dotc(&dak.matvec(&direction)).re)
        }
        GradientVariant::PaperVerbatim => paper_variant(prob, &state, &u0, &residual),
    }
}

fn paper_variant<F: OperatorFamily>(
    prob: &Problem<F>,
    state: &StateFactor,
    u0: &CVector,
    residual: &CVector,
) -> Result<DVector<f64>> {
    let kernel = kernel_with(prob, state)?;
    let kernel = (&kernel + kernel.adjoint()) * crate::linops::C64::new(0.5, 0.0);
    let kinv_r = hpd_cholesky(kernel)
        .ok_or(Error::IllConditioned {
            what: "kernel K(m) (paper variant needs K^{-1})",
            condition: f64::INFINITY,
        })?
        .solve(residual);
    let weighted = kinv_r + prob.sigma_m().solve(residual)?;
    let v0 = state.solve_adjoint(&prob.sampling().rmatvec(&weighted));
    let w0 = state.solve(&prob.sigma_p().solve(&v0)?);
    assemble(prob, |dak| {
        -2.0 * u0.dotc(&dak.matvec(&v0)).re + 2.0 * v0.dotc(&dak.matvec(&w0)).re
    })
}

fn assemble<F: OperatorFamily>(
    prob: &Problem<F>,
    component: impl Fn(&crate::linops::DenseOperator) -> f64,
) -> Result<DVector<f64>> {
    let n = prob.family().param_dim();
    let mut g = DVector::zeros(n);
    for k in 0..n {
        g[k] = component(&prob.family().derivative(k)?);
    }
    Ok(g)
}

/// Adjoint-state gradient of the conventional misfit:
/// `-2 Re <v0, dA_k u0>` with `v0 = A^{-*} P^* Sm^{-1} r`.
pub fn grad_conventional<F: OperatorFamily>(prob: &Problem<F>, m: &MediumModel) -> Result<DVector<f64>> {
    let state = prob.factor(m)?;
    let u0 = state.solve(prob.source());
    let residual = prob.sampling().matvec(&u0) - prob.data();
    let v0 = state.solve_adjoint(&prob.sampling().rmatvec(&prob.sigma_m().solve(&residual)?));
    assemble(prob, |dak| -2.0 * v0.dotc(&dak.matvec(&u0)).re)
}

/// Central differences with step `rel_step * max(|m_k|, 1e-12)` per component.
pub fn central_difference_gradient(
    objective: impl Fn(&MediumModel) -> Result<f64>,
    m: &MediumModel,
    rel_step: f64,
) -> Result<DVector<f64>> {
    let n = m.len();
    let mut g = DVector::zeros(n);
    for k in 0..n {
        let step = rel_step * m.values()[k].abs().max(1e-12);
        let plus = objective(&m.perturbed(k, step)?)?;
        let minus = objective(&m.perturbed(k, -step)?)?;
        g[k] = (plus - minus) / (2.0 * step);
    }
    Ok(g)
}

/// Central differences with the step chosen per component by a Richardson
/// check: for relative steps `1e-2, 1e-3, ..., 1e-7` the estimates at `h`
/// and `h/2` are compared, the step where they agree best is kept, and the
/// extrapolated value `(4 D(h/2) - D(h)) / 3` is returned.
pub fn richardson_difference_gradient(
    objective: impl Fn(&MediumModel) -> Result<f64>,
    m: &MediumModel,
) -> Result<DVector<f64>> {
    let n = m.len();
    let mut g = DVector::zeros(n);
    let central = |k: usize, step: f64| -> Result<f64> {
        let plus = objective(&m.perturbed(k, step)?)?;
        let minus = objective(&m.perturbed(k, -step)?)?;
        Ok((plus - minus) / (2.0 * step))
    };
    for k in 0..n {
        let mut best = (f64::INFINITY, 0.0);
        for e in 2..=7 {
            let step = 10f64.powi(-e) * m.values()[k].abs().max(1e-12);
            let coarse = central(k, step)?;
            let fine = central(k, 0.5 * step)?;
            let disagreement = (coarse - fine).abs();
            if disagreement < best.0 {
                best = (disagreement, (4.0 * fine - coarse) / 3.0);
            }
        }
        g[k] = best.1;
    }
    Ok(g)
}

/// Absolute floor for gradient comparisons: `1e-8 nd / max |m_k|`.
///
/// The covariances make a misfit of order `nd` the noise level, so gradient
/// components far below `nd / |m|` carry no information and their finite
/// differences are pure truncation and rounding error.
pub fn gradient_check_floor(data_dim: usize, m: &MediumModel) -> f64 {
    let scale = m.values().iter().fold(0.0, |a: f64, v| a.max(v.abs()));
    1e-8 * data_dim as f64 / scale.max(f64::MIN_POSITIVE)
}

/// Per-component relative error `|a_k - r_k| / max(|r_k|, floor)`, with the
/// floor `1e-6 |r|_inf + abs_floor` guarding components at zero crossings.
pub fn gradient_relative_errors(analytic: &DVector<f64>, reference: &DVector<f64>, abs_floor: f64) -> DVector<f64> {
    let scale = reference.amax();
    analytic.zip_map(reference, |a, r| (a - r).abs() / r.abs().max(1e-6 * scale + abs_floor).max(f64::MIN_POSITIVE))
}
