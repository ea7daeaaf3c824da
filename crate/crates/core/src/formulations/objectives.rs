
use super::{ObjectiveReport, OperatorFamily, Problem, StateFactor};
use crate::error::{Error, Result};
use crate::linops::{hpd_cholesky, real_quadratic_form, CMatrix, CVector, FnOperator, LinearOperator, C64, MAX_CONDITION};
use crate::solvers::{cg, lsqr, MddMethod};
use crate::wavemodel::MediumModel;

fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// `P^* Sm^{-1} P` as a dense state-sized matrix.
fn data_precision_in_state<F: OperatorFamily>(prob: &Problem<F>) -> Result<CMatrix> {
    let nd = prob.data_dim();
    let inv = prob.sigma_m().solve_matrix(&CMatrix::identity(nd, nd))?;
    let idx = prob.sampling().receiver_indices();
    let n = prob.state_dim();
    let mut out = CMatrix::zeros(n, n);
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            out[(i, j)] += inv[(a, b)];
        }
    }
    Ok(out)
}

/// Dense `A^* Sp^{-1} A + P^* Sm^{-1} P`.
pub(crate) fn normal_matrix<F: OperatorFamily>(prob: &Problem<F>, state: &StateFactor) -> Result<CMatrix> {
    let a = state.matrix();
    let process = a.ad_mul(&prob.sigma_p().solve_matrix(a)?);
    Ok(hermitian_part(&(process + data_precision_in_state(prob)?)))
}

pub(crate) struct StateSolution {
    pub u: CVector,
    pub iterations: usize,
    pub relres: f64,
}

pub(crate) fn solve_state_with(
    prob: &Problem<impl OperatorFamily>,
    state: &StateFactor,
) -> Result<StateSolution> {
    let a = state.matrix();
    let p = prob.sampling();
    let rhs = a.ad_mul(&prob.sigma_p().solve(prob.source())?) + p.rmatvec(&prob.sigma_m().solve(prob.data())?);
    let n = prob.state_dim();
    if n <= prob.policy().dense_state_limit {
        // Householder QR of the whitened stack [Lm^{-1} P; Lp^{-1} A] gives the
        // normal-equation solution without squaring the condition number.
        let nd = prob.data_dim();
        let mut stacked = CMatrix::zeros(nd + n, n);
        stacked
            .rows_mut(0, nd)
            .copy_from(&prob.sigma_m().whiten_matrix(&p.to_dense())?);
        stacked.rows_mut(nd, n).copy_from(&prob.sigma_p().whiten_matrix(a)?);
        let mut target = CVector::zeros(nd + n);
        target.rows_mut(0, nd).copy_from(&prob.sigma_m().whiten(prob.data())?);
        target.rows_mut(nd, n).copy_from(&prob.sigma_p().whiten(prob.source())?);
        let (q, r) = stacked.qr().unpack();
        let pivots: Vec<f64> = r.diagonal().iter().map(|z| z.norm()).collect();
        let largest = pivots.iter().cloned().fold(0.0, f64::max);
        let smallest = pivots.iter().cloned().fold(f64::INFINITY, f64::min);
        let condition = if smallest > 0.0 { (largest / smallest).powi(2) } else { f64::INFINITY };
        if !(condition < MAX_CONDITION) {
            return Err(Error::IllConditioned {
                what: "state normal matrix",
                condition,
            });
        }
        let u = r
            .solve_upper_triangular(&q.ad_mul(&target))
            .ok_or(Error::IllConditioned {
                what: "state normal matrix",
                condition,
            })?;
        let normal = normal_matrix(prob, state)?;
        let relres = (&normal * &u - &rhs).norm() / rhs.norm().max(f64::MIN_POSITIVE);
        Ok(StateSolution {
            u,
            iterations: 1,
            relres,
        })
    } else {
        let sigma_p = prob.sigma_p();
        let sigma_m = prob.sigma_m();
        let op = FnOperator::new(
            n,
            n,
            |x: &CVector| {
                let ax = a * x;
                a.ad_mul(&sigma_p.solve(&ax).expect("dimension checked"))
                    + p.rmatvec(&sigma_m.solve(&p.matvec(x)).expect("dimension checked"))
            },
            |x: &CVector| {
                let ax = a * x;
                a.ad_mul(&sigma_p.solve(&ax).expect("dimension checked"))
                    + p.rmatvec(&sigma_m.solve(&p.matvec(x)).expect("dimension checked"))
            },
        );
        let tol = prob.policy().tolerance;
        let report = cg(&op, &rhs, tol, 10 * n).map_err(|_| Error::IllConditioned {
            what: "state normal matrix",
            condition: f64::INFINITY,
        })?;
        Ok(StateSolution {
            u: report.solution,
            iterations: report.iterations,
            relres: report.relative_residual,
        })
    }
}

/// The wavefield minimizing the joint objective at fixed `m`, from the
/// normal equations `(A^* Sp^{-1} A + P^* Sm^{-1} P) u = A^* Sp^{-1} q + P^* Sm^{-1} d`.
pub fn solve_state<F: OperatorFamily>(prob: &Problem<F>, m: &MediumModel) -> Result<CVector> {
    let state = prob.factor(m)?;
    Ok(solve_state_with(prob, &state)?.u)
}

/// `|P u(m) - d|^2_{Sm} + |A(m) u(m) - q|^2_{Sp}` with `u(m)` from [`solve_state`].
pub fn phi_joint<F: OperatorFamily>(prob: &Problem<F>, m: &MediumModel) -> Result<ObjectiveReport> {
    let state = prob.factor(m)?;
    let solution = solve_state_with(prob, &state)?;
    let u = &solution.u;
    let data_misfit = prob.sampling().matvec(u) - prob.data();
    let process_misfit = state.matrix() * u - prob.source();
    let weighted = prob.sigma_m().solve(&data_misfit)?;
    let value = real_quadratic_form(data_misfit.dotc(&weighted))?
        + prob.sigma_p().weighted_norm_sq(&process_misfit)?;
    Ok(ObjectiveReport {
        value,
        residual: data_misfit,
        weighted_residual: weighted,
        gradient: None,
        solver_iterations: solution.iterations,
        solver_relres: solution.relres,
    })
}

/// `K = P A^{-1} Sp A^{-*} P^*`, i.e. `P (A^* Sp^{-1} A)^{-1} P^*`, one pair
/// of solves per receiver.
pub(crate) fn kernel_with(prob: &Problem<impl OperatorFamily>, state: &StateFactor) -> Result<CMatrix> {
    let p = prob.sampling();
    let pt = p.to_dense().adjoint();
    let z = state.solve_adjoint_matrix(&pt);
    let x = state.solve_matrix(&prob.sigma_p().apply_matrix(&z)?);
    let idx = p.receiver_indices();
    Ok(CMatrix::from_fn(idx.len(), idx.len(), |a, b| x[(idx[a], b)]))
}

pub fn sigma_of_m<F: OperatorFamily>(prob: &Problem<F>, m: &MediumModel) -> Result<CMatrix> {
    let state = prob.factor(m)?;
    kernel_with(prob, &state)
}

pub(crate) struct WeightedResidual {
    pub weighted: CVector,
    pub iterations: usize,
    pub relres: f64,
}

/// Solves `(K + Sm) x = r`.
pub(crate) fn solve_reduced_system(
    prob: &Problem<impl OperatorFamily>,
    state: &StateFactor,
    r: &CVector,
) -> Result<WeightedResidual> {
    let nd = prob.data_dim();
    let method = prob.policy().reduced_method(nd);
    let p = prob.sampling();
    let sigma_p = prob.sigma_p();
    let sigma_m = prob.sigma_m();
    let apply = |x: &CVector| -> CVector {
        let z = state.solve_adjoint(&p.rmatvec(x));
        let k = p.matvec(&state.solve(&sigma_p.apply(&z).expect("dimension checked")));
        k + sigma_m.apply(x).expect("dimension checked")
    };
    let (weighted, iterations) = match method {
        MddMethod::Cholesky | MddMethod::Auto => {
            let system = hermitian_part(&(kernel_with(prob, state)? + sigma_m.to_dense()));
            let factor = hpd_cholesky(system).ok_or(Error::IllConditioned {
                what: "reduced weight K(m) + Sm",
                condition: f64::INFINITY,
            })?;
            (factor.solve(r), 1)
        }
        MddMethod::Cg => {
            let op = FnOperator::new(nd, nd, apply, apply);
            let report = cg(&op, r, prob.policy().tolerance, 10 * nd).map_err(|_| Error::IllConditioned {
                what: "reduced weight K(m) + Sm",
                condition: f64::INFINITY,
            })?;
            (report.solution, report.iterations)
        }
        MddMethod::Lsqr => {
            let op = FnOperator::new(nd, nd, apply, apply);
            let report = lsqr(&op, r, 0.0, prob.policy().tolerance, 10 * nd)?;
            (report.solution, report.iterations)
        }
    };
    let rnorm = r.norm();
    let relres = if rnorm > 0.0 {
        (apply(&weighted) - r).norm() / rnorm
    } else {
        0.0
    };
    Ok(WeightedResidual {
        weighted,
        iterations,
        relres,
    })
}

/// `r^* (K(m) + Sm)^{-1} r` with `r = P A(m)^{-1} q - d`.
pub fn phi_reduced<F: OperatorFamily>(prob: &Problem<F>, m: &MediumModel) -> Result<ObjectiveReport> {
    let state = prob.factor(m)?;
    reduced_with(prob, &state)
}

pub(crate) fn reduced_with(prob: &Problem<impl OperatorFamily>, state: &StateFactor) -> Result<ObjectiveReport> {
    let residual = prob.sampling().matvec(&state.solve(prob.source())) - prob.data();
    let solved = solve_reduced_system(prob, state, &residual)?;
    let value = real_quadratic_form(residual.dotc(&solved.weighted))?;
    Ok(ObjectiveReport {
        value,
        residual,
        weighted_residual: solved.weighted,
        gradient: None,
        solver_iterations: solved.iterations,
        solver_relres: solved.relres,
    })
}

/// Conventional least-squares misfit `|P A(m)^{-1} q - d|^2_{Sm}`.
pub fn phi_conventional<F: OperatorFamily>(prob: &Problem<F>, m: &MediumModel) -> Result<ObjectiveReport> {
    let state = prob.factor(m)?;
    let residual = prob.sampling().matvec(&state.solve(prob.source())) - prob.data();
    let weighted = prob.sigma_m().solve(&residual)?;
    let value = real_quadratic_form(residual.dotc(&weighted))?;
    Ok(ObjectiveReport {
        value,
        residual,
        weighted_residual: weighted,
        gradient: None,
        solver_iterations: 0,
        solver_relres: 0.0,
    })
}

/// Equation-error misfit `|A(m) P^{-1} d - q|^2_{Sp}`, defined for square,
/// invertible sampling.
pub fn phi_equation_error<F: OperatorFamily>(prob: &Problem<F>, m: &MediumModel) -> Result<ObjectiveReport> {
    let state_estimate = prob.sampling().inverse_apply(prob.data())?;
    let a = prob.family().assemble(m)?;
    let residual = a.matvec(&state_estimate) - prob.source();
    let weighted = prob.sigma_p().solve(&residual)?;
    let value = real_quadratic_form(residual.dotc(&weighted))?;
    Ok(ObjectiveReport {
        value,
        residual,
        weighted_residual: weighted,
        gradient: None,
        solver_iterations: 0,
        solver_relres: 0.0,
    })
}
