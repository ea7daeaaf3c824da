//! Linear solvers: LSQR (Golub-Kahan bidiagonalization), conjugate gradients,
//! dense Cholesky, and the regularized multidimensional deconvolution (MDD)
//! solve `(sigma_p^2 K + sigma_m^2 I) r~ = r`.
//!
//! All solvers are deterministic and start from the zero vector.


use crate::error::{check_dim, Error, Result};
use crate::linops::{hpd_cholesky, CMatrix, CVector, DenseOperator, FnOperator, LinearOperator, C64};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;

/// Systems up to this dimension are solved by dense factorization.
pub const DENSE_LIMIT: usize = 3000;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: CVector,
    pub iterations: usize,
    /// The stopping measure that was tested against the tolerance. For LSQR
    /// this is the normalized residual (compatible systems) or the normalized
    /// normal-equation residual (least-squares systems).
    pub relative_residual: f64,
    pub converged: bool,
}

fn sym_ortho(a: f64, b: f64) -> (f64, f64, f64) {
    if b == 0.0 {
        (a.signum(), 0.0, a.abs())
    } else if a == 0.0 {
        (0.0, b.signum(), b.abs())
    } else if b.abs() > a.abs() {
        let tau = a / b;
        let s = b.signum() / (1.0 + tau * tau).sqrt();
        let c = s * tau;
        (c, s, b / s)
    } else {
        let tau = b / a;
        let c = a.signum() / (1.0 + tau * tau).sqrt();
        let s = c * tau;
        (c, s, a / c)
    }
}

/// Minimizes `|A x - b|^2 + damp^2 |x|^2` with the Paige-Saunders LSQR
/// recurrences. Stops when either the residual test or the normal-equation
/// test drops below `tol` (used as both `atol` and `btol`).
pub fn lsqr<A: LinearOperator + ?Sized>(
    op: &A,
    b: &CVector,
    damp: f64,
    tol: f64,
    maxit: usize,
) -> Result<SolveReport> {
    check_dim("lsqr right-hand side", op.range_dim(), b.len())?;
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("lsqr tolerance must be positive, got {tol}")));
    }
    if !(damp >= 0.0 && damp.is_finite()) {
        return Err(Error::InvalidInput(format!("lsqr damping must be nonnegative, got {damp}")));
    }
    let n = op.domain_dim();
    let mut x = CVector::zeros(n);
    let bnorm = b.norm();
    if bnorm == 0.0 {
        return Ok(SolveReport {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        });
    }

    let dampsq = damp * damp;
    let mut u = b / C64::new(bnorm, 0.0);
    let mut v = op.rmatvec(&u);
    let mut alpha = v.norm();
    if alpha > 0.0 {
        v /= C64::new(alpha, 0.0);
    }
    let mut w = v.clone();

    let mut rhobar = alpha;
    let mut phibar = bnorm;
    if alpha * bnorm == 0.0 {
        // A^* b = 0: x = 0 is already the least-squares solution.
        return Ok(SolveReport {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        });
    }

    let mut anorm: f64 = 0.0;
    let mut res2 = 0.0;
    let mut xxnorm = 0.0;
    let mut z = 0.0;
    let mut cs2 = -1.0;
    let mut sn2 = 0.0;
    let mut relative_residual = 1.0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < maxit {
        iterations += 1;

        // Golub-Kahan step.
        u = op.matvec(&v) - u * C64::new(alpha, 0.0);
        let beta = u.norm();
        if beta > 0.0 {
            u /= C64::new(beta, 0.0);
            anorm = (anorm * anorm + alpha * alpha + beta * beta + dampsq).sqrt();
            v = op.rmatvec(&u) - v * C64::new(beta, 0.0);
            alpha = v.norm();
            if alpha > 0.0 {
                v /= C64::new(alpha, 0.0);
            }
        }

        // Eliminate the damping parameter.
        let (rhobar1, psi) = if damp > 0.0 {
            let rhobar1 = (rhobar * rhobar + dampsq).sqrt();
            let cs1 = rhobar / rhobar1;
            let sn1 = damp / rhobar1;
            let psi = sn1 * phibar;
            phibar *= cs1;
            (rhobar1, psi)
        } else {
            (rhobar, 0.0)
        };

        // Plane rotation removing the subdiagonal beta.
        let (cs, sn, rho) = sym_ortho(rhobar1, beta);
        let theta = sn * alpha;
        rhobar = -cs * alpha;
        let phi = cs * phibar;
        phibar *= sn;
        let tau = sn * phi;

        x += &w * C64::new(phi / rho, 0.0);
        w = &v - w * C64::new(theta / rho, 0.0);

        // |x| estimate.
        let delta = sn2 * rho;
        let gambar = -cs2 * rho;
        let rhs = phi - delta * z;
        let zbar = rhs / gambar;
        let xnorm = (xxnorm + zbar * zbar).sqrt();
        let gamma = (gambar * gambar + theta * theta).sqrt();
        cs2 = gambar / gamma;
        sn2 = theta / gamma;
        z = rhs / gamma;
        xxnorm += z * z;

        res2 += psi * psi;
        let rnorm = (phibar * phibar + res2).sqrt();
        let arnorm = alpha * tau.abs();

        let test1 = rnorm / bnorm;
        let test2 = if anorm * rnorm > 0.0 { arnorm / (anorm * rnorm) } else { 0.0 };
        let scaled_test1 = test1 / (1.0 + anorm * xnorm / bnorm);
        relative_residual = scaled_test1.min(test2);
        if scaled_test1 <= tol || test2 <= tol {
            converged = true;
            break;
        }
        if beta == 0.0 || alpha == 0.0 {
            // Krylov space exhausted; the iterate is exact up to round-off.
            converged = true;
            break;
        }
    }

    Ok(SolveReport {
        solution: x,
        iterations,
        relative_residual,
        converged,
    })
}

/// Conjugate gradients for a Hermitian positive definite operator.
pub fn cg<A: LinearOperator + ?Sized>(op: &A, b: &CVector, tol: f64, maxit: usize) -> Result<SolveReport> {
    check_dim("cg right-hand side", op.range_dim(), b.len())?;
    check_dim("cg square operator", op.range_dim(), op.domain_dim())?;
    let bnorm = b.norm();
    let mut x = CVector::zeros(b.len());
    if bnorm == 0.0 {
        return Ok(SolveReport {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        });
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    let mut iterations = 0;
    let mut relres = 1.0;
    while iterations < maxit {
        iterations += 1;
        let ap = op.matvec(&p);
        let curvature = p.dotc(&ap).re;
        if !(curvature > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "cg encountered non-positive curvature {curvature:e}"
            )));
        }
        let step = rr / curvature;
        x += &p * C64::new(step, 0.0);
        r -= &ap * C64::new(step, 0.0);
        let rr_new = r.norm_squared();
        relres = rr_new.sqrt() / bnorm;
        if relres <= tol {
            break;
        }
        p = &r + p * C64::new(rr_new / rr, 0.0);
        rr = rr_new;
    }
    Ok(SolveReport {
        solution: x,
        iterations,
        relative_residual: relres,
        converged: relres <= tol,
    })
}

pub(crate) fn hermitian_defect(m: &CMatrix) -> f64 {
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max) / scale
}

/// Cholesky solve of a dense Hermitian positive definite system.
pub fn dense_spd_solve(m: &CMatrix, b: &CVector) -> Result<CVector> {
    if !m.is_square() {
        return Err(Error::InvalidInput("dense_spd_solve needs a square matrix".into()));
    }
    check_dim("dense_spd_solve right-hand side", m.nrows(), b.len())?;
    let defect = hermitian_defect(m);
    if defect > 1e-12 {
        return Err(Error::InvalidInput(format!(
            "matrix is not Hermitian (relative defect {defect:.3e})"
        )));
    }
    let factor = hpd_cholesky(m.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?;
    Ok(factor.solve(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MddMethod {
    /// Dense Cholesky up to [`DENSE_LIMIT`], conjugate gradients above.
    #[default]
    Auto,
    Cholesky,
    Lsqr,
    Cg,
}

fn validate_weights(sigma_p: f64, sigma_m: f64) -> Result<()> {
    if !(sigma_p >= 0.0 && sigma_m >= 0.0 && sigma_p.is_finite() && sigma_m.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "noise levels must be nonnegative and finite, got sigma_p = {sigma_p}, sigma_m = {sigma_m}"
        )));
    }
    if sigma_p * sigma_p + sigma_m * sigma_m == 0.0 {
        return Err(Error::DegenerateWeights("sigma_p = sigma_m = 0".into()));
    }
    Ok(())
}

/// Solves `(sigma_p^2 K + sigma_m^2 I) r~ = r` for a dense Hermitian PSD
/// kernel `K`. The returned relative residual is recomputed from the
/// solution rather than taken from the solver.
pub fn mdd_solve(
    kernel: &CMatrix,
    sigma_p: f64,
    sigma_m: f64,
    r: &CVector,
    method: MddMethod,
) -> Result<SolveReport> {
    validate_weights(sigma_p, sigma_m)?;
    if !kernel.is_square() {
        return Err(Error::InvalidKernel("kernel must be square".into()));
    }
    check_dim("mdd right-hand side", kernel.nrows(), r.len())?;
    let defect = hermitian_defect(kernel);
    if defect > 1e-10 {
        return Err(Error::InvalidKernel(format!(
            "kernel is not Hermitian (relative defect {defect:.3e})"
        )));
    }
    let dim = r.len();
    let mut system = kernel * C64::new(sigma_p * sigma_p, 0.0);
    for i in 0..dim {
        system[(i, i)] += C64::new(sigma_m * sigma_m, 0.0);
    }
    // Symmetrize so round-off in K does not trip the factorization.
    let system = (&system + system.adjoint()) * C64::new(0.5, 0.0);

    let method = match method {
        MddMethod::Auto if dim <= DENSE_LIMIT => MddMethod::Cholesky,
        MddMethod::Auto => MddMethod::Cg,
        other => other,
    };
    let (solution, iterations, solver_converged) = match method {
        MddMethod::Cholesky => {
            let factor = hpd_cholesky(system.clone()).ok_or_else(|| {
                if sigma_m > 0.0 {
                    Error::InvalidKernel("kernel is indefinite beyond tolerance".into())
                } else {
                    Error::NotPositiveDefinite("sigma_m = 0 and the kernel is singular".into())
                }
            })?;
            (factor.solve(r), 1, true)
        }
        MddMethod::Lsqr => {
            let op = DenseOperator::new(system.clone());
            let report = lsqr(&op, r, 0.0, DEFAULT_TOLERANCE, 10 * dim)?;
            (report.solution, report.iterations, report.converged)
        }
        MddMethod::Cg => {
            let op = DenseOperator::new(system.clone());
            let report = cg(&op, r, DEFAULT_TOLERANCE, 10 * dim).map_err(|e| match e {
                Error::NotPositiveDefinite(msg) => Error::InvalidKernel(msg),
                other => other,
            })?;
            (report.solution, report.iterations, report.converged)
        }
        MddMethod::Auto => unreachable!(),
    };
    let rnorm = r.norm();
    let relres = if rnorm > 0.0 {
        (&system * &solution - r).norm() / rnorm
    } else {
        0.0
    };
    Ok(SolveReport {
        solution,
        iterations,
        relative_residual: relres,
        converged: solver_converged,
    })
}

/// Result of the factored MDD solve.
#[derive(Debug, Clone)]
pub struct MddSolution {
    /// `r~ = (sigma_p^2 F F^* + sigma_m^2 I)^{-1} r`.
    pub weighted_residual: CVector,
    /// `g = sigma_p F^* r~`, the damped least-squares solution.
    pub coefficients: CVector,
    /// Inner product `Re <r, r~>`.
    pub value: f64,
    pub report: SolveReport,
}

/// MDD solve for a kernel given in factored form `K = F F^*`, without
/// assembling `K`.
///
/// Runs damped LSQR on `min |sigma_p F g - r|^2 + sigma_m^2 |g|^2` and recovers
/// `r~ = (r - sigma_p F g) / sigma_m^2`, which is exact by the push-through
/// identity. Requires `sigma_m > 0`.
pub fn mdd_solve_factored<A: LinearOperator + ?Sized>(
    forward: &A,
    sigma_p: f64,
    sigma_m: f64,
    r: &CVector,
    tol: f64,
    maxit: usize,
) -> Result<MddSolution> {
    validate_weights(sigma_p, sigma_m)?;
    if sigma_m == 0.0 {
        return Err(Error::DegenerateWeights(
            "the factored MDD solve needs sigma_m > 0".into(),
        ));
    }
    check_dim("mdd right-hand side", forward.range_dim(), r.len())?;
    let scaled = FnOperator::new(
        forward.domain_dim(),
        forward.range_dim(),
        |x: &CVector| forward.matvec(x) * C64::new(sigma_p, 0.0),
        |y: &CVector| forward.rmatvec(y) * C64::new(sigma_p, 0.0),
    );
    let report = if sigma_p > 0.0 {
        lsqr(&scaled, r, sigma_m, tol, maxit)?
    } else {
        SolveReport {
            solution: CVector::zeros(forward.domain_dim()),
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        }
    };
    let fit = scaled.matvec(&report.solution);
    let weighted_residual = (r - fit) / C64::new(sigma_m * sigma_m, 0.0);
    let value = r.dotc(&weighted_residual).re;
    Ok(MddSolution {
        weighted_residual,
        coefficients: report.solution.clone(),
        value,
        report,
    })
}
