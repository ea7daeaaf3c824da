//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the libtest
//! harness so the lines are always printed; exits non-zero if any criterion
//! fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use xfwi::formulations::instances::{random_affine_instance, HelmholtzInstance, HelmholtzInstanceConfig};
use xfwi::formulations::*;
use xfwi::linops::{dot_test, CVector, CovarianceSpec, DenseOperator, Identity, SamplingOperator};
use xfwi::toy::{estimate_extended_source, kernel_panels, scan_objective, Regime, ToyConfig, ToySolver};
use xfwi::wavemodel::{Acquisition, Boundary, ConstantVelocityPropagator, HelmholtzModel1D, MediumModel, TimeGrid};

const SEED: u64 = 42;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn instances() -> Vec<HelmholtzInstance> {
    HelmholtzInstanceConfig::default().build_all(SEED).expect("default instances")
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn equivalence_theorem() -> Outcome {
    let start = Instant::now();
    let all = instances();
    let mut worst: f64 = 0.0;
    for inst in &all {
        let j = phi_joint(&inst.problem, &inst.m_eval).map_err(|e| e.to_string())?.value;
        let r = phi_reduced(&inst.problem, &inst.m_eval).map_err(|e| e.to_string())?.value;
        worst = worst.max((j - r).abs() / (1.0 + j));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        all.len() >= 20 && worst <= 1e-9 && secs < 10.0,
        format!("{} instances, max |joint - reduced|/(1 + joint) = {worst:.3e} (<= 1e-9), {secs:.2} s (< 10 s)", all.len()),
    )
}

fn matrix_identity() -> Outcome {
    let mut worst_helmholtz: f64 = 0.0;
    for inst in &instances() {
        worst_helmholtz = worst_helmholtz.max(verify_matrix_identity(&inst.problem, &inst.m_eval).map_err(|e| e.to_string())?);
    }
    let mut worst_complex: f64 = 0.0;
    for seed in 0..20 {
        let (prob, m) = random_affine_instance(20, 3, 4, SEED + seed).map_err(|e| e.to_string())?;
        worst_complex = worst_complex.max(verify_matrix_identity(&prob, &m).map_err(|e| e.to_string())?);
    }
    check(
        worst_helmholtz <= 1e-9 && worst_complex <= 1e-9,
        format!("max entrywise error {worst_helmholtz:.3e} (Helmholtz), {worst_complex:.3e} (random complex A), limit 1e-9"),
    )
}

fn gradient() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for n in [10, 20, 50] {
        let cfg = HelmholtzInstanceConfig {
            n,
            ..Default::default()
        };
        let inst = cfg.build(SEED, 0).map_err(|e| e.to_string())?;
        let prob = &inst.problem;
        let m = &inst.m_eval;
        let analytic = grad_phi(prob, m, GradientVariant::Derived).map_err(|e| e.to_string())?;
        let paper = grad_phi(prob, m, GradientVariant::PaperVerbatim).map_err(|e| e.to_string())?;
        let fd = central_difference_gradient(|m| phi_reduced(prob, m).map(|r| r.value), m, 1e-6).map_err(|e| e.to_string())?;
        let floor = gradient_check_floor(prob.data_dim(), m);
        let err = gradient_relative_errors(&analytic, &fd, floor).amax();
        let paper_err = gradient_relative_errors(&paper, &fd, floor).amax();
        ok &= err <= 1e-4;
        details.push(format!("n={n}: {err:.2e} (paper variant {paper_err:.2e})"));
    }
    check(ok, format!("max FD relative error, limit 1e-4; {}", details.join(", ")))
}

fn limits() -> Outcome {
    let mut worst_conv: f64 = 0.0;
    let mut worst_ee: f64 = 0.0;
    for inst in instances().iter().take(10) {
        let prob = &inst.problem;
        let n = prob.state_dim();
        let d_norm = prob.data().norm();

        let sp = 1e-8 * d_norm;
        let p_conv = prob
            .with_covariances(prob.sigma_m().clone(), CovarianceSpec::scaled_identity(n, sp * sp).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let red = phi_reduced(&p_conv, &inst.m_eval).map_err(|e| e.to_string())?.value;
        let conv = phi_conventional(&p_conv, &inst.m_eval).map_err(|e| e.to_string())?.value;
        worst_conv = worst_conv.max(rel(red, conv));

        let full = Problem::new(
            prob.family().clone(),
            SamplingOperator::full(n),
            prob.source().clone(),
            CVector::zeros(n),
            CovarianceSpec::identity(n),
            prob.sigma_p().clone(),
        )
        .map_err(|e| e.to_string())?;
        let d_full = full.clean_data(&inst.m_true).map_err(|e| e.to_string())?;
        let sm = 1e-8 * d_full.norm();
        let full = full
            .with_data(d_full)
            .and_then(|p| p.with_covariances(CovarianceSpec::scaled_identity(n, sm * sm)?, prob.sigma_p().clone()))
            .map_err(|e| e.to_string())?;
        let red = phi_reduced(&full, &inst.m_eval).map_err(|e| e.to_string())?.value;
        let ee = phi_equation_error(&full, &inst.m_eval).map_err(|e| e.to_string())?.value;
        worst_ee = worst_ee.max(rel(red, ee));
    }
    check(
        worst_conv <= 1e-5 && worst_ee <= 1e-5,
        format!("sigma_p floor: max gap to conventional {worst_conv:.3e}; sigma_m floor, P = I: max gap to equation error {worst_ee:.3e}; limit 1e-5"),
    )
}

fn kernel_events() -> Outcome {
    let start = Instant::now();
    let cfg = ToyConfig::default();
    let panels = kernel_panels(&cfg).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            worst = worst.max((panels.peak_lag(i, j) - panels.expected_lag(i, j)).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= cfg.dt && secs < 5.0,
        format!("9 panels, max |peak lag - (r_i - r_j)/c| = {worst:.3e} s (<= dt = {} s), {secs:.2} s (< 5 s)", cfg.dt),
    )
}

fn extended_source_fit() -> Outcome {
    let cfg = ToyConfig::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for c in [1.8, 2.2] {
        let ext = estimate_extended_source(&cfg, c, Regime::Extended).map_err(|e| e.to_string())?;
        let conv = estimate_extended_source(&cfg, c, Regime::Conventional).map_err(|e| e.to_string())?;
        let fit = ext.fit_error();
        let never_worse = fit <= ext.clean_error();
        ok &= fit <= 1e-3 && conv.extension_ratio() <= 1e-8 && never_worse;
        parts.push(format!(
            "c={c}: extended fit {fit:.3e} (<= 1e-3), unextended {:.3e}, conventional |f|/|q| {:.1e} (<= 1e-8)",
            ext.clean_error(),
            conv.extension_ratio()
        ));
    }
    // The dense solve gives the exact least-squares optimum over all
    // extensions f; agreement shows the LSQR fit is not a solver artifact.
    let dense = ToyConfig {
        solver: ToySolver::Dense,
        ..Default::default()
    };
    let dense_fit = estimate_extended_source(&dense, 1.8, Regime::Extended).map_err(|e| e.to_string())?.fit_error();
    parts.push(format!("dense K solve at c=1.8: fit {dense_fit:.3e}"));
    check(ok, parts.join("; "))
}

fn objective_scan() -> Outcome {
    let start = Instant::now();
    let cfg = ToyConfig::default();
    let conv = scan_objective(&cfg, Regime::Conventional).map_err(|e| e.to_string())?;
    let ext = scan_objective(&cfg, Regime::Extended).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let argmin_c = conv.argmin().unwrap_or(f64::NAN);
    let argmin_e = ext.argmin().unwrap_or(f64::NAN);
    let wc = conv.basin_width().unwrap_or(f64::NAN);
    let we = ext.basin_width().unwrap_or(f64::NAN);
    let on_truth = |a: f64| (a - 2.0).abs() <= 1e-12;
    check(
        conv.c_values.len() == 101 && on_truth(argmin_c) && on_truth(argmin_e) && we > wc && secs < 60.0,
        format!(
            "argmin conventional {argmin_c}, extended {argmin_e}; half-max basin width extended {we:.4} > conventional {wc:.4} km/s; {secs:.2} s (< 60 s)"
        ),
    )
}

fn appendix_a() -> Outcome {
    let mut worst_f: f64 = 0.0;
    let mut worst_w: f64 = 0.0;
    for inst in &instances() {
        let prob = &inst.problem;
        let joint = phi_joint(prob, &inst.m_eval).map_err(|e| e.to_string())?.value;
        let (_, f_min) = minimize_extended_source(prob, &inst.m_eval).map_err(|e| e.to_string())?;
        let background = MediumModel::from_velocity(prob.state_dim(), 2.0).map_err(|e| e.to_string())?;
        let (_, w_min) = minimize_contrast_source(prob, &inst.m_eval, &background).map_err(|e| e.to_string())?;
        worst_f = worst_f.max(rel(f_min, joint));
        worst_w = worst_w.max(rel(w_min, joint));
    }
    check(
        worst_f <= 1e-9 && worst_w <= 1e-9,
        format!("20 instances (n = 20): min over f gap {worst_f:.3e}, min over w gap {worst_w:.3e}, limit 1e-9"),
    )
}

fn run_cli(args: &[&str], out: &Path) -> std::io::Result<std::process::ExitStatus> {
    Command::new(env!("CARGO_BIN_EXE_xfwi"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .map(|o| o.status)
}

fn infrastructure() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut names = Vec::new();
    let mut record = |name: &str, v: f64| {
        worst = worst.max(v);
        names.push(format!("{name} {v:.1e}"));
    };
    record("identity", dot_test(&Identity::new(16), 5, SEED));
    let inst = &instances()[0];
    let a = inst.problem.family().assemble(&inst.m_eval).map_err(|e| e.to_string())?;
    record("helmholtz-absorbing", dot_test(&a, 5, SEED));
    let dirichlet = HelmholtzModel1D::new(20, 1.0 / 19.0, 6.0, Boundary::Dirichlet).map_err(|e| e.to_string())?;
    record(
        "helmholtz-dirichlet",
        dot_test(&dirichlet.assemble_a(&inst.m_eval).map_err(|e| e.to_string())?, 5, SEED),
    );
    record("dA/dm", dot_test(&dirichlet.d_a_dm(3).map_err(|e| e.to_string())?, 5, SEED));
    record("sampling", dot_test(inst.problem.sampling(), 5, SEED));
    let k = sigma_of_m(&inst.problem, &inst.m_eval).map_err(|e| e.to_string())?;
    record("kernel", dot_test(&DenseOperator::new(k), 5, SEED));
    let acq = Acquisition::inline(&[0.8, 1.0, 1.2], TimeGrid::new(512, 0.004).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    for c in [1.5, 2.0, 2.5] {
        let f = ConstantVelocityPropagator::new(c, &acq).map_err(|e| e.to_string())?;
        record(&format!("F(c={c})"), dot_test(&f, 5, SEED));
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut identical = true;
    for (cmd, files) in [
        ("scan", vec!["scan.csv"]),
        ("equiv-check", vec!["equivalence.csv"]),
        ("grad-check", vec!["gradient.csv"]),
    ] {
        let a = dir.path().join(format!("{cmd}-a"));
        let b = dir.path().join(format!("{cmd}-b"));
        for out in [&a, &b] {
            let status = run_cli(&[cmd, "--seed", "7"], out).map_err(|e| e.to_string())?;
            if !status.success() {
                return Err(format!("{cmd} exited with {status}"));
            }
        }
        for f in files {
            let x = std::fs::read(a.join(f)).map_err(|e| e.to_string())?;
            let y = std::fs::read(b.join(f)).map_err(|e| e.to_string())?;
            identical &= x == y;
        }
    }
    check(
        worst <= 1e-10 && identical,
        format!(
            "max dot-test mismatch {worst:.2e} (<= 1e-10) over [{}]; repeated runs byte-identical: {identical}",
            names.join(", ")
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 equivalence theorem", equivalence_theorem),
        ("2 matrix identity", matrix_identity),
        ("3 gradient", gradient),
        ("4 limits", limits),
        ("5 kernel events", kernel_events),
        ("6 extended-source fit", extended_source_fit),
        ("7 objective scan", objective_scan),
        ("8 auxiliary-variable forms", appendix_a),
        ("9 infrastructure", infrastructure),
    ];
    let mut failed = Vec::new();
    for (name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS [{name}] {detail}"),
            Err(detail) => {
                println!("FAIL [{name}] {detail}");
                failed.push(name);
            }
        }
    }
    if !failed.is_empty() {
        println!("{} of 9 criteria failed: {}", failed.len(), failed.join(", "));
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
