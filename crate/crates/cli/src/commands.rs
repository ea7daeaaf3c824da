use std::fmt::Write as _;

use serde::Serialize;
use xfwi::formulations::instances::HelmholtzInstanceConfig;
use xfwi::formulations::{
    central_difference_gradient, grad_phi, gradient_check_floor, gradient_relative_errors, phi_reduced, verify_equivalence,
    verify_matrix_identity, GradientVariant,
};
use xfwi::toy::{estimate_extended_source, kernel_panels, scan_objective, Regime, ScanResult, ToyConfig};

use crate::output::{num, velocity_tag, Csv};

pub const EQUIVALENCE_TOLERANCE: f64 = 1e-9;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-6;
pub const SCAN_SUCCESS_FRACTION: f64 = 0.95;

/// Files to write plus a verdict and a human-readable summary.
pub struct CommandOutput {
    pub files: Vec<(String, String)>,
    pub passed: bool,
    pub summary: String,
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("summary types serialize");
    s.push('\n');
    s
}

pub fn equiv_check(cfg: &HelmholtzInstanceConfig, seed: u64) -> xfwi::Result<CommandOutput> {
    let mut csv = Csv::new(&["instance_id", "phi_joint", "phi_reduced", "rel_gap", "identity_max_err"]);
    let mut worst_gap: f64 = 0.0;
    let mut worst_identity: f64 = 0.0;
    for (i, inst) in cfg.build_all(seed)?.into_iter().enumerate() {
        let report = verify_equivalence(&inst.problem, std::slice::from_ref(&inst.m_eval))?;
        let row = &report.rows[0];
        let identity = verify_matrix_identity(&inst.problem, &inst.m_eval)?;
        worst_gap = worst_gap.max(row.rel_gap);
        worst_identity = worst_identity.max(identity);
        csv.row(&[i.to_string(), num(row.phi_joint), num(row.phi_reduced), num(row.rel_gap), num(identity)]);
    }
    let passed = worst_gap <= EQUIVALENCE_TOLERANCE;
    let summary = format!(
        "{} instances: max rel_gap {worst_gap:.3e} (limit {EQUIVALENCE_TOLERANCE:e}), max identity error {worst_identity:.3e}",
        cfg.instances
    );
    Ok(CommandOutput {
        files: vec![("equivalence.csv".into(), csv.into_string())],
        passed,
        summary,
    })
}

pub fn grad_check(cfg: &HelmholtzInstanceConfig, seed: u64) -> xfwi::Result<CommandOutput> {
    let inst = cfg.build(seed, 0)?;
    let prob = &inst.problem;
    let m = &inst.m_eval;
    let analytic = grad_phi(prob, m, GradientVariant::Derived)?;
    let paper = grad_phi(prob, m, GradientVariant::PaperVerbatim)?;
    let fd = central_difference_gradient(|m| phi_reduced(prob, m).map(|r| r.value), m, FD_STEP)?;
    let abs_floor = gradient_check_floor(prob.data_dim(), m);
    let err = gradient_relative_errors(&analytic, &fd, abs_floor);
    let paper_err = gradient_relative_errors(&paper, &fd, abs_floor);

    let mut csv = Csv::new(&["component_k", "analytic", "fd_central", "rel_err", "paper_variant", "paper_variant_rel_err"]);
    for k in 0..analytic.len() {
        csv.row(&[k.to_string(), num(analytic[k]), num(fd[k]), num(err[k]), num(paper[k]), num(paper_err[k])]);
    }
    let worst = err.amax();
    let summary = format!(
        "n = {}: max rel_err {worst:.3e} (limit {GRADIENT_TOLERANCE:e}); paper variant max rel_err {:.3e} (informational)",
        cfg.n,
        paper_err.amax()
    );
    Ok(CommandOutput {
        files: vec![("gradient.csv".into(), csv.into_string())],
        passed: worst <= GRADIENT_TOLERANCE,
        summary,
    })
}

pub fn kernel(cfg: &ToyConfig) -> xfwi::Result<CommandOutput> {
    let panels = kernel_panels(cfg)?;
    let nr = panels.n_receivers();
    let mut files = Vec::with_capacity(nr * nr + 1);
    let mut peaks = Csv::new(&["i", "j", "expected_lag", "measured_lag", "abs_delta"]);
    let mut passed = true;
    let mut worst: f64 = 0.0;
    for i in 0..nr {
        for j in 0..nr {
            let mut csv = Csv::new(&["lag", "value"]);
            for (lag, value) in panels.lags.iter().zip(panels.panel(i, j)) {
                csv.row(&[num(*lag as f64 * panels.dt), num(*value)]);
            }
            files.push((format!("kernel_{}{}.csv", i + 1, j + 1), csv.into_string()));
            let expected = panels.expected_lag(i, j);
            let measured = panels.peak_lag(i, j);
            let delta = (expected - measured).abs();
            worst = worst.max(delta);
            passed &= delta <= panels.dt * (1.0 + 1e-9);
            peaks.row(&[(i + 1).to_string(), (j + 1).to_string(), num(expected), num(measured), num(delta)]);
        }
    }
    files.push(("kernel_peaks.csv".into(), peaks.into_string()));
    let summary = format!("{} panels; max |expected - measured lag| = {worst:.3e} s (dt = {} s)", nr * nr, panels.dt);
    Ok(CommandOutput { files, passed, summary })
}

#[derive(Debug, Serialize)]
struct RegimeSummary {
    regime: &'static str,
    sigma_p: f64,
    sigma_m: f64,
    argmin: Option<f64>,
    basin_width_half_max: Option<f64>,
    success_fraction: f64,
}

impl From<&ScanResult> for RegimeSummary {
    fn from(s: &ScanResult) -> Self {
        Self {
            regime: s.regime.as_str(),
            sigma_p: s.sigma_p,
            sigma_m: s.sigma_m,
            argmin: s.argmin(),
            basin_width_half_max: s.basin_width(),
            success_fraction: s.success_fraction(),
        }
    }
}

#[derive(Debug, Serialize)]
struct ScanSummary {
    c_true: f64,
    regimes: Vec<RegimeSummary>,
    extended_basin_wider: Option<bool>,
}

fn status_cell(results: &[&ScanResult], i: usize) -> String {
    let failures: Vec<String> = results
        .iter()
        .filter(|r| !r.status[i].is_ok())
        .map(|r| format!("{} {}", r.regime, r.status[i]))
        .collect();
    if failures.is_empty() {
        "ok".into()
    } else {
        failures.join("; ")
    }
}

/// Scans the conventional and extended regimes; `--regime general` adds the
/// configured general weighting as extra columns.
pub fn scan(cfg: &ToyConfig, regime: Option<Regime>) -> xfwi::Result<CommandOutput> {
    let conventional = scan_objective(cfg, Regime::Conventional)?;
    let extended = scan_objective(cfg, Regime::Extended)?;
    let general = match regime {
        Some(Regime::General) => Some(scan_objective(cfg, Regime::General)?),
        _ => None,
    };
    let mut header = vec![
        "c",
        "phi_conventional_norm",
        "phi_extended_norm",
        "phi_conventional_raw",
        "phi_extended_raw",
        "iters_ext",
    ];
    if general.is_some() {
        header.extend(["phi_general_norm", "phi_general_raw", "iters_general"]);
    }
    header.push("status");
    let mut all: Vec<&ScanResult> = vec![&conventional, &extended];
    if let Some(g) = &general {
        all.push(g);
    }

    let mut csv = Csv::new(&header);
    for i in 0..conventional.c_values.len() {
        let mut row = vec![
            num(conventional.c_values[i]),
            num(conventional.phi_norm[i]),
            num(extended.phi_norm[i]),
            num(conventional.phi_raw[i]),
            num(extended.phi_raw[i]),
            extended.iterations[i].to_string(),
        ];
        if let Some(g) = &general {
            row.extend([num(g.phi_norm[i]), num(g.phi_raw[i]), g.iterations[i].to_string()]);
        }
        row.push(status_cell(&all, i));
        csv.row(&row);
    }

    let summary = ScanSummary {
        c_true: cfg.c_true,
        regimes: all.iter().map(|r| RegimeSummary::from(*r)).collect(),
        extended_basin_wider: match (extended.basin_width(), conventional.basin_width()) {
            (Some(e), Some(c)) => Some(e > c),
            _ => None,
        },
    };
    let passed = all.iter().all(|r| r.success_fraction() >= SCAN_SUCCESS_FRACTION);
    let mut text = String::new();
    for r in &summary.regimes {
        let _ = writeln!(
            text,
            "{}: argmin {:?}, half-max basin width {:?}, {:.0}% points ok",
            r.regime,
            r.argmin,
            r.basin_width_half_max,
            100.0 * r.success_fraction
        );
    }
    Ok(CommandOutput {
        files: vec![
            ("scan.csv".into(), csv.into_string()),
            ("scan_summary.json".into(), json(&summary)),
        ],
        passed,
        summary: text.trim_end().to_string(),
    })
}

#[derive(Debug, Serialize)]
struct ExtsrcSummary {
    velocity: f64,
    regime: &'static str,
    sigma_p: f64,
    sigma_m: f64,
    fit_rel_error: f64,
    clean_rel_error: f64,
    extension_norm_ratio: f64,
    iterations: usize,
}

/// Extended-source estimates at each velocity. This is an experiment, not a
/// check: the fit quality is reported and the command succeeds.
pub fn extsrc(cfg: &ToyConfig, velocities: &[f64], regime: Regime) -> xfwi::Result<CommandOutput> {
    let mut files = Vec::new();
    let mut summaries = Vec::new();
    let grid = cfg.time_grid()?;
    for &c in velocities {
        let est = estimate_extended_source(cfg, c, regime)?;
        let tag = velocity_tag(c);
        let mut src = Csv::new(&["t", "q", "f", "q_plus_f"]);
        for (k, t) in grid.times().enumerate() {
            let (q, f) = (est.source[k].re, est.extension[k].re);
            src.row(&[num(t), num(q), num(f), num(q + f)]);
        }
        let mut data = Csv::new(&["t", "receiver_id", "observed", "clean_model", "fitted"]);
        for i in 0..est.observed.n_receivers() {
            let (obs, clean, fit) = (est.observed.trace(i), est.clean_model.trace(i), est.fitted.trace(i));
            for (k, t) in grid.times().enumerate() {
                data.row(&[num(t), (i + 1).to_string(), num(obs[k].re), num(clean[k].re), num(fit[k].re)]);
            }
        }
        files.push((format!("extsrc_c{tag}.csv"), src.into_string()));
        files.push((format!("extdata_c{tag}.csv"), data.into_string()));
        summaries.push(ExtsrcSummary {
            velocity: c,
            regime: regime.as_str(),
            sigma_p: est.sigma_p,
            sigma_m: est.sigma_m,
            fit_rel_error: est.fit_error(),
            clean_rel_error: est.clean_error(),
            extension_norm_ratio: est.extension_ratio(),
            iterations: est.iterations,
        });
    }
    let summary = summaries
        .iter()
        .map(|s| {
            format!(
                "c = {}: {} regime, |F(q+f) - d|/|d| = {:.3e} (unextended {:.3e}), |f|/|q| = {:.3e}",
                s.velocity, s.regime, s.fit_rel_error, s.clean_rel_error, s.extension_norm_ratio
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    files.push(("extsrc_summary.json".into(), json(&summaries)));
    Ok(CommandOutput {
        files,
        passed: true,
        summary,
    })
}
