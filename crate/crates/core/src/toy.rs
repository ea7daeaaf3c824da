//! Constant-velocity experiment with one source and three receivers: data at
//! the true velocity, extended-source estimates at wrong velocities, and
//! scans of the reduced objective over velocity.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{CVector, LinearOperator, C64};
use crate::solvers::{mdd_solve, mdd_solve_factored, MddMethod, DEFAULT_TOLERANCE};
use crate::wavemodel::{kernel_k, kernel_matrix, Acquisition, ConstantVelocityPropagator, Dataset, KernelPanels, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Wavelet {
    /// `(1 - 2 pi^2 f0^2 (t - t0)^2) exp(-pi^2 f0^2 (t - t0)^2)`.
    Ricker { f0: f64, t0: f64 },
    /// Unit sample at `round(t0 / dt)`.
    Spike { t0: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanRange {
    pub c_min: f64,
    pub c_max: f64,
    pub n_points: usize,
}

impl ScanRange {
    /// `c_min + (c_max - c_min) i / (n - 1)`.
    pub fn values(&self) -> Vec<f64> {
        let span = self.c_max - self.c_min;
        let last = (self.n_points - 1) as f64;
        (0..self.n_points).map(|i| self.c_min + span * i as f64 / last).collect()
    }
}

/// How the weight `(sigma_p^2 K + sigma_m^2 I)^{-1}` is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ToySolver {
    /// Damped LSQR on `F` without forming `K`.
    #[default]
    Lsqr,
    /// Dense `K = F F^*` and a Cholesky solve.
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    /// km/s.
    pub c_true: f64,
    /// Source-receiver distances in km.
    pub receiver_distances: Vec<f64>,
    pub nt: usize,
    /// Seconds.
    pub dt: f64,
    pub wavelet: Wavelet,
    pub sigma_m: f64,
    pub sigma_p: f64,
    /// A limiting standard deviation is realized as `floor * |d|`.
    pub floor: f64,
    pub scan: ScanRange,
    pub solver: ToySolver,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            c_true: 2.0,
            receiver_distances: vec![0.8, 1.0, 1.2],
            nt: 512,
            dt: 0.004,
            wavelet: Wavelet::Ricker { f0: 10.0, t0: 0.15 },
            sigma_m: 1.0,
            sigma_p: 1.0,
            floor: 1e-6,
            scan: ScanRange {
                c_min: 1.5,
                c_max: 2.5,
                n_points: 101,
            },
            solver: ToySolver::Lsqr,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: 5000,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_true > 0.0 && self.c_true.is_finite()) {
            return Err(Error::InvalidInput(format!("c_true must be positive, got {}", self.c_true)));
        }
        if self.receiver_distances.is_empty() {
            return Err(Error::InvalidInput("at least one receiver distance is required".into()));
        }
        if let Some(r) = self.receiver_distances.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidInput(format!("receiver distances must be positive, got {r}")));
        }
        TimeGrid::new(self.nt, self.dt)?;
        let record = (self.nt - 1) as f64 * self.dt;
        match self.wavelet {
            Wavelet::Ricker { f0, t0 } => {
                let limit = 0.25 / self.dt;
                if !(f0 > 0.0 && f0 < limit) {
                    return Err(Error::InvalidInput(format!(
                        "Ricker peak frequency {f0} Hz must lie in (0, {limit}) Hz (half the Nyquist frequency) to avoid aliasing"
                    )));
                }
                if !(0.0..=record).contains(&t0) {
                    return Err(Error::InvalidInput(format!("wavelet delay {t0} s outside the record")));
                }
            }
            Wavelet::Spike { t0 } => {
                if !(0.0..=record).contains(&t0) {
                    return Err(Error::InvalidInput(format!("spike time {t0} s outside the record")));
                }
            }
        }
        if !(self.sigma_m >= 0.0 && self.sigma_p >= 0.0 && self.sigma_m.is_finite() && self.sigma_p.is_finite()) {
            return Err(Error::InvalidInput("sigma_m and sigma_p must be nonnegative and finite".into()));
        }
        if self.sigma_m == 0.0 && self.sigma_p == 0.0 {
            return Err(Error::DegenerateWeights("sigma_m = sigma_p = 0".into()));
        }
        if !(self.floor > 0.0 && self.floor < 1.0) {
            return Err(Error::InvalidInput(format!("floor must lie in (0, 1), got {}", self.floor)));
        }
        let ScanRange { c_min, c_max, n_points } = self.scan;
        if !(c_min > 0.0 && c_min < c_max && c_max.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "scan range must satisfy 0 < c_min < c_max, got [{c_min}, {c_max}]"
            )));
        }
        if n_points < 2 {
            return Err(Error::InvalidInput(format!("scan needs at least 2 points, got {n_points}")));
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::InvalidInput("solver tolerance and iteration limit must be positive".into()));
        }
        Ok(())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.nt, self.dt)
    }

    pub fn acquisition(&self) -> Result<Acquisition> {
        Acquisition::inline(&self.receiver_distances, self.time_grid()?)
    }
}

/// Source time function sampled at `t = i dt`.
pub fn make_wavelet(cfg: &ToyConfig) -> Result<CVector> {
    cfg.validate()?;
    let grid = cfg.time_grid()?;
    Ok(match cfg.wavelet {
        Wavelet::Ricker { f0, t0 } => CVector::from_iterator(
            grid.nt,
            grid.times().map(|t| {
                let a = (PI * f0 * (t - t0)).powi(2);
                C64::new((1.0 - 2.0 * a) * (-a).exp(), 0.0)
            }),
        ),
        Wavelet::Spike { t0 } => {
            let mut q = CVector::zeros(grid.nt);
            let idx = ((t0 / grid.dt).round() as usize).min(grid.nt - 1);
            q[idx] = C64::new(1.0, 0.0);
            q
        }
    })
}

/// Noise-free observed data `F(c_true) q`.
pub fn synthesize_data(cfg: &ToyConfig) -> Result<Dataset> {
    let q = make_wavelet(cfg)?;
    let acq = cfg.acquisition()?;
    let op = ConstantVelocityPropagator::new(cfg.c_true, &acq)?;
    Dataset::from_stacked(acq.n_receivers(), cfg.nt, op.apply(&q)?)
}

/// Kernel panels at the true velocity.
pub fn kernel_panels(cfg: &ToyConfig) -> Result<KernelPanels> {
    cfg.validate()?;
    kernel_k(cfg.c_true, &cfg.acquisition()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// `sigma_p -> 0`: the conventional misfit `|r|^2 / sigma_m^2`.
    Conventional,
    /// `sigma_m -> 0`: the misfit weighted by `(sigma_p^2 K)^{-1}`.
    Extended,
    /// Both standard deviations as configured.
    General,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Conventional, Regime::Extended, Regime::General];

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Conventional => "conventional",
            Regime::Extended => "extended",
            Regime::General => "general",
        }
    }

    /// `(sigma_p, sigma_m)` for this regime, with the vanishing one replaced
    /// by `floor * data_norm`.
    pub fn weights(&self, cfg: &ToyConfig, data_norm: f64) -> (f64, f64) {
        let limit = cfg.floor * data_norm;
        match self {
            Regime::Conventional => (limit, cfg.sigma_m),
            Regime::Extended => (cfg.sigma_p, limit),
            Regime::General => (cfg.sigma_p, cfg.sigma_m),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conventional" => Ok(Regime::Conventional),
            "extended" => Ok(Regime::Extended),
            "general" => Ok(Regime::General),
            other => Err(Error::InvalidInput(format!(
                "unknown regime '{other}', expected conventional, extended or general"
            ))),
        }
    }
}

/// Result of the weighted solve at one velocity.
struct WeightedSolve {
    /// `(sigma_p^2 K + sigma_m^2 I)^{-1} r`.
    weighted_residual: CVector,
    /// `-sigma_p^2 F^* r~`.
    extension: CVector,
    value: f64,
    iterations: usize,
    relres: f64,
}

fn weighted_solve(
    cfg: &ToyConfig,
    op: &ConstantVelocityPropagator,
    acq: &Acquisition,
    sigma_p: f64,
    sigma_m: f64,
    r: &CVector,
) -> Result<WeightedSolve> {
    match cfg.solver {
        ToySolver::Lsqr => {
            let sol = mdd_solve_factored(op, sigma_p, sigma_m, r, cfg.tolerance, cfg.max_iterations)?;
            Ok(WeightedSolve {
                extension: -(&sol.coefficients * C64::new(sigma_p, 0.0)),
                weighted_residual: sol.weighted_residual,
                value: sol.value,
                iterations: sol.report.iterations,
                relres: sol.report.relative_residual,
            })
        }
        ToySolver::Dense => {
            let kernel = kernel_matrix(op.velocity(), acq)?;
            let report = mdd_solve(&kernel, sigma_p, sigma_m, r, MddMethod::Cholesky)?;
            let extension = -(op.rmatvec(&report.solution) * C64::new(sigma_p * sigma_p, 0.0));
            Ok(WeightedSolve {
                value: r.dotc(&report.solution).re,
                weighted_residual: report.solution,
                extension,
                iterations: report.iterations,
                relres: report.relative_residual,
            })
        }
    }
}

/// Extended source at a trial velocity.
#[derive(Debug, Clone)]
pub struct ExtendedSourceEstimate {
    pub velocity: f64,
    pub regime: Regime,
    pub sigma_p: f64,
    pub sigma_m: f64,
    pub source: CVector,
    /// `f = -sigma_p^2 F^* r~`, minimizing `|F (q + f) - d|^2 / sigma_m^2 + |f|^2 / sigma_p^2`.
    pub extension: CVector,
    /// `r~ = (sigma_p^2 F F^* + sigma_m^2 I)^{-1} (F q - d)`.
    pub weighted_residual: CVector,
    pub observed: Dataset,
    /// `F q`.
    pub clean_model: Dataset,
    /// `F (q + f)`.
    pub fitted: Dataset,
    pub iterations: usize,
    pub relres: f64,
}

impl ExtendedSourceEstimate {
    /// `|F (q + f) - d| / |d|`.
    pub fn fit_error(&self) -> f64 {
        (self.fitted.stacked() - self.observed.stacked()).norm() / self.observed.norm().max(f64::MIN_POSITIVE)
    }

    /// `|F q - d| / |d|`.
    pub fn clean_error(&self) -> f64 {
        (self.clean_model.stacked() - self.observed.stacked()).norm() / self.observed.norm().max(f64::MIN_POSITIVE)
    }

    /// `|f| / |q|`.
    pub fn extension_ratio(&self) -> f64 {
        self.extension.norm() / self.source.norm().max(f64::MIN_POSITIVE)
    }
}

pub fn estimate_extended_source(cfg: &ToyConfig, c: f64, regime: Regime) -> Result<ExtendedSourceEstimate> {
    let q = make_wavelet(cfg)?;
    let observed = synthesize_data(cfg)?;
    let acq = cfg.acquisition()?;
    let op = ConstantVelocityPropagator::new(c, &acq)?;
    let (sigma_p, sigma_m) = regime.weights(cfg, observed.norm());
    let clean = op.apply(&q)?;
    let r = &clean - observed.stacked();
    let solved = weighted_solve(cfg, &op, &acq, sigma_p, sigma_m, &r)?;
    let fitted = op.apply(&(&q + &solved.extension))?;
    let nr = acq.n_receivers();
    Ok(ExtendedSourceEstimate {
        velocity: c,
        regime,
        sigma_p,
        sigma_m,
        source: q,
        extension: solved.extension,
        weighted_residual: solved.weighted_residual,
        observed,
        clean_model: Dataset::from_stacked(nr, cfg.nt, clean)?,
        fitted: Dataset::from_stacked(nr, cfg.nt, fitted)?,
        iterations: solved.iterations,
        relres: solved.relres,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum PointStatus {
    Ok,
    Failed(String),
}

impl PointStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, PointStatus::Ok)
    }
}

impl fmt::Display for PointStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PointStatus::Ok => f.write_str("ok"),
            PointStatus::Failed(msg) => write!(f, "failed: {msg}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScanResult {
    pub regime: Regime,
    pub sigma_p: f64,
    pub sigma_m: f64,
    pub c_values: Vec<f64>,
    /// NaN where the point failed.
    pub phi_raw: Vec<f64>,
    /// `phi_raw / max(phi_raw)` over the successful points.
    pub phi_norm: Vec<f64>,
    pub iterations: Vec<usize>,
    pub relres: Vec<f64>,
    pub status: Vec<PointStatus>,
}

impl ScanResult {
    pub fn success_fraction(&self) -> f64 {
        self.status.iter().filter(|s| s.is_ok()).count() as f64 / self.status.len() as f64
    }

    /// Index of the smallest successful value (first on ties).
    pub fn argmin_index(&self) -> Option<usize> {
        self.phi_raw
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
                Some((_, b)) if b <= v => best,
                _ => Some((i, v)),
            })
            .map(|(i, _)| i)
    }

    pub fn argmin(&self) -> Option<f64> {
        self.argmin_index().map(|i| self.c_values[i])
    }

    /// Width of the contiguous interval around the argmin where the
    /// normalized curve stays at or below one half, with linear
    /// interpolation at the crossings. Clipped to the scan range.
    pub fn basin_width(&self) -> Option<f64> {
        half_max_basin_width(&self.c_values, &self.phi_norm, self.argmin_index()?)
    }
}

/// Half-max width of the basin containing `center` on the curve `y(x)`.
pub fn half_max_basin_width(x: &[f64], y: &[f64], center: usize) -> Option<f64> {
    let level = 0.5;
    if center >= x.len() || !(y[center] <= level) {
        return None;
    }
    let crossing = |inside: usize, outside: usize| -> f64 {
        let (y0, y1) = (y[inside], y[outside]);
        if !y1.is_finite() || y1 == y0 {
            return x[inside];
        }
        let t = (level - y0) / (y1 - y0);
        x[inside] + t * (x[outside] - x[inside])
    };
    let mut left = center;
    while left > 0 && y[left - 1] <= level {
        left -= 1;
    }
    let lo = if left == 0 { x[0] } else { crossing(left, left - 1) };
    let mut right = center;
    while right + 1 < x.len() && y[right + 1] <= level {
        right += 1;
    }
    let hi = if right + 1 == x.len() { x[right] } else { crossing(right, right + 1) };
    Some(hi - lo)
}

/// Evaluates the reduced objective over the configured velocity grid.
/// Failures at single points are recorded and the scan continues.
pub fn scan_objective(cfg: &ToyConfig, regime: Regime) -> Result<ScanResult> {
    let q = make_wavelet(cfg)?;
    let observed = synthesize_data(cfg)?;
    let acq = cfg.acquisition()?;
    let (sigma_p, sigma_m) = regime.weights(cfg, observed.norm());
    let c_values = cfg.scan.values();

    let evaluate = |c: f64| -> Result<(f64, usize, f64)> {
        let op = ConstantVelocityPropagator::new(c, &acq)?;
        let r = op.apply(&q)? - observed.stacked();
        match regime {
            Regime::Conventional => Ok((r.norm_squared() / (sigma_m * sigma_m), 0, 0.0)),
            Regime::Extended | Regime::General => {
                let solved = weighted_solve(cfg, &op, &acq, sigma_p, sigma_m, &r)?;
                Ok((solved.value.max(0.0), solved.iterations, solved.relres))
            }
        }
    };

    let mut phi_raw = Vec::with_capacity(c_values.len());
    let mut iterations = Vec::with_capacity(c_values.len());
    let mut relres = Vec::with_capacity(c_values.len());
    let mut status = Vec::with_capacity(c_values.len());
    for &c in &c_values {
        match evaluate(c) {
            Ok((value, its, res)) => {
                phi_raw.push(value);
                iterations.push(its);
                relres.push(res);
                status.push(PointStatus::Ok);
            }
            Err(e) => {
                phi_raw.push(f64::NAN);
                iterations.push(0);
                relres.push(f64::NAN);
                status.push(PointStatus::Failed(e.to_string()));
            }
        }
    }
    let peak = phi_raw.iter().cloned().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let phi_norm = phi_raw
        .iter()
        .map(|v| if peak > 0.0 { v / peak } else { *v })
        .collect();
    Ok(ScanResult {
        regime,
        sigma_p,
        sigma_m,
        c_values,
        phi_raw,
        phi_norm,
        iterations,
        relres,
        status,
    })
}
