//! Seeded random test problems: Helmholtz instances for the verification
//! suites and unstructured complex affine families.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AffineFamily, Problem};
use crate::error::{Error, Result};
use crate::linops::{random_complex_vector, CMatrix, CVector, CovarianceSpec, SamplingOperator, C64};
use crate::wavemodel::{Boundary, HelmholtzModel1D, MediumModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceModel {
    #[default]
    RandomSpd,
    ScaledIdentity,
}

/// Configuration of a batch of random Helmholtz problems.
///
/// `sigma_m` and `sigma_p` are relative standard deviations: the measurement
/// covariance is scaled by `(sigma_m |d| / sqrt(nd))^2` and the process
/// covariance by `(sigma_p |q| / sqrt(n))^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HelmholtzInstanceConfig {
    pub n: usize,
    /// Domain length in km.
    pub length: f64,
    pub omega: f64,
    pub boundary: Boundary,
    /// Receiver positions as fractions of the domain length.
    pub receivers: Vec<f64>,
    /// Point-source position as a fraction of the domain length.
    pub source_position: f64,
    pub background_velocity: f64,
    /// Relative amplitude of the random true-model perturbation.
    pub model_perturbation: f64,
    /// Relative amplitude of the offset between the evaluation model and the
    /// true model.
    pub eval_perturbation: f64,
    /// Evaluate at the true model instead of a perturbed one.
    pub at_truth: bool,
    pub covariance: CovarianceModel,
    pub sigma_m: f64,
    pub sigma_p: f64,
    pub instances: usize,
}

impl Default for HelmholtzInstanceConfig {
    fn default() -> Self {
        Self {
            n: 20,
            length: 1.0,
            omega: 6.0,
            boundary: Boundary::Absorbing {
                reference_slowness_sq: 0.25,
            },
            receivers: vec![0.2, 0.5, 0.8],
            source_position: 0.35,
            background_velocity: 2.0,
            model_perturbation: 0.1,
            eval_perturbation: 0.05,
            at_truth: false,
            covariance: CovarianceModel::RandomSpd,
            sigma_m: 0.05,
            sigma_p: 0.05,
            instances: 20,
        }
    }
}

/// One random problem with its true and evaluation models.
#[derive(Debug, Clone)]
pub struct HelmholtzInstance {
    pub problem: Problem<HelmholtzModel1D>,
    pub m_true: MediumModel,
    pub m_eval: MediumModel,
}

fn grid_index(fraction: f64, n: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidInput(format!("position fraction {fraction} outside [0, 1]")));
    }
    Ok(((n - 1) as f64 * fraction).round() as usize)
}

impl HelmholtzInstanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_m > 0.0 && self.sigma_p > 0.0) {
            return Err(Error::DegenerateWeights(format!(
                "sigma_m = {} and sigma_p = {} must both be positive",
                self.sigma_m, self.sigma_p
            )));
        }
        if !(self.sigma_m.is_finite() && self.sigma_p.is_finite()) {
            return Err(Error::InvalidInput("sigma_m and sigma_p must be finite".into()));
        }
        if self.n < 3 {
            return Err(Error::InvalidInput(format!("n must be at least 3, got {}", self.n)));
        }
        if !(self.length > 0.0 && self.background_velocity > 0.0) {
            return Err(Error::InvalidInput("length and background velocity must be positive".into()));
        }
        if self.receivers.is_empty() {
            return Err(Error::InvalidInput("at least one receiver is required".into()));
        }
        if self.instances == 0 {
            return Err(Error::InvalidInput("instances must be at least 1".into()));
        }
        for p in [self.model_perturbation, self.eval_perturbation] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidInput(format!("perturbation {p} must lie in [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        self.length / (self.n - 1) as f64
    }

    pub fn model(&self) -> Result<HelmholtzModel1D> {
        HelmholtzModel1D::new(self.n, self.spacing(), self.omega, self.boundary)
    }

    pub fn sampling(&self) -> Result<SamplingOperator> {
        let idx = self
            .receivers
            .iter()
            .map(|&f| grid_index(f, self.n))
            .collect::<Result<Vec<_>>>()?;
        SamplingOperator::new(idx, self.n)
    }

    /// Discrete point source of unit integral.
    pub fn source(&self) -> Result<CVector> {
        let mut q = CVector::zeros(self.n);
        q[grid_index(self.source_position, self.n)?] = C64::new(1.0 / self.spacing(), 0.0);
        Ok(q)
    }

    /// Instance `index` of the batch drawn from `seed`. Each instance uses its
    /// own ChaCha stream, so instances do not depend on each other.
    pub fn build(&self, seed: u64, index: usize) -> Result<HelmholtzInstance> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);

        let family = self.model()?;
        let sampling = self.sampling()?;
        let q = self.source()?;
        let background = 1.0 / (self.background_velocity * self.background_velocity);
        let m_true = MediumModel::new(
            (0..self.n)
                .map(|_| background * (1.0 + self.model_perturbation * rng.random_range(-1.0..=1.0)))
                .collect(),
        )?;
        let m_eval = if self.at_truth {
            m_true.clone()
        } else {
            MediumModel::new(
                m_true
                    .values()
                    .iter()
                    .map(|v| v * (1.0 + self.eval_perturbation * rng.random_range(-1.0..=1.0)))
                    .collect(),
            )?
        };

        let placeholder = CovarianceSpec::identity(sampling.data_dim());
        let draft = Problem::new(
            family,
            sampling.clone(),
            q.clone(),
            CVector::zeros(sampling.data_dim()),
            placeholder,
            CovarianceSpec::identity(self.n),
        )?;
        let d = draft.clean_data(&m_true)?;

        let nd = sampling.data_dim();
        let data_scale = (self.sigma_m * d.norm() / (nd as f64).sqrt()).powi(2);
        let source_scale = (self.sigma_p * q.norm() / (self.n as f64).sqrt()).powi(2);
        let (sigma_m, sigma_p) = match self.covariance {
            CovarianceModel::ScaledIdentity => (
                CovarianceSpec::scaled_identity(nd, data_scale)?,
                CovarianceSpec::scaled_identity(self.n, source_scale)?,
            ),
            CovarianceModel::RandomSpd => (
                CovarianceSpec::dense(random_spd(nd, &mut rng) * C64::new(data_scale, 0.0))?,
                CovarianceSpec::dense(random_spd(self.n, &mut rng) * C64::new(source_scale, 0.0))?,
            ),
        };
        let problem = draft.with_data(d)?.with_covariances(sigma_m, sigma_p)?;
        Ok(HelmholtzInstance {
            problem,
            m_true,
            m_eval,
        })
    }

    pub fn build_all(&self, seed: u64) -> Result<Vec<HelmholtzInstance>> {
        (0..self.instances).map(|i| self.build(seed, i)).collect()
    }
}

/// Random Hermitian positive definite matrix `B B^* / n + I / 2`, rescaled
/// to unit mean diagonal. Its condition number stays moderate.
pub fn random_spd<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix {
    let b = CMatrix::from_fn(n, n, |_, _| {
        let v = random_complex_vector(1, rng);
        v[0]
    });
    let mut m = &b * b.adjoint() * C64::new(1.0 / n as f64, 0.0);
    for i in 0..n {
        m[(i, i)] += C64::new(0.5, 0.0);
    }
    let m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    let mean_diag = m.diagonal().iter().map(|z| z.re).sum::<f64>() / n as f64;
    m * C64::new(1.0 / mean_diag, 0.0)
}

/// A dense complex affine family `A(m) = B + sum_k m_k D_k` with a random
/// diagonally dominant B, random receivers and random SPD covariances.
/// Returns the problem (with data from a random true model) and an
/// evaluation model.
pub fn random_affine_instance(
    n: usize,
    n_receivers: usize,
    n_params: usize,
    seed: u64,
) -> Result<(Problem<AffineFamily>, MediumModel)> {
    if n_receivers == 0 || n_receivers > n || n_params == 0 {
        return Err(Error::InvalidInput(format!(
            "random affine instance needs 0 < receivers <= n and parameters > 0, got n = {n}, receivers = {n_receivers}, parameters = {n_params}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entry = |rng: &mut ChaCha8Rng| random_complex_vector(1, rng)[0];
    let mut base = CMatrix::from_fn(n, n, |_, _| entry(&mut rng));
    for i in 0..n {
        base[(i, i)] += C64::new(2.0 * n as f64, 0.0);
    }
    let directions = (0..n_params)
        .map(|_| CMatrix::from_fn(n, n, |_, _| entry(&mut rng)))
        .collect();
    let family = AffineFamily::new(base, directions)?;

    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..n_receivers {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(n_receivers);
    idx.sort_unstable();
    let sampling = SamplingOperator::new(idx, n)?;

    let q = random_complex_vector(n, &mut rng);
    let m_true = MediumModel::new((0..n_params).map(|_| rng.random_range(0.5..1.5)).collect())?;
    let m_eval = MediumModel::new(m_true.values().iter().map(|v| v * rng.random_range(0.8..1.2)).collect())?;

    let sigma_m = CovarianceSpec::dense(random_spd(n_receivers, &mut rng))?;
    let sigma_p = CovarianceSpec::dense(random_spd(n, &mut rng))?;
    let draft = Problem::new(family, sampling, q, CVector::zeros(n_receivers), sigma_m, sigma_p)?;
    let d = draft.clean_data(&m_true)? + random_complex_vector(n_receivers, &mut rng) * C64::new(0.1, 0.0);
    Ok((draft.with_data(d)?, m_eval))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_builds_twenty_instances() {
        let cfg = HelmholtzInstanceConfig::default();
        let all = cfg.build_all(42).unwrap();
        assert_eq!(all.len(), 20);
        assert_eq!(all[0].problem.data_dim(), 3);
        assert_ne!(all[0].m_eval, all[1].m_eval);
    }

    #[test]
    fn instances_are_reproducible() {
        let cfg = HelmholtzInstanceConfig::default();
        let a = cfg.build(7, 3).unwrap();
        let b = cfg.build(7, 3).unwrap();
        assert_eq!(a.m_eval, b.m_eval);
        assert_eq!(a.problem.data(), b.problem.data());
    }

    #[test]
    fn zero_sigmas_are_degenerate() {
        let cfg = HelmholtzInstanceConfig {
            sigma_m: 0.0,
            sigma_p: 0.0,
            ..Default::default()
        };
        let err = cfg.build(1, 0).unwrap_err();
        assert!(matches!(err, Error::DegenerateWeights(_)));
        assert!(err.to_string().contains("degenerate weights"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<HelmholtzInstanceConfig>(r#"{"n": 10, "bogus": 1}"#);
        assert!(err.is_err());
        let ok: HelmholtzInstanceConfig = serde_json::from_str(r#"{"n": 10}"#).unwrap();
        assert_eq!(ok.n, 10);
        assert_eq!(ok.instances, 20);
    }

    #[test]
    fn random_spd_is_hermitian_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_spd(6, &mut rng);
        assert!((&m - m.adjoint()).norm() < 1e-14);
        assert!(crate::linops::hpd_cholesky(m).is_some());
    }
}
