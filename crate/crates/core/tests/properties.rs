use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xfwi::formulations::instances::{random_affine_instance, random_spd};
use xfwi::formulations::{phi_joint, phi_reduced};
use xfwi::linops::*;
use xfwi::solvers::lsqr;
use xfwi::wavemodel::{Acquisition, ConstantVelocityPropagator, TimeGrid};

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dense_operator_passes_dot_test(rows in 1usize..30, cols in 1usize..30, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_complex_vector(rows * cols, &mut rng);
        let op = DenseOperator::new(CMatrix::from_column_slice(rows, cols, data.as_slice()));
        prop_assert!(dot_test(&op, 4, seed ^ 1) <= 1e-13);
    }

    #[test]
    fn sampling_operator_passes_dot_test(n in 1usize..60, pick in proptest::collection::vec(any::<prop::sample::Index>(), 1..10), seed in any::<u64>()) {
        let mut idx: Vec<usize> = pick.iter().map(|i| i.index(n)).collect();
        idx.sort_unstable();
        idx.dedup();
        let op = SamplingOperator::new(idx, n).unwrap();
        prop_assert!(dot_test(&op, 4, seed) <= 1e-15);
    }

    #[test]
    fn propagator_passes_dot_test(c in 1.0f64..3.0, offset in 0.05f64..1.5, seed in any::<u64>()) {
        let acq = Acquisition::inline(&[offset, 2.0 * offset], TimeGrid::new(48, 0.01).unwrap()).unwrap();
        let op = ConstantVelocityPropagator::new(c, &acq).unwrap();
        prop_assert!(dot_test(&op, 3, seed) <= 1e-13);
    }

    #[test]
    fn kernel_quadratic_form_is_nonnegative(c in 1.0f64..3.0, seed in any::<u64>()) {
        let acq = Acquisition::inline(&[0.3, 0.5, 0.9], TimeGrid::new(32, 0.01).unwrap()).unwrap();
        let op = ConstantVelocityPropagator::new(c, &acq).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_complex_vector(op.range_dim(), &mut rng);
        let kd = op.matvec(&op.rmatvec(&d));
        let form = d.dotc(&kd).re;
        prop_assert!(form >= -1e-10 * d.norm_squared(), "{}", form);
    }

    #[test]
    fn weighted_norm_is_nonnegative_and_homogeneous(n in 1usize..25, alpha in 1e-3f64..1e3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cov = CovarianceSpec::dense(random_spd(n, &mut rng)).unwrap();
        let r = random_complex_vector(n, &mut rng);
        let base = weighted_norm_sq(&cov, &r).unwrap();
        prop_assert!(base >= 0.0);
        let scaled = weighted_norm_sq(&cov.scaled(alpha).unwrap(), &r).unwrap();
        prop_assert!(rel_gap(scaled * alpha, base) <= 1e-10);
        prop_assert_eq!(weighted_norm_sq(&cov, &CVector::zeros(n)).unwrap(), 0.0);
    }

    #[test]
    fn lsqr_residual_is_nonincreasing(rows in 2usize..25, cols in 1usize..25, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_complex_vector(rows * cols, &mut rng);
        let op = DenseOperator::new(CMatrix::from_column_slice(rows, cols, data.as_slice()));
        let b = random_complex_vector(rows, &mut rng);
        let mut previous = b.norm();
        for k in 1..=cols.min(rows) {
            let sol = lsqr(&op, &b, 0.0, 1e-14, k).unwrap();
            let residual = (op.matvec(&sol.solution) - &b).norm();
            prop_assert!(residual <= previous * (1.0 + 1e-10) + 1e-12, "iteration {}: {} > {}", k, residual, previous);
            previous = residual;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn joint_equals_reduced_on_random_affine_families(n in 4usize..20, receivers in 1usize..4, params in 1usize..4, seed in any::<u64>()) {
        let (prob, m) = random_affine_instance(n, receivers.min(n), params, seed).unwrap();
        let joint = phi_joint(&prob, &m).unwrap().value;
        let reduced = phi_reduced(&prob, &m).unwrap().value;
        prop_assert!(joint >= 0.0 && reduced >= 0.0);
        prop_assert!(rel_gap(joint, reduced) <= 1e-9, "{} vs {}", joint, reduced);
    }

    #[test]
    fn objective_scales_inversely_with_both_covariances(n in 4usize..16, alpha in 1e-2f64..1e2, seed in any::<u64>()) {
        let (prob, m) = random_affine_instance(n, 2, 2, seed).unwrap();
        let scaled = prob
            .with_covariances(prob.sigma_m().scaled(alpha).unwrap(), prob.sigma_p().scaled(alpha).unwrap())
            .unwrap();
        let base = phi_reduced(&prob, &m).unwrap().value;
        let value = phi_reduced(&scaled, &m).unwrap().value;
        prop_assert!(rel_gap(value * alpha, base) <= 1e-9);
    }
}
