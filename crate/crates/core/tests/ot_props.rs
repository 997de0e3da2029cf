// SPDX-License-Identifier: MIT OR Apache-2.0

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sake_core::{
    apply_map, empirical_covariance, empirical_mean, fit_ot_map, fit_uniform_shift, ActivationVector, GaussianSummary,
    SymMatrix,
};

fn sym(m: &DMatrix<f64>) -> SymMatrix {
    let s = (m + m.transpose()) * 0.5;
    SymMatrix::from_rows(
        &(0..s.nrows())
            .map(|i| s.row(i).iter().copied().collect())
            .collect::<Vec<_>>(),
    )
    .unwrap()
}

fn vecd(v: &DVector<f64>) -> ActivationVector {
    ActivationVector::new(v.iter().copied().collect()).unwrap()
}

fn dvec(v: &ActivationVector) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let cov = &g * g.transpose() / d as f64 + DMatrix::identity(d, d) * 0.2;
    let mean = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal) * 4.0);
    (mean, cov)
}

fn summary(mean: &DVector<f64>, cov: &DMatrix<f64>) -> GaussianSummary {
    GaussianSummary::from_moments(vecd(mean), sym(cov)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transport_matches_moments(seed in any::<u64>(), d in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ms, ss) = gaussian(&mut rng, d);
        let (mt, st) = gaussian(&mut rng, d);
        let map = fit_ot_map(&summary(&ms, &ss), &summary(&mt, &st)).unwrap();
        let a = map.matrix().as_matrix();
        prop_assert!((a * &ss * a - &st).norm() <= 1e-6 * st.norm());
        prop_assert!((a * &ms + dvec(map.offset()) - &mt).amax() <= 1e-9);
        prop_assert!(map.matrix().eigenvalues()[0] >= -1e-12);
    }

    #[test]
    fn affine_drift_is_recovered(seed in any::<u64>(), d in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mu, sigma) = gaussian(&mut rng, d);
        let (c, m) = gaussian(&mut rng, d);
        let map = fit_ot_map(&summary(&mu, &sigma), &summary(&(&m * &mu + &c), &(&m * &sigma * &m))).unwrap();
        prop_assert!((map.matrix().as_matrix() - &m).amax() <= 1e-6);
        prop_assert!((dvec(map.offset()) - &c).amax() <= 1e-6);
    }

    #[test]
    fn forward_then_backward_restores_mean(seed in any::<u64>(), d in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ms, ss) = gaussian(&mut rng, d);
        let (mt, st) = gaussian(&mut rng, d);
        let (s, t) = (summary(&ms, &ss), summary(&mt, &st));
        let fwd = fit_ot_map(&s, &t).unwrap();
        let back = fit_ot_map(&t, &s).unwrap();
        let round = apply_map(&back, &apply_map(&fwd, &vecd(&ms)).unwrap()).unwrap();
        prop_assert!((dvec(&round) - &ms).amax() <= 1e-6);
    }

    #[test]
    fn uniform_shift_agrees_with_transport_on_means(seed in any::<u64>(), d in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ms, ss) = gaussian(&mut rng, d);
        let (mt, st) = gaussian(&mut rng, d);
        let (s, t) = (summary(&ms, &ss), summary(&mt, &st));
        let a = apply_map(&fit_ot_map(&s, &t).unwrap(), &vecd(&ms)).unwrap();
        let b = apply_map(&fit_uniform_shift(&s, &t).unwrap(), &vecd(&ms)).unwrap();
        prop_assert!((dvec(&a) - dvec(&b)).amax() <= 1e-9);
    }
}

#[test]
fn pushforward_cloud_has_target_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (ms, ss) = gaussian(&mut rng, 3);
    let (mt, st) = gaussian(&mut rng, 3);
    let map = fit_ot_map(&summary(&ms, &ss), &summary(&mt, &st)).unwrap();
    let chol = ss.clone().cholesky().unwrap().l();
    let mapped: Vec<ActivationVector> = (0..20_000)
        .map(|_| {
            let z = DVector::<f64>::from_fn(3, |_, _| rng.sample(StandardNormal));
            apply_map(&map, &vecd(&(&ms + &chol * z))).unwrap()
        })
        .collect();
    let m = dvec(&empirical_mean(&mapped).unwrap());
    let c = empirical_covariance(&mapped, 0.0).unwrap();
    assert!((m - &mt).norm() <= 0.1 * (1.0 + st.norm().sqrt()));
    assert!((c.as_matrix() - &st).norm() <= 0.08 * st.norm());
}
