// SPDX-License-Identifier: MIT OR Apache-2.0

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sake_core::{empirical_covariance, empirical_mean, psd_inv_sqrt, psd_sqrt, ActivationVector, SymMatrix};

fn sym(m: &DMatrix<f64>) -> SymMatrix {
    let s = (m + m.transpose()) * 0.5;
    SymMatrix::from_rows(
        &(0..s.nrows())
            .map(|i| s.row(i).iter().copied().collect())
            .collect::<Vec<_>>(),
    )
    .unwrap()
}

/// Random orthogonal basis with a log-uniform spectrum spanning `cond`.
fn spd_with_condition(seed: u64, d: usize, cond: f64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let q = g.qr().q();
    let evs = DVector::from_fn(d, |i, _| {
        let t = if d == 1 { 0.0 } else { i as f64 / (d - 1) as f64 };
        cond.powf(t)
    });
    &q * DMatrix::from_diagonal(&evs) * q.transpose()
}

fn samples() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..6).prop_flat_map(|d| prop::collection::vec(prop::collection::vec(-50.0f64..50.0, d), 2..30))
}

fn as_vectors(raw: &[Vec<f64>]) -> Vec<ActivationVector> {
    raw.iter().map(|v| ActivationVector::new(v.clone()).unwrap()).collect()
}

proptest! {
    #[test]
    fn sqrt_squares_back(seed in any::<u64>(), d in 1usize..12, log_cond in 0.0f64..6.0) {
        let m = spd_with_condition(seed, d, 10f64.powf(log_cond));
        let r = psd_sqrt(&sym(&m)).unwrap();
        let rr = r.as_matrix() * r.as_matrix();
        prop_assert!((&rr - &m).norm() <= 1e-8 * m.norm());
        prop_assert_eq!(r.as_matrix(), &r.as_matrix().transpose());
        prop_assert!(r.eigenvalues()[0] >= -1e-10);
    }

    #[test]
    fn covariance_ignores_sample_order(raw in samples(), seed in any::<u64>()) {
        let mut shuffled = raw.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let a = empirical_covariance(&as_vectors(&raw), 0.01).unwrap();
        let b = empirical_covariance(&as_vectors(&shuffled), 0.01).unwrap();
        prop_assert!((a.as_matrix() - b.as_matrix()).amax() <= 1e-9 * (1.0 + a.as_matrix().amax()));
    }

    #[test]
    fn regularization_adds_exactly(raw in samples(), lambda in 0.0f64..10.0) {
        let v = as_vectors(&raw);
        let base = empirical_covariance(&v, 0.0).unwrap();
        let reg = empirical_covariance(&v, lambda).unwrap();
        prop_assert_eq!(reg, base.add_diagonal(lambda));
    }

    #[test]
    fn covariance_is_symmetric_psd(raw in samples()) {
        let c = empirical_covariance(&as_vectors(&raw), 0.0).unwrap();
        prop_assert_eq!(c.as_matrix(), &c.as_matrix().transpose());
        prop_assert!(c.eigenvalues()[0] >= -c.eigen_tolerance());
    }
}

#[test]
fn mean_of_gaussian_draws_converges() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let draws: Vec<ActivationVector> = (0..1000)
        .map(|_| {
            let x: f64 = rng.sample(StandardNormal);
            let y: f64 = rng.sample(StandardNormal);
            ActivationVector::new(vec![5.0 + x, -2.0 + y]).unwrap()
        })
        .collect();
    let m = empirical_mean(&draws).unwrap();
    let target = ActivationVector::new(vec![5.0, -2.0]).unwrap();
    assert!(m.euclidean_distance(&target) < 0.15);
}

#[test]
fn inverse_sqrt_whitens_random_spd() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = DMatrix::<f64>::from_fn(16, 16, |_, _| rng.sample(StandardNormal));
    let m = &g * g.transpose() + DMatrix::identity(16, 16) * 0.5;
    let r = psd_inv_sqrt(&sym(&m)).unwrap();
    let w = r.as_matrix() * &m * r.as_matrix();
    assert!((w - DMatrix::<f64>::identity(16, 16)).norm() <= 1e-6);
}

#[test]
fn degenerate_samples_give_scaled_identity() {
    let v = vec![ActivationVector::new(vec![1.5, -2.0, 7.0]).unwrap(); 9];
    assert_eq!(empirical_covariance(&v, 0.25).unwrap(), SymMatrix::diagonal(&[0.25; 3]));
}
