// SPDX-License-Identifier: MIT OR Apache-2.0

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sake_core::registry::epoch;
use sake_core::{
    steer_activation, ActivationVector, Distance, EditEntry, EditSpec, LinearMap, MapKind, Registry, Representation,
    ScopeDetector, SymMatrix,
};

const D: usize = 4;
const K: usize = 6;

fn v(x: Vec<f64>) -> ActivationVector {
    ActivationVector::new(x).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect()
}

/// Edit `i` has its centroid 100·i along the first scope axis, far from every other edit.
fn edit(i: usize, rng: &mut ChaCha8Rng) -> EditEntry {
    let mut centroid = random_vec(rng, K, 0.5);
    centroid[0] += 100.0 * i as f64;
    let diag: Vec<f64> = (0..D).map(|_| rng.random_range(0.5..2.0)).collect();
    let map = LinearMap::from_parts(
        MapKind::OptimalTransport,
        SymMatrix::diagonal(&diag),
        v(random_vec(rng, D, 1.0)),
    )
    .unwrap();
    EditEntry::new(
        format!("edit_{i:03}"),
        EditSpec::new(format!("s{i}"), "r", "old", "new").unwrap(),
        ScopeDetector::new(v(centroid), 2.0, Distance::Euclidean, Representation::ExternalEmbedding).unwrap(),
        map,
        epoch(),
    )
    .unwrap()
}

fn probes(rng: &mut ChaCha8Rng, entries: &[EditEntry], n: usize) -> Vec<(ActivationVector, ActivationVector)> {
    (0..n)
        .map(|j| {
            let scope = if j % 2 == 0 {
                let c = entries[j % entries.len()].detector.centroid.as_slice();
                c.iter()
                    .map(|x| x + rng.sample::<f64, _>(StandardNormal) * 0.5)
                    .collect()
            } else {
                random_vec(rng, K, 40.0)
            };
            (v(random_vec(rng, D, 3.0)), v(scope))
        })
        .collect()
}

#[test]
fn hundred_edits_do_not_interfere() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let entries: Vec<EditEntry> = (0..100).map(|i| edit(i, &mut rng)).collect();
    let mut all = Registry::new(D, K).unwrap();
    for e in &entries {
        all.add_edit(e.clone()).unwrap();
    }
    let mut only_first = Registry::new(D, K).unwrap();
    only_first.add_edit(entries[0].clone()).unwrap();

    for (h, s) in probes(&mut rng, &entries[..1], 200) {
        let a = steer_activation(&all, &h, &s).unwrap();
        let b = steer_activation(&only_first, &h, &s).unwrap();
        if b.steered {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn add_remove_matches_fresh_registry() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (e1, e2) = (edit(0, &mut rng), edit(1, &mut rng));
    let mut r = Registry::new(D, K).unwrap();
    r.add_edit(e1.clone()).unwrap();
    r.add_edit(e2.clone()).unwrap();
    r.remove_edit(&e1.id).unwrap();
    let mut fresh = Registry::new(D, K).unwrap();
    fresh.add_edit(e2.clone()).unwrap();
    assert_eq!(r.to_json(), fresh.to_json());

    let entries = [e1.clone(), e2];
    for (h, s) in probes(&mut rng, &entries, 100) {
        assert_eq!(
            steer_activation(&r, &h, &s).unwrap(),
            steer_activation(&fresh, &h, &s).unwrap()
        );
    }

    r.add_edit(e1.clone()).unwrap();
    r.remove_edit(&e1.id).unwrap();
    assert_eq!(r.to_json(), fresh.to_json());
    r.remove_edit("edit_001").unwrap();
    for (h, s) in probes(&mut rng, &entries, 50) {
        let out = steer_activation(&r, &h, &s).unwrap();
        assert!(!out.steered);
        assert_eq!(out.post_map_activation, h);
    }
}

#[test]
fn unmatched_inputs_pass_through_bit_for_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let entries: Vec<EditEntry> = (0..10).map(|i| edit(i, &mut rng)).collect();
    let mut r = Registry::new(D, K).unwrap();
    for e in &entries {
        r.add_edit(e.clone()).unwrap();
    }
    for (h, s) in probes(&mut rng, &entries, 400) {
        let out = steer_activation(&r, &h, &s).unwrap();
        assert_eq!(out.steered, out.matched_edit_id.is_some());
        if !out.steered {
            let bits = |x: &ActivationVector| x.as_slice().iter().map(|f| f.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&out.post_map_activation), bits(&h));
        }
    }
}

proptest! {
    #[test]
    fn larger_threshold_matches_superset(
        centroid in prop::collection::vec(-5.0f64..5.0, K),
        points in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, K), 1..40),
        e1 in 0.01f64..10.0,
        extra in 0.0f64..10.0,
    ) {
        let det = ScopeDetector::new(v(centroid), e1, Distance::Euclidean, Representation::ExternalEmbedding).unwrap();
        let wider = det.with_epsilon(e1 + extra + 1e-9).unwrap();
        for p in points {
            let p = v(p);
            prop_assert!(!det.contains(&p) || wider.contains(&p));
        }
    }

    #[test]
    fn insertion_order_is_irrelevant(seed in any::<u64>(), perm_seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries: Vec<EditEntry> = (0..6).map(|i| edit(i, &mut rng)).collect();
        let mut order = entries.clone();
        let mut prng = ChaCha8Rng::seed_from_u64(perm_seed);
        for i in (1..order.len()).rev() {
            order.swap(i, prng.random_range(0..=i));
        }
        let (mut a, mut b) = (Registry::new(D, K).unwrap(), Registry::new(D, K).unwrap());
        for e in &entries { a.add_edit(e.clone()).unwrap(); }
        for e in order { b.add_edit(e).unwrap(); }
        for (h, s) in probes(&mut rng, &entries, 30) {
            prop_assert_eq!(steer_activation(&a, &h, &s).unwrap(), steer_activation(&b, &h, &s).unwrap());
        }
    }
}
