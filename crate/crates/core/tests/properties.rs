use proptest::prelude::*;
use pshe::kernels::{standard3, standard_phi3, standard_v3};
use pshe::limits::{cov_h, cov_hbar, cov_hst, green_integral};
use pshe::paths::{overlap_gram, sample_paths};
use pshe::polymer::{sample_polymer_gram, sample_replica_range, sample_replicas, PolymerConfig, SpaceTimePoint};
use pshe::rng;

fn unit(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    (n > 1e-3).then(|| [v[0] / n, v[1] / n, v[2] / n])
}

fn point() -> impl Strategy<Value = SpaceTimePoint> {
    (0.05f64..3.0, prop::array::uniform3(-2.0f64..2.0)).prop_map(|(t, x)| SpaceTimePoint::new(t, x.to_vec()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mollifier_radial_symmetric_and_supported(dir in prop::array::uniform3(-1.0f64..1.0), r in 0.0f64..1.5) {
        let phi = standard_phi3();
        if let Some(u) = unit(dir) {
            let x = [r * u[0], r * u[1], r * u[2]];
            let mx = [-x[0], -x[1], -x[2]];
            let rot = [x[1], x[2], x[0]];
            prop_assert_eq!(phi.value(&x), phi.value(&mx));
            prop_assert!((phi.value(&x) - phi.value(&rot)).abs() <= 1e-12 * phi.value(&[0.0; 3]));
            prop_assert!(phi.value(&x) >= 0.0);
            prop_assert!(phi.value(&x) <= phi.value(&[0.0; 3]));
            if r >= 0.5 {
                prop_assert_eq!(phi.value(&x), 0.0);
            }
        }
    }

    #[test]
    fn covariance_kernel_bounded_and_supported(r in 0.0f64..2.0) {
        let v = standard_v3();
        let val = v.radial(r);
        prop_assert!(val >= 0.0);
        prop_assert!(val <= v.v0() * (1.0 + 1e-12));
        if r >= 1.0 {
            prop_assert_eq!(val, 0.0);
        }
    }

    #[test]
    fn covariance_kernel_nonincreasing(r in 0.0f64..1.0, dr in 0.0f64..0.2) {
        let v = standard_v3();
        prop_assert!(v.radial(r + dr) <= v.radial(r) + 1e-9 * v.v0());
    }

    #[test]
    fn green_scaling_exponent(d in 3usize..7, r in 0.2f64..5.0, lambda in prop::sample::select(vec![0.5, 2.0, 4.0])) {
        let a = green_integral(d, lambda * r).unwrap();
        let b = green_integral(d, r).unwrap();
        let expected = lambda.powf(2.0 - d as f64);
        prop_assert!((a / b / expected - 1.0).abs() < 1e-4, "ratio {} vs {}", a / b, expected);
    }

    #[test]
    fn limit_covariances_symmetric(p in point(), q in point(), g in 0.0f64..1.0, a in 0.0f64..2.0) {
        let h = cov_h(&p, &q, g).unwrap();
        prop_assert!((h - cov_h(&q, &p, g).unwrap()).abs() <= 1e-12 * h.abs().max(1e-300));
        prop_assert!(h >= 0.0);
        if (p.t - q.t).abs() > 1e-6 {
            let hb = cov_hbar(&p, &q, a).unwrap();
            let hb2 = cov_hbar(&q, &p, a).unwrap();
            prop_assert!((hb - hb2).abs() <= 1e-10 * hb.abs().max(1e-300));
            prop_assert!(hb >= 0.0);
            prop_assert_eq!(cov_hst(&p, &q, g, a).unwrap(), h + hb);
        }
    }

    #[test]
    fn cov_h_decreases_with_distance(t in 0.05f64..3.0, r in 0.0f64..3.0, dr in 0.01f64..1.0) {
        let o = SpaceTimePoint::new(t, vec![0.0; 3]);
        let near = cov_h(&o, &SpaceTimePoint::new(t, vec![r, 0.0, 0.0]), 1.0).unwrap();
        let far = cov_h(&o, &SpaceTimePoint::new(t, vec![r + dr, 0.0, 0.0]), 1.0).unwrap();
        prop_assert!(far < near);
    }

    #[test]
    fn cov_h_linear_in_gamma(p in point(), q in point(), g in 0.01f64..1.0) {
        let one = cov_h(&p, &q, 1.0).unwrap();
        prop_assert!((cov_h(&p, &q, g).unwrap() - g * one).abs() <= 1e-12 * one);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn overlap_gram_invariants(seed in any::<u64>(), n in 2usize..20) {
        let v = standard_v3();
        let e = sample_paths(3, n, 0.0625, &[0.5, 1.0, 2.0], &[0.0; 3], seed).unwrap();
        let g = overlap_gram(&e, v).unwrap();
        for k in 0..3 {
            let t = g.horizons()[k];
            for i in 0..n {
                prop_assert_eq!(g.get(k, i, i), t * v.v0());
                for j in 0..n {
                    prop_assert_eq!(g.get(k, i, j), g.get(k, j, i));
                    prop_assert!(g.get(k, i, j) >= 0.0);
                    if k > 0 {
                        prop_assert!(g.get(k, i, j) >= g.get(k - 1, i, j));
                    }
                }
            }
        }
    }

    #[test]
    fn path_sampling_deterministic(seed in any::<u64>()) {
        let a = sample_paths(3, 4, 0.125, &[1.0], &[0.0; 3], seed).unwrap();
        let b = sample_paths(3, 4, 0.125, &[1.0], &[0.0; 3], seed).unwrap();
        for i in 0..4 {
            prop_assert_eq!(a.endpoint(i, 0), b.endpoint(i, 0));
        }
    }

    #[test]
    fn partition_function_positive_and_reproducible(seed in any::<u64>(), beta in 0.0f64..0.3) {
        let mut cfg = PolymerConfig::new(3, beta);
        cfg.n_paths = 8;
        cfg.horizons = vec![1.0, 2.0];
        cfg.seed = seed;
        let a = sample_polymer_gram(&cfg, standard3(), 3).unwrap();
        let b = sample_polymer_gram(&cfg, standard3(), 3).unwrap();
        for k in 0..2 {
            prop_assert!(a.z(k, 0) > 0.0 && a.z(k, 0).is_finite());
            prop_assert_eq!(a.z(k, 0), b.z(k, 0));
        }
    }

    #[test]
    fn derived_seeds_deterministic(a in any::<u64>(), b in any::<u64>()) {
        prop_assert_eq!(rng::derive(&[a, b]), rng::derive(&[a, b]));
        if a != b {
            prop_assert_ne!(rng::derive(&[a]), rng::derive(&[b]));
        }
    }
}

#[test]
fn replica_chunks_match_full_run() {
    let mut cfg = PolymerConfig::new(3, 0.2);
    cfg.n_paths = 8;
    cfg.horizons = vec![1.0];
    cfg.seed = 11;
    let all = sample_replicas(&cfg, standard3(), 10).unwrap();
    let tail = sample_replica_range(&cfg, standard3(), 6..10).unwrap();
    for (a, b) in all[6..].iter().zip(&tail) {
        assert_eq!(a.replica, b.replica);
        assert_eq!(a.z, b.z);
    }
}
