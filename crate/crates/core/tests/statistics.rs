use pshe::constants::{constants_table, Budget};
use pshe::kernels::{standard3, standard_v3};
use pshe::paths::{exp_functional, sample_paths};
use pshe::polymer::{sample_replicas, PolymerConfig};
use pshe::rng;
use pshe::statlab::{ks_normal, variance_ci, Measured};
use rand::RngExt;
use rand_distr::StandardNormal;

fn normals(seed: u64, n: usize) -> Vec<f64> {
    let mut r = rng::stream(&[seed]);
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

#[test]
fn path_endpoints_are_gaussian_with_variance_t() {
    let e = sample_paths(3, 4000, 0.0625, &[1.0, 3.0], &[0.5, 0.0, -1.0], 5).unwrap();
    let start = [0.5, 0.0, -1.0];
    let mut rejected = vec![];
    for (k, t) in [1.0f64, 3.0].into_iter().enumerate() {
        for (a, x0) in start.iter().enumerate() {
            let xs: Vec<f64> = (0..e.len()).map(|i| e.endpoint(i, k)[a] - x0).collect();
            let r = ks_normal(&xs, 0.0, t).unwrap();
            if !r.pass {
                rejected.push((a, t, r.statistic));
            }
        }
    }
    // six 1% tests: two or more rejections has probability about 1.5e-3
    assert!(rejected.len() <= 1, "{rejected:?}");
}

#[test]
fn path_increments_are_uncorrelated() {
    let e = sample_paths(3, 4000, 0.0625, &[1.0, 2.0], &[0.0; 3], 6).unwrap();
    let prods: Vec<f64> = (0..e.len()).map(|i| e.endpoint(i, 0)[0] * (e.endpoint(i, 1)[0] - e.endpoint(i, 0)[0])).collect();
    let m = Measured::mean_of(&prods);
    assert!(m.within(0.0, 4.0), "{m:?}");
}

#[test]
fn exp_functional_decreases_along_a_ray() {
    let v = standard_v3();
    let est: Vec<_> = [0.0, 0.5, 1.5]
        .iter()
        .map(|&r| exp_functional(v, &[r, 0.0, 0.0], 0.2, 64.0, 1e-2, 4000, 9).unwrap())
        .collect();
    for w in est.windows(2) {
        let se = (w[0].se * w[0].se + w[1].se * w[1].se).sqrt();
        assert!(w[1].estimate <= w[0].estimate + 3.0 * se, "{:?} then {:?}", w[0], w[1]);
    }
    assert!(est[0].estimate > 1.0);
}

#[test]
fn nested_horizons_have_martingale_increments() {
    let mut cfg = PolymerConfig::new(3, 0.2);
    cfg.n_paths = 32;
    cfg.horizons = vec![2.0, 4.0];
    cfg.seed = 77;
    let s = sample_replicas(&cfg, standard3(), 400).unwrap();
    let x: Vec<f64> = s.iter().map(|p| p.z(0, 0)).collect();
    let y: Vec<f64> = s.iter().map(|p| p.z(1, 0) - p.z(0, 0)).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let resid: f64 = x.iter().zip(&y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum::<f64>() / (n - 2.0);
    let se = (resid / sxx).sqrt();
    assert!(slope.abs() <= 4.0 * se, "slope {slope} se {se}");
    assert!(Measured::mean_of(&y).within(0.0, 4.0));
}

#[test]
fn doubling_paths_keeps_mean_one_and_reduces_spread() {
    let mut cfg = PolymerConfig::new(3, 0.2);
    cfg.horizons = vec![4.0];
    cfg.seed = 31;
    let mut vars = vec![];
    for n in [16, 32] {
        cfg.n_paths = n;
        let z: Vec<f64> = sample_replicas(&cfg, standard3(), 300).unwrap().iter().map(|p| p.z(0, 0)).collect();
        let m = Measured::mean_of(&z);
        assert!(m.within(1.0, 5.0), "n = {n}: {m:?}");
        vars.push(variance_ci(&z, 0.99, 3).unwrap());
    }
    assert!(vars[1].ci.0 <= vars[0].ci.1, "{vars:?}");
}

#[test]
fn ks_rejection_rate_is_calibrated() {
    let trials = 200;
    let rejected = (0..trials).filter(|&t| !ks_normal(&normals(1000 + t, 500), 0.0, 1.0).unwrap().pass).count();
    // Binomial(200, 0.01) exceeds 7 with probability below 1e-3
    assert!(rejected <= 7, "{rejected} rejections out of {trials}");
}

#[test]
fn variance_interval_coverage() {
    let trials = 200;
    let missed = (0..trials)
        .filter(|&t| !variance_ci(&normals(5000 + t, 200), 0.95, t).unwrap().contains(1.0))
        .count();
    assert!(missed <= 20, "{missed} misses out of {trials}");
}

#[test]
fn ks_detects_wrong_variance() {
    let r = ks_normal(&normals(3, 2000), 0.0, 4.0).unwrap();
    assert!(!r.pass);
}

#[test]
fn constants_are_deterministic() {
    let budget = Budget { nodes: 4, samples_per_node: 100, s_max: 64.0, dt: 1e-2, c2_samples: 10_000 };
    let a = constants_table(0.2, standard_v3(), &budget, 42).unwrap();
    let b = constants_table(0.2, standard_v3(), &budget, 42).unwrap();
    assert_eq!(a.c0_a, b.c0_a);
    assert_eq!(a.c0_b, b.c0_b);
    assert_eq!(a.gamma_sq, b.gamma_sq);
    assert_eq!(a.c2_mc, b.c2_mc);
    assert_eq!(a.fluctuation_variance(), 2.0 * a.c0_a.value);
    let c = constants_table(0.2, standard_v3(), &budget, 43).unwrap();
    assert_ne!(a.c0_a.value, c.c0_a.value);
}

#[test]
fn mean_square_displacement_is_d_times_t() {
    let e = sample_paths(3, 10_000, 0.0625, &[2.0], &[1.0, -1.0, 0.5], 12).unwrap();
    let sq: Vec<f64> = (0..e.len())
        .map(|i| e.endpoint(i, 0).iter().zip(e.start(i)).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();
    let m = Measured::mean_of(&sq);
    assert!(m.within(6.0, 5.0), "{m:?}");
    assert_eq!(e.position(0, 0), &[1.0, -1.0, 0.5]);
}
