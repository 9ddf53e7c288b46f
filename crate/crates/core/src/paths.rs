//! Brownian paths, pairwise overlaps ∫V(W^i − W^j)ds and single-path
//! occupation functionals ∫V(U_s)ds.

use crate::environment::grid_count;
use crate::error::{Error, Result};
use crate::kernels::{sphere_area, CovarianceKernel};
use crate::quad::{self, Tolerance};
use crate::rng::{self, role, StreamRng};
use rand::RngExt;
use rand_distr::StandardNormal;
use serde::Serialize;
use std::f64::consts::PI;

/// Validated horizon grid: step counts for each horizon.
pub(crate) fn horizon_steps(dt: f64, horizons: &[f64]) -> Result<Vec<usize>> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    if horizons.is_empty() {
        return Err(Error::invalid("horizon list is empty"));
    }
    let steps = horizons
        .iter()
        .map(|&t| grid_count("horizon", t, dt))
        .collect::<Result<Vec<_>>>()?;
    if steps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("horizons must be strictly increasing"));
    }
    Ok(steps)
}

#[derive(Debug, Clone)]
pub struct PathEnsemble {
    d: usize,
    n: usize,
    dt: f64,
    horizons: Vec<f64>,
    steps: Vec<usize>,
    starts: Vec<f64>,
    // [path][step][coord], steps 0..=last horizon
    positions: Vec<f64>,
}

/// Sample `n` independent paths; `starts` holds either one point or `n` points (flattened).
pub fn sample_paths(
    d: usize,
    n: usize,
    dt: f64,
    horizons: &[f64],
    starts: &[f64],
    seed: u64,
) -> Result<PathEnsemble> {
    if d == 0 || n == 0 {
        return Err(Error::invalid("need d >= 1 and at least one path"));
    }
    let steps = horizon_steps(dt, horizons)?;
    if starts.len() != d && starts.len() != n * d {
        return Err(Error::invalid(format!("starts must hold 1 or {n} points of dimension {d}")));
    }
    let last = *steps.last().unwrap();
    let sd = dt.sqrt();
    let mut positions = vec![0.0; n * (last + 1) * d];
    for i in 0..n {
        let x0 = if starts.len() == d { starts } else { &starts[i * d..(i + 1) * d] };
        let mut rng = rng::stream(&[seed, role::PATH, i as u64]);
        let base = i * (last + 1) * d;
        positions[base..base + d].copy_from_slice(x0);
        for s in 1..=last {
            for a in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                positions[base + s * d + a] = positions[base + (s - 1) * d + a] + sd * z;
            }
        }
    }
    let starts = if starts.len() == d { starts.repeat(n) } else { starts.to_vec() };
    Ok(PathEnsemble { d, n, dt, horizons: horizons.to_vec(), steps, starts, positions })
}

impl PathEnsemble {
    pub fn dim(&self) -> usize {
        self.d
    }
    pub fn len(&self) -> usize {
        self.n
    }
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn horizons(&self) -> &[f64] {
        &self.horizons
    }
    pub fn n_steps(&self) -> usize {
        *self.steps.last().unwrap()
    }
    pub fn start(&self, i: usize) -> &[f64] {
        &self.starts[i * self.d..(i + 1) * self.d]
    }
    /// Position of path `i` after `step` increments.
    pub fn position(&self, i: usize, step: usize) -> &[f64] {
        let base = (i * (self.n_steps() + 1) + step) * self.d;
        &self.positions[base..base + self.d]
    }
    /// Position of path `i` at horizon index `k`.
    pub fn endpoint(&self, i: usize, k: usize) -> &[f64] {
        self.position(i, self.steps[k])
    }
}

/// Pairs (a, b), a < b, of points closer than 1 (the support radius of V),
/// found by a sweep over the first coordinate. `pos` is flattened with `d` coordinates per point.
pub(crate) fn close_pairs<F: FnMut(usize, usize, f64)>(d: usize, pos: &[f64], mut f: F) {
    let n = pos.len() / d;
    let mut order: Vec<(f64, usize)> = (0..n).map(|i| (pos[i * d], i)).collect();
    order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for a in 0..n {
        let (xa, i) = order[a];
        let pi = &pos[i * d..i * d + d];
        for &(xb, j) in &order[a + 1..] {
            let dx = xb - xa;
            if dx >= 1.0 {
                break;
            }
            let mut r2 = dx * dx;
            let pj = &pos[j * d..j * d + d];
            for c in 1..d {
                r2 += (pi[c] - pj[c]) * (pi[c] - pj[c]);
            }
            if r2 < 1.0 {
                f(i.min(j), i.max(j), r2);
            }
        }
    }
}

/// Cumulative pairwise overlaps O_ij(T_k), left-point rule on the dt grid.
#[derive(Debug, Clone)]
pub struct OverlapGram {
    n: usize,
    horizons: Vec<f64>,
    mats: Vec<Vec<f64>>,
}

impl OverlapGram {
    pub fn len(&self) -> usize {
        self.n
    }
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
    pub fn horizons(&self) -> &[f64] {
        &self.horizons
    }
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.mats[k][i * self.n + j]
    }
    pub fn matrix(&self, k: usize) -> &[f64] {
        &self.mats[k]
    }
}

pub fn overlap_gram(e: &PathEnsemble, v: &CovarianceKernel) -> Result<OverlapGram> {
    if e.d != v.dim() {
        return Err(Error::invalid("ensemble and kernel dimensions differ"));
    }
    let (n, d) = (e.n, e.d);
    let mut acc = vec![0.0; n * n];
    let mut mats = Vec::with_capacity(e.steps.len());
    let mut buf = vec![0.0; n * d];
    let mut k = 0;
    for s in 0..=e.n_steps() {
        while k < e.steps.len() && e.steps[k] == s {
            let mut m = acc.clone();
            for i in 0..n {
                m[i * n + i] = e.horizons[k] * v.v0();
            }
            mats.push(m);
            k += 1;
        }
        if s == e.n_steps() {
            break;
        }
        for i in 0..n {
            buf[i * d..(i + 1) * d].copy_from_slice(e.position(i, s));
        }
        close_pairs(d, &buf, |i, j, r2| {
            let w = e.dt * v.radial_sq(r2);
            acc[i * n + j] += w;
            acc[j * n + i] += w;
        });
    }
    Ok(OverlapGram { n, horizons: e.horizons.clone(), mats })
}

/// Left-point integrals ∫V(U_s)ds of a Brownian motion U with per-coordinate
/// variance rate `var_rate`, over consecutive phases of the given lengths.
///
/// Away from supp V the step grows to keep the chance of reaching the support
/// within one step below ~1e-9, so long horizons cost O(log) steps per excursion.
pub fn occupation(
    v: &CovarianceKernel,
    start: &[f64],
    var_rate: f64,
    dt: f64,
    phases: &[f64],
    rng: &mut StreamRng,
    out: &mut [f64],
) {
    const KAPPA2: f64 = 6.5 * 6.5;
    let d = start.len();
    let mut u = start.to_vec();
    let coarse = 1.0 / (KAPPA2 * d as f64 * var_rate);
    for (p, &len) in phases.iter().enumerate() {
        let mut left = len;
        let mut acc = 0.0;
        while left > 0.0 {
            let r2: f64 = u.iter().map(|x| x * x).sum();
            let h = if r2 < 1.0 {
                let h = dt.min(left);
                acc += h * v.radial(r2.sqrt());
                h
            } else {
                let gap = r2.sqrt() - 1.0;
                (gap * gap * coarse).max(dt).min(left)
            };
            let sd = (var_rate * h).sqrt();
            for x in u.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *x += sd * z;
            }
            left -= h;
            if left < 1e-12 * len {
                left = 0.0;
            }
        }
        out[p] = acc;
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExpFunctional {
    pub estimate: f64,
    pub se: f64,
    /// Estimate with the horizon halved (same paths).
    pub half_estimate: f64,
    /// Paired difference (full − half) and its standard error.
    pub truncation_gap: f64,
    pub truncation_se: f64,
    /// Set when the truncation gap exceeds 3 standard errors.
    pub truncation_flag: bool,
    pub n: usize,
    pub s_max: f64,
}

/// Monte Carlo for E[exp(β² ∫₀^{S_max} V(U_s) ds)] with U₀ = `u0` and variance rate 2.
pub fn exp_functional_from(
    v: &CovarianceKernel,
    u0: &[f64],
    beta: f64,
    s_max: f64,
    dt: f64,
    n: usize,
    seed: u64,
) -> Result<ExpFunctional> {
    if s_max < 64.0 {
        return Err(Error::invalid(format!("S_max = {s_max} < 64")));
    }
    if n < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let margin = khasminskii_margin(beta, v)?;
    if margin >= 1.0 {
        return Err(Error::Inadmissible { beta, margin });
    }
    let b2 = beta * beta;
    if b2 == 0.0 {
        return Ok(ExpFunctional {
            estimate: 1.0,
            se: 0.0,
            half_estimate: 1.0,
            truncation_gap: 0.0,
            truncation_se: 0.0,
            truncation_flag: false,
            n,
            s_max,
        });
    }
    let mut rng = rng::stream(&[seed, role::FUNCTIONAL]);
    let (mut s, mut s2, mut h, mut g, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut out = [0.0; 2];
    for _ in 0..n {
        occupation(v, u0, 2.0, dt, &[s_max / 2.0, s_max / 2.0], &mut rng, &mut out);
        let half = (b2 * out[0]).exp();
        let full = (b2 * (out[0] + out[1])).exp();
        s += full;
        s2 += full * full;
        h += half;
        g += full - half;
        g2 += (full - half) * (full - half);
    }
    let nf = n as f64;
    let mean = s / nf;
    let var = ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0);
    let gm = g / nf;
    let gvar = ((g2 - nf * gm * gm) / (nf - 1.0)).max(0.0);
    let gse = (gvar / nf).sqrt();
    Ok(ExpFunctional {
        estimate: mean,
        se: (var / nf).sqrt(),
        half_estimate: h / nf,
        truncation_gap: gm,
        truncation_se: gse,
        truncation_flag: gm.abs() > 3.0 * gse && gm != 0.0,
        n,
        s_max,
    })
}

/// E_y[exp(β² ∫₀^∞ V(√2 W_s) ds)], truncated at S_max; √2·W is simulated directly.
pub fn exp_functional(
    v: &CovarianceKernel,
    y: &[f64],
    beta: f64,
    s_max: f64,
    dt: f64,
    n: usize,
    seed: u64,
) -> Result<ExpFunctional> {
    let u0: Vec<f64> = y.iter().map(|c| c * 2f64.sqrt()).collect();
    exp_functional_from(v, &u0, beta, s_max, dt, n, seed)
}

/// J(s) = (2πs)^{d/2} ∫ρ(s, y)V(√2 y)dy, by radial quadrature.
fn weighted_v(v: &CovarianceKernel, s: f64) -> f64 {
    let d = v.dim();
    let area = sphere_area(d);
    let rmax = 1.0 / 2f64.sqrt();
    let f = |r: f64| area * r.powi(d as i32 - 1) * (-r * r / (2.0 * s)).exp() * v.radial(2f64.sqrt() * r);
    let sd = s.sqrt();
    let breaks: Vec<f64> = [sd, 3.0 * sd, 6.0 * sd].into_iter().filter(|&b| b < rmax).collect();
    quad::integrate_pieces(f, 0.0, rmax, &breaks, Tolerance::new(1e-300, 1e-12))
        .map(|e| e.value)
        .unwrap_or(f64::NAN)
}

/// E₀∫₀^T V(√2 W_s) ds = ∫₀^T ∫ρ(s,y)V(√2y) dy ds by nested quadrature (T = ∞ allowed).
pub fn expected_overlap(v: &CovarianceKernel, horizon: f64) -> Result<f64> {
    let tol = Tolerance::new(1e-12, 1e-10);
    let d = v.dim() as f64;
    let c = (2.0 * PI).powf(-d / 2.0);
    let a = 4.0f64.min(horizon);
    let bulk = quad::integrate_pieces(
        |s| if s <= 0.0 { v.v0() } else { c * s.powf(-d / 2.0) * weighted_v(v, s) },
        0.0,
        a,
        &[0.01, 0.1, 1.0],
        tol,
    )?;
    if horizon <= a {
        return Ok(bulk.value);
    }
    // s = 1/z², ds = 2z^{-3}dz: the tail integrand 2c·z^{d−3}·J(1/z²) is smooth at z = 0
    let zlo = if horizon.is_finite() { 1.0 / horizon.sqrt() } else { 0.0 };
    let tail = quad::integrate(
        |z| {
            let j = if z <= 0.0 { weighted_v(v, f64::INFINITY) } else { weighted_v(v, 1.0 / (z * z)) };
            2.0 * c * z.powf(d - 3.0) * j
        },
        zlo,
        1.0 / a.sqrt(),
        tol,
    )?;
    let value = bulk.value + tail.value;
    if !value.is_finite() {
        return Err(Error::Quadrature { estimate: f64::INFINITY, tol: tol.rel });
    }
    Ok(value)
}

/// 2β²·E₀∫₀^∞ V(√2 W_s) ds; admissible iff < 1.
pub fn khasminskii_margin(beta: f64, v: &CovarianceKernel) -> Result<f64> {
    let per = v.cached_khasminskii(|| expected_overlap(v, f64::INFINITY))?;
    Ok(2.0 * beta * beta * per)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::standard_v3;
    use approx::assert_relative_eq;

    // scipy oracle: ∫₀¹ u V(u) du (Green kernel 1/(2π|y|) in d = 3)
    const GREEN_ORACLE: f64 = 0.257_203_560_755_101_7;

    #[test]
    fn single_path_zero_horizon() {
        let e = sample_paths(3, 1, 0.01, &[0.0], &[0.3, -0.2, 1.0], 4).unwrap();
        assert_eq!(e.endpoint(0, 0), &[0.3, -0.2, 1.0]);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(matches!(sample_paths(3, 2, 0.1, &[0.25], &[0.0; 3], 1), Err(Error::OffGrid { .. })));
        assert!(sample_paths(3, 2, 0.1, &[], &[0.0; 3], 1).is_err());
        assert!(sample_paths(3, 2, 0.1, &[0.2, 0.2], &[0.0; 3], 1).is_err());
    }

    #[test]
    fn gram_invariants() {
        let e = sample_paths(3, 12, 0.01, &[0.5, 1.0, 2.0], &[0.0; 3], 8).unwrap();
        let g = overlap_gram(&e, standard_v3()).unwrap();
        for k in 0..3 {
            let t = g.horizons()[k];
            for i in 0..12 {
                assert_eq!(g.get(k, i, i), t * standard_v3().v0());
                for j in 0..12 {
                    assert_eq!(g.get(k, i, j), g.get(k, j, i));
                    assert!(g.get(k, i, j) >= 0.0 && g.get(k, i, j) <= t * standard_v3().v0() + 1e-12);
                    if k > 0 {
                        assert!(g.get(k, i, j) >= g.get(k - 1, i, j));
                    }
                }
            }
        }
    }

    #[test]
    fn close_pairs_matches_brute_force() {
        let mut r = rng::stream(&[1]);
        let pos: Vec<f64> = (0..300).map(|_| 3.0 * r.sample::<f64, _>(StandardNormal)).collect();
        let mut fast = vec![];
        close_pairs(3, &pos, |a, b, _| fast.push((a, b)));
        let mut slow = vec![];
        for a in 0..100 {
            for b in a + 1..100 {
                let r2: f64 = (0..3).map(|k| (pos[3 * a + k] - pos[3 * b + k]).powi(2)).sum();
                if r2 < 1.0 {
                    slow.push((a, b));
                }
            }
        }
        fast.sort();
        assert_eq!(fast, slow);
    }

    #[test]
    fn khasminskii_matches_green_oracle() {
        let v = standard_v3();
        let m = khasminskii_margin(1.0, v).unwrap();
        assert_relative_eq!(m / 2.0, GREEN_ORACLE, max_relative = 1e-6);
        assert_eq!(khasminskii_margin(0.0, v).unwrap(), 0.0);
        let r = khasminskii_margin(0.4, v).unwrap() / khasminskii_margin(0.2, v).unwrap();
        assert_relative_eq!(r, 4.0, max_relative = 1e-14);
    }

    #[test]
    fn exp_functional_trivial_cases() {
        let v = standard_v3();
        let e = exp_functional(v, &[0.0; 3], 0.0, 64.0, 1e-2, 10, 1).unwrap();
        assert_eq!(e.estimate, 1.0);
        assert!(exp_functional(v, &[0.0; 3], 0.2, 32.0, 1e-2, 10, 1).is_err());
        assert!(matches!(exp_functional(v, &[0.0; 3], 3.0, 64.0, 1e-2, 10, 1), Err(Error::Inadmissible { .. })));
        let far = exp_functional(v, &[10.0, 0.0, 0.0], 0.2, 64.0, 1e-2, 2000, 3).unwrap();
        assert!((far.estimate - 1.0).abs() < 1e-3);
    }
}
