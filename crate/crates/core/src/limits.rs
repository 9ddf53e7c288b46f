//! Covariances of the limit Gaussian fields ℋ, ℋ̄ and ℋ^st, and exact sampling.

use crate::error::{Error, Result};
use crate::kernels::{heat_kernel_radial, heat_time_integral, sphere_area};
use crate::polymer::SpaceTimePoint;
use crate::quad::{self, Tolerance};
use crate::rng::{self, role};
use crate::statlab::{loglog_slope, SlopeFit};
use rand::RngExt;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use std::f64::consts::PI;

fn tol() -> Tolerance {
    Tolerance::new(1e-300, 1e-10)
}

fn distance(p: &SpaceTimePoint, q: &SpaceTimePoint) -> Result<f64> {
    if p.x.len() != q.x.len() {
        return Err(Error::invalid("point dimension mismatch"));
    }
    if !(p.t >= 0.0 && q.t >= 0.0) {
        return Err(Error::invalid("times must be nonnegative"));
    }
    Ok(p.x.iter().zip(&q.x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

/// ∫₀^∞ ρ(2σ, r) dσ.
pub fn green_integral(d: usize, r: f64) -> Result<f64> {
    heat_time_integral(d, 0.0, r, tol())
}

/// γ²·∫₀^∞ ρ(2σ + t + s, y − x) dσ.
pub fn cov_h(p: &SpaceTimePoint, q: &SpaceTimePoint, gamma_sq: f64) -> Result<f64> {
    let r = distance(p, q)?;
    if gamma_sq == 0.0 {
        return Ok(0.0);
    }
    let c = p.t + q.t;
    if c == 0.0 && r == 0.0 {
        return Err(Error::invalid("covariance of ℋ diverges at coincident points at time 0"));
    }
    Ok(gamma_sq * heat_time_integral(p.x.len(), c, r, tol())?)
}

/// amp²·∫₀^{min(t,s)} ρ(t + s − 2u, y − x) du = (amp²/2)·∫_{|t−s|}^{t+s} ρ(v, y − x) dv.
pub fn cov_hbar(p: &SpaceTimePoint, q: &SpaceTimePoint, amp_sq: f64) -> Result<f64> {
    let r = distance(p, q)?;
    let (lo, hi) = ((p.t - q.t).abs(), p.t + q.t);
    if amp_sq == 0.0 || p.t == 0.0 || q.t == 0.0 {
        return Ok(0.0);
    }
    if lo == 0.0 && r == 0.0 {
        return Err(Error::invalid("covariance of the additive field diverges at coincident points"));
    }
    let d = p.x.len();
    let peak = r * r / d as f64;
    let breaks: Vec<f64> = [peak, 10.0 * peak].into_iter().filter(|&b| b > lo && b < hi).collect();
    let e = quad::integrate_pieces(
        |v| if v <= 0.0 { 0.0 } else { heat_kernel_radial(d, v, r).unwrap_or(0.0) },
        lo,
        hi,
        &breaks,
        tol(),
    )?;
    Ok(0.5 * amp_sq * e.value)
}

/// cov_h with γ² plus cov_hbar with amp².
pub fn cov_hst(p: &SpaceTimePoint, q: &SpaceTimePoint, gamma_sq: f64, amp_sq: f64) -> Result<f64> {
    Ok(cov_h(p, q, gamma_sq)? + cov_hbar(p, q, amp_sq)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct StationarityRow {
    pub t: f64,
    pub with_gamma: f64,
    pub with_gbar: f64,
    pub reference: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StationarityCheck {
    pub r: f64,
    pub gamma_sq: f64,
    pub gbar_sq: f64,
    pub rows: Vec<StationarityRow>,
    /// Largest |cov_Hst(t) − cov_Hst(0)| relative to cov_Hst(0), amplitude γ.
    pub max_dev_gamma: f64,
    /// The same with amplitude ḡ.
    pub max_dev_gbar: f64,
}

/// Equal-time marginal of ℋ^st at distance r for each t, with both amplitude choices.
pub fn stationarity_check(d: usize, r: f64, times: &[f64], gamma_sq: f64, gbar_sq: f64) -> Result<StationarityCheck> {
    let at = |t: f64| (SpaceTimePoint::new(t, vec![0.0; d]), SpaceTimePoint::new(t, {
        let mut y = vec![0.0; d];
        y[0] = r;
        y
    }));
    let (p0, q0) = at(0.0);
    let reference = cov_hst(&p0, &q0, gamma_sq, gamma_sq)?;
    let mut rows = Vec::new();
    let (mut dg, mut db) = (0.0f64, 0.0f64);
    for &t in times {
        let (p, q) = at(t);
        let h = cov_h(&p, &q, gamma_sq)?;
        let with_gamma = h + cov_hbar(&p, &q, gamma_sq)?;
        let with_gbar = h + cov_hbar(&p, &q, gbar_sq)?;
        let scale = if reference > 0.0 { reference } else { 1.0 };
        dg = dg.max((with_gamma - reference).abs() / scale);
        db = db.max((with_gbar - reference).abs() / scale);
        rows.push(StationarityRow { t, with_gamma, with_gbar, reference });
    }
    Ok(StationarityCheck { r, gamma_sq, gbar_sq, rows, max_dev_gamma: dg, max_dev_gbar: db })
}

/// Γ(d/2 − 1)/π^{d/2}: the prefactor of |x|^{2−d} in the closed-form GFF covariance.
pub fn printed_gff_prefactor(d: usize) -> f64 {
    gamma(d as f64 / 2.0 - 1.0) / PI.powf(d as f64 / 2.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct GreenScaling {
    pub fit: SlopeFit,
    /// r^{d−2}·∫₀^∞ρ(2σ, r)dσ per radius.
    pub prefactors: Vec<f64>,
    /// Mean prefactor divided by the printed closed-form prefactor.
    pub ratio_to_printed: f64,
}

/// Slope of ∫₀^∞ρ(2σ, r)dσ against r on log axes, and its prefactor.
pub fn green_scaling(d: usize, radii: &[f64]) -> Result<GreenScaling> {
    let vals = radii.iter().map(|&r| green_integral(d, r).map(|v| (r, v))).collect::<Result<Vec<_>>>()?;
    let fit = loglog_slope(&vals)?;
    let prefactors: Vec<f64> = vals.iter().map(|&(r, v)| v * r.powi(d as i32 - 2)).collect();
    let mean = prefactors.iter().sum::<f64>() / prefactors.len() as f64;
    Ok(GreenScaling { fit, prefactors, ratio_to_printed: mean / printed_gff_prefactor(d) })
}

/// ∫ρ(t, x − z)·∫₀^∞ρ(2σ, z − y)dσ dz as a radial integral in r = |z − y|.
pub fn heat_evolved_green(d: usize, t: f64, dist: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::NonPositiveTime(t));
    }
    let a = dist;
    // spherical average of ρ(t, rω − a e₁) times the shell area r^{d−1}·S_d
    let shell = |r: f64| -> f64 {
        if r == 0.0 {
            return 0.0;
        }
        let pref = (2.0 * PI * t).powf(-(d as f64) / 2.0);
        if d == 3 {
            let x = 2.0 * r * a / t;
            let avg = if x > 0.0 { -(-x).exp_m1() / x } else { 1.0 };
            return 4.0 * PI * r * r * pref * (-(r - a) * (r - a) / (2.0 * t)).exp() * avg;
        }
        let sd1 = sphere_area(d - 1);
        let inner = quad::integrate(
            |c: f64| (1.0 - c * c).max(0.0).powf((d as f64 - 3.0) / 2.0) * (-(r - a) * (r - a) / (2.0 * t) - r * a * (1.0 - c) / t).exp(),
            -1.0,
            1.0,
            Tolerance::new(1e-300, 1e-12),
        )
        .map(|e| e.value)
        .unwrap_or(f64::NAN);
        sd1 * r.powi(d as i32 - 1) * pref * inner
    };
    let g = |r: f64| green_integral(d, r).unwrap_or(f64::NAN);
    let hi = a + 14.0 * t.sqrt();
    let breaks: Vec<f64> = [a - 3.0 * t.sqrt(), a, a + 3.0 * t.sqrt()].into_iter().filter(|&b| b > 0.0 && b < hi).collect();
    let e = quad::integrate_pieces(|r| shell(r) * g(r), 0.0, hi, &breaks, Tolerance::new(1e-300, 1e-9))?;
    if !e.value.is_finite() {
        return Err(Error::Quadrature { estimate: f64::INFINITY, tol: 1e-9 });
    }
    Ok(e.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldTag {
    /// Heat-evolved Gaussian free field.
    H,
    /// Edwards–Wilkinson field with flat start.
    Hbar,
    /// Stationary field ℋ + ℋ̄.
    Hst,
}

/// Input of `limit-sample`: field, points and amplitudes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitRequest {
    pub field: FieldTag,
    pub points: Vec<SpaceTimePoint>,
    pub gamma_sq: f64,
    /// Amplitude² of the additive noise; defaults to γ².
    #[serde(default)]
    pub amp_sq: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GaussianLimitSpec {
    pub field: FieldTag,
    pub points: Vec<SpaceTimePoint>,
    pub gamma_sq: f64,
    pub amp_sq: f64,
    /// Row-major covariance matrix.
    pub cov: Vec<f64>,
}

impl GaussianLimitSpec {
    pub fn new(field: FieldTag, points: Vec<SpaceTimePoint>, gamma_sq: f64, amp_sq: f64) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::invalid("no points"));
        }
        let f = |p: &SpaceTimePoint, q: &SpaceTimePoint| match field {
            FieldTag::H => cov_h(p, q, gamma_sq),
            FieldTag::Hbar => cov_hbar(p, q, amp_sq),
            FieldTag::Hst => cov_hst(p, q, gamma_sq, amp_sq),
        };
        let mut cov = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let c = f(&points[i], &points[j])?;
                cov[i * n + j] = c;
                cov[j * n + i] = c;
            }
        }
        let spec = GaussianLimitSpec { field, points, gamma_sq, amp_sq, cov };
        spec.factor()?;
        Ok(spec)
    }

    pub fn from_request(r: &LimitRequest) -> Result<Self> {
        Self::new(r.field, r.points.clone(), r.gamma_sq, r.amp_sq.unwrap_or(r.gamma_sq))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cov[i * self.len() + j]
    }

    /// Cholesky factor with jitter at most 1e-10·trace/n.
    fn factor(&self) -> Result<nalgebra::DMatrix<f64>> {
        let n = self.len();
        let trace: f64 = (0..n).map(|i| self.get(i, i)).sum();
        if trace == 0.0 {
            return Ok(nalgebra::DMatrix::zeros(n, n));
        }
        for rel in [0.0, 1e-12, 1e-11, 1e-10] {
            let m = nalgebra::DMatrix::from_fn(n, n, |i, j| self.get(i, j) + if i == j { rel * trace / n as f64 } else { 0.0 });
            if let Some(c) = m.cholesky() {
                return Ok(c.l());
            }
        }
        Err(Error::Indefinite { size: n })
    }
}

/// `n` joint samples, deterministic in `seed` and independent of the thread count.
pub fn sample_limit(spec: &GaussianLimitSpec, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let l = spec.factor()?;
    let m = spec.len();
    const BLOCK: usize = 4096;
    let blocks: Vec<Vec<Vec<f64>>> = (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(&[seed, role::LIMIT, b as u64]);
            (b * BLOCK..((b + 1) * BLOCK).min(n))
                .map(|_| {
                    let z: Vec<f64> = (0..m).map(|_| r.sample(StandardNormal)).collect();
                    (0..m).map(|i| (0..=i).map(|j| l[(i, j)] * z[j]).sum()).collect()
                })
                .collect()
        })
        .collect();
    Ok(blocks.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pt(t: f64, x: f64) -> SpaceTimePoint {
        SpaceTimePoint::new(t, vec![x, 0.0, 0.0])
    }

    #[test]
    fn cov_h_examples() {
        // 2·(4π)^{−3/2}
        assert_relative_eq!(cov_h(&pt(1.0, 0.0), &pt(1.0, 0.0), 1.0).unwrap(), 0.044_896_780_531_291_64, max_relative = 1e-8);
        let (p, q) = (pt(0.3, 0.1), pt(1.7, 1.4));
        assert_eq!(cov_h(&p, &q, 0.5).unwrap(), cov_h(&q, &p, 0.5).unwrap());
        assert_eq!(cov_h(&p, &q, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn cov_hbar_examples() {
        assert_eq!(cov_hbar(&pt(0.0, 0.0), &pt(2.0, 0.5), 1.0).unwrap(), 0.0);
        // scipy: ½∫₀²ρ(v, 1)dv in d = 3
        assert_relative_eq!(cov_hbar(&pt(1.0, 0.0), &pt(1.0, 1.0), 1.0).unwrap(), 0.038_157_407_329_610_72, max_relative = 1e-8);
        let (p, q) = (pt(0.5, 0.0), pt(1.5, 0.7));
        assert_eq!(cov_hbar(&p, &q, 1.0).unwrap(), cov_hbar(&q, &p, 1.0).unwrap());
        assert!(cov_hbar(&pt(1.0, 0.0), &pt(1.0, 0.0), 1.0).is_err());
        let a = cov_hbar(&pt(1.0, 0.0), &pt(1.0, 0.5), 1.0).unwrap();
        let b = cov_hbar(&pt(2.0, 0.0), &pt(2.0, 0.5), 1.0).unwrap();
        assert!(b > a && a > 0.0);
    }

    #[test]
    fn stationarity_identity() {
        let s = stationarity_check(3, 1.0, &[1.0, 4.0], 0.04, 1.0).unwrap();
        assert!(s.max_dev_gamma < 1e-6);
        assert!(s.max_dev_gbar > 1e-2);
        assert_relative_eq!(s.rows[0].reference, 0.04 / (4.0 * PI), max_relative = 1e-9);
        assert_eq!(stationarity_check(3, 1.0, &[1.0], 0.0, 0.0).unwrap().max_dev_gamma, 0.0);
    }

    #[test]
    fn green_scaling_d3() {
        let g = green_scaling(3, &[1.0, 2.0, 4.0, 8.0]).unwrap();
        assert!((g.fit.slope + 1.0).abs() < 1e-3);
        assert_relative_eq!(g.ratio_to_printed, 0.25, max_relative = 1e-6);
        for lam in [2.0, 4.0] {
            let a = green_integral(3, 1.3).unwrap();
            let b = green_integral(3, 1.3 * lam).unwrap();
            assert_relative_eq!(b, a / lam, max_relative = 1e-4);
        }
    }

    #[test]
    fn heat_evolution_identity() {
        for d in [3, 4] {
            for (t, r) in [(1.0, 0.0), (1.0, 1.5), (2.5, 0.7)] {
                let direct = heat_time_integral(d, t, r, tol()).unwrap();
                let evolved = heat_evolved_green(d, t, r).unwrap();
                assert_relative_eq!(direct, evolved, max_relative = 1e-4);
            }
        }
    }

    #[test]
    fn limit_sampling() {
        let pts = vec![pt(1.0, 0.0), pt(1.0, 1.0), pt(2.0, 0.0)];
        let spec = GaussianLimitSpec::new(FieldTag::H, pts, 1.0, 1.0).unwrap();
        let n = 100_000;
        let s = sample_limit(&spec, n, 3).unwrap();
        assert_eq!(s, sample_limit(&spec, n, 3).unwrap());
        for i in 0..3 {
            for j in 0..3 {
                let prods: Vec<f64> = s.iter().map(|v| v[i] * v[j]).collect();
                let m = crate::statlab::Measured::mean_of(&prods);
                assert!(m.within(spec.get(i, j), 5.0), "{i}{j}: {} vs {}", m.value, spec.get(i, j));
            }
        }
        let one = GaussianLimitSpec::new(FieldTag::Hst, vec![pt(1.0, 0.0)], 1.0, 1.0);
        assert!(one.is_err());
        let single = GaussianLimitSpec::new(FieldTag::H, vec![pt(1.0, 0.0)], 1.0, 1.0).unwrap();
        let xs: Vec<f64> = sample_limit(&single, 5000, 1).unwrap().iter().map(|v| v[0]).collect();
        assert!(crate::statlab::ks_normal(&xs, 0.0, single.get(0, 0)).unwrap().pass);
    }
}
