//! Statistical verdicts: KS distances, variance intervals, slopes and trends.

use crate::error::{Error, Result};
use crate::rng::{self, role};
use rand::RngExt;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};
use std::path::Path;

/// Asymptotic 1% critical constant of the Kolmogorov distribution.
pub const KS_CRIT_1PCT: f64 = 1.628;

/// Mean (or other estimate) with a standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Measured {
    pub value: f64,
    pub se: f64,
    pub n: usize,
}

impl Measured {
    pub fn exact(value: f64) -> Self {
        Measured { value, se: 0.0, n: 0 }
    }

    /// Sample mean and its standard error.
    pub fn mean_of(xs: &[f64]) -> Self {
        let n = xs.len();
        let nf = n as f64;
        let m = xs.iter().sum::<f64>() / nf;
        let var = if n > 1 { xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (nf - 1.0) } else { 0.0 };
        Measured { value: m, se: (var / nf).sqrt(), n }
    }

    /// Whether |value − target| ≤ k·se (k·0 = 0 demands equality).
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.se
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TestReport {
    pub name: String,
    pub statistic: f64,
    pub critical: f64,
    pub ci: Option<(f64, f64)>,
    pub target: Option<f64>,
    pub pass: bool,
    pub n: usize,
    pub seed: Option<u64>,
    pub note: String,
}

impl TestReport {
    /// Verdict `statistic ≤ critical`.
    pub fn new(name: impl Into<String>, statistic: f64, critical: f64, n: usize) -> Self {
        TestReport {
            name: name.into(),
            statistic,
            critical,
            ci: None,
            target: None,
            pass: statistic <= critical,
            n,
            seed: None,
            note: String::new(),
        }
    }

    pub fn with_ci(mut self, ci: (f64, f64)) -> Self {
        self.ci = Some(ci);
        self
    }

    pub fn with_target(mut self, t: f64) -> Self {
        self.target = Some(t);
        self
    }

    pub fn with_seed(mut self, s: u64) -> Self {
        self.seed = Some(s);
        self
    }

    pub fn with_note(mut self, s: impl Into<String>) -> Self {
        self.note = s.into();
        self
    }

    /// Statistic |value − target|/se against k standard errors.
    pub fn within_se(name: impl Into<String>, m: Measured, target: f64, k: f64) -> Self {
        let dev = (m.value - target).abs();
        let stat = if m.se > 0.0 {
            dev / m.se
        } else if dev == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        TestReport::new(name, stat, k, m.n)
            .with_target(target)
            .with_ci((m.value - k * m.se, m.value + k * m.se))
    }
}

/// Writes reports as a JSON array.
pub fn write_reports(path: &Path, reports: &[TestReport]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(f, reports)?;
    Ok(())
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// One-sample KS distance against N(μ, σ²); 1% critical value 1.628/√n.
pub fn ks_normal(samples: &[f64], mu: f64, var: f64) -> Result<TestReport> {
    if !(var > 0.0) {
        return Err(Error::invalid(format!("variance must be positive, got {var}")));
    }
    let n = samples.len();
    if n < 100 {
        return Err(Error::invalid(format!("KS needs n >= 100, got {n}")));
    }
    let s = sorted(samples);
    let sd = var.sqrt();
    let nf = n as f64;
    let mut dmax: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = rng::normal_cdf((x - mu) / sd);
        dmax = dmax.max((i as f64 + 1.0) / nf - f).max(f - i as f64 / nf);
    }
    Ok(TestReport::new("ks_normal", dmax, KS_CRIT_1PCT / nf.sqrt(), n))
}

/// Two-sample KS distance; 1% critical value 1.628·√((n+m)/(nm)).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestReport> {
    let (n, m) = (a.len(), b.len());
    if n < 2 || m < 2 {
        return Err(Error::invalid("two-sample KS needs at least two values per sample"));
    }
    let (sa, sb) = (sorted(a), sorted(b));
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < n && j < m {
        let x = sa[i].min(sb[j]);
        while i < n && sa[i] <= x {
            i += 1;
        }
        while j < m && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let (nf, mf) = (n as f64, m as f64);
    Ok(TestReport::new("ks_two_sample", d, KS_CRIT_1PCT * ((nf + mf) / (nf * mf)).sqrt(), n + m))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct VarianceCi {
    pub estimate: f64,
    pub normal: (f64, f64),
    pub bootstrap: (f64, f64),
    /// The wider of the two intervals.
    pub ci: (f64, f64),
    pub n: usize,
}

impl VarianceCi {
    pub fn contains(&self, x: f64) -> bool {
        self.ci.0 <= x && x <= self.ci.1
    }
}

fn unbiased_var(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
}

/// Sample variance with a chi-square interval and a 2000-resample percentile
/// bootstrap interval; the wider one is reported.
pub fn variance_ci(samples: &[f64], confidence: f64, seed: u64) -> Result<VarianceCi> {
    let n = samples.len();
    if n < 30 {
        return Err(Error::invalid(format!("variance_ci needs n >= 30, got {n}")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::invalid("confidence must lie in (0, 1)"));
    }
    let s2 = unbiased_var(samples);
    let alpha = 1.0 - confidence;
    let nf = n as f64;
    let chi = ChiSquared::new(nf - 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let normal = ((nf - 1.0) * s2 / chi.inverse_cdf(1.0 - alpha / 2.0), (nf - 1.0) * s2 / chi.inverse_cdf(alpha / 2.0));
    let mut r = rng::stream(&[seed, role::BOOTSTRAP, n as u64]);
    let mut boots: Vec<f64> = (0..2000)
        .map(|_| {
            let (mut s, mut ss) = (0.0, 0.0);
            for _ in 0..n {
                let x = samples[r.random_range(0..n)];
                s += x;
                ss += x * x;
            }
            let m = s / nf;
            ((ss - nf * m * m) / (nf - 1.0)).max(0.0)
        })
        .collect();
    boots.sort_by(f64::total_cmp);
    let q = |p: f64| boots[((p * 2000.0).floor() as usize).min(1999)];
    let bootstrap = (q(alpha / 2.0), q(1.0 - alpha / 2.0));
    let ci = if bootstrap.1 - bootstrap.0 > normal.1 - normal.0 { bootstrap } else { normal };
    Ok(VarianceCi { estimate: s2, normal, bootstrap, ci, n })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub se: f64,
    /// 99% interval.
    pub ci: (f64, f64),
    pub n: usize,
}

/// Least-squares slope of log v against log r, CI from the residuals.
pub fn loglog_slope(pairs: &[(f64, f64)]) -> Result<SlopeFit> {
    weighted_slope(pairs, None)
}

/// Weighted least squares of log v on log r with weights 1/Var(log v) = (v/se)²;
/// the slope SE propagates the given point SEs.
pub fn loglog_slope_weighted(pairs: &[(f64, f64)], ses: &[f64]) -> Result<SlopeFit> {
    if ses.len() != pairs.len() || ses.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::invalid("need one positive SE per point"));
    }
    weighted_slope(pairs, Some(ses))
}

fn weighted_slope(pairs: &[(f64, f64)], ses: Option<&[f64]>) -> Result<SlopeFit> {
    let n = pairs.len();
    if n < 4 {
        return Err(Error::invalid(format!("slope fit needs >= 4 points, got {n}")));
    }
    if pairs.iter().any(|&(r, v)| !(r > 0.0) || !(v > 0.0)) {
        return Err(Error::invalid("slope fit needs positive values"));
    }
    let x: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let w: Vec<f64> = match ses {
        Some(s) => pairs.iter().zip(s).map(|(p, se)| (p.1 / se).powi(2)).collect(),
        None => vec![1.0; n],
    };
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = (0..n).map(|i| w[i] * (x[i] - mx).powi(2)).sum();
    let sxy: f64 = (0..n).map(|i| w[i] * (x[i] - mx) * (y[i] - my)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("slope fit needs distinct radii"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let t = StudentsT::new(0.0, 1.0, n as f64 - 2.0).map_err(|e| Error::invalid(e.to_string()))?;
    let q = t.inverse_cdf(0.995);
    let se = match ses {
        Some(_) => (1.0 / sxx).sqrt(),
        None => {
            let rss: f64 = (0..n).map(|i| (y[i] - intercept - slope * x[i]).powi(2)).sum();
            (rss / (n as f64 - 2.0) / sxx).sqrt()
        }
    };
    Ok(SlopeFit { slope, intercept, se, ci: (slope - q * se, slope + q * se), n })
}

const Z_ONE_SIDED_1PCT: f64 = 2.326;
const Z_TWO_SIDED_1PCT: f64 = 2.576;

fn scaled(excess: f64, se: f64, z: f64) -> f64 {
    if se > 0.0 {
        excess / (z * se)
    } else if excess > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Magnitudes nonincreasing along the sequence (each step within a one-sided 1%
/// allowance of the combined SE) and the last value's 99% CI containing 0.
///
/// The statistic is the largest violation in units of its allowance; pass iff ≤ 1.
pub fn trend_to_zero(values: &[f64], ses: &[f64]) -> Result<TestReport> {
    let n = values.len();
    if n < 3 || ses.len() != n {
        return Err(Error::invalid("trend test needs >= 3 values with matching SEs"));
    }
    let mut stat: f64 = 0.0;
    for k in 0..n - 1 {
        let excess = values[k + 1].abs() - values[k].abs();
        let se = (ses[k] * ses[k] + ses[k + 1] * ses[k + 1]).sqrt();
        stat = stat.max(scaled(excess, se, Z_ONE_SIDED_1PCT));
    }
    stat = stat.max(scaled(values[n - 1].abs(), ses[n - 1], Z_TWO_SIDED_1PCT));
    let last = (values[n - 1] - Z_TWO_SIDED_1PCT * ses[n - 1], values[n - 1] + Z_TWO_SIDED_1PCT * ses[n - 1]);
    Ok(TestReport::new("trend_to_zero", stat, 1.0, n).with_ci(last).with_target(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_distr::StandardNormal;

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::stream(&[seed]);
        (0..n).map(|_| r.sample(StandardNormal)).collect()
    }

    #[test]
    fn ks_examples() {
        let x = normals(10_000, 1);
        assert!(ks_normal(&x, 0.0, 1.0).unwrap().pass);
        let c = ks_normal(&[0.0; 200], 0.0, 1.0).unwrap();
        assert_relative_eq!(c.statistic, 0.5, epsilon = 1e-12);
        assert!(!c.pass);
        let wide = ks_normal(&x, 0.0, 4.0).unwrap();
        // sup |Φ(x) − Φ(x/2)| = 0.161337 (scipy grid oracle)
        assert!((wide.statistic - 0.161_337).abs() < 0.02 && !wide.pass);
        assert!(ks_normal(&x, 0.0, 0.0).is_err());
        assert!(ks_normal(&x[..50], 0.0, 1.0).is_err());
    }

    #[test]
    fn two_sample_ks() {
        let a = normals(2000, 2);
        let b = normals(2000, 3);
        assert!(ks_two_sample(&a, &b).unwrap().pass);
        let c: Vec<f64> = b.iter().map(|x| x + 0.3).collect();
        assert!(!ks_two_sample(&a, &c).unwrap().pass);
        assert_eq!(ks_two_sample(&a, &a).unwrap().statistic, 0.0);
    }

    #[test]
    fn variance_interval() {
        let x = normals(10_000, 4);
        let v = variance_ci(&x, 0.99, 1).unwrap();
        assert!(v.contains(1.0));
        assert!(v.ci.1 - v.ci.0 >= v.normal.1 - v.normal.0);
        let c = variance_ci(&[3.0; 50], 0.99, 1).unwrap();
        assert_eq!((c.estimate, c.ci), (0.0, (0.0, 0.0)));
        assert!(variance_ci(&x[..10], 0.99, 1).is_err());
        let ln: Vec<f64> = normals(20_000, 5).iter().map(|z| (0.5 * z).exp()).collect();
        let t = 0.25f64.exp() * (0.25f64.exp() - 1.0);
        assert!(variance_ci(&ln, 0.99, 2).unwrap().contains(t));
    }

    #[test]
    fn slopes() {
        let p: Vec<(f64, f64)> = [1.0, 2.0, 3.0, 5.0, 8.0].iter().map(|&r| (r, 7.0 / r)).collect();
        let f = loglog_slope(&p).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12 && f.se < 1e-12);
        let c: Vec<(f64, f64)> = [1.0, 2.0, 3.0, 4.0].iter().map(|&r| (r, 3.0)).collect();
        assert!(loglog_slope(&c).unwrap().slope.abs() < 1e-14);
        assert!(loglog_slope(&[(1.0, 1.0), (2.0, -1.0), (3.0, 1.0), (4.0, 1.0)]).is_err());
        assert!(loglog_slope(&p[..3]).is_err());
        let w = loglog_slope_weighted(&p, &[0.1; 5]).unwrap();
        assert!((w.slope + 1.0).abs() < 1e-12);
    }

    #[test]
    fn trend_examples() {
        assert!(trend_to_zero(&[1.0, 0.5, 0.1], &[0.0, 0.0, 0.2]).unwrap().pass);
        assert!(!trend_to_zero(&[1.0, 2.0, 3.0], &[0.0; 3]).unwrap().pass);
        assert!(trend_to_zero(&[1.0, 2.0], &[0.0; 2]).is_err());
    }

    #[test]
    fn measured_helpers() {
        let m = Measured::mean_of(&[1.0, 2.0, 3.0]);
        assert_eq!(m.value, 2.0);
        assert!(m.within(2.5, 1.0));
        assert!(Measured::exact(1.0).within(1.0, 0.0));
        let r = TestReport::within_se("x", Measured::exact(1.0), 1.0, 3.0);
        assert!(r.pass);
    }
}
