//! The bump mollifier φ, its autocorrelation V = φ⋆φ and the heat kernel ρ.

use crate::error::{Error, Result};
use crate::quad::{self, Tolerance};
use serde::Serialize;
use std::f64::consts::PI;
use std::path::Path;

/// Support radius of φ.
pub const PHI_RADIUS: f64 = 0.5;
/// Default number of radial samples of V on [0, 1].
pub const V_TABLE_LEN: usize = 1024;
const FAST_TABLE_LEN: usize = 8192;

/// Surface area of the unit sphere in ℝ^d.
pub fn sphere_area(d: usize) -> f64 {
    2.0 * PI.powf(d as f64 / 2.0) / statrs::function::gamma::gamma(d as f64 / 2.0)
}

fn bump(r: f64) -> f64 {
    if r >= PHI_RADIUS {
        0.0
    } else {
        (-1.0 / (1.0 - 4.0 * r * r)).exp()
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Radially symmetric bump c·exp(−1/(1 − 4|x|²)) on |x| < 1/2.
#[derive(Debug, Clone)]
pub struct Mollifier {
    d: usize,
    c: f64,
    profile: Vec<(f64, f64)>,
    // φ sampled on a uniform grid in r² ∈ [0, 1/4] for inner loops
    fast: Vec<f64>,
}

pub fn make_mollifier(d: usize, resolution: usize) -> Result<Mollifier> {
    if d < 3 {
        return Err(Error::Dimension(d));
    }
    if resolution < 64 {
        return Err(Error::invalid(format!("resolution {resolution} < 64")));
    }
    let mass = quad::integrate(
        |r| r.powi(d as i32 - 1) * bump(r),
        0.0,
        PHI_RADIUS,
        Tolerance::new(1e-15, 1e-13),
    )?;
    let c = 1.0 / (sphere_area(d) * mass.value);
    let profile = (0..resolution)
        .map(|i| {
            let r = PHI_RADIUS * i as f64 / (resolution - 1) as f64;
            (r, c * bump(r))
        })
        .collect();
    let r2max = PHI_RADIUS * PHI_RADIUS;
    let fast = (0..=FAST_TABLE_LEN)
        .map(|i| c * bump((r2max * i as f64 / FAST_TABLE_LEN as f64).sqrt()))
        .collect();
    Ok(Mollifier { d, c, profile, fast })
}

impl Mollifier {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn normalization(&self) -> f64 {
        self.c
    }

    /// Tabulated radial profile (r, φ(r)) on [0, 1/2].
    pub fn profile(&self) -> &[(f64, f64)] {
        &self.profile
    }

    pub fn radial(&self, r: f64) -> f64 {
        self.c * bump(r.abs())
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.radial(norm(x))
    }

    /// φ_ε(x) = ε^{−d} φ(x/ε).
    pub fn scaled(&self, eps: f64, x: &[f64]) -> f64 {
        self.radial(norm(x) / eps) / eps.powi(self.d as i32)
    }

    /// Table lookup of φ as a function of the squared radius (linear interpolation).
    #[inline]
    pub fn radial_sq_fast(&self, r2: f64) -> f64 {
        let s = r2 * (FAST_TABLE_LEN as f64 / (PHI_RADIUS * PHI_RADIUS));
        if s >= FAST_TABLE_LEN as f64 {
            return 0.0;
        }
        let i = s as usize;
        let t = s - i as f64;
        self.fast[i] + t * (self.fast[i + 1] - self.fast[i])
    }

    /// ∫φ_ε over ℝ^d by radial quadrature.
    pub fn integral(&self, eps: f64) -> Result<f64> {
        let area = sphere_area(self.d);
        let d = self.d as i32;
        let e = quad::integrate(
            |r| area * r.powi(d - 1) * self.radial(r / eps) / eps.powi(d),
            0.0,
            PHI_RADIUS * eps,
            Tolerance::new(1e-14, 1e-12),
        )?;
        Ok(e.value)
    }
}

/// V = φ⋆φ as a radial table on [0, 1] with monotone cubic interpolation.
#[derive(Debug, Clone)]
pub struct CovarianceKernel {
    d: usize,
    v0: f64,
    h: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
    khasminskii: std::sync::OnceLock<f64>,
}

/// Spherical average of φ(|sω − r e₁|) times the sphere area, as a 1-d integral in u = |sω − r e₁|.
fn shell_integral(m: &Mollifier, s: f64, r: f64, tol: Tolerance) -> Result<f64> {
    let d = m.d;
    if r < 1e-12 || s < 1e-12 {
        return Ok(sphere_area(d) * m.radial(s.max(r)));
    }
    let lo = (s - r).abs();
    let hi = (s + r).min(PHI_RADIUS);
    if lo >= hi {
        return Ok(0.0);
    }
    let area = sphere_area(d - 1);
    let e = quad::integrate(
        |u| {
            let c = (s * s + r * r - u * u) / (2.0 * s * r);
            let w = (1.0 - c * c).max(0.0);
            let ang = if d == 3 { 1.0 } else { w.powf((d as f64 - 3.0) / 2.0) };
            m.radial(u) * ang * u / (s * r)
        },
        lo,
        hi,
        tol,
    )?;
    Ok(area * e.value)
}

fn convolve_at(m: &Mollifier, r: f64) -> Result<f64> {
    let d = m.d as i32;
    let inner = Tolerance::new(1e-13, 1e-11);
    let lo = (r - PHI_RADIUS).max(0.0);
    if lo >= PHI_RADIUS {
        return Ok(0.0);
    }
    let e = quad::integrate(
        |s| match shell_integral(m, s, r, inner) {
            Ok(a) => m.radial(s) * s.powi(d - 1) * a,
            Err(_) => f64::NAN,
        },
        lo,
        PHI_RADIUS,
        Tolerance::new(1e-11, 1e-10),
    )?;
    if !e.value.is_finite() {
        return Err(Error::Quadrature { estimate: f64::INFINITY, tol: 1e-10 });
    }
    Ok(e.value.max(0.0))
}

/// Fritsch–Carlson slopes for a monotone piecewise cubic Hermite interpolant.
fn pchip_slopes(h: f64, y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let delta: Vec<f64> = y.windows(2).map(|w| (w[1] - w[0]) / h).collect();
    let mut m = vec![0.0; n];
    m[0] = delta[0];
    m[n - 1] = delta[n - 2];
    for i in 1..n - 1 {
        let (a, b) = (delta[i - 1], delta[i]);
        m[i] = if a * b <= 0.0 { 0.0 } else { 2.0 / (1.0 / a + 1.0 / b) };
    }
    m
}

pub fn autocorrelate(m: &Mollifier) -> Result<CovarianceKernel> {
    autocorrelate_with(m, V_TABLE_LEN)
}

pub fn autocorrelate_with(m: &Mollifier, samples: usize) -> Result<CovarianceKernel> {
    if samples < 4 {
        return Err(Error::invalid("V table needs at least 4 samples"));
    }
    let d = m.d as i32;
    let v0 = quad::integrate(
        |s| sphere_area(m.d) * s.powi(d - 1) * m.radial(s).powi(2),
        0.0,
        PHI_RADIUS,
        Tolerance::new(1e-14, 1e-13),
    )?
    .value;
    let h = 1.0 / (samples - 1) as f64;
    let mut values = Vec::with_capacity(samples);
    values.push(v0);
    for i in 1..samples - 1 {
        values.push(convolve_at(m, i as f64 * h)?);
    }
    values.push(0.0);
    let slopes = pchip_slopes(h, &values);
    Ok(CovarianceKernel { d: m.d, v0, h, values, slopes, khasminskii: Default::default() })
}

impl CovarianceKernel {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub(crate) fn cached_khasminskii<F: FnOnce() -> Result<f64>>(&self, f: F) -> Result<f64> {
        if let Some(&v) = self.khasminskii.get() {
            return Ok(v);
        }
        let v = f()?;
        Ok(*self.khasminskii.get_or_init(|| v))
    }

    /// Radial samples (r, V(r)) on [0, 1].
    pub fn table(&self) -> Vec<(f64, f64)> {
        self.values.iter().enumerate().map(|(i, &v)| (i as f64 * self.h, v)).collect()
    }

    #[inline]
    pub fn radial(&self, r: f64) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        let s = r / self.h;
        let i = (s as usize).min(self.values.len() - 2);
        let t = s - i as f64;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * self.h, self.slopes[i + 1] * self.h);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * m1
    }

    #[inline]
    pub fn radial_sq(&self, r2: f64) -> f64 {
        if r2 >= 1.0 {
            0.0
        } else {
            self.radial(r2.sqrt())
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.radial(norm(x))
    }

    /// ∫V over ℝ^d by radial quadrature of the interpolant.
    pub fn integral(&self) -> Result<f64> {
        let d = self.d as i32;
        let breaks: Vec<f64> = (1..16).map(|k| k as f64 / 16.0).collect();
        let e = quad::integrate_pieces(
            |r| sphere_area(self.d) * r.powi(d - 1) * self.radial(r),
            0.0,
            1.0,
            &breaks,
            Tolerance::new(1e-12, 1e-10),
        )?;
        Ok(e.value)
    }
}

/// The mollifier and its autocorrelation for one dimension.
#[derive(Debug, Clone)]
pub struct Kernels {
    pub phi: Mollifier,
    pub v: CovarianceKernel,
}

impl Kernels {
    /// Kernel pair for dimension `d` at the default resolutions.
    pub fn standard(d: usize) -> Result<Self> {
        let phi = make_mollifier(d, 256)?;
        let v = autocorrelate(&phi)?;
        Ok(Kernels { phi, v })
    }

    pub fn dim(&self) -> usize {
        self.v.dim()
    }
}

/// Shared kernels for d = 3 (built once per process).
pub fn standard3() -> &'static Kernels {
    use std::sync::OnceLock;
    static K: OnceLock<Kernels> = OnceLock::new();
    K.get_or_init(|| Kernels::standard(3).expect("d = 3 kernels"))
}

pub fn standard_v3() -> &'static CovarianceKernel {
    &standard3().v
}

pub fn standard_phi3() -> &'static Mollifier {
    &standard3().phi
}

/// ρ(t, x) = (2πt)^{−d/2} exp(−|x|²/2t).
pub fn heat_kernel(d: usize, t: f64, x: &[f64]) -> Result<f64> {
    heat_kernel_radial(d, t, norm(x))
}

pub fn heat_kernel_radial(d: usize, t: f64, r: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::NonPositiveTime(t));
    }
    Ok((2.0 * PI * t).powf(-(d as f64) / 2.0) * (-r * r / (2.0 * t)).exp())
}

fn rho_or_zero(d: usize, t: f64, r: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (2.0 * PI * t).powf(-(d as f64) / 2.0) * (-r * r / (2.0 * t)).exp()
    }
}

/// ∫₀^∞ ρ(2σ + c, r) dσ.
///
/// The bulk [0, A] is integrated directly; the tail is mapped by z = (2σ + c)^{−1/2},
/// which turns its σ^{−d/2} decay into the smooth integrand (2π)^{−d/2} z^{d−3} e^{−r²z²/2}.
pub fn heat_time_integral(d: usize, c: f64, r: f64, tol: Tolerance) -> Result<f64> {
    if c < 0.0 {
        return Err(Error::NonPositiveTime(c));
    }
    if c == 0.0 && r == 0.0 {
        return Err(Error::invalid("heat time integral diverges at c = 0, r = 0"));
    }
    let a = 4.0 * (r * r).max(1.0) + c;
    let mut breaks = Vec::new();
    // put the peak of σ ↦ ρ(2σ + c, r) on a break point
    let peak = (r * r / d as f64 - c) / 2.0;
    if peak > 0.0 && peak < a {
        breaks.push(peak);
    }
    let bulk = quad::integrate_pieces(|s| rho_or_zero(d, 2.0 * s + c, r), 0.0, a, &breaks, tol)?;
    let zmax = 1.0 / (2.0 * a + c).sqrt();
    let tail = quad::integrate(
        |z| (2.0 * PI).powf(-(d as f64) / 2.0) * z.powi(d as i32 - 3) * (-r * r * z * z / 2.0).exp(),
        0.0,
        zmax,
        tol,
    )?;
    Ok(bulk.value + tail.value)
}

#[derive(Serialize)]
struct RadialRow {
    r: f64,
    value: f64,
}

/// Write (r, value) rows as CSV with header `r,value`.
pub fn write_radial_csv(path: &Path, rows: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for &(r, value) in rows {
        w.serialize(RadialRow { r, value })?;
    }
    w.flush()?;
    Ok(())
}
