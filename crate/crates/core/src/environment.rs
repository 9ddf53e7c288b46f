//! Lattice white noise for the field backend.
//!
//! Cell values are a pure function of (seed, slab index, cell index), so any
//! slab can be regenerated without history and walkers may evaluate cells on
//! demand.

use crate::error::{Error, Result};
use crate::kernels::{Mollifier, PHI_RADIUS};
use crate::rng;
use std::path::Path;

const GRID_EPS: f64 = 1e-9;

pub(crate) fn grid_count(what: &'static str, value: f64, step: f64) -> Result<usize> {
    let q = value / step;
    let n = q.round();
    if (q - n).abs() > GRID_EPS * q.abs().max(1.0) || n < 0.0 {
        return Err(Error::OffGrid { what, value, step });
    }
    Ok(n as usize)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LatticeSpec {
    pub d: usize,
    pub dx: f64,
    /// Side of the periodic box [−L/2, L/2)^d.
    pub box_len: f64,
    pub dt: f64,
    pub horizon: f64,
}

impl LatticeSpec {
    pub fn new(d: usize, dx: f64, box_len: f64, dt: f64, horizon: f64) -> Result<Self> {
        if d < 3 {
            return Err(Error::Dimension(d));
        }
        if !(dx > 0.0) || !(dt > 0.0) || !(box_len > 0.0) || !(horizon > 0.0) {
            return Err(Error::invalid("lattice steps, box and horizon must be positive"));
        }
        // at least four cells across the unit-diameter support of φ
        if dx > 2.0 * PHI_RADIUS / 4.0 + 1e-15 {
            return Err(Error::UnderResolved { eps: 1.0, dx, max_dx: 0.25 });
        }
        grid_count("box length", box_len, dx)?;
        grid_count("horizon", horizon, dt)?;
        Ok(LatticeSpec { d, dx, box_len, dt, horizon })
    }

    /// Box side 12·√t_max rounded up to a whole number of cells.
    pub fn with_default_box(d: usize, dx: f64, dt: f64, horizon: f64, t_max: f64) -> Result<Self> {
        let cells = (12.0 * t_max.max(horizon).sqrt() / dx).ceil().max(8.0);
        Self::new(d, dx, cells * dx, dt, horizon)
    }

    pub fn cells_per_side(&self) -> usize {
        (self.box_len / self.dx).round() as usize
    }

    pub fn n_cells(&self) -> usize {
        self.cells_per_side().pow(self.d as u32)
    }

    pub fn n_slabs(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// Variance 1/(Δt·Δx^d) of one cell.
    pub fn cell_variance(&self) -> f64 {
        1.0 / (self.dt * self.dx.powi(self.d as i32))
    }

    /// Center of the cell with per-axis index `i`.
    pub fn cell_center(&self, i: usize) -> f64 {
        -0.5 * self.box_len + (i as f64 + 0.5) * self.dx
    }

    fn wrap(&self, i: i64) -> usize {
        i.rem_euclid(self.cells_per_side() as i64) as usize
    }

    fn linear(&self, idx: &[i64]) -> usize {
        let n = self.cells_per_side();
        idx.iter().rev().fold(0usize, |acc, &i| acc * n + self.wrap(i))
    }
}

/// Standard normal value of cell `linear` in slab `k`.
#[inline]
pub fn cell_normal(seed: u64, k: usize, linear: usize) -> f64 {
    rng::counter_normal(seed, k as u64, linear as u64)
}

#[derive(Debug, Clone)]
pub struct NoiseSlab {
    pub k: usize,
    pub values: Vec<f64>,
    spec: LatticeSpec,
}

impl NoiseSlab {
    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    /// Dump as CSV with columns `cell,value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["cell", "value"])?;
        for (i, v) in self.values.iter().enumerate() {
            w.write_record([i.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn noise_slab(spec: &LatticeSpec, k: usize, seed: u64) -> Result<NoiseSlab> {
    if k >= spec.n_slabs() {
        return Err(Error::OutOfRange { index: k, limit: spec.n_slabs() });
    }
    let sd = spec.cell_variance().sqrt();
    let values = (0..spec.n_cells()).map(|c| sd * cell_normal(seed, k, c)).collect();
    Ok(NoiseSlab { k, values, spec: spec.clone() })
}

/// Visit every lattice cell (unwrapped integer index) whose center lies within
/// `radius` of `x`, passing the index and the squared distance.
fn for_cells_in_ball<F: FnMut(&[i64], f64)>(spec: &LatticeSpec, x: &[f64], radius: f64, f: &mut F) {
    let d = spec.d;
    let mut idx = vec![0i64; d];
    // u = position in cell units, cell i has center i + 0.5
    let u: Vec<f64> = x.iter().map(|&v| (v + 0.5 * spec.box_len) / spec.dx - 0.5).collect();
    let rr = radius / spec.dx;
    fn rec<F: FnMut(&[i64], f64)>(
        axis: usize,
        u: &[f64],
        left: f64,
        acc: f64,
        idx: &mut [i64],
        dx2: f64,
        f: &mut F,
    ) {
        let h = left.sqrt();
        let lo = (u[axis] - h).ceil() as i64;
        let hi = (u[axis] + h).floor() as i64;
        for i in lo..=hi {
            let dd = (i as f64 - u[axis]).powi(2);
            if dd >= left {
                continue;
            }
            idx[axis] = i;
            if axis + 1 == u.len() {
                f(idx, (acc + dd) * dx2);
            } else {
                rec(axis + 1, u, left - dd, acc + dd, idx, dx2, f);
            }
        }
    }
    rec(0, &u, rr * rr, 0.0, &mut idx, spec.dx * spec.dx, f);
}

/// Σ_cells φ_ε(x − y_cell)·ξ_cell·Δx^d over the slab.
pub fn mollified_noise_at(slab: &NoiseSlab, m: &Mollifier, eps: f64, x: &[f64]) -> Result<f64> {
    let spec = &slab.spec;
    if x.len() != spec.d || m.dim() != spec.d {
        return Err(Error::invalid("dimension mismatch"));
    }
    if eps < 4.0 * spec.dx {
        return Err(Error::UnderResolved { eps, dx: spec.dx, max_dx: eps / 4.0 });
    }
    let vol = spec.dx.powi(spec.d as i32);
    let epsd = eps.powi(spec.d as i32);
    let mut s = 0.0;
    for_cells_in_ball(spec, x, PHI_RADIUS * eps, &mut |idx, r2| {
        let w = m.radial((r2 / (eps * eps)).sqrt()) / epsd;
        s += w * slab.values[spec.linear(idx)];
    });
    Ok(s * vol)
}

/// Lazily filled dense cache of standard normal cell values for one slab,
/// over an axis-aligned window of unwrapped cell indices.
struct Window {
    origin: Vec<i64>,
    extent: Vec<usize>,
    stamp: Vec<u32>,
    vals: Vec<f64>,
    gen: u32,
}

/// Evaluates the mollified noise (scale 1) along walkers, slab by slab.
pub struct FieldSampler<'a> {
    spec: LatticeSpec,
    m: &'a Mollifier,
    seed: u64,
    window: Window,
    max_window: usize,
    use_window: bool,
    k: usize,
}

impl<'a> FieldSampler<'a> {
    pub fn new(spec: LatticeSpec, m: &'a Mollifier, seed: u64) -> Self {
        FieldSampler {
            spec,
            m,
            seed,
            window: Window { origin: vec![], extent: vec![], stamp: vec![], vals: vec![], gen: 0 },
            max_window: 1 << 22,
            use_window: false,
            k: 0,
        }
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    /// Select slab `k`; `points` (flattened, d per point) bound the region that will be queried.
    pub fn begin_slab(&mut self, k: usize, points: &[f64]) -> Result<()> {
        if k >= self.spec.n_slabs() {
            return Err(Error::OutOfRange { index: k, limit: self.spec.n_slabs() });
        }
        self.k = k;
        let d = self.spec.d;
        let np = points.len() / d;
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for p in points.chunks_exact(d) {
            for a in 0..d {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let cells_per_query = (2.0 * PHI_RADIUS / self.spec.dx).powi(d as i32);
        let mut origin = vec![0i64; d];
        let mut extent = vec![0usize; d];
        let mut total = 1usize;
        for a in 0..d {
            let to_u = |v: f64| (v + 0.5 * self.spec.box_len) / self.spec.dx - 0.5;
            let l = (to_u(lo[a] - PHI_RADIUS)).floor() as i64 - 1;
            let h = (to_u(hi[a] + PHI_RADIUS)).ceil() as i64 + 1;
            origin[a] = l;
            extent[a] = (h - l + 1).max(1) as usize;
            total = total.saturating_mul(extent[a]);
        }
        // cache only when the window is small relative to the number of lookups
        self.use_window = np > 1 && total <= self.max_window && (total as f64) < 4.0 * np as f64 * cells_per_query;
        if self.use_window {
            let w = &mut self.window;
            if w.stamp.len() < total {
                w.stamp.resize(total, 0);
                w.vals.resize(total, 0.0);
            }
            w.gen = w.gen.wrapping_add(1);
            if w.gen == 0 {
                w.stamp.iter_mut().for_each(|s| *s = 0);
                w.gen = 1;
            }
            w.origin = origin;
            w.extent = extent;
        }
        Ok(())
    }

    /// (φ⋆ξ_k)(x)·√(Δt) in units where ξ_k has cell variance 1/(Δt·Δx^d):
    /// returns Σ φ(x − y_c)·z_c·Δx^{d/2} with z_c standard normal, so that the
    /// Itô increment over the slab is β·√Δt times this value.
    pub fn smoothed(&mut self, x: &[f64]) -> f64 {
        let spec = &self.spec;
        let m = self.m;
        let seed = self.seed;
        let k = self.k;
        let mut s = 0.0;
        if self.use_window {
            let w = &mut self.window;
            for_cells_in_ball(spec, x, PHI_RADIUS, &mut |idx, r2| {
                let mut off = 0usize;
                for a in (0..idx.len()).rev() {
                    off = off * w.extent[a] + (idx[a] - w.origin[a]) as usize;
                }
                let z = if w.stamp[off] == w.gen {
                    w.vals[off]
                } else {
                    let z = cell_normal(seed, k, spec.linear(idx));
                    w.stamp[off] = w.gen;
                    w.vals[off] = z;
                    z
                };
                s += m.radial_sq_fast(r2) * z;
            });
        } else {
            for_cells_in_ball(spec, x, PHI_RADIUS, &mut |idx, r2| {
                s += m.radial_sq_fast(r2) * cell_normal(seed, k, spec.linear(idx));
            });
        }
        s * spec.dx.powf(spec.d as f64 / 2.0)
    }

    /// Whether `x` lies outside the primary periodic box.
    pub fn outside_box(&self, x: &[f64]) -> bool {
        let h = 0.5 * self.spec.box_len;
        x.iter().any(|&v| v < -h || v >= h)
    }

    /// Δx^d Σ_c φ(x − y_c)φ(x′ − y_c): the lattice version of V(x − x′).
    pub fn lattice_covariance(&self, x: &[f64], y: &[f64]) -> f64 {
        let spec = &self.spec;
        let mut s = 0.0;
        for_cells_in_ball(spec, x, PHI_RADIUS, &mut |idx, r2| {
            let c: Vec<f64> = idx
                .iter()
                .map(|&i| -0.5 * spec.box_len + (i as f64 + 0.5) * spec.dx)
                .collect();
            let r2y: f64 = c.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            s += self.m.radial(r2.sqrt()) * self.m.radial(r2y.sqrt());
        });
        s * spec.dx.powi(spec.d as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{standard_phi3, standard_v3};
    use approx::assert_relative_eq;

    #[test]
    fn spec_validation() {
        assert!(LatticeSpec::new(3, 0.25, 8.0, 0.01, 1.0).is_ok());
        assert!(matches!(LatticeSpec::new(3, 0.3, 9.0, 0.01, 0.99), Err(Error::UnderResolved { .. })));
        assert!(matches!(LatticeSpec::new(3, 0.25, 8.1, 0.01, 1.0), Err(Error::OffGrid { .. })));
        assert!(matches!(LatticeSpec::new(3, 0.25, 8.0, 0.3, 1.0), Err(Error::OffGrid { .. })));
        assert!(LatticeSpec::new(2, 0.25, 8.0, 0.01, 1.0).is_err());
        let s = LatticeSpec::with_default_box(3, 0.125, 0.0625, 1.0, 16.0).unwrap();
        assert!(s.box_len >= 48.0 && s.box_len < 48.2);
    }

    #[test]
    fn slab_determinism_and_range() {
        let spec = LatticeSpec::new(3, 0.25, 4.0, 0.01, 0.05).unwrap();
        let a = noise_slab(&spec, 2, 9).unwrap();
        let b = noise_slab(&spec, 2, 9).unwrap();
        assert_eq!(a.values, b.values);
        assert_ne!(a.values, noise_slab(&spec, 3, 9).unwrap().values);
        assert!(matches!(noise_slab(&spec, 5, 9), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn slab_moments_and_whiteness() {
        // 100³ = 10⁶ cells
        let spec = LatticeSpec::new(3, 0.25, 25.0, 0.01, 0.02).unwrap();
        let a = noise_slab(&spec, 0, 42).unwrap();
        let b = noise_slab(&spec, 1, 42).unwrap();
        let n = a.values.len() as f64;
        let mean = a.values.iter().sum::<f64>() / n;
        let var = a.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert_relative_eq!(spec.cell_variance(), 6400.0, max_relative = 1e-12);
        assert!((var / 6400.0 - 1.0).abs() < 0.01);
        assert!(mean.abs() < 5.0 * (6400.0 / n).sqrt());
        let corr = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum::<f64>() / n / 6400.0;
        assert!(corr.abs() < 5e-3);
    }

    #[test]
    fn mollified_noise_rejects_coarse_lattice() {
        let spec = LatticeSpec::new(3, 0.25, 4.0, 0.01, 0.01).unwrap();
        let s = noise_slab(&spec, 0, 1).unwrap();
        assert!(mollified_noise_at(&s, standard_phi3(), 0.5, &[0.0; 3]).is_err());
        assert!(mollified_noise_at(&s, standard_phi3(), 1.0, &[0.0; 3]).is_ok());
    }

    #[test]
    fn lattice_covariance_close_to_v() {
        let spec = LatticeSpec::new(3, 0.125, 8.0, 0.1, 0.1).unwrap();
        let f = FieldSampler::new(spec, standard_phi3(), 0);
        let v = standard_v3();
        for (x, y) in [([0.03, 0.11, -0.07], [0.03, 0.11, -0.07]), ([0.0, 0.0, 0.0], [0.4, 0.1, 0.0])] {
            let r: f64 = x.iter().zip(&y).map(|(a, b): (&f64, &f64)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert_relative_eq!(f.lattice_covariance(&x, &y), v.radial(r), max_relative = 5e-3);
        }
    }

    #[test]
    fn window_and_direct_agree() {
        let spec = LatticeSpec::new(3, 0.125, 16.0, 0.1, 1.0).unwrap();
        let pts: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>();
        let pts = &pts[..39];
        let mut a = FieldSampler::new(spec.clone(), standard_phi3(), 5);
        let mut b = FieldSampler::new(spec, standard_phi3(), 5);
        b.max_window = 0;
        a.begin_slab(3, pts).unwrap();
        b.begin_slab(3, pts).unwrap();
        assert!(a.use_window && !b.use_window);
        for p in pts.chunks(3) {
            assert_eq!(a.smoothed(p), b.smoothed(p));
        }
    }
}
