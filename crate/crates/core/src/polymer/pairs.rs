//! Environment-integrated estimators of fluctuation covariances.
//!
//! For two independent paths in one Gaussian environment,
//! E[Φ(W¹)Φ(W²)] = E[exp(β²·overlap)], so covariances of partition-function
//! increments reduce to expectations over the difference path U = W¹ − W²,
//! a Brownian motion with variance rate 2. Each sample is
//! a·(b − 1) with a = exp(β²∫_A V(U)), b = exp(β²∫_B V(U)), where phase A is
//! the common history up to the earlier observation time and phase B runs to
//! the proxy horizon. Dividing by the sample mean of a removes the weight of
//! the shared start, as taking logarithms does.

use super::{Alignment, SpaceTimePoint, TestFunction};
use crate::error::{Error, Result};
use crate::kernels::CovarianceKernel;
use crate::paths::{exp_functional_from, khasminskii_margin, occupation};
use crate::rng::{self, role, StreamRng};
use rand::RngExt;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

const BLOCK: usize = 2048;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PairEstimate {
    /// scale·mean(a(b − 1))/mean(a).
    pub estimate: f64,
    pub se: f64,
    /// scale·mean(a(b − 1)), without the start normalization.
    pub raw: f64,
    pub raw_se: f64,
    pub normalizer: f64,
    /// Estimate with phase B halved, and the paired gap to the full estimate.
    pub half_estimate: f64,
    pub truncation_gap: f64,
    pub truncation_se: f64,
    pub n: usize,
}

impl PairEstimate {
    fn zero(n: usize) -> Self {
        PairEstimate {
            estimate: 0.0,
            se: 0.0,
            raw: 0.0,
            raw_se: 0.0,
            normalizer: 1.0,
            half_estimate: 0.0,
            truncation_gap: 0.0,
            truncation_se: 0.0,
            n,
        }
    }
}

#[derive(Default, Clone, Copy)]
struct Sums {
    a: f64,
    y: f64,
    h: f64,
    aa: f64,
    yy: f64,
    ay: f64,
    g: f64,
    gg: f64,
}

impl Sums {
    fn add(&mut self, o: &Sums) {
        self.a += o.a;
        self.y += o.y;
        self.h += o.h;
        self.aa += o.aa;
        self.yy += o.yy;
        self.ay += o.ay;
        self.g += o.g;
        self.gg += o.gg;
    }
}

/// Runs `n` samples; `draw` sets the start of U and returns (phase A, phase B, weight).
fn pair_loop<F>(v: &CovarianceKernel, beta: f64, dt: f64, n: usize, key: &[u64], scale: f64, draw: F) -> PairEstimate
where
    F: Fn(&mut StreamRng, &mut [f64]) -> (f64, f64, f64) + Sync,
{
    let b2 = beta * beta;
    let d = v.dim();
    let blocks = n.div_ceil(BLOCK);
    let parts: Vec<Sums> = (0..blocks)
        .into_par_iter()
        .map(|blk| {
            let mut k = key.to_vec();
            k.extend_from_slice(&[role::FUNCTIONAL, blk as u64]);
            let mut rng = rng::stream(&k);
            let mut u0 = vec![0.0; d];
            let mut out = [0.0; 3];
            let mut s = Sums::default();
            for _ in blk * BLOCK..((blk + 1) * BLOCK).min(n) {
                let (la, lb, w) = draw(&mut rng, &mut u0);
                occupation(v, &u0, 2.0, dt, &[la, lb / 2.0, lb / 2.0], &mut rng, &mut out);
                let a = (b2 * out[0]).exp();
                let y = w * a * ((b2 * (out[1] + out[2])).exp() - 1.0);
                let h = w * a * ((b2 * out[1]).exp() - 1.0);
                s.a += a;
                s.y += y;
                s.h += h;
                s.aa += a * a;
                s.yy += y * y;
                s.ay += a * y;
                s.g += y - h;
                s.gg += (y - h) * (y - h);
            }
            s
        })
        .collect();
    let mut s = Sums::default();
    for p in &parts {
        s.add(p);
    }
    let nf = n as f64;
    let (ma, my) = (s.a / nf, s.y / nf);
    let var_y = ((s.yy - nf * my * my) / (nf - 1.0)).max(0.0);
    let var_a = ((s.aa - nf * ma * ma) / (nf - 1.0)).max(0.0);
    let cov_ay = (s.ay - nf * ma * my) / (nf - 1.0);
    let r = my / ma;
    // delta method for the ratio mean(y)/mean(a)
    let var_r = ((var_y - 2.0 * r * cov_ay + r * r * var_a) / (ma * ma)).max(0.0) / nf;
    let mg = s.g / nf;
    let var_g = ((s.gg - nf * mg * mg) / (nf - 1.0)).max(0.0);
    PairEstimate {
        estimate: scale * r,
        se: scale * var_r.sqrt(),
        raw: scale * my,
        raw_se: scale * (var_y / nf).sqrt(),
        normalizer: ma,
        half_estimate: scale * s.h / nf / ma,
        truncation_gap: scale * mg / ma,
        truncation_se: scale * (var_g / nf).sqrt() / ma,
        n,
    }
}

fn admissible(v: &CovarianceKernel, beta: f64, n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let margin = khasminskii_margin(beta, v)?;
    if margin >= 1.0 {
        return Err(Error::Inadmissible { beta, margin });
    }
    Ok(())
}

/// Phase lengths (A, B) for two times t, s ≤ t_max/T.
fn phases(alignment: Alignment, t: f64, s: f64, base_t: f64, t_max: f64) -> Result<(f64, f64)> {
    let (a, b) = match alignment {
        Alignment::Reversed => (t.min(s) * base_t, t_max - base_t),
        Alignment::Forward => (t.max(s) * base_t, t_max - t.max(s) * base_t),
    };
    if !(b > 0.0) {
        return Err(Error::invalid("proxy horizon must exceed the observation times"));
    }
    Ok((a, b))
}

/// Limit-scale covariance T^{(d−2)/2}·Cov of the fluctuations at p and q.
#[allow(clippy::too_many_arguments)]
pub fn pair_covariance(
    v: &CovarianceKernel,
    beta: f64,
    p: &SpaceTimePoint,
    q: &SpaceTimePoint,
    base_t: f64,
    t_max: f64,
    dt: f64,
    n: usize,
    seed: u64,
    alignment: Alignment,
) -> Result<PairEstimate> {
    admissible(v, beta, n)?;
    let d = v.dim();
    if p.x.len() != d || q.x.len() != d {
        return Err(Error::invalid("point dimension mismatch"));
    }
    if beta == 0.0 {
        return Ok(PairEstimate::zero(n));
    }
    let (la, lb) = phases(alignment, p.t, q.t, base_t, t_max)?;
    let sq = base_t.sqrt();
    let lag_sd = match alignment {
        Alignment::Reversed => ((p.t - q.t).abs() * base_t).sqrt(),
        Alignment::Forward => 0.0,
    };
    let scale = base_t.powf((d as f64 - 2.0) / 2.0);
    Ok(pair_loop(v, beta, dt, n, &[seed], scale, |rng, u0| {
        for a in 0..d {
            let z: f64 = if lag_sd > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
            u0[a] = (p.x[a] - q.x[a]) * sq + lag_sd * z;
        }
        (la, lb, 1.0)
    }))
}

/// Limit-scale variance of Σ_a w_a·(fluctuation at (t, x_a)), with pairs of grid
/// points drawn proportionally to |w_a w_b|.
#[allow(clippy::too_many_arguments)]
pub fn pair_averaged_variance(
    v: &CovarianceKernel,
    beta: f64,
    f: &TestFunction,
    t: f64,
    base_t: f64,
    t_max: f64,
    dt: f64,
    n: usize,
    seed: u64,
    alignment: Alignment,
) -> Result<PairEstimate> {
    admissible(v, beta, n)?;
    let d = v.dim();
    let w = f.weights();
    let total: f64 = w.iter().map(|x| x.abs()).sum();
    if beta == 0.0 || total == 0.0 {
        return Ok(PairEstimate::zero(n));
    }
    let mut cum = Vec::with_capacity(w.len());
    let mut acc = 0.0;
    for x in &w {
        acc += x.abs() / total;
        cum.push(acc);
    }
    let pick = |u: f64| cum.partition_point(|&c| c < u).min(w.len() - 1);
    let (la, lb) = phases(alignment, t, t, base_t, t_max)?;
    let sq = base_t.sqrt();
    let scale = base_t.powf((d as f64 - 2.0) / 2.0) * total * total;
    Ok(pair_loop(v, beta, dt, n, &[seed, role::CHECK], scale, |rng, u0| {
        let a = pick(rng.random::<f64>());
        let b = pick(rng.random::<f64>());
        for c in 0..d {
            u0[c] = (f.points[a][c] - f.points[b][c]) * sq;
        }
        (la, lb, w[a].signum() * w[b].signum())
    }))
}

/// Cov(𝒵_{S}(0), 𝒵_{S}(x)) = E_x[exp(β²∫₀^S V(U))] − 1 with U of variance rate 2.
pub fn covariance_decay(
    v: &CovarianceKernel,
    beta: f64,
    x: &[f64],
    s_max: f64,
    dt: f64,
    n: usize,
    seed: u64,
) -> Result<PairEstimate> {
    let e = exp_functional_from(v, x, beta, s_max, dt, n, seed)?;
    Ok(PairEstimate {
        estimate: e.estimate - 1.0,
        se: e.se,
        raw: e.estimate - 1.0,
        raw_se: e.se,
        normalizer: 1.0,
        half_estimate: e.half_estimate - 1.0,
        truncation_gap: e.truncation_gap,
        truncation_se: e.truncation_se,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::standard_v3;

    #[test]
    fn zero_beta_and_far_points() {
        let v = standard_v3();
        let p = SpaceTimePoint::new(1.0, vec![0.0; 3]);
        let q = SpaceTimePoint::new(1.0, vec![30.0, 0.0, 0.0]);
        let e = pair_covariance(v, 0.0, &p, &q, 1.0, 16.0, 0.01, 10, 1, Alignment::Reversed).unwrap();
        assert_eq!(e.estimate, 0.0);
        // 30 units apart the difference path essentially never reaches supp V within 16
        let e = pair_covariance(v, 0.2, &p, &q, 1.0, 16.0, 0.01, 200, 1, Alignment::Reversed).unwrap();
        assert!(e.estimate.abs() < 1e-6);
    }

    #[test]
    fn deterministic_and_symmetric_in_forward_mode() {
        let v = standard_v3();
        let p = SpaceTimePoint::new(1.0, vec![0.0; 3]);
        let q = SpaceTimePoint::new(2.0, vec![0.5, 0.0, 0.0]);
        let a = pair_covariance(v, 0.2, &p, &q, 1.0, 16.0, 0.01, 3000, 7, Alignment::Forward).unwrap();
        let b = pair_covariance(v, 0.2, &p, &q, 1.0, 16.0, 0.01, 3000, 7, Alignment::Forward).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert!(a.estimate > 0.0 && a.se > 0.0);
    }

    #[test]
    fn phase_layout() {
        assert_eq!(phases(Alignment::Reversed, 1.0, 2.0, 4.0, 64.0).unwrap(), (4.0, 60.0));
        assert_eq!(phases(Alignment::Forward, 1.0, 2.0, 4.0, 64.0).unwrap(), (8.0, 56.0));
        assert!(phases(Alignment::Forward, 1.0, 2.0, 4.0, 8.0).is_err());
    }
}
