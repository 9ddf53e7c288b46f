//! Named constants γ², C₀ (two forms), C₁, C₂, ḡ² and the Khas'minskii margin.

use crate::error::{Error, Result};
use crate::kernels::{sphere_area, CovarianceKernel};
use crate::paths::{exp_functional, exp_functional_from, khasminskii_margin, ExpFunctional};
use crate::rng::{self, role};
use crate::statlab::Measured;
use gauss_quad::GaussLegendre;
use rand::RngExt;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use std::f64::consts::PI;
use std::path::Path;

/// Monte Carlo budget for the Brownian functionals.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct Budget {
    /// Radial Gauss–Legendre nodes.
    pub nodes: usize,
    /// Paths per node.
    pub samples_per_node: usize,
    pub s_max: f64,
    pub dt: f64,
    /// Normals for the C₂ cross-check.
    pub c2_samples: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget { nodes: 32, samples_per_node: 20_000, s_max: 128.0, dt: 1e-3, c2_samples: 10_000_000 }
    }
}

/// ∫V(y)·E_y[·] dy over |y| ≤ radius as Σ_i S_d·w_i·r_i^{d−1}·V(r_i·scale)·f(r_i).
fn radial_nodes(nodes: usize, radius: f64) -> Vec<(f64, f64)> {
    let gl = GaussLegendre::new(nodes.max(1).try_into().expect("nonzero"));
    gl.as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (0.5 * radius * (x + 1.0), 0.5 * radius * w))
        .collect()
}

struct NodeSum {
    value: f64,
    var: f64,
    n: usize,
    flagged: usize,
}

/// Σ_i c_i·E_i over radial nodes, with per-node Monte Carlo functionals.
fn node_sum<F>(nodes: &[(f64, f64)], coeff: impl Fn(f64) -> f64, eval: F) -> Result<NodeSum>
where
    F: Fn(usize, f64) -> Result<ExpFunctional> + Sync,
{
    let per: Vec<ExpFunctional> = nodes.par_iter().enumerate().map(|(i, &(r, _))| eval(i, r)).collect::<Result<_>>()?;
    let mut out = NodeSum { value: 0.0, var: 0.0, n: 0, flagged: 0 };
    for (&(r, w), e) in nodes.iter().zip(&per) {
        let c = w * coeff(r);
        out.value += c * e.estimate;
        out.var += c * c * e.se * e.se;
        out.n += e.n;
        out.flagged += e.truncation_flag as usize;
    }
    Ok(out)
}

fn admissible(beta: f64, v: &CovarianceKernel) -> Result<f64> {
    let m = khasminskii_margin(beta, v)?;
    if m >= 1.0 {
        return Err(Error::Inadmissible { beta, margin: m });
    }
    Ok(m)
}

/// I = ∫V(y)·E_y[exp(β²∫₀^∞V(W_{2s})ds)] dy, so that γ² = β²·I and ḡ² = I.
/// W_{2s} is simulated as a Brownian path of variance rate 2 started at y.
pub fn gamma_integral(beta: f64, v: &CovarianceKernel, budget: &Budget, seed: u64) -> Result<(Measured, usize)> {
    admissible(beta, v)?;
    let d = v.dim();
    let area = sphere_area(d);
    let nodes = radial_nodes(budget.nodes, 1.0);
    let s = node_sum(
        &nodes,
        |r| area * r.powi(d as i32 - 1) * v.radial(r),
        |i, r| {
            let mut y = vec![0.0; d];
            y[0] = r;
            let sd = rng::derive(&[seed, role::FUNCTIONAL, 1, i as u64]);
            exp_functional_from(v, &y, beta, budget.s_max, budget.dt, budget.samples_per_node, sd)
        },
    )?;
    Ok((Measured { value: s.value, se: s.var.sqrt(), n: s.n }, s.flagged))
}

/// γ²(β) = β²·∫V(y)E_y[exp(β²∫₀^∞V(W_{2s})ds)]dy.
pub fn gamma_sq(beta: f64, v: &CovarianceKernel, budget: &Budget, seed: u64) -> Result<Measured> {
    let (i, _) = gamma_integral(beta, v, budget, seed)?;
    let b2 = beta * beta;
    Ok(Measured { value: b2 * i.value, se: b2 * i.se, n: i.n })
}

/// (4π)^{−d/2}.
pub fn c0_factor(d: usize) -> f64 {
    (4.0 * PI).powf(-(d as f64) / 2.0)
}

/// C₀ = β²(2π)^{−d/2}∫V(√2y)E_y[exp(β²∫₀^∞V(√2W_s)ds)]dy, over |y| ≤ 1/√2 with √2·W
/// simulated from √2·y.
pub fn c0_form_b(beta: f64, v: &CovarianceKernel, budget: &Budget, seed: u64) -> Result<Measured> {
    admissible(beta, v)?;
    let d = v.dim();
    if beta == 0.0 {
        return Ok(Measured::exact(0.0));
    }
    let area = sphere_area(d);
    let nodes = radial_nodes(budget.nodes, 1.0 / 2f64.sqrt());
    let s = node_sum(
        &nodes,
        |r| area * r.powi(d as i32 - 1) * v.radial(2f64.sqrt() * r),
        |i, r| {
            let mut y = vec![0.0; d];
            y[0] = r;
            let sd = rng::derive(&[seed, role::FUNCTIONAL, 2, i as u64]);
            exp_functional(v, &y, beta, budget.s_max, budget.dt, budget.samples_per_node, sd)
        },
    )?;
    let c = beta * beta * (2.0 * PI).powf(-(d as f64) / 2.0);
    Ok(Measured { value: c * s.value, se: c * s.var.sqrt(), n: s.n })
}

/// Both forms of C₀: A = γ²/(4π)^{d/2} and B from the √2-scaled integral.
pub fn c0_two_forms(beta: f64, v: &CovarianceKernel, budget: &Budget, seed: u64) -> Result<(Measured, Measured)> {
    let g = gamma_sq(beta, v, budget, seed)?;
    let f = c0_factor(v.dim());
    let a = Measured { value: f * g.value, se: f * g.se, n: g.n };
    Ok((a, c0_form_b(beta, v, budget, seed)?))
}

/// C₁ = E_{e₁/√2}[exp(β²∫₀^∞V(√2W_s)ds) − 1].
pub fn c1(beta: f64, v: &CovarianceKernel, budget: &Budget, seed: u64) -> Result<Measured> {
    let d = v.dim();
    let mut y = vec![0.0; d];
    y[0] = 1.0 / 2f64.sqrt();
    let n = budget.samples_per_node * budget.nodes.max(1);
    let e = exp_functional(v, &y, beta, budget.s_max, budget.dt, n, rng::derive(&[seed, role::FUNCTIONAL, 3]))?;
    Ok(Measured { value: e.estimate - 1.0, se: e.se, n })
}

/// C₂ = E[(√2/|Z|)^{d−2}] = 1/Γ(d/2).
pub fn c2(d: usize) -> Result<f64> {
    if d < 3 {
        return Err(Error::Dimension(d));
    }
    Ok(1.0 / gamma(d as f64 / 2.0))
}

/// Monte Carlo estimate of C₂ from `n` standard normal vectors.
pub fn c2_mc(d: usize, n: usize, seed: u64) -> Result<Measured> {
    if d < 3 {
        return Err(Error::Dimension(d));
    }
    if n < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    const BLOCK: usize = 1 << 16;
    let e = (d as f64 - 2.0) / 2.0;
    let parts: Vec<(f64, f64)> = (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(&[seed, role::CHECK, b as u64]);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in b * BLOCK..((b + 1) * BLOCK).min(n) {
                let q: f64 = (0..d).map(|_| r.sample::<f64, _>(StandardNormal).powi(2)).sum();
                let x = (2.0 / q).powf(e);
                s += x;
                s2 += x * x;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = parts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let nf = n as f64;
    let m = s / nf;
    Ok(Measured { value: m, se: ((s2 - nf * m * m) / (nf - 1.0) / nf).max(0.0).sqrt(), n })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstantsTable {
    pub beta: f64,
    pub d: usize,
    pub gamma_sq: Measured,
    pub gbar_sq: Measured,
    pub c0_a: Measured,
    pub c0_b: Measured,
    pub c1: Measured,
    pub c2: f64,
    pub c2_mc: Measured,
    pub khasminskii_margin: f64,
    /// Nodes whose truncation gap exceeded 3 SE.
    pub truncation_flags: usize,
    pub budget: Budget,
    pub seed: u64,
}

impl ConstantsTable {
    /// Limit variance 2C₀/(d−2) of the pointwise fluctuation at t = 1.
    pub fn fluctuation_variance(&self) -> f64 {
        2.0 * self.c0_a.value / (self.d as f64 - 2.0)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        serde_json::to_writer_pretty(std::fs::File::create(path)?, self)?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["name", "value", "se", "n"])?;
        let rows = [
            ("gamma_sq", self.gamma_sq),
            ("gbar_sq", self.gbar_sq),
            ("c0_a", self.c0_a),
            ("c0_b", self.c0_b),
            ("c1", self.c1),
            ("c2", Measured::exact(self.c2)),
            ("c2_mc", self.c2_mc),
            ("khasminskii_margin", Measured::exact(self.khasminskii_margin)),
        ];
        for (name, m) in rows {
            w.write_record([name.to_string(), m.value.to_string(), m.se.to_string(), m.n.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Every constant at disorder β.
pub fn constants_table(beta: f64, v: &CovarianceKernel, budget: &Budget, seed: u64) -> Result<ConstantsTable> {
    let d = v.dim();
    let margin = admissible(beta, v)?;
    let (i, flags) = gamma_integral(beta, v, budget, seed)?;
    let b2 = beta * beta;
    let gamma_sq = Measured { value: b2 * i.value, se: b2 * i.se, n: i.n };
    let f = c0_factor(d);
    Ok(ConstantsTable {
        beta,
        d,
        gamma_sq,
        gbar_sq: i,
        c0_a: Measured { value: f * gamma_sq.value, se: f * gamma_sq.se, n: i.n },
        c0_b: c0_form_b(beta, v, budget, seed)?,
        c1: c1(beta, v, budget, seed)?,
        c2: c2(d)?,
        c2_mc: c2_mc(d, budget.c2_samples, seed)?,
        khasminskii_margin: margin,
        truncation_flags: flags,
        budget: *budget,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::standard_v3;
    use approx::assert_relative_eq;

    fn small() -> Budget {
        Budget { nodes: 8, samples_per_node: 200, s_max: 64.0, dt: 0.01, c2_samples: 100_000 }
    }

    #[test]
    fn zero_beta() {
        let v = standard_v3();
        assert_eq!(gamma_sq(0.0, v, &small(), 1).unwrap().value, 0.0);
        assert_eq!(c0_form_b(0.0, v, &small(), 1).unwrap().value, 0.0);
        assert_eq!(c1(0.0, v, &small(), 1).unwrap().value, 0.0);
    }

    #[test]
    fn gauss_nodes_integrate_v() {
        let v = standard_v3();
        let s: f64 = radial_nodes(32, 1.0).iter().map(|&(r, w)| w * 4.0 * PI * r * r * v.radial(r)).sum();
        assert_relative_eq!(s, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn c2_closed_forms() {
        assert_relative_eq!(c2(3).unwrap(), 2.0 / PI.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(c2(4).unwrap(), 1.0, epsilon = 1e-14);
        // 4/(3√π)
        assert_relative_eq!(c2(5).unwrap(), 0.752_252_778_063_675_1, epsilon = 1e-14);
        assert!(c2(2).is_err());
        let m = c2_mc(5, 200_000, 3).unwrap();
        assert!(m.within(c2(5).unwrap(), 5.0));
    }

    #[test]
    fn gamma_lower_bound_and_identity() {
        let v = standard_v3();
        let b = small();
        let t = constants_table(0.2, v, &b, 9).unwrap();
        let b2 = 0.2f64 * 0.2;
        assert!(t.gamma_sq.value >= b2 * (1.0 - 1e-6));
        assert_eq!(t.gamma_sq.value, b2 * t.gbar_sq.value);
        assert_relative_eq!(t.c0_a.value / t.gamma_sq.value, 0.022_448_390_265_645_82, epsilon = 1e-12);
    }

    #[test]
    fn inadmissible() {
        assert!(matches!(gamma_sq(2.0, standard_v3(), &small(), 1), Err(Error::Inadmissible { .. })));
    }
}
