//! Partition functions 𝒵_T(x), free energies, brackets and rescaled fluctuations
//! under one coupled environment, via the Gram or the field backend.

pub mod engine;
pub mod pairs;

pub use engine::{Design, Diagnostics, Group, Realization};

use crate::environment::LatticeSpec;
use crate::error::{Error, Result};
use crate::kernels::{CovarianceKernel, Kernels};
use crate::paths::{close_pairs, horizon_steps, khasminskii_margin};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Gram,
    Field,
}

impl FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gram" => Ok(Backend::Gram),
            "field" => Ok(Backend::Field),
            _ => Err(Error::Config(format!("unknown backend '{s}' (expected gram or field)"))),
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::Gram => "gram",
            Backend::Field => "field",
        })
    }
}

/// How space-time points (t, x) are laid out in one environment.
///
/// `Reversed` starts the path of point (t, x) at global time (t_max − t)·T so
/// that all points share the final time; `Forward` starts every path at time 0
/// and reads point (t, x) at time t·T.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    Forward,
    #[default]
    Reversed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldOptions {
    pub dx: f64,
    /// Periodic box side; defaults to 12·√(horizon).
    pub box_len: Option<f64>,
    /// Largest tolerated fraction of walkers leaving the primary box.
    pub wrap_fraction: f64,
}

impl Default for FieldOptions {
    fn default() -> Self {
        FieldOptions { dx: 0.125, box_len: None, wrap_fraction: 1e-3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolymerConfig {
    pub d: usize,
    pub beta: f64,
    pub dt: f64,
    /// Paths per start point.
    pub n_paths: usize,
    pub horizons: Vec<f64>,
    pub starts: Vec<Vec<f64>>,
    pub backend: Backend,
    pub seed: u64,
    #[serde(default)]
    pub field: FieldOptions,
}

impl PolymerConfig {
    pub fn new(d: usize, beta: f64) -> Self {
        PolymerConfig {
            d,
            beta,
            dt: 0.0625,
            n_paths: 256,
            horizons: vec![1.0],
            starts: vec![vec![0.0; d]],
            backend: Backend::Gram,
            seed: 0,
            field: FieldOptions::default(),
        }
    }

    /// Checks the configuration against `kernels`; returns the Khas'minskii margin.
    pub fn validate(&self, kernels: &Kernels) -> Result<f64> {
        if kernels.dim() != self.d {
            return Err(Error::invalid(format!("kernels are {}-dimensional, config is {}", kernels.dim(), self.d)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid("beta must be finite and nonnegative"));
        }
        if self.n_paths == 0 {
            return Err(Error::invalid("need at least one path per start"));
        }
        if self.starts.is_empty() || self.starts.iter().any(|s| s.len() != self.d) {
            return Err(Error::invalid("start points must be non-empty and d-dimensional"));
        }
        horizon_steps(self.dt, &self.horizons)?;
        let margin = khasminskii_margin(self.beta, &kernels.v)?;
        if margin >= 1.0 {
            return Err(Error::Inadmissible { beta: self.beta, margin });
        }
        Ok(margin)
    }

    /// Lattice for the field backend covering `horizon`.
    pub fn lattice(&self, horizon: f64) -> Result<LatticeSpec> {
        match self.field.box_len {
            Some(l) => LatticeSpec::new(self.d, self.field.dx, l, self.dt, horizon),
            None => LatticeSpec::with_default_box(self.d, self.field.dx, self.dt, horizon, horizon),
        }
    }

    fn check_backend(&self, b: Backend) -> Result<()> {
        if self.backend != b {
            return Err(Error::invalid(format!("config selects the {} backend", self.backend)));
        }
        Ok(())
    }
}

/// Stream key of one replica.
pub fn replica_key(seed: u64, replica: usize) -> [u64; 2] {
    [seed, replica as u64]
}

fn realize_with(cfg: &PolymerConfig, kernels: &Kernels, design: &Design, replica: usize) -> Result<Realization> {
    let key = replica_key(cfg.seed, replica);
    match cfg.backend {
        Backend::Gram => engine::realize_gram(design, kernels, &key),
        Backend::Field => {
            let horizon = *design.marks.last().unwrap() as f64 * cfg.dt;
            let lat = cfg.lattice(horizon)?;
            engine::realize_field(design, kernels, &lat, &key, cfg.field.wrap_fraction)
        }
    }
}

/// Joint values of 𝒵_{T_k}(x_m) in one replica.
#[derive(Debug, Clone, Serialize)]
pub struct PolymerSample {
    pub replica: usize,
    pub backend: Backend,
    pub beta: f64,
    pub horizons: Vec<f64>,
    pub starts: Vec<Vec<f64>>,
    /// 𝒵 per (horizon, start), horizon-major.
    pub z: Vec<f64>,
    pub log_z: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl PolymerSample {
    pub fn z(&self, k: usize, m: usize) -> f64 {
        self.z[k * self.starts.len() + m]
    }

    pub fn log_z(&self, k: usize, m: usize) -> f64 {
        self.log_z[k * self.starts.len() + m]
    }
}

fn forward_design(cfg: &PolymerConfig) -> Result<Design> {
    Ok(Design {
        d: cfg.d,
        dt: cfg.dt,
        beta: cfg.beta,
        groups: cfg.starts.iter().map(|s| Group { start: s.clone(), birth: 0, n: cfg.n_paths }).collect(),
        marks: horizon_steps(cfg.dt, &cfg.horizons)?,
        keep_endpoints: false,
    })
}

fn to_sample(cfg: &PolymerConfig, r: &Realization, replica: usize) -> PolymerSample {
    let (nk, nm) = (cfg.horizons.len(), cfg.starts.len());
    let mut z = Vec::with_capacity(nk * nm);
    let mut log_z = Vec::with_capacity(nk * nm);
    for k in 0..nk {
        for m in 0..nm {
            z.push(r.z(m, k));
            log_z.push(r.log_z(m, k));
        }
    }
    PolymerSample {
        replica,
        backend: cfg.backend,
        beta: cfg.beta,
        horizons: cfg.horizons.clone(),
        starts: cfg.starts.clone(),
        z,
        log_z,
        diagnostics: r.diagnostics.clone(),
    }
}

/// One replica from the Gram backend.
pub fn sample_polymer_gram(cfg: &PolymerConfig, kernels: &Kernels, replica: usize) -> Result<PolymerSample> {
    cfg.check_backend(Backend::Gram)?;
    cfg.validate(kernels)?;
    let design = forward_design(cfg)?;
    let r = engine::realize_gram(&design, kernels, &replica_key(cfg.seed, replica))?;
    Ok(to_sample(cfg, &r, replica))
}

/// One replica from the field backend on an explicit lattice.
pub fn sample_polymer_field(
    cfg: &PolymerConfig,
    kernels: &Kernels,
    lattice: &LatticeSpec,
    replica: usize,
) -> Result<PolymerSample> {
    cfg.check_backend(Backend::Field)?;
    cfg.validate(kernels)?;
    let design = forward_design(cfg)?;
    let r = engine::realize_field(&design, kernels, lattice, &replica_key(cfg.seed, replica), cfg.field.wrap_fraction)?;
    Ok(to_sample(cfg, &r, replica))
}

/// Replicas `0..n` with the configured backend, in replica order.
pub fn sample_replicas(cfg: &PolymerConfig, kernels: &Kernels, n: usize) -> Result<Vec<PolymerSample>> {
    sample_replica_range(cfg, kernels, 0..n)
}

/// Replicas with indices in `range`; each depends only on its own index.
pub fn sample_replica_range(cfg: &PolymerConfig, kernels: &Kernels, range: std::ops::Range<usize>) -> Result<Vec<PolymerSample>> {
    cfg.validate(kernels)?;
    let design = forward_design(cfg)?;
    range
        .into_par_iter()
        .map(|i| realize_with(cfg, kernels, &design, i).map(|r| to_sample(cfg, &r, i)))
        .collect()
}

/// One CSV record per (replica, horizon, start).
pub fn write_samples_csv(path: &Path, samples: &[PolymerSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = samples.first().map_or(0, |s| s.starts.first().map_or(0, |x| x.len()));
    let mut header: Vec<String> = ["replica", "backend", "beta", "T", "start"].iter().map(|s| s.to_string()).collect();
    header.extend((0..d).map(|a| format!("x{a}")));
    header.extend(["Z", "logZ", "max_jitter", "blocks", "wraps"].iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for s in samples {
        for (k, t) in s.horizons.iter().enumerate() {
            for (m, x) in s.starts.iter().enumerate() {
                let mut rec = vec![s.replica.to_string(), s.backend.to_string(), s.beta.to_string(), t.to_string(), m.to_string()];
                rec.extend(x.iter().map(|c| c.to_string()));
                rec.push(s.z(k, m).to_string());
                rec.push(s.log_z(k, m).to_string());
                rec.push(s.diagnostics.max_jitter.to_string());
                rec.push(s.diagnostics.blocks.to_string());
                rec.push(s.diagnostics.wraps.to_string());
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// β²·(mean over ordered pairs i ≠ j, i ∈ A, j ∈ B) of Φ_i Φ_j V(W^i − W^j) at mark `k`,
/// where A and B are unions of groups.
pub fn bracket_derivative(
    r: &Realization,
    v: &CovarianceKernel,
    k: usize,
    a: &[usize],
    b: &[usize],
) -> Result<f64> {
    if !r.has_endpoints() {
        return Err(Error::invalid("realization was taken without endpoints"));
    }
    let d = r.design.d;
    let n = r.n_paths();
    let mut in_a = vec![false; n];
    let mut in_b = vec![false; n];
    for &g in a {
        r.group_range(g).for_each(|p| in_a[p] = true);
    }
    for &g in b {
        r.group_range(g).for_each(|p| in_b[p] = true);
    }
    let (na, nb) = (in_a.iter().filter(|&&x| x).count(), in_b.iter().filter(|&&x| x).count());
    let both = (0..n).filter(|&p| in_a[p] && in_b[p]).count();
    let pairs = (na * nb - both) as f64;
    if pairs < 1.0 {
        return Err(Error::invalid("need at least two paths"));
    }
    let b2 = r.design.beta * r.design.beta;
    if b2 == 0.0 {
        return Ok(0.0);
    }
    let members: Vec<usize> = (0..n).filter(|&p| in_a[p] || in_b[p]).collect();
    let mut pos = Vec::with_capacity(members.len() * d);
    let mut w = Vec::with_capacity(members.len());
    for &p in &members {
        pos.extend_from_slice(r.endpoint(p, k));
        w.push(r.log_weight(p, k).exp());
    }
    let mut sum = 0.0;
    close_pairs(d, &pos, |i, j, r2| {
        let (pi, pj) = (members[i], members[j]);
        let mult = (in_a[pi] && in_b[pj]) as u8 + (in_a[pj] && in_b[pi]) as u8;
        if mult > 0 {
            sum += mult as f64 * w[i] * w[j] * v.radial_sq(r2);
        }
    });
    Ok(b2 * sum / pairs)
}

/// g(τ) = (2/(d−2))·C₀·(1 − τ^{−(d−2)/2}).
pub fn g_target(d: usize, c0: f64, tau: f64) -> f64 {
    let a = (d as f64 - 2.0) / 2.0;
    c0 / a * (1.0 - tau.powf(-a))
}

#[derive(Debug, Clone, Serialize)]
pub struct GProcess {
    pub base_t: f64,
    pub taus: Vec<f64>,
    /// G^(T)_τ per (replica, start, τ).
    pub trajectories: Vec<Vec<Vec<f64>>>,
    pub target: Vec<f64>,
}

impl GProcess {
    /// Variance of G_τ across replicas; with two or more starts the
    /// cross-covariance between the first two is used, which removes the
    /// finite-N Monte Carlo noise when both starts coincide.
    pub fn variance(&self, j: usize) -> (f64, f64) {
        let n = self.trajectories.len() as f64;
        let two = self.trajectories.first().is_some_and(|t| t.len() >= 2);
        let prod: Vec<f64> = self
            .trajectories
            .iter()
            .map(|t| if two { t[0][j] * t[1][j] } else { t[0][j] * t[0][j] })
            .collect();
        let ma = self.trajectories.iter().map(|t| t[0][j]).sum::<f64>() / n;
        let mb = self.trajectories.iter().map(|t| t[if two { 1 } else { 0 }][j]).sum::<f64>() / n;
        let mp = prod.iter().sum::<f64>() / n;
        let est = (mp - ma * mb) * n / (n - 1.0);
        let se = (prod.iter().map(|p| (p - mp) * (p - mp)).sum::<f64>() / (n - 1.0) / n).sqrt();
        (est, se)
    }
}

/// Trajectories G^(T)_τ = T^{(d−2)/4}(𝒵_{τT}/𝒵_T − 1) for each configured start.
pub fn g_process(
    cfg: &PolymerConfig,
    kernels: &Kernels,
    base_t: f64,
    taus: &[f64],
    replicas: usize,
    c0: f64,
) -> Result<GProcess> {
    if taus.first() != Some(&1.0) {
        return Err(Error::invalid("the tau grid must start at 1"));
    }
    let mut c = cfg.clone();
    c.horizons = taus.iter().map(|t| t * base_t).collect();
    let samples = sample_replicas(&c, kernels, replicas)?;
    let scale = base_t.powf((cfg.d as f64 - 2.0) / 4.0);
    let trajectories = samples
        .iter()
        .map(|s| {
            (0..c.starts.len())
                .map(|m| (0..taus.len()).map(|k| scale * (s.z(k, m) / s.z(0, m) - 1.0)).collect())
                .collect()
        })
        .collect();
    Ok(GProcess {
        base_t,
        taus: taus.to_vec(),
        trajectories,
        target: taus.iter().map(|&t| g_target(cfg.d, c0, t)).collect(),
    })
}

/// A point (t, x) in rescaled coordinates: time t·T, position x·√T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub t: f64,
    pub x: Vec<f64>,
}

impl SpaceTimePoint {
    pub fn new(t: f64, x: Vec<f64>) -> Self {
        SpaceTimePoint { t, x }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Fluctuations {
    pub base_t: f64,
    pub t_max: f64,
    pub alignment: Alignment,
    pub points: Vec<SpaceTimePoint>,
    /// T^{(d−2)/4}(log 𝒵_{T_max} − log 𝒵_{tT}) per (replica, point).
    pub samples: Vec<Vec<f64>>,
}

/// Layout of space-time points as groups and marks; returns the design and,
/// per point, its (group, finite mark, infinite mark).
#[allow(clippy::type_complexity)]
fn fluctuation_design(
    cfg: &PolymerConfig,
    base_t: f64,
    t_max: f64,
    points: &[SpaceTimePoint],
    alignment: Alignment,
) -> Result<(Design, Vec<(usize, usize, usize)>)> {
    if points.is_empty() {
        return Err(Error::invalid("no space-time points"));
    }
    if t_max < 16.0 * base_t * (1.0 - 1e-12) {
        return Err(Error::invalid(format!("T_max = {t_max} below 16·T = {}", 16.0 * base_t)));
    }
    let dt = cfg.dt;
    let sq = base_t.sqrt();
    let step = |what, v: f64| crate::environment::grid_count(what, v, dt);
    let tm = points.iter().map(|p| p.t).fold(0.0, f64::max);
    let mut groups = Vec::new();
    let mut raw = Vec::new();
    for p in points {
        if !(p.t > 0.0) || p.x.len() != cfg.d {
            return Err(Error::invalid("points need t > 0 and d coordinates"));
        }
        let start: Vec<f64> = p.x.iter().map(|c| c * sq).collect();
        let (birth, fin, inf) = match alignment {
            Alignment::Forward => {
                if p.t * base_t >= t_max {
                    return Err(Error::invalid("point time beyond T_max"));
                }
                (0, step("t·T", p.t * base_t)?, step("T_max", t_max)?)
            }
            Alignment::Reversed => {
                let birth = step("(t_max − t)·T", (tm - p.t) * base_t)?;
                let fin = step("t_max·T", tm * base_t)?;
                (birth, fin, fin + step("T_max − T", t_max - base_t)?)
            }
        };
        groups.push(Group { start, birth, n: cfg.n_paths });
        raw.push((fin, inf));
    }
    let mut marks: Vec<usize> = raw.iter().flat_map(|&(a, b)| [a, b]).collect();
    marks.sort_unstable();
    marks.dedup();
    let idx = |s: usize| marks.binary_search(&s).unwrap();
    let layout = raw.iter().enumerate().map(|(g, &(a, b))| (g, idx(a), idx(b))).collect();
    let design = Design { d: cfg.d, dt, beta: cfg.beta, groups, marks, keep_endpoints: false };
    Ok((design, layout))
}

/// Joint fluctuation samples over space-time points, one environment per replica.
pub fn fluctuation_samples(
    cfg: &PolymerConfig,
    kernels: &Kernels,
    base_t: f64,
    t_max: f64,
    points: &[SpaceTimePoint],
    alignment: Alignment,
    replicas: usize,
) -> Result<Fluctuations> {
    cfg.validate(kernels)?;
    let (design, layout) = fluctuation_design(cfg, base_t, t_max, points, alignment)?;
    let scale = base_t.powf((cfg.d as f64 - 2.0) / 4.0);
    let samples = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let r = realize_with(cfg, kernels, &design, i)?;
            Ok(layout.iter().map(|&(g, a, b)| scale * (r.log_z(g, b) - r.log_z(g, a))).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(Fluctuations { base_t, t_max, alignment, points: points.to_vec(), samples })
}

/// A test function given by its values on a cubic grid of the given spacing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestFunction {
    pub spacing: f64,
    pub radius: f64,
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

impl TestFunction {
    pub fn from_grid(spacing: f64, radius: f64, points: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != values.len() {
            return Err(Error::invalid("empty support or mismatched grid"));
        }
        if !(spacing > 0.0) || spacing > radius / 4.0 * (1.0 + 1e-12) {
            return Err(Error::invalid(format!("grid spacing {spacing} exceeds radius/4 = {}", radius / 4.0)));
        }
        Ok(TestFunction { spacing, radius, points, values })
    }

    /// Smooth radial step: 1 on |x| ≤ radius/2, 0 for |x| ≥ radius.
    pub fn smooth_step(d: usize, radius: f64, spacing: f64) -> Result<Self> {
        let e = |u: f64| if u > 0.0 { (-1.0 / u).exp() } else { 0.0 };
        let f = |r: f64| {
            let u = (radius - r) / (radius / 2.0);
            e(u) / (e(u) + e(1.0 - u))
        };
        let m = (radius / spacing).floor() as i64;
        let mut points = Vec::new();
        let mut values = Vec::new();
        let mut idx = vec![-m; d];
        loop {
            let x: Vec<f64> = idx.iter().map(|&i| i as f64 * spacing).collect();
            let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
            if r < radius {
                points.push(x);
                values.push(f(r));
            }
            let mut a = 0;
            while a < d {
                idx[a] += 1;
                if idx[a] <= m {
                    break;
                }
                idx[a] = -m;
                a += 1;
            }
            if a == d {
                break;
            }
        }
        Self::from_grid(spacing, radius, points, values)
    }

    /// Quadrature weights f(x_a)·h^d.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.spacing.powi(self.points.first().map_or(0, |p| p.len()) as i32);
        self.values.iter().map(|v| v * h).collect()
    }
}

/// Per-replica Σ_a w_a·(fluctuation sample at (t, x_a)).
#[allow(clippy::too_many_arguments)]
pub fn averaged_fluctuation(
    cfg: &PolymerConfig,
    kernels: &Kernels,
    base_t: f64,
    t_max: f64,
    t: f64,
    f: &TestFunction,
    alignment: Alignment,
    replicas: usize,
) -> Result<Vec<f64>> {
    let w = f.weights();
    if w.iter().all(|&x| x == 0.0) {
        return Ok(vec![0.0; replicas]);
    }
    let points: Vec<SpaceTimePoint> = f.points.iter().map(|x| SpaceTimePoint::new(t, x.clone())).collect();
    let fl = fluctuation_samples(cfg, kernels, base_t, t_max, &points, alignment, replicas)?;
    Ok(fl.samples.iter().map(|s| s.iter().zip(&w).map(|(a, b)| a * b).sum()).collect())
}
