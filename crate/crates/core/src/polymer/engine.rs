//! Joint realizations of the exponential weights of many paths in one environment.
//!
//! All paths live on a common global clock with step dt. Path p is born at
//! step `birth` at its group's start point and diffuses afterwards. Each path
//! carries log Φ_p = G_p − β²V(0)·age/2 where G_p is the noise integrated along
//! it. Snapshots are taken at the global `marks`.

use super::Backend;
use crate::environment::{FieldSampler, LatticeSpec};
use crate::error::{Error, Result};
use crate::kernels::Kernels;
use crate::paths::close_pairs;
use crate::rng::{self, role, StreamRng};
use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct Group {
    pub start: Vec<f64>,
    pub birth: usize,
    pub n: usize,
}

#[derive(Debug, Clone)]
pub struct Design {
    pub d: usize,
    pub dt: f64,
    pub beta: f64,
    pub groups: Vec<Group>,
    /// Snapshot steps, strictly increasing.
    pub marks: Vec<usize>,
    pub keep_endpoints: bool,
}

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct Diagnostics {
    /// Largest relative diagonal jitter used by a Cholesky factorization.
    pub max_jitter: f64,
    /// Number of independent Gram blocks factorized.
    pub blocks: usize,
    /// Paths that left the primary periodic box (field backend).
    pub wraps: u64,
}

#[derive(Debug, Clone)]
pub struct Realization {
    pub design: Design,
    offsets: Vec<usize>,
    /// log Φ per (path, mark).
    log_w: Vec<f64>,
    /// Positions per (path, mark), when requested.
    endpoints: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl Realization {
    pub fn n_paths(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn group_range(&self, g: usize) -> std::ops::Range<usize> {
        self.offsets[g]..self.offsets[g + 1]
    }

    pub fn log_weight(&self, p: usize, k: usize) -> f64 {
        self.log_w[p * self.design.marks.len() + k]
    }

    pub fn endpoint(&self, p: usize, k: usize) -> &[f64] {
        let d = self.design.d;
        let base = (p * self.design.marks.len() + k) * d;
        &self.endpoints[base..base + d]
    }

    pub fn has_endpoints(&self) -> bool {
        !self.endpoints.is_empty()
    }

    /// Mean of Φ over the paths of group `g` at mark `k`.
    pub fn z(&self, g: usize, k: usize) -> f64 {
        let r = self.group_range(g);
        let n = r.len() as f64;
        r.map(|p| self.log_weight(p, k).exp()).sum::<f64>() / n
    }

    /// log of [`Realization::z`], computed stably.
    pub fn log_z(&self, g: usize, k: usize) -> f64 {
        let r = self.group_range(g);
        let n = r.len() as f64;
        let mx = r.clone().map(|p| self.log_weight(p, k)).fold(f64::NEG_INFINITY, f64::max);
        if mx == 0.0 && r.clone().all(|p| self.log_weight(p, k) == 0.0) {
            return 0.0;
        }
        mx + (r.map(|p| (self.log_weight(p, k) - mx).exp()).sum::<f64>() / n).ln()
    }
}

struct Walkers {
    d: usize,
    sd: f64,
    pos: Vec<f64>,
    rngs: Vec<StreamRng>,
    birth: Vec<usize>,
}

impl Walkers {
    fn new(design: &Design, key: &[u64]) -> Self {
        let d = design.d;
        let mut pos = Vec::new();
        let mut rngs = Vec::new();
        let mut birth = Vec::new();
        for (g, grp) in design.groups.iter().enumerate() {
            for j in 0..grp.n {
                pos.extend_from_slice(&grp.start);
                let mut k = key.to_vec();
                k.extend_from_slice(&[role::PATH, g as u64, j as u64]);
                rngs.push(rng::stream(&k));
                birth.push(grp.birth);
            }
        }
        Walkers { d, sd: design.dt.sqrt(), pos, rngs, birth }
    }

    fn step(&mut self, alive: &[usize]) {
        let d = self.d;
        for &p in alive {
            let r = &mut self.rngs[p];
            for a in 0..d {
                let z: f64 = r.sample(StandardNormal);
                self.pos[p * d + a] += self.sd * z;
            }
        }
    }
}

fn validate(design: &Design) -> Result<Vec<usize>> {
    if design.groups.is_empty() || design.groups.iter().any(|g| g.n == 0) {
        return Err(Error::invalid("every group needs at least one path"));
    }
    if design.groups.iter().any(|g| g.start.len() != design.d) {
        return Err(Error::invalid("start point dimension mismatch"));
    }
    if design.marks.is_empty() || design.marks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("marks must be non-empty and strictly increasing"));
    }
    let mut offsets = vec![0];
    for g in &design.groups {
        offsets.push(offsets.last().unwrap() + g.n);
    }
    Ok(offsets)
}

#[allow(clippy::too_many_arguments)]
fn snapshot(design: &Design, k: usize, step: usize, g: &[f64], w: &Walkers, log_w: &mut [f64], ends: &mut [f64], v0: f64) {
    let nm = design.marks.len();
    let b2 = design.beta * design.beta;
    let d = design.d;
    for p in 0..w.birth.len() {
        let age = step.saturating_sub(w.birth[p]) as f64 * design.dt;
        log_w[p * nm + k] = if age > 0.0 { g[p] - 0.5 * b2 * v0 * age } else { 0.0 };
        if !ends.is_empty() {
            ends[(p * nm + k) * d..(p * nm + k + 1) * d].copy_from_slice(&w.pos[p * d..(p + 1) * d]);
        }
    }
}

/// Union–find over the nonzero pattern of a symmetric matrix.
fn components(n: usize, m: &[f64]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if m[i * n + j] != 0.0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = out.len();
            out.push(Vec::new());
        }
        out[slot[r]].push(i);
    }
    out
}

/// Draw x ~ N(0, C) for a symmetric PSD `c` (n×n, row-major) with escalating jitter.
pub(crate) fn gaussian_draw(c: &[f64], n: usize, rng: &mut StreamRng, diag: &mut Diagnostics) -> Result<Vec<f64>> {
    let trace: f64 = (0..n).map(|i| c[i * n + i]).sum();
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    if n == 1 {
        return Ok(vec![c[0].max(0.0).sqrt() * z[0]]);
    }
    let mut rel = 1e-10;
    while rel <= 1e-6 * (1.0 + 1e-9) {
        let jitter = rel * trace / n as f64;
        let m = DMatrix::from_fn(n, n, |i, j| c[i * n + j] + if i == j { jitter } else { 0.0 });
        if let Some(ch) = m.cholesky() {
            diag.max_jitter = diag.max_jitter.max(rel);
            let x = ch.l() * DVector::from_vec(z);
            return Ok(x.iter().copied().collect());
        }
        rel *= 10.0;
    }
    Err(Error::Indefinite { size: n })
}

fn cut_points(design: &Design) -> Vec<usize> {
    let mut cuts: Vec<usize> = design.groups.iter().map(|g| g.birth).chain(design.marks.iter().copied()).collect();
    cuts.push(0);
    cuts.sort_unstable();
    cuts.dedup();
    cuts
}

/// Gram backend: path-integrated noise drawn exactly from β²·(overlap matrix),
/// one independent block per interval between cut points.
pub fn realize_gram(design: &Design, kernels: &Kernels, key: &[u64]) -> Result<Realization> {
    let offsets = validate(design)?;
    let v = &kernels.v;
    let (d, dt, v0) = (design.d, design.dt, v.v0());
    let n = *offsets.last().unwrap();
    let nm = design.marks.len();
    let last = *design.marks.last().unwrap();
    let b2 = design.beta * design.beta;
    let mut w = Walkers::new(design, key);
    let mut g = vec![0.0; n];
    let mut log_w = vec![0.0; n * nm];
    let mut ends = if design.keep_endpoints { vec![0.0; n * nm * d] } else { Vec::new() };
    let mut diag = Diagnostics::default();
    let mut gkey = key.to_vec();
    gkey.push(role::GRAM);
    let mut grng = rng::stream(&gkey);
    let cuts = cut_points(design);

    let mut alive: Vec<usize> = Vec::new();
    let mut acc: Vec<f64> = Vec::new();
    let mut interval_steps = 0usize;
    let mut buf: Vec<f64> = Vec::new();
    let mut k = 0;
    for step in 0..=last {
        if cuts.binary_search(&step).is_ok() {
            if interval_steps > 0 && b2 > 0.0 {
                let na = alive.len();
                for i in 0..na {
                    acc[i * na + i] = interval_steps as f64 * dt * v0;
                }
                for comp in components(na, &acc) {
                    let m = comp.len();
                    let mut c = vec![0.0; m * m];
                    for (a, &i) in comp.iter().enumerate() {
                        for (b, &j) in comp.iter().enumerate() {
                            c[a * m + b] = b2 * acc[i * na + j];
                        }
                    }
                    let x = gaussian_draw(&c, m, &mut grng, &mut diag)?;
                    diag.blocks += 1;
                    for (a, &i) in comp.iter().enumerate() {
                        g[alive[i]] += x[a];
                    }
                }
            }
            interval_steps = 0;
            alive = (0..n).filter(|&p| w.birth[p] <= step).collect();
            acc = vec![0.0; alive.len() * alive.len()];
        }
        while k < nm && design.marks[k] == step {
            snapshot(design, k, step, &g, &w, &mut log_w, &mut ends, v0);
            k += 1;
        }
        if step == last {
            break;
        }
        if b2 > 0.0 {
            let na = alive.len();
            buf.clear();
            for &p in &alive {
                buf.extend_from_slice(&w.pos[p * d..(p + 1) * d]);
            }
            close_pairs(d, &buf, |i, j, r2| {
                let x = dt * v.radial_sq(r2);
                acc[i * na + j] += x;
                acc[j * na + i] += x;
            });
        }
        interval_steps += 1;
        w.step(&alive);
    }
    Ok(Realization { design: design.clone(), offsets, log_w, endpoints: ends, diagnostics: diag })
}

/// Field backend: walkers integrate the mollified lattice noise slab by slab.
pub fn realize_field(
    design: &Design,
    kernels: &Kernels,
    lattice: &LatticeSpec,
    key: &[u64],
    wrap_fraction: f64,
) -> Result<Realization> {
    let offsets = validate(design)?;
    let (d, dt) = (design.d, design.dt);
    if lattice.d != d || (lattice.dt - dt).abs() > 1e-12 * dt {
        return Err(Error::invalid(format!(
            "lattice/walker resolution mismatch: lattice dt {} vs walker dt {}",
            lattice.dt, dt
        )));
    }
    let n = *offsets.last().unwrap();
    let nm = design.marks.len();
    let last = *design.marks.last().unwrap();
    if last > lattice.n_slabs() {
        return Err(Error::invalid("lattice horizon shorter than the last mark"));
    }
    let v0 = kernels.v.v0();
    let beta = design.beta;
    let mut w = Walkers::new(design, key);
    let mut g = vec![0.0; n];
    let mut log_w = vec![0.0; n * nm];
    let mut ends = if design.keep_endpoints { vec![0.0; n * nm * d] } else { Vec::new() };
    let mut fkey = key.to_vec();
    fkey.push(role::FIELD);
    let mut sampler = FieldSampler::new(lattice.clone(), &kernels.phi, rng::derive(&fkey));
    let mut wrapped = vec![false; n];
    let mut buf = Vec::new();
    let scale = beta * dt.sqrt();
    let mut k = 0;
    for step in 0..=last {
        let alive: Vec<usize> = (0..n).filter(|&p| w.birth[p] <= step).collect();
        while k < nm && design.marks[k] == step {
            snapshot(design, k, step, &g, &w, &mut log_w, &mut ends, v0);
            k += 1;
        }
        if step == last {
            break;
        }
        if beta != 0.0 {
            buf.clear();
            for &p in &alive {
                buf.extend_from_slice(&w.pos[p * d..(p + 1) * d]);
            }
            sampler.begin_slab(step, &buf)?;
            for &p in &alive {
                let x = &w.pos[p * d..(p + 1) * d];
                if !wrapped[p] && sampler.outside_box(x) {
                    wrapped[p] = true;
                }
                g[p] += scale * sampler.smoothed(x);
            }
        }
        w.step(&alive);
    }
    let wraps = wrapped.iter().filter(|&&b| b).count() as u64;
    let limit = (wrap_fraction * n as f64).floor() as u64;
    if wraps > limit {
        return Err(Error::Wrap { events: wraps, limit });
    }
    let diagnostics = Diagnostics { wraps, ..Default::default() };
    Ok(Realization { design: design.clone(), offsets, log_w, endpoints: ends, diagnostics })
}

pub fn realize(
    design: &Design,
    kernels: &Kernels,
    backend: Backend,
    lattice: Option<&LatticeSpec>,
    key: &[u64],
    wrap_fraction: f64,
) -> Result<Realization> {
    match backend {
        Backend::Gram => realize_gram(design, kernels, key),
        Backend::Field => {
            let l = lattice.ok_or_else(|| Error::invalid("field backend needs a lattice"))?;
            realize_field(design, kernels, l, key, wrap_fraction)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(beta: f64, groups: Vec<Group>, marks: Vec<usize>) -> Design {
        Design { d: 3, dt: 0.0625, beta, groups, marks, keep_endpoints: true }
    }

    #[test]
    fn components_split_blocks() {
        let m = vec![1.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 1.0];
        let c = components(3, &m);
        assert_eq!(c, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn gaussian_draw_rejects_indefinite() {
        let c = vec![1.0, 2.0, 2.0, 1.0];
        let mut r = rng::stream(&[0]);
        let mut d = Diagnostics::default();
        assert!(matches!(gaussian_draw(&c, 2, &mut r, &mut d), Err(Error::Indefinite { .. })));
    }

    #[test]
    fn zero_beta_is_exactly_one() {
        let k = crate::kernels::Kernels::standard(3).unwrap();
        let des = design(0.0, vec![Group { start: vec![0.0; 3], birth: 0, n: 8 }], vec![16, 32]);
        let lat = LatticeSpec::with_default_box(3, 0.125, 0.0625, 2.0, 2.0).unwrap();
        for b in [Backend::Gram, Backend::Field] {
            let r = realize(&des, &k, b, Some(&lat), &[1, 2], 1e-3).unwrap();
            assert_eq!(r.z(0, 0), 1.0);
            assert_eq!(r.z(0, 1), 1.0);
            assert_eq!(r.log_z(0, 1), 0.0);
        }
    }

    #[test]
    fn birth_after_mark_gives_unit_weight() {
        let k = crate::kernels::Kernels::standard(3).unwrap();
        let des = design(
            0.2,
            vec![Group { start: vec![0.0; 3], birth: 0, n: 4 }, Group { start: vec![0.0; 3], birth: 16, n: 4 }],
            vec![8, 16, 32],
        );
        let r = realize_gram(&des, &k, &[3]).unwrap();
        assert_eq!(r.z(1, 0), 1.0);
        assert_eq!(r.z(1, 1), 1.0);
        assert!(r.z(1, 2) != 1.0 && r.z(0, 0) != 1.0);
        // newborns sit at their start point
        assert_eq!(r.endpoint(4, 1), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn mark_consistency_between_backends_paths() {
        // both backends share the walker streams, so endpoints coincide
        let k = crate::kernels::Kernels::standard(3).unwrap();
        let des = design(0.2, vec![Group { start: vec![0.5, 0.0, 0.0], birth: 0, n: 3 }], vec![4, 8]);
        let lat = LatticeSpec::with_default_box(3, 0.125, 0.0625, 0.5, 0.5).unwrap();
        let a = realize_gram(&des, &k, &[9]).unwrap();
        let b = realize_field(&des, &k, &lat, &[9], 1e-3).unwrap();
        for p in 0..3 {
            assert_eq!(a.endpoint(p, 1), b.endpoint(p, 1));
        }
    }
}
