//! Acceptance criteria 1–12 as runnable checks, shared by the `suite`
//! subcommand and the acceptance test target.

use crate::constants::{c2, c2_mc, constants_table, Budget, ConstantsTable};
use crate::error::{Error, Result};
use crate::kernels::Kernels;
use crate::limits::{cov_h, green_integral, green_scaling, printed_gff_prefactor, stationarity_check};
use crate::paths::horizon_steps;
use crate::polymer::engine::{realize_gram, Design, Group};
use crate::polymer::pairs::{covariance_decay, pair_averaged_variance, pair_covariance, PairEstimate};
use crate::polymer::{
    bracket_derivative, fluctuation_samples, g_target, replica_key, sample_replicas, Alignment, Backend,
    PolymerConfig, SpaceTimePoint, TestFunction,
};
use crate::rng::{self, role};
use crate::statlab::{
    ks_normal, ks_two_sample, loglog_slope_weighted, trend_to_zero, variance_ci, Measured, TestReport,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

pub const CRITERIA: [u8; 12] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12];

/// Work sizes of every criterion. The defaults fit a single core in roughly
/// ten minutes; see the README for how they relate to the nominal scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteBudget {
    pub constants: Budget,
    pub mean_one_gram_paths: usize,
    pub mean_one_gram_replicas: usize,
    pub mean_one_field_paths: usize,
    pub mean_one_field_replicas: usize,
    pub equivalence_paths: usize,
    pub equivalence_replicas: usize,
    /// Paths in each of the four bracket groups.
    pub bracket_paths: usize,
    pub bracket_replicas: usize,
    pub clt_paths: usize,
    pub clt_replicas: usize,
    /// Difference-path samples per pair estimate.
    pub pair_samples: usize,
    pub pair_dt: f64,
    /// T_max/T used as the infinite-horizon proxy of the pair estimators.
    pub proxy_factor: f64,
    pub decay_samples: usize,
    pub decay_s_max: f64,
    pub averaged_samples: usize,
    /// Soft wall-clock limit in seconds, checked between criteria.
    pub wall_limit: Option<f64>,
}

impl Default for SuiteBudget {
    fn default() -> Self {
        SuiteBudget {
            constants: Budget { samples_per_node: 2000, ..Budget::default() },
            mean_one_gram_paths: 256,
            mean_one_gram_replicas: 400,
            mean_one_field_paths: 32,
            mean_one_field_replicas: 200,
            equivalence_paths: 64,
            equivalence_replicas: 2000,
            bracket_paths: 128,
            bracket_replicas: 1000,
            clt_paths: 64,
            clt_replicas: 2000,
            pair_samples: 60_000,
            pair_dt: 1.0 / 64.0,
            proxy_factor: 65536.0,
            decay_samples: 40_000,
            decay_s_max: 16384.0,
            averaged_samples: 100_000,
            wall_limit: None,
        }
    }
}

impl SuiteBudget {
    /// Small sizes for β = 0, where every check is exact.
    pub fn degenerate() -> Self {
        SuiteBudget {
            constants: Budget { nodes: 4, samples_per_node: 50, s_max: 64.0, dt: 1e-2, c2_samples: 100_000 },
            mean_one_gram_paths: 8,
            mean_one_gram_replicas: 20,
            mean_one_field_paths: 4,
            mean_one_field_replicas: 4,
            equivalence_paths: 8,
            equivalence_replicas: 50,
            bracket_paths: 8,
            bracket_replicas: 10,
            clt_paths: 8,
            clt_replicas: 100,
            pair_samples: 100,
            pair_dt: 1.0 / 16.0,
            proxy_factor: 16.0,
            decay_samples: 100,
            decay_s_max: 64.0,
            averaged_samples: 100,
            wall_limit: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub d: usize,
    pub beta: f64,
    /// Time step of the polymer simulations.
    pub dt: f64,
    pub seed: u64,
    /// Backend of the pointwise CLT samples.
    pub backend: Backend,
    pub budget: SuiteBudget,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig { d: 3, beta: 0.2, dt: 0.0625, seed: 20240611, backend: Backend::Gram, budget: SuiteBudget::default() }
    }
}

impl SuiteConfig {
    /// Default configuration at β; β = 0 switches to the degenerate budget.
    pub fn at_beta(beta: f64) -> Self {
        let budget = if beta == 0.0 { SuiteBudget::degenerate() } else { SuiteBudget::default() };
        SuiteConfig { beta, budget, ..SuiteConfig::default() }
    }
}

/// Outcome of one criterion: verdicts that decide it and informational diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct Criterion {
    pub id: u8,
    pub title: String,
    pub pass: bool,
    pub reports: Vec<TestReport>,
    pub diagnostics: Vec<TestReport>,
    pub seconds: f64,
    pub skipped: bool,
}

impl Criterion {
    fn new(id: u8, reports: Vec<TestReport>, diagnostics: Vec<TestReport>, seconds: f64) -> Self {
        let pass = !reports.is_empty() && reports.iter().all(|r| r.pass);
        Criterion { id, title: title(id).to_string(), pass, reports, diagnostics, seconds, skipped: false }
    }

    fn skipped(id: u8, why: &str) -> Self {
        let r = TestReport::new(format!("c{id}_skipped"), f64::INFINITY, 0.0, 0).with_note(why);
        Criterion { id, title: title(id).to_string(), pass: false, reports: vec![r], diagnostics: vec![], seconds: 0.0, skipped: true }
    }

    /// One summary line, `PASS`/`FAIL` first.
    pub fn line(&self) -> String {
        let worst = self
            .reports
            .iter()
            .filter(|r| !r.pass)
            .chain(self.reports.iter())
            .next()
            .map(|r| format!("{} = {:.4e} (critical {:.4e})", r.name, r.statistic, r.critical))
            .unwrap_or_default();
        format!(
            "{} criterion {:>2} [{}] {}  ({:.1} s)",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            worst,
            self.seconds
        )
    }
}

pub fn title(id: u8) -> &'static str {
    match id {
        1 => "degeneracy at beta = 0",
        2 => "martingale mean one",
        3 => "backend equivalence",
        4 => "constants consistency",
        5 => "bracket decay",
        6 => "martingale bracket limit",
        7 => "pointwise CLT",
        8 => "space-time covariance",
        9 => "decorrelation law",
        10 => "averaged fluctuations",
        11 => "stationarity bookkeeping",
        12 => "quadrature scaling",
        _ => "unknown",
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteRun {
    pub criteria: Vec<Criterion>,
    /// The wall-clock limit stopped the run before every criterion ran.
    pub exhausted: bool,
    pub seconds: f64,
}

impl SuiteRun {
    pub fn pass(&self) -> bool {
        !self.exhausted && self.criteria.iter().all(|c| c.pass)
    }

    pub fn reports(&self) -> Vec<TestReport> {
        self.criteria.iter().flat_map(|c| c.reports.iter().cloned()).collect()
    }
}

pub struct Suite {
    pub config: SuiteConfig,
    kernels: Kernels,
    constants: OnceLock<ConstantsTable>,
    out: Option<PathBuf>,
}

fn e1(d: usize, r: f64) -> Vec<f64> {
    let mut x = vec![0.0; d];
    x[0] = r;
    x
}

/// Relative deviation |est − target|/(tol·target); 0/0 counts as agreement.
fn relative_report(name: &str, est: f64, se: f64, target: f64, tol: f64, n: usize) -> TestReport {
    let dev = (est - target).abs();
    let stat = if dev == 0.0 { 0.0 } else { dev / (tol * target.abs()) };
    TestReport::new(name, stat, 1.0, n).with_target(target).with_ci((est - 3.0 * se, est + 3.0 * se))
}

fn exact_zero_report(name: &str, xs: impl Iterator<Item = f64>) -> TestReport {
    let (mut worst, mut n) = (0.0f64, 0usize);
    for x in xs {
        worst = worst.max(if x.is_nan() { f64::INFINITY } else { x.abs() });
        n += 1;
    }
    TestReport::new(name, worst, 0.0, n).with_target(0.0)
}

fn pair_report(name: &str, e: &PairEstimate, target: f64, k: f64) -> TestReport {
    TestReport::within_se(name, Measured { value: e.estimate, se: e.se, n: e.n }, target, k).with_note(format!(
        "normalizer {:.5}, half-horizon gap {:.3e} ± {:.1e}",
        e.normalizer, e.truncation_gap, e.truncation_se
    ))
}

impl Suite {
    pub fn new(config: SuiteConfig) -> Result<Self> {
        let kernels = Kernels::standard(config.d)?;
        Ok(Suite { config, kernels, constants: OnceLock::new(), out: None })
    }

    /// Writes per-criterion CSV data under `dir`.
    pub fn with_output(mut self, dir: &Path) -> Self {
        self.out = Some(dir.to_path_buf());
        self
    }

    pub fn kernels(&self) -> &Kernels {
        &self.kernels
    }

    fn seed(&self, id: u8) -> u64 {
        rng::derive(&[self.config.seed, role::CHECK, id as u64])
    }

    fn degenerate(&self) -> bool {
        self.config.beta == 0.0
    }

    /// Constants at the configured β, computed once.
    pub fn constants(&self) -> Result<&ConstantsTable> {
        if let Some(c) = self.constants.get() {
            return Ok(c);
        }
        let c = constants_table(self.config.beta, &self.kernels.v, &self.config.budget.constants, self.seed(4))?;
        Ok(self.constants.get_or_init(|| c))
    }

    fn emit(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let Some(dir) = &self.out else { return Ok(()) };
        let mut w = csv::Writer::from_path(dir.join(name))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    fn polymer(&self, backend: Backend, n_paths: usize, horizons: Vec<f64>, id: u8) -> PolymerConfig {
        let mut c = PolymerConfig::new(self.config.d, self.config.beta);
        c.dt = self.config.dt;
        c.n_paths = n_paths;
        c.horizons = horizons;
        c.backend = backend;
        c.seed = self.seed(id);
        c
    }

    /// Runs one criterion.
    pub fn run(&self, id: u8) -> Result<Criterion> {
        let t0 = Instant::now();
        let (reports, diagnostics) = match id {
            1 => self.degeneracy()?,
            2 => self.mean_one()?,
            3 => self.equivalence()?,
            4 => self.constants_consistency()?,
            5 => self.bracket_decay()?,
            6 => self.bracket_limit()?,
            7 => self.pointwise_clt()?,
            8 => self.space_time_covariance()?,
            9 => self.decorrelation()?,
            10 => self.averaged()?,
            11 => self.stationarity()?,
            12 => self.quadrature_scaling()?,
            _ => return Err(Error::invalid(format!("no criterion {id}"))),
        };
        Ok(Criterion::new(id, reports, diagnostics, t0.elapsed().as_secs_f64()))
    }

    /// Runs the listed criteria in order, honoring the soft wall-clock limit.
    /// A criterion that errors is recorded as failed with the error message.
    pub fn run_all(&self, ids: &[u8], mut progress: impl FnMut(&Criterion)) -> SuiteRun {
        let t0 = Instant::now();
        let mut criteria = Vec::new();
        let mut exhausted = false;
        for &id in ids {
            let over = self.config.budget.wall_limit.is_some_and(|l| t0.elapsed().as_secs_f64() > l);
            let c = if over {
                exhausted = true;
                Criterion::skipped(id, "wall-clock limit reached")
            } else {
                match self.run(id) {
                    Ok(c) => c,
                    Err(e) => {
                        let r = TestReport::new(format!("c{id}_error"), f64::INFINITY, 0.0, 0).with_note(e.to_string());
                        Criterion::new(id, vec![r], vec![], 0.0)
                    }
                }
            };
            progress(&c);
            criteria.push(c);
        }
        SuiteRun { criteria, exhausted, seconds: t0.elapsed().as_secs_f64() }
    }

    fn degeneracy(&self) -> Result<(Vec<TestReport>, Vec<TestReport>)> {
        let d = self.config.d;
        let mut reports = Vec::new();
        let points = [SpaceTimePoint::new(1.0, vec![0.0; d]), SpaceTimePoint::new(2.0, e1(d, 1.0))];
        for backend in [Backend::Gram, Backend::Field] {
            let mut c = PolymerConfig::new(d, 0.0);
            c.dt = self.config.dt;
            c.n_paths = 8;
            c.horizons = vec![1.0, 2.0];
            c.starts = vec![vec![0.0; d], e1(d, 1.0)];
            c.backend = backend;
            c.seed = self.seed(1);
            let s = sample_replicas(&c, &self.kernels, 4)?;
            reports.push(exact_zero_report(&format!("{backend}_z_minus_one"), s.iter().flat_map(|x| x.z.iter().map(|z| z - 1.0))));
            reports.push(exact_zero_report(&format!("{backend}_log_z"), s.iter().flat_map(|x| x.log_z.iter().copied())));
            c.n_paths = 4;
            let f = fluctuation_samples(&c, &self.kernels, 1.0, 16.0, &points, Alignment::Reversed, 2)?;
            reports.push(exact_zero_report(&format!("{backend}_fluctuations"), f.samples.iter().flatten().copied()));
        }
        Ok((reports, vec![]))
    }

    fn mean_one(&self) -> Result<(Vec<TestReport>, Vec<TestReport>)> {
        let b = &self.config.budget;
        let horizons = vec![2.0, 4.0, 8.0, 16.0];
        let mut reports = Vec::new();
        let mut rows = Vec::new();
        for (backend, n, reps) in [
            (Backend::Gram, b.mean_one_gram_paths, b.mean_one_gram_replicas),
            (Backend::Field, b.mean_one_field_paths, b.mean_one_field_replicas),
        ] {
            let c = self.polymer(backend, n, horizons.clone(), 2);
            let s = sample_replicas(&c, &self.kernels, reps)?;
            for (k, t) in horizons.iter().enumerate() {
                let z: Vec<f64> = s.iter().map(|x| x.z(k, 0)).collect();
                let m = Measured::mean_of(&z);
                rows.push(vec![backend.to_string(), t.to_string(), m.value.to_string(), m.se.to_string(), m.n.to_string()]);
                reports.push(TestReport::within_se(format!("{backend}_mean_z_T{t}"), m, 1.0, 5.0).with_seed(c.seed));
            }
        }
        self.emit("c2_mean_one.csv", &["backend", "T", "mean_z", "se", "replicas"], &rows)?;
        Ok((reports, vec![]))
    }

    fn equivalence(&self) -> Result<(Vec<TestReport>, Vec<TestReport>)> {
        let b = &self.config.budget;
        let mut logs = Vec::new();
        let mut rows = Vec::new();
        for backend in [Backend::Gram, Backend::Field] {
            let c = self.polymer(backend, b.equivalence_paths, vec![1.0], 3);
            let s = sample_replicas(&c, &self.kernels, b.equivalence_replicas)?;
            let l: Vec<f64> = s.iter().map(|x| x.log_z(0, 0)).collect();
            rows.extend(l.iter().enumerate().map(|(i, v)| vec![backend.to_string(), i.to_string(), v.to_string()]));
            logs.push(l);
        }
        self.emit("c3_log_z.csv", &["backend", "replica", "logZ"], &rows)?;
        let r = ks_two_sample(&logs[0], &logs[1])?.with_seed(self.seed(3));
        let (mg, mf) = (Measured::mean_of(&logs[0]), Measured::mean_of(&logs[1]));
        let diag = TestReport::new("mean_log_z_gap_in_se", (mg.value - mf.value).abs() / mg.se.hypot(mf.se).max(f64::MIN_POSITIVE), 3.0, mg.n + mf.n)
            .with_note(format!("gram {:.5e}, field {:.5e}", mg.value, mf.value));
        Ok((vec![r], vec![diag]))
    }

    fn constants_consistency(&self) -> Result<(Vec<TestReport>, Vec<TestReport>)> {
        let c = self.constants()?;
        let seed = self.seed(4);
        let b = &self.config.budget.constants;
        let combined = c.c0_a.se.hypot(c.c0_b.se);
        let gap = (c.c0_a.value - c.c0_b.value).abs();
        let stat = if gap == 0.0 { 0.0 } else { gap / combined };
        let mut reports = vec![TestReport::new("c0_two_forms", stat, 2.0, c.c0_a.n + c.c0_b.n)
            .with_target(0.0)
            .with_seed(seed)
            .with_note(format!("C0_A = {:.6e} ± {:.1e}, C0_B = {:.6e} ± {:.1e}", c.c0_a.value, c.c0_a.se, c.c0_b.value, c.c0_b.se))];
        let b2 = self.config.beta * self.config.beta;
        reports.push(
            TestReport::new("gamma_sq_is_beta_sq_gbar_sq", (c.gamma_sq.value - b2 * c.gbar_sq.value).abs(), 0.0, c.gamma_sq.n)
                .with_target(b2 * c.gbar_sq.value),
        );
        for d in [3usize, 4] {
            let m = c2_mc(d, b.c2_samples, rng::derive(&[seed, d as u64]))?;
            reports.push(TestReport::within_se(format!("c2_d{d}"), m, c2(d)?, 3.0).with_seed(seed));
        }
        self.emit(
            "c4_constants.csv",
            &["name", "value", "se", "n"],
            &[("c0_a", c.c0_a), ("c0_b", c.c0_b), ("gamma_sq", c.gamma_sq), ("gbar_sq", c.gbar_sq), ("c1", c.c1), ("c2_mc", c.c2_mc)]
                .iter()
                .map(|(n, m)| vec![n.to_string(), m.value.to_string(), m.se.to_string(), m.n.to_string()])
                .collect::<Vec<_>>(),
        )?;
        if let Some(dir) = &self.out {
            c.write_json(&dir.join("constants.json"))?;
        }
        let diag = TestReport::new("truncation_flags", c.truncation_flags as f64, 0.0, b.nodes * 2)
            .with_note("radial nodes whose half-horizon gap exceeded 3 SE");
        Ok((reports, vec![diag]))
    }

    /// L_T = T^{d/2}·d⟨𝒵⟩/dt − C₀𝒵_T², estimated without bias from two
    /// disjoint pairs of path groups; their product estimates E[L_T²].
    fn bracket_decay(&self) -> Result<(Vec<TestReport>, Vec<TestReport>)> {
        let b = &self.config.budget;
        let d = self.config.d;
        let c0 = self.constants()?.c0_a.value;
        let horizons = [2.0, 4.0, 8.0, 16.0];
        let design = Design {
            d,
            dt: self.config.dt,
            beta: self.config.beta,
            groups: (0..4).map(|_| Group { start: vec![0.0; d], birth: 0, n: b.bracket_paths }).collect(),
            marks: horizon_steps(self.config.dt, &horizons)?,
            keep_endpoints: true,
        };
        let seed = self.seed(5);
        let per: Vec<Vec<(f64, f64)>> = (0..b.bracket_replicas)
            .into_par_iter()
            .map(|i| {
                let r = realize_gram(&design, &self.kernels, &replica_key(seed, i))?;
                horizons
                    .iter()
                    .enumerate()
                    .map(|(k, &t)| {
                        let l = |a: usize, c: usize| -> Result<f64> {
                            let br = bracket_derivative(&r, &self.kernels.v, k, &[a], &[c])?;
                            Ok(t.powf(d as f64 / 2.0) * br - c0 * r.z(a, k) * r.z(c, k))
                        };
                        Ok((l(0, 1)?, l(2, 3)?))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let (mut means, mut squares) = (Vec::new(), Vec::new());
        let mut rows = Vec::new();
        for (k, t) in horizons.iter().enumerate() {
            let m = Measured::mean_of(&per.iter().map(|p| 0.5 * (p[k].0 + p[k].1)).collect::<Vec<_>>());
            let s = Measured::mean_of(&per.iter().map(|p| p[k].0 * p[k].1).collect::<Vec<_>>());
            rows.push(vec![t.to_string(), m.value.to_string(), m.se.to_string(), s.value.to_string(), s.se.to_string()]);
            means.push(m);
            squares.push(s);
        }
        self.emit("c5_bracket.csv", &["T", "mean", "mean_se", "mean_square", "mean_square_se"], &rows)?;
        let trend = |name: &str, ms: &[Measured]| -> Result<TestReport> {
            let v: Vec<f64> = ms.iter().map(|m| m.value).collect();
            let s: Vec<f64> = ms.iter().map(|m| m.se).collect();
            let mut r = trend_to_zero(&v, &s)?.with_seed(seed);
            r.name = name.to_string();
            r.n = b.bracket_replicas;
            Ok(r)
        };
        Ok((vec![trend("bracket_gap_mean", &means)?, trend("bracket_gap_mean_square", &squares)?], vec![]))
    }

    /// Variance of G^(T)_τ at T = 8 with the environment integrated out:
    /// T^{(d−2)/2}·E[𝒵_T²(𝒵_{τT}/𝒵_T − 1)²]/E[𝒵_T²] from the pair estimator.
    fn bracket_limit(&self) -> Result<(Vec<TestReport>, Vec<TestReport>)> {
        let b = &self.config.budget;
        let d = self.config.d;
        let c0 = self.constants()?.c0_a.value;
        let base_t = 8.0;
        let p = SpaceTimePoint::new(1.0, vec![0.0; d]);
        let mut reports = Vec::new();
        let mut rows = Vec::new();
        for (j, tau) in [2.0, 4.0].into_iter().enumerate() {
            let seed = rng::derive(&[self.seed(6), j as u64]);
            let e = pair_covariance(&self.kernels.v, self.config.beta, &p, &p, base_t, tau * base_t, b.pair_dt, b.pair_samples, seed, Alignment::Forward)?;
            let g = g_target(d, c0, tau);
            rows.push(vec![tau.to_string(), e.estimate.to_string(), e.se.to_string(), g.to_string()]);
            reports.push(relative_report(&format!("g_variance_tau{tau}"), e.estimate, e.se, g, 0.15, e.n).with_seed(seed));
        }
        self.emit("c6_g_variance.csv", &["tau", "variance", "se", "g"], &rows)?;
        Ok((reports, vec![]))
    }

    fn pointwise_clt(&self) -> Result<(Vec<TestReport>, Vec<TestReport>)> {
        let b = &self.config.budget;
        let d = self.config.d;
        let consts = self.constants()?;
        let target = consts.fluctuation_variance();
        let base_t = 8.0;
        let t_max = 16.0 * base_t;
        let c = self.polymer(self.config.backend, b.clt_paths, vec![1.0], 7);
        let p = SpaceTimePoint::new(1.0, vec![0.0; d]);
        let f = fluctuation_samples(&c, &self.kernels, base_t, t_max, std::slice::from_ref(&p), Alignment::Reversed, b.clt_replicas)?;
        let xs: Vec<f64> = f.samples.iter().map(|s| s[0]).collect();
        self.emit(
            "c7_fluctuations.csv",
            &["replica", "T", "T_max", "sample"],
            &xs.iter().enumerate().map(|(i, x)| vec![i.to_string(), base_t.to_string(), t_max.to_string(), x.to_string()]).collect::<Vec<_>>(),
        )?;
        if target == 0.0 {
            return Ok((vec![exact_zero_report("fluctuations_degenerate", xs.into_iter())], vec![]));
        }
        let mut ks = ks_normal(&xs, 0.0, target)?.with_target(target).with_seed(c.seed);
        let vc = variance_ci(&xs, 0.99, c.seed)?;
        ks.note = format!("sample variance {:.4e}", vc.estimate);
        let inside = vc.contains(target);
        let var = TestReport::new("variance_ci_contains_target", if inside { 0.0 } else { 1.0 }, 0.0, vc.n)
            .with_ci(vc.ci)
            .with_target(target)
            .with_note(format!("sample variance {:.4e}", vc.estimate));
        let e = pair_covariance(&self.kernels.v, self.config.beta, &p, &p, base_t, base_t * b.proxy_factor, b.pair_dt, b.pair_samples, rng::derive(&[c.seed, 1]), Alignment::Reversed)?;
        let diag = pair_report("environment_variance_pair_estimator", &e, target, 3.0);
        Ok((vec![ks, var], vec![diag]))
    }

    fn space_time_covariance(&self) -> Result<(Vec<TestReport>, Vec<TestReport>)> {
        let b = &self.config.budget;
        let d = self.config.d;
        let g2 = self.constants()?.gamma_sq.value;
        let base_t = 8.0;
        let pts = [SpaceTimePoint::new(1.0, vec![0.0; d]), SpaceTimePoint::new(1.0, e1(d, 1.0)), SpaceTimePoint::new(2.0, vec![0.0; d])];
        let mut reports = Vec::new();
        let mut rows = Vec::new();
        let mut idx = 0u64;
        for i in 0..pts.len() {
            for j in i..pts.len() {
                let seed = rng::derive(&[self.seed(8), idx]);
                idx += 1;
                let e = pair_covariance(&self.kernels.v, self.config.beta, &pts[i], &pts[j], base_t, base_t * b.proxy_factor, b.pair_dt, b.pair_samples, seed, Alignment::Reversed)?;
                let target = cov_h(&pts[i], &pts[j], g2)?;
                rows.push(vec![i.to_string(), j.to_string(), e.estimate.to_string(), e.se.to_string(), target.to_string()]);
                reports.push(pair_report(&format!("cov_p{i}_p{j}"), &e, target, 3.0).with_seed(seed));
            }
        }
        self.emit("c8_covariance.csv", &["p", "q", "estimate", "se", "cov_h"], &rows)?;
        Ok((reports, vec![]))
    }

    fn decorrelation(&self) -> Result<(Vec<TestReport>, Vec<TestReport>)> {
        let b = &self.config.budget;
        let d = self.config.d;
        let radii = [2.0, 3.0, 4.0, 6.0, 8.0];
        let seed = self.seed(9);
        let mut est = Vec::new();
        for (i, &r) in radii.iter().enumerate() {
            est.push(covariance_decay(&self.kernels.v, self.config.beta, &e1(d, r), b.decay_s_max, b.pair_dt, b.decay_samples, rng::derive(&[seed, i as u64]))?);
        }
        self.emit(
            "c9_decay.csv",
            &["r", "covariance", "se", "truncation_gap", "truncation_se"],
            &radii
                .iter()
                .zip(&est)
                .map(|(r, e)| vec![r.to_string(), e.estimate.to_string(), e.se.to_string(), e.truncation_gap.to_string(), e.truncation_se.to_string()])
                .collect::<Vec<_>>(),
        )?;
        if self.degenerate() {
            return Ok((vec![exact_zero_report("decay_degenerate", est.iter().map(|e| e.estimate))], vec![]));
        }
        let pairs: Vec<(f64, f64)> = radii.iter().zip(&est).map(|(&r, e)| (r, e.estimate)).collect();
        let ses: Vec<f64> = est.iter().map(|e| e.se).collect();
        let n = est.iter().map(|e| e.n).sum();
        let expected = -(d as f64 - 2.0);
        let r = match loglog_slope_weighted(&pairs, &ses) {
            Ok(fit) => TestReport::new("decay_slope", (fit.slope - expected).abs() / 0.15, 1.0, n)
                .with_target(expected)
                .with_ci(fit.ci)
                .with_note(format!("slope {:.4} ± {:.4}", fit.slope, fit.se)),
            Err(e) => TestReport::new("decay_slope", f64::INFINITY, 1.0, n).with_note(e.to_string()),
        };
        Ok((vec![r.with_seed(seed)], vec![]))
    }

    fn averaged(&self) -> Result<(Vec<TestReport>, Vec<TestReport>)> {
        let b = &self.config.budget;
        let d = self.config.d;
        let g2 = self.constants()?.gamma_sq.value;
        let f = TestFunction::smooth_step(d, 1.0, 0.25)?;
        let t = 1.0;
        let base_t = 8.0;
        let seed = self.seed(10);
        let e = pair_averaged_variance(&self.kernels.v, self.config.beta, &f, t, base_t, base_t * b.proxy_factor, b.pair_dt, b.averaged_samples, seed, Alignment::Reversed)?;
        let target = averaged_target(&f, t, g2)?;
        self.emit(
            "c10_averaged.csv",
            &["t", "estimate", "se", "target"],
            &[vec![t.to_string(), e.estimate.to_string(), e.se.to_string(), target.to_string()]],
        )?;
        Ok((vec![pair_report("averaged_variance", &e, target, 3.0).with_seed(seed)], vec![]))
    }

    fn stationarity(&self) -> Result<(Vec<TestReport>, Vec<TestReport>)> {
        let c = self.constants()?;
        let times = [0.25, 0.5, 1.0, 2.0, 4.0];
        let s = stationarity_check(self.config.d, 1.0, &times, c.gamma_sq.value, c.gbar_sq.value)?;
        self.emit(
            "c11_stationarity.csv",
            &["t", "with_gamma", "with_gbar", "reference"],
            &s.rows.iter().map(|r| vec![r.t.to_string(), r.with_gamma.to_string(), r.with_gbar.to_string(), r.reference.to_string()]).collect::<Vec<_>>(),
        )?;
        let r = TestReport::new("stationary_marginal_gamma", s.max_dev_gamma, 1e-6, times.len());
        let diag = TestReport::new("stationary_marginal_gbar", s.max_dev_gbar, 1e-6, times.len())
            .with_note("amplitude ḡ in the additive part; informational");
        Ok((vec![r], vec![diag]))
    }

    fn quadrature_scaling(&self) -> Result<(Vec<TestReport>, Vec<TestReport>)> {
        let d = self.config.d;
        let radii = [0.5, 1.0, 2.0, 4.0, 8.0];
        let g = green_scaling(d, &radii)?;
        let expected = -(d as f64 - 2.0);
        self.emit(
            "c12_green.csv",
            &["r", "integral", "prefactor"],
            &radii
                .iter()
                .zip(&g.prefactors)
                .map(|(r, p)| Ok(vec![r.to_string(), green_integral(d, *r)?.to_string(), p.to_string()]))
                .collect::<Result<Vec<_>>>()?,
        )?;
        let r = TestReport::new("green_slope", (g.fit.slope - expected).abs(), 1e-3, radii.len()).with_target(expected);
        let diag = TestReport::new("prefactor_ratio_to_printed", g.ratio_to_printed, f64::INFINITY, radii.len())
            .with_note(format!("printed prefactor {:.6e}", printed_gff_prefactor(d)));
        Ok((vec![r], vec![diag]))
    }
}

/// Σ_a Σ_b w_a w_b cov_H((t, x_a), (t, x_b)) over the grid of `f`.
pub fn averaged_target(f: &TestFunction, t: f64, gamma_sq: f64) -> Result<f64> {
    let w = f.weights();
    let d = f.points.first().map_or(0, |p| p.len());
    let h2 = f.spacing * f.spacing;
    // grid distances repeat; cache the covariance by squared distance in units of h²
    let mut cache: HashMap<u64, f64> = HashMap::new();
    let mut total = 0.0;
    for (a, xa) in f.points.iter().enumerate() {
        for (b, xb) in f.points.iter().enumerate() {
            let r2: f64 = xa.iter().zip(xb).map(|(p, q)| (p - q) * (p - q)).sum();
            let key = (r2 / h2).round() as u64;
            let c = match cache.get(&key) {
                Some(&c) => c,
                None => {
                    let c = cov_h(&SpaceTimePoint::new(t, vec![0.0; d]), &SpaceTimePoint::new(t, e1(d, r2.sqrt())), gamma_sq)?;
                    cache.insert(key, c);
                    c
                }
            };
            total += w[a] * w[b] * c;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_suite_is_exact() {
        let s = Suite::new(SuiteConfig::at_beta(0.0)).unwrap();
        for id in [1u8, 2, 5, 6, 8, 10, 11] {
            let c = s.run(id).unwrap();
            assert!(c.pass, "{}", c.line());
        }
    }

    #[test]
    fn averaged_target_scales_with_gamma() {
        let f = TestFunction::smooth_step(3, 1.0, 0.25).unwrap();
        let a = averaged_target(&f, 1.0, 1.0).unwrap();
        let b = averaged_target(&f, 1.0, 2.0).unwrap();
        assert!(a > 0.0);
        assert!((b - 2.0 * a).abs() < 1e-12 * b);
    }

    #[test]
    fn wall_limit_skips_and_flags() {
        let mut cfg = SuiteConfig::at_beta(0.0);
        cfg.budget.wall_limit = Some(-1.0);
        let s = Suite::new(cfg).unwrap();
        let run = s.run_all(&[11, 12], |_| {});
        assert!(run.exhausted && !run.pass());
        assert!(run.criteria.iter().all(|c| c.skipped));
    }
}
