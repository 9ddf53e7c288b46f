#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use anyhow::Context;
use clap::{Parser, Subcommand};
use pshe::constants::constants_table;
use pshe::kernels::Kernels;
use pshe::limits::{sample_limit, FieldTag, GaussianLimitSpec};
use pshe::paths::khasminskii_margin;
use pshe::polymer::{sample_replica_range, write_samples_csv, Backend, FieldOptions, PolymerConfig, SpaceTimePoint};
use pshe::statlab::{write_reports, Measured, TestReport};
use pshe::suite::{Suite, SuiteBudget, SuiteConfig, CRITERIA};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

const SCHEMA_VERSION: u32 = 1;

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_BUDGET: u8 = 3;
const EXIT_ERROR: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "pshe", version, about = "Directed polymer / mollified SHE experiments in d >= 3")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment configuration.
    #[arg(long, global = true, env = "PSHE_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "PSHE_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "PSHE_OUT")]
    out: Option<PathBuf>,
    /// Replica count; also overrides every replica count of the suite budget.
    #[arg(long, global = true, env = "PSHE_REPLICAS")]
    replicas: Option<usize>,
    /// Backend of `simulate-z` and of the pointwise CLT samples.
    #[arg(long, global = true, env = "PSHE_BACKEND")]
    backend: Option<Backend>,
    #[arg(long, global = true, env = "PSHE_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Constants table and its consistency checks.
    Constants,
    /// Replicas of 𝒵_T(x) on the configured horizons and starts.
    SimulateZ,
    /// Pointwise CLT and space-time covariance of the rescaled free energy.
    Fluctuation,
    /// Decay of Cov(𝒵(0), 𝒵(x)) in |x|.
    CovarianceDecay,
    /// Bracket decay and the limit of the martingale bracket.
    Bracket,
    /// Fluctuations averaged against a test function.
    Averaged,
    /// Covariance bookkeeping of the stationary field and Green scaling.
    StationaryCheck,
    /// Exact samples of a limit Gaussian field.
    LimitSample,
    /// Acceptance criteria 1–12.
    Suite {
        /// Comma-separated subset of criteria.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Constants => "constants",
            Command::SimulateZ => "simulate-z",
            Command::Fluctuation => "fluctuation",
            Command::CovarianceDecay => "covariance-decay",
            Command::Bracket => "bracket",
            Command::Averaged => "averaged",
            Command::StationaryCheck => "stationary-check",
            Command::LimitSample => "limit-sample",
            Command::Suite { .. } => "suite",
        }
    }

    fn criteria(&self) -> Option<Vec<u8>> {
        match self {
            Command::Constants => Some(vec![4]),
            Command::Fluctuation => Some(vec![7, 8]),
            Command::CovarianceDecay => Some(vec![9]),
            Command::Bracket => Some(vec![5, 6]),
            Command::Averaged => Some(vec![10]),
            Command::StationaryCheck => Some(vec![11, 12]),
            Command::Suite { only } if !only.is_empty() => Some(only.clone()),
            Command::Suite { .. } => Some(CRITERIA.to_vec()),
            Command::SimulateZ | Command::LimitSample => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Caps {
    /// Soft wall-clock limit in seconds.
    wall_limit: Option<f64>,
    /// Largest number of simultaneously simulated paths.
    max_paths: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Caps { wall_limit: None, max_paths: 1 << 16 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct LimitSection {
    field: FieldTag,
    /// Defaults to (1, 0), (1, e₁), (2, 0).
    points: Option<Vec<SpaceTimePoint>>,
    /// Defaults to γ² from the constants table.
    gamma_sq: Option<f64>,
    amp_sq: Option<f64>,
    samples: usize,
}

impl Default for LimitSection {
    fn default() -> Self {
        LimitSection { field: FieldTag::H, points: None, gamma_sq: None, amp_sq: None, samples: 10_000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ExperimentConfig {
    d: usize,
    beta: f64,
    dt: f64,
    n_paths: usize,
    horizons: Vec<f64>,
    starts: Option<Vec<Vec<f64>>>,
    replicas: usize,
    backend: Backend,
    seed: u64,
    out: PathBuf,
    field: FieldOptions,
    caps: Caps,
    /// Defaults to the suite budget for β (exact-check sizes at β = 0).
    suite: Option<SuiteBudget>,
    limit: LimitSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let s = SuiteConfig::default();
        ExperimentConfig {
            d: s.d,
            beta: s.beta,
            dt: s.dt,
            n_paths: 256,
            horizons: vec![1.0, 2.0, 4.0],
            starts: None,
            replicas: 200,
            backend: Backend::Gram,
            seed: s.seed,
            out: PathBuf::from("pshe-out"),
            field: FieldOptions::default(),
            caps: Caps::default(),
            suite: None,
            limit: LimitSection::default(),
        }
    }
}

impl ExperimentConfig {
    fn starts(&self) -> Vec<Vec<f64>> {
        self.starts.clone().unwrap_or_else(|| vec![vec![0.0; self.d]])
    }

    fn polymer(&self) -> PolymerConfig {
        let mut c = PolymerConfig::new(self.d, self.beta);
        c.dt = self.dt;
        c.n_paths = self.n_paths;
        c.horizons = self.horizons.clone();
        c.starts = self.starts();
        c.backend = self.backend;
        c.seed = self.seed;
        c.field = self.field.clone();
        c
    }

    fn budget(&self) -> SuiteBudget {
        self.suite.clone().unwrap_or_else(|| SuiteConfig::at_beta(self.beta).budget)
    }

    fn suite(&self) -> SuiteConfig {
        let mut budget = self.budget();
        if budget.wall_limit.is_none() {
            budget.wall_limit = self.caps.wall_limit;
        }
        SuiteConfig { d: self.d, beta: self.beta, dt: self.dt, seed: self.seed, backend: self.backend, budget }
    }

    /// Every violated field, in a fixed order.
    fn violations(&self, command: &Command) -> Vec<String> {
        let mut v = Vec::new();
        let mut bad = |ok: bool, msg: String| {
            if !ok {
                v.push(msg);
            }
        };
        bad(self.d >= 3, format!("d = {} must be >= 3", self.d));
        bad(self.beta.is_finite() && self.beta >= 0.0, format!("beta = {} must be finite and >= 0", self.beta));
        bad(self.dt > 0.0 && self.dt.is_finite(), format!("dt = {} must be positive", self.dt));
        bad(self.n_paths >= 1, "n_paths must be >= 1".into());
        bad(self.replicas >= 1, "replicas must be >= 1".into());
        bad(!self.horizons.is_empty(), "horizons must be non-empty".into());
        bad(self.horizons.iter().all(|&t| t > 0.0), "horizons must be positive".into());
        bad(self.horizons.windows(2).all(|w| w[1] > w[0]), "horizons must be strictly increasing".into());
        if self.dt > 0.0 {
            for &t in &self.horizons {
                let k = t / self.dt;
                bad((k - k.round()).abs() <= 1e-9 * k.max(1.0), format!("horizon {t} is not a multiple of dt = {}", self.dt));
            }
        }
        let starts = self.starts();
        bad(!starts.is_empty(), "starts must be non-empty".into());
        bad(starts.iter().all(|s| s.len() == self.d), format!("every start needs {} coordinates", self.d));
        bad(self.field.dx > 0.0, format!("field.dx = {} must be positive", self.field.dx));
        bad(self.field.wrap_fraction >= 0.0, "field.wrap_fraction must be >= 0".into());
        bad(self.caps.wall_limit.is_none_or(|w| w > 0.0), "caps.wall_limit must be positive".into());
        let cap = self.caps.max_paths;
        if matches!(command, Command::SimulateZ) {
            let p = self.n_paths * starts.len();
            bad(p <= cap, format!("n_paths × starts = {p} exceeds caps.max_paths = {cap}"));
        }
        if let Some(ids) = command.criteria() {
            bad(ids.iter().all(|i| CRITERIA.contains(i)), format!("criteria must lie in 1..=12, got {ids:?}"));
            let s = &self.budget();
            for (name, p) in [
                ("suite.mean_one_gram_paths", s.mean_one_gram_paths),
                ("suite.mean_one_field_paths", s.mean_one_field_paths),
                ("suite.equivalence_paths", s.equivalence_paths),
                ("suite.bracket_paths (four groups)", 4 * s.bracket_paths),
                ("suite.clt_paths", s.clt_paths),
            ] {
                bad(p >= 1, format!("{name} must be >= 1"));
                bad(p <= cap, format!("{name} = {p} exceeds caps.max_paths = {cap}"));
            }
            for (name, n) in [
                ("suite.mean_one_gram_replicas", s.mean_one_gram_replicas),
                ("suite.mean_one_field_replicas", s.mean_one_field_replicas),
                ("suite.equivalence_replicas", s.equivalence_replicas),
                ("suite.bracket_replicas", s.bracket_replicas),
                ("suite.clt_replicas", s.clt_replicas),
                ("suite.pair_samples", s.pair_samples),
                ("suite.decay_samples", s.decay_samples),
                ("suite.averaged_samples", s.averaged_samples),
            ] {
                bad(n >= 2, format!("{name} must be >= 2"));
            }
            bad(s.pair_dt > 0.0, "suite.pair_dt must be positive".into());
            bad(s.proxy_factor >= 16.0, "suite.proxy_factor must be >= 16".into());
            bad(s.decay_s_max > 0.0, "suite.decay_s_max must be positive".into());
            bad(s.constants.nodes >= 1, "suite.constants.nodes must be >= 1".into());
            bad(s.constants.samples_per_node >= 2, "suite.constants.samples_per_node must be >= 2".into());
        }
        if matches!(command, Command::LimitSample) {
            let l = &self.limit;
            bad(l.samples >= 2, "limit.samples must be >= 2".into());
            if let Some(pts) = &l.points {
                bad(!pts.is_empty(), "limit.points must be non-empty".into());
                bad(pts.iter().all(|p| p.x.len() == self.d && p.t >= 0.0), format!("limit.points need t >= 0 and {} coordinates", self.d));
            }
            bad(l.gamma_sq.is_none_or(|g| g >= 0.0), "limit.gamma_sq must be >= 0".into());
            bad(l.amp_sq.is_none_or(|g| g >= 0.0), "limit.amp_sq must be >= 0".into());
        }
        v
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    schema_version: u32,
    command: &'static str,
    args: Vec<String>,
    seed: u64,
    threads: usize,
    config: &'a ExperimentConfig,
    config_toml: String,
    started_unix: u64,
    wall_seconds: f64,
    exit_code: u8,
    partial: bool,
    outputs: Vec<String>,
    csv_schemas: Vec<(&'static str, Vec<&'static str>)>,
}

fn csv_schemas() -> Vec<(&'static str, Vec<&'static str>)> {
    vec![
        ("z_samples.csv", vec!["replica", "backend", "beta", "T", "start", "x0..x{d-1}", "Z", "logZ", "max_jitter", "blocks", "wraps"]),
        ("limit_samples.csv", vec!["sample", "p0..p{n-1}"]),
        ("c2_mean_one.csv", vec!["backend", "T", "mean_z", "se", "replicas"]),
        ("c3_log_z.csv", vec!["backend", "replica", "logZ"]),
        ("c4_constants.csv", vec!["name", "value", "se", "n"]),
        ("c5_bracket.csv", vec!["T", "mean", "mean_se", "mean_square", "mean_square_se"]),
        ("c6_g_variance.csv", vec!["tau", "variance", "se", "g"]),
        ("c7_fluctuations.csv", vec!["replica", "T", "T_max", "sample"]),
        ("c8_covariance.csv", vec!["p", "q", "estimate", "se", "cov_h"]),
        ("c9_decay.csv", vec!["r", "covariance", "se", "truncation_gap", "truncation_se"]),
        ("c10_averaged.csv", vec!["t", "estimate", "se", "target"]),
        ("c11_stationarity.csv", vec!["t", "with_gamma", "with_gbar", "reference"]),
        ("c12_green.csv", vec!["r", "integral", "prefactor"]),
    ]
}

struct Outcome {
    reports: Vec<TestReport>,
    partial: bool,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Vec<String>> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| vec![format!("cannot read {}: {e}", p.display())])?;
            toml::from_str::<ExperimentConfig>(&text).map_err(|e| vec![format!("{}: {}", p.display(), e.message())])?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(b) = cli.backend {
        cfg.backend = b;
    }
    if let Some(r) = cli.replicas {
        cfg.replicas = r;
        let mut s = cfg.budget();
        s.mean_one_gram_replicas = r;
        s.mean_one_field_replicas = r;
        s.equivalence_replicas = r;
        s.bracket_replicas = r;
        s.clt_replicas = r;
        cfg.suite = Some(s);
    }
    let v = cfg.violations(&cli.command);
    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(v)
    }
}

fn simulate_z(cfg: &ExperimentConfig, kernels: &Kernels, out: &Path, t0: Instant, files: &mut Vec<String>) -> anyhow::Result<Outcome> {
    let pc = cfg.polymer();
    let mut samples = Vec::with_capacity(cfg.replicas);
    let mut partial = false;
    const CHUNK: usize = 64;
    while samples.len() < cfg.replicas {
        if cfg.caps.wall_limit.is_some_and(|w| t0.elapsed().as_secs_f64() > w) {
            partial = true;
            break;
        }
        let lo = samples.len();
        let hi = (lo + CHUNK).min(cfg.replicas);
        samples.extend(sample_replica_range(&pc, kernels, lo..hi)?);
    }
    write_samples_csv(&out.join("z_samples.csv"), &samples)?;
    files.push("z_samples.csv".into());
    let mut reports = Vec::new();
    if samples.len() >= 2 {
        for (k, t) in pc.horizons.iter().enumerate() {
            for m in 0..pc.starts.len() {
                let z: Vec<f64> = samples.iter().map(|s| s.z(k, m)).collect();
                reports.push(TestReport::within_se(format!("mean_z_T{t}_start{m}"), Measured::mean_of(&z), 1.0, 5.0).with_seed(pc.seed));
            }
        }
    }
    Ok(Outcome { reports, partial })
}

fn limit_sample(cfg: &ExperimentConfig, kernels: &Kernels, out: &Path, files: &mut Vec<String>) -> anyhow::Result<Outcome> {
    let l = &cfg.limit;
    let d = cfg.d;
    let points = l.points.clone().unwrap_or_else(|| {
        let mut e1 = vec![0.0; d];
        e1[0] = 1.0;
        vec![SpaceTimePoint::new(1.0, vec![0.0; d]), SpaceTimePoint::new(1.0, e1), SpaceTimePoint::new(2.0, vec![0.0; d])]
    });
    let gamma_sq = match l.gamma_sq {
        Some(g) => g,
        None => constants_table(cfg.beta, &kernels.v, &cfg.budget().constants, cfg.seed)?.gamma_sq.value,
    };
    let spec = GaussianLimitSpec::new(l.field, points, gamma_sq, l.amp_sq.unwrap_or(gamma_sq))?;
    let xs = sample_limit(&spec, l.samples, cfg.seed)?;
    let m = spec.len();
    let mut w = csv::Writer::from_path(out.join("limit_samples.csv"))?;
    let mut header = vec!["sample".to_string()];
    header.extend((0..m).map(|i| format!("p{i}")));
    w.write_record(&header)?;
    for (i, x) in xs.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(x.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    serde_json::to_writer_pretty(std::fs::File::create(out.join("limit_spec.json"))?, &spec)?;
    files.extend(["limit_samples.csv".to_string(), "limit_spec.json".to_string()]);
    let n = xs.len() as f64;
    let mut reports = Vec::new();
    for i in 0..m {
        for j in i..m {
            let emp = xs.iter().map(|x| x[i] * x[j]).sum::<f64>() / n;
            let se = ((spec.get(i, i) * spec.get(j, j) + spec.get(i, j).powi(2)) / n).sqrt();
            let meas = Measured { value: emp, se, n: xs.len() };
            reports.push(TestReport::within_se(format!("cov_p{i}_p{j}"), meas, spec.get(i, j), 3.0).with_seed(cfg.seed));
        }
    }
    Ok(Outcome { reports, partial: false })
}

fn suite_run(cfg: &ExperimentConfig, ids: &[u8], out: &Path, files: &mut Vec<String>) -> anyhow::Result<Outcome> {
    let suite = Suite::new(cfg.suite())?.with_output(out);
    let run = suite.run_all(ids, |c| {
        println!("{}", c.line());
        for r in c.reports.iter().filter(|r| !r.pass) {
            if !r.note.is_empty() {
                println!("      {}: {}", r.name, r.note);
            }
        }
    });
    serde_json::to_writer_pretty(std::fs::File::create(out.join("criteria.json"))?, &run)?;
    files.push("criteria.json".into());
    for e in std::fs::read_dir(out)? {
        let name = e?.file_name().to_string_lossy().into_owned();
        if name.starts_with('c') && name.ends_with(".csv") || name == "constants.json" {
            files.push(name);
        }
    }
    Ok(Outcome { reports: run.reports(), partial: run.exhausted })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let t0 = Instant::now();
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(v) => {
            eprintln!("invalid configuration:");
            for e in v {
                eprintln!("  - {e}");
            }
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let kernels = match Kernels::standard(cfg.d) {
        Ok(k) => k,
        Err(e) => {
            eprintln!("invalid configuration:\n  - {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match khasminskii_margin(cfg.beta, &kernels.v) {
        Ok(m) if m < 1.0 => {}
        Ok(m) => {
            eprintln!("invalid configuration:\n  - beta = {} inadmissible: Khas'minskii margin {m:.4} >= 1", cfg.beta);
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(e) => {
            eprintln!("invalid configuration:\n  - {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let threads = cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build_global() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_ERROR);
    }
    match run(&cli, &cfg, &kernels, threads, t0) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn run(cli: &Cli, cfg: &ExperimentConfig, kernels: &Kernels, threads: usize, t0: Instant) -> anyhow::Result<u8> {
    let out = cfg.out.clone();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut files = Vec::new();
    let outcome = match cli.command.criteria() {
        Some(ids) => suite_run(cfg, &ids, &out, &mut files)?,
        None if matches!(cli.command, Command::SimulateZ) => simulate_z(cfg, kernels, &out, t0, &mut files)?,
        None => limit_sample(cfg, kernels, &out, &mut files)?,
    };
    write_reports(&out.join("reports.json"), &outcome.reports)?;
    files.push("reports.json".into());
    let config_toml = toml::to_string(cfg)?;
    std::fs::write(out.join("config.toml"), &config_toml)?;
    files.push("config.toml".into());
    files.sort();
    files.dedup();
    let failed = outcome.reports.iter().filter(|r| !r.pass).count();
    let code = if outcome.partial {
        EXIT_BUDGET
    } else if failed > 0 || outcome.reports.is_empty() {
        EXIT_FAIL
    } else {
        0
    };
    let manifest = Manifest {
        tool: "pshe",
        version: env!("CARGO_PKG_VERSION"),
        schema_version: SCHEMA_VERSION,
        command: cli.command.name(),
        args: std::env::args().collect(),
        seed: cfg.seed,
        threads,
        config: cfg,
        config_toml,
        started_unix: started,
        wall_seconds: t0.elapsed().as_secs_f64(),
        exit_code: code,
        partial: outcome.partial,
        outputs: files,
        csv_schemas: csv_schemas(),
    };
    serde_json::to_writer_pretty(std::fs::File::create(out.join("manifest.json"))?, &manifest)?;
    println!(
        "{}: {} reports, {} failed{}; outputs in {}",
        cli.command.name(),
        outcome.reports.len(),
        failed,
        if outcome.partial { ", budget exhausted (partial)" } else { "" },
        out.display()
    );
    Ok(code)
}
