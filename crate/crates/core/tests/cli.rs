use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn scratch(name: &str) -> PathBuf {
    let p = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&p);
    fs::create_dir_all(&p).unwrap();
    p
}

fn run(dir: &Path, toml: &str, args: &[&str]) -> (i32, PathBuf) {
    let cfg = dir.join("config.toml");
    fs::write(&cfg, toml).unwrap();
    let out = dir.join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_pshe"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .env_remove("PSHE_SEED")
        .env_remove("PSHE_REPLICAS")
        .env_remove("PSHE_BACKEND")
        .output()
        .unwrap();
    (status.status.code().unwrap(), out)
}

const SMALL: &str = r#"
beta = 0.2

[suite]
clt_paths = 8
clt_replicas = 100
pair_samples = 400
pair_dt = 0.0625
proxy_factor = 64.0

[suite.constants]
nodes = 4
samples_per_node = 100
s_max = 64.0
dt = 0.01
c2_samples = 10000
"#;

#[test]
fn malformed_config_exits_2_without_output() {
    let dir = scratch("malformed");
    let (code, out) = run(&dir, "beta = [oops", &["constants"]);
    assert_eq!(code, 2);
    assert!(!out.exists());
}

#[test]
fn invalid_values_exit_2_without_output() {
    let dir = scratch("invalid");
    let (code, out) = run(&dir, "d = 2\nreplicas = 0\n", &["simulate-z"]);
    assert_eq!(code, 2);
    assert!(!out.exists());
    let (code, out) = run(&dir, "unknown_key = 1\n", &["simulate-z"]);
    assert_eq!(code, 2);
    assert!(!out.exists());
}

#[test]
fn zero_beta_suite_passes() {
    let dir = scratch("beta0");
    let (code, out) = run(&dir, "beta = 0.0\n", &["suite"]);
    assert_eq!(code, 0);
    let criteria: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("criteria.json")).unwrap()).unwrap();
    let list = criteria["criteria"].as_array().unwrap();
    assert_eq!(list.len(), 12);
    assert!(list.iter().all(|c| c["pass"] == true));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["exit_code"], 0);
    assert_eq!(manifest["partial"], false);
    assert_eq!(manifest["seed"], 20240611);
}

#[test]
fn fluctuation_outputs_are_reproducible() {
    let a = scratch("fluct_a");
    let b = scratch("fluct_b");
    let (ca, oa) = run(&a, SMALL, &["fluctuation"]);
    let (cb, ob) = run(&b, SMALL, &["fluctuation"]);
    assert!(ca == 0 || ca == 1, "exit {ca}");
    assert_eq!(ca, cb);
    for f in ["c7_fluctuations.csv", "c8_covariance.csv", "reports.json"] {
        let x = fs::read(oa.join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, fs::read(ob.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn exhausted_budget_exits_3_with_partial_manifest() {
    let dir = scratch("exhausted");
    let (code, out) = run(&dir, "[caps]\nwall_limit = 1e-9\n", &["suite"]);
    assert_eq!(code, 3);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["partial"], true);
}

#[test]
fn limit_sample_writes_samples() {
    let dir = scratch("limit");
    let toml = "[limit]\nfield = \"H\"\ngamma_sq = 0.04\nsamples = 2000\npoints = [{ t = 1.0, x = [0.0, 0.0, 0.0] }, { t = 1.0, x = [1.0, 0.0, 0.0] }]\n";
    let (code, out) = run(&dir, toml, &["limit-sample"]);
    assert_eq!(code, 0);
    let text = fs::read_to_string(out.join("limit_samples.csv")).unwrap();
    assert!(text.lines().count() >= 2000);
}
