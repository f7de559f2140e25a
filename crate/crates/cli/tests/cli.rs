use kinlab_cli::config::{ConfigError, Needs};
use kinlab_cli::{run, validate, CliError, Command, ExperimentConfig, Level};
use std::path::{Path, PathBuf};
use std::process::Command as Proc;

fn tmp(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("kinlab-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn cfg(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(text).unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn boltzmann_grad_mismatch_names_all_three_fields() {
    let c = cfg("seed = 1\n[ensemble]\nn = 100\nalpha = 1.0\neps = 0.02\n");
    let d = validate(&c, &[Needs::Ensemble]);
    let err = d.iter().find(|d| d.level == Level::Error).expect("mismatch is an error");
    for f in ["ensemble.eps", "ensemble.n", "ensemble.alpha"] {
        assert!(err.fields.iter().any(|x| x == f), "{err}");
    }
    let ok = cfg("seed = 1\n[ensemble]\nn = 100\nalpha = 1.0\neps = 0.01\n");
    assert!(validate(&ok, &[Needs::Ensemble]).is_empty());
}

#[test]
fn dense_regime_warns_and_missing_seed_is_fatal() {
    // area fraction = N π ε² / 4 = α² π / (4N) > 0.3
    let c = cfg("seed = 1\n[ensemble]\nn = 2\nalpha = 0.9\n");
    let d = validate(&c, &[Needs::Ensemble]);
    assert!(d.iter().any(|d| d.level == Level::Warning && d.message.contains("area fraction")), "{d:?}");
    let c = cfg("[cumulants]\nd = 3\nn = 4\n");
    let d = validate(&c, &[Needs::Cumulants]);
    assert!(d.iter().any(|d| d.level == Level::Error && d.fields.iter().any(|f| f == "seed")));
    assert!(matches!(run(Command::Cumulants, &c, &tmp("noseed")), Err(CliError::Invalid(_))));
}

#[test]
fn unknown_field_reports_its_path() {
    match ExperimentConfig::from_toml_str("seed = 1\n[ensemble]\nn = 10\nalfa = 1.0\n") {
        Err(ConfigError::Schema { path, .. }) => assert!(path.contains("ensemble"), "{path}"),
        other => panic!("expected schema error, got {other:?}"),
    }
    match ExperimentConfig::from_toml_str("seed = 1\n[kinetic]\nn_v = \"many\"\n") {
        Err(ConfigError::Schema { path, .. }) => assert_eq!(path, "kinetic.n_v"),
        other => panic!("expected schema error, got {other:?}"),
    }
}

#[test]
fn overrides_parse_values_and_reject_bad_keys() {
    let c = ExperimentConfig::default()
        .with_overrides(&[
            "seed=9".into(),
            "ensemble.n=40".into(),
            "ensemble.alpha=0.5".into(),
            "kinetic.grids=[32, 48]".into(),
            "trees.mode=\"bbgky\"".into(),
        ])
        .unwrap();
    assert_eq!(c.seed, Some(9));
    assert_eq!(c.ensemble.n, Some(40));
    assert_eq!(c.kinetic.grids, vec![32, 48]);
    assert!(c.with_overrides(&["ensemble.nope=1".into()]).is_err());
    assert!(c.with_overrides(&["noequals".into()]).is_err());
    // the hash tracks the resolved config
    assert_ne!(c.sha256(), ExperimentConfig::default().sha256());
}

#[test]
fn reruns_are_byte_identical_and_stamped() {
    let c = cfg(
        "seed = 11\n[ensemble]\nn = 60\nalpha = 1.0\n[evolve]\nt = 0.3\n[observables]\nreplicas = 6\ntimes = [0.0, 0.2]\nkinetic_oracle = false\n\
         h = [{ k = [1, 0], basis = \"v1\" }]\nh_tilde = [{ k = [1, 0], basis = \"v1\" }]\n",
    );
    for cmd in [Command::Sample, Command::Evolve, Command::Covariance] {
        let (a, b) = (tmp(&format!("{}-a", cmd.name())), tmp(&format!("{}-b", cmd.name())));
        let sa = run(cmd, &c, &a).unwrap();
        let sb = run(cmd, &c, &b).unwrap();
        assert_eq!(sa.files, sb.files);
        for f in &sa.files {
            assert_eq!(read(&a, f), read(&b, f), "{f} differs");
            if f.ends_with(".csv") {
                let text = String::from_utf8(read(&a, f)).unwrap();
                assert!(text.starts_with(&format!("# config_sha256={}", c.sha256())), "{f}");
            }
        }
    }
}

#[test]
fn evolve_flags_partial_results_at_the_event_cap() {
    let c = cfg("seed = 2\n[ensemble]\nn = 200\nalpha = 1.0\n[evolve]\nt = 5.0\nsegment = 0.5\nmax_events = 50\n");
    let s = run(Command::Evolve, &c, &tmp("partial")).unwrap();
    assert!(s.partial);
    assert!(s.files.iter().any(|f| f == "evolve.csv"));
}

#[test]
fn binary_runs_cumulants_with_flag_aliases() {
    let out = tmp("bin");
    let o = Proc::new(env!("CARGO_BIN_EXE_kinlab"))
        .args(["cumulants", "--d", "3", "--N", "4", "--trials", "5", "--seed", "3", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["passed"], true);
    let csv = String::from_utf8(read(&out, "cumulants.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 5 + 10);

    let bad = Proc::new(env!("CARGO_BIN_EXE_kinlab"))
        .args(["sample", "--N", "100", "--alpha", "1", "--eps", "0.5", "--seed", "1", "--out"])
        .arg(tmp("bad"))
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("ensemble.eps"));
}
