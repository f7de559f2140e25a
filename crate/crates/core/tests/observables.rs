use kinlab::ensemble::{sample_replica, Basis, EnsembleSpec, TestFunction, G0};
use kinlab::observables::*;
use kinlab::sim::ParticleConfig;
use kinlab::stats::jackknife_mean;
use kinlab::{TorusPoint, Vec2};
use std::f64::consts::PI;

fn tf(k: [i32; 2], b: Basis, beta: f64) -> TestFunction {
    TestFunction::from_g0(&format!("{k:?}{b:?}"), &G0::mode(k, b), beta).unwrap()
}

fn spec() -> EnsembleSpec {
    EnsembleSpec::new(200, 1.0, 1.0, 17).unwrap()
}

#[test]
fn zero_function_has_zero_field() {
    let cfg = sample_replica(&spec(), 0).unwrap();
    assert_eq!(fluctuation_field(&cfg, &TestFunction::zero()), 0.0);
}

#[test]
fn single_particle_field_is_the_function() {
    let cfg = ParticleConfig::new(vec![TorusPoint::new(0.2, 0.3)], vec![Vec2::new(-0.7, 0.4)], 0.01, 0.0).unwrap();
    let h = TestFunction::custom("v1", 1.0, true, |_, v| v.x).unwrap();
    assert_eq!(fluctuation_field(&cfg, &h), -0.7);
}

#[test]
fn gibbs_variance_of_velocity_field_is_one() {
    let s = EnsembleSpec::new(200, 2.0, 1.0, 4).unwrap();
    let h = tf([0, 0], Basis::V1, 2.0);
    let z2: Vec<f64> = (0..600).map(|r| fluctuation_field(&sample_replica(&s, r).unwrap(), &h).powi(2)).collect();
    let (m, se) = jackknife_mean(&z2);
    assert!((m - 1.0).abs() < 3.0 * se, "{m} ± {se}");
}

#[test]
fn static_covariance_matches_gaussian_moment() {
    let h = tf([0, 0], Basis::V1, 1.0);
    let c = covariance(&spec(), &h, &h, &[0.0], 400).unwrap();
    assert!((c.values[0] - 1.0).abs() < 3.0 * c.std_errors[0], "{:?}", c);
}

#[test]
fn position_and_odd_velocity_fields_are_uncorrelated() {
    let h = tf([1, 0], Basis::One, 1.0);
    let ht = tf([0, 0], Basis::V1, 1.0);
    let c = covariance(&spec(), &h, &ht, &[0.0], 400).unwrap();
    assert!(c.values[0].abs() < 3.0 * c.std_errors[0], "{:?}", c);
}

#[test]
fn covariance_is_symmetric_under_stationarity() {
    let h = tf([1, 0], Basis::V1, 1.0);
    let ht = tf([1, 0], Basis::One, 1.0);
    let both = covariance_pairs(&spec(), &[(h.clone(), ht.clone()), (ht, h)], &[0.0, 0.2], 300).unwrap();
    for k in 0..2 {
        let d = both[0].values[k] - both[1].values[k];
        let se = (both[0].std_errors[k].powi(2) + both[1].std_errors[k].powi(2)).sqrt();
        assert!(d.abs() < 4.0 * se, "t={} {} vs {}", both[0].times[k], both[0].values[k], both[1].values[k]);
    }
}

#[test]
fn covariance_is_linear_in_test_functions() {
    let a = tf([1, 0], Basis::V1, 1.0);
    let b = tf([0, 1], Basis::Energy, 1.0);
    let g = G0::mode([1, 0], Basis::V1).scaled(2.0).plus(G0::mode([0, 1], Basis::Energy).scaled(-3.0));
    let ab = TestFunction::from_g0("ab", &g, 1.0).unwrap();
    let h = tf([1, 0], Basis::One, 1.0);
    let out = covariance_pairs(&spec(), &[(h.clone(), a), (h.clone(), b), (h, ab)], &[0.0, 0.3], 50).unwrap();
    for k in 0..2 {
        let lin = 2.0 * out[0].values[k] - 3.0 * out[1].values[k];
        assert!((out[2].values[k] - lin).abs() < 1e-12 * (1.0 + lin.abs()));
    }
}

#[test]
fn covariance_requires_mean_zero_functions() {
    let one = TestFunction::custom("one", 1.0, false, |_, _| 1.0).unwrap();
    let h = tf([1, 0], Basis::V1, 1.0);
    assert!(covariance(&spec(), &one, &h, &[0.0], 10).is_err());
}

#[test]
fn covariance_csv_and_meta() {
    let h = tf([1, 0], Basis::V1, 1.0);
    let c = covariance(&spec(), &h, &h, &[0.0, 0.1], 8).unwrap();
    let mut buf = Vec::new();
    c.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("t,cov,se\n"));
    assert_eq!(text.lines().count(), 3);
    let mut meta = Vec::new();
    c.write_meta(&mut meta).unwrap();
    let back: CovarianceMeta = serde_json::from_slice(&meta).unwrap();
    assert_eq!(back, c.meta);
}

#[test]
fn zero_weights_give_empty_histogram() {
    let samples = weighted_samples(&spec(), &TestFunction::zero(), 0.1, 5).unwrap();
    let hist = weighted_marginal(&samples, &MarginalBins::new(4, 6, 1.0).unwrap());
    assert!(hist.density.iter().all(|&d| d == 0.0));
}

#[test]
fn initial_weighted_marginal_recovers_datum() {
    let s = spec();
    let g0 = tf([1, 0], Basis::One, 1.0);
    let samples = weighted_samples(&s, &g0, 0.0, 2000).unwrap();
    let bins = MarginalBins::new(8, 10, 1.0).unwrap();
    let hist = weighted_marginal(&samples, &bins);
    let (d, se) = hist.x1_projection();
    for (k, (a, e)) in d.iter().zip(&se).enumerate() {
        // bin average of N cos(2πx₁)
        let (lo, hi) = (k as f64 * bins.dx(), (k + 1) as f64 * bins.dx());
        let want = s.n as f64 * ((2.0 * PI * hi).sin() - (2.0 * PI * lo).sin()) / (2.0 * PI * bins.dx());
        assert!((a - want).abs() < 3.0 * e, "bin {k}: {a} ± {e} vs {want}");
    }
    let (vd, _) = hist.velocity_projection();
    assert_eq!(vd.len(), 100);
}

#[test]
fn contraction_matches_covariance() {
    let s = spec();
    let g0 = tf([1, 0], Basis::One, 1.0);
    let ht = tf([1, 0], Basis::V1, 1.0);
    let samples = weighted_samples(&s, &g0, 0.3, 60).unwrap();
    let (c, se) = weighted_contraction(&samples, &ht);
    let cov = covariance(&s, &g0, &ht, &[0.3], 60).unwrap();
    let n = s.n as f64;
    assert!((c / n - cov.values[0]).abs() < 1e-10 * (1.0 + cov.values[0].abs()), "{} vs {}", c / n, cov.values[0]);
    assert!((se / n - cov.std_errors[0]).abs() < 1e-10);
}
