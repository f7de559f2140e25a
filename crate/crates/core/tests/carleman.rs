use kinlab::carleman::*;
use kinlab::rng::stream_rng;
use kinlab::sim::apply_scattering;
use kinlab::Vec2;
use proptest::prelude::*;
use rand::Rng;
use std::f64::consts::PI;

#[test]
fn map_examples() {
    let p = carleman_map(Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), Vec2::ZERO).unwrap();
    assert_eq!(p.v_prime_star, Vec2::new(1.0, 0.0));
    assert_eq!(p.v_prime, Vec2::new(0.0, 0.0));
    let p = carleman_map(Vec2::new(1.0, 1.0), Vec2::new(1.0, 0.0), Vec2::ZERO).unwrap();
    assert_eq!(p.v_prime_star, Vec2::new(0.0, 1.0));
    assert_eq!(p.v_prime, Vec2::new(1.0, 0.0));
    assert_eq!(p.orthogonality_defect(), 0.0);
    assert!(carleman_map(Vec2::ZERO, Vec2::new(1.0, 0.1), Vec2::ZERO).is_err());
}

#[test]
fn orthogonality_on_many_random_pairs() {
    let mut rng = stream_rng(11, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let mut g = || 8.0 * rng.random::<f64>() - 4.0;
        let (pivot, v) = (Vec2::new(g(), g()), Vec2::new(g(), g()));
        let nu = Vec2::from_angle(2.0 * PI * rng.random::<f64>());
        worst = worst.max(carleman_map(v, nu, pivot).unwrap().orthogonality_defect());
    }
    assert!(worst <= 1e-12, "{worst}");
}

#[test]
fn pushforward_of_constant_is_exact_volume() {
    let r = DEFAULT_RADIUS;
    let rep = pushforward_check(Vec2::new(0.3, -0.2), r, |_, _| 1.0, 200_000, 1);
    let exact = 4.0 * PI * r.powi(3);
    assert!((rep.lhs - exact).abs() < 4.0 * rep.lhs_se, "{rep:?} vs {exact}");
    assert!((rep.rhs - exact).abs() < 1e-9 * exact && rep.rhs_se < 1e-9 * exact);
}

#[test]
fn pushforward_zero_and_box_and_bump() {
    let pivot = Vec2::new(0.5, 0.0);
    let r = DEFAULT_RADIUS;
    let z = pushforward_check(pivot, r, |_, _| 0.0, 10_000, 2);
    assert_eq!((z.lhs, z.rhs), (0.0, 0.0));
    let boxed = |a: Vec2, b: Vec2| {
        let inb = |v: Vec2, lo: [f64; 2], hi: [f64; 2]| v.x >= lo[0] && v.x <= hi[0] && v.y >= lo[1] && v.y <= hi[1];
        if inb(a, [0.8, -1.5], [2.5, 1.0]) && inb(b, [-2.0, -1.0], [1.0, 2.5]) { 1.0 } else { 0.0 }
    };
    let rep = pushforward_check(pivot, r, boxed, 400_000, 3);
    assert!(rep.z() < 3.0, "{rep:?}");
    let bump = |a: Vec2, b: Vec2| (-(a - Vec2::new(1.0, 1.0)).norm2() - 0.5 * (b - Vec2::new(-0.5, 0.5)).norm2()).exp();
    let rep = pushforward_check(pivot, r, bump, 400_000, 4);
    assert!(rep.z() < 3.0, "{rep:?}");
}

#[test]
fn preimage_measures_match_closed_forms_at_pivot() {
    let r = 4.0;
    let pivot = Vec2::new(0.2, 0.1);
    for delta in [0.5, 0.1, 0.01] {
        let star = preimage_measure(pivot, pivot, delta, Branch::VPrimeStar, r, 1000, 1);
        let exact = 2.0 * PI * (2.0 * delta * r * r - 2.0 * delta.powi(3) / 3.0);
        assert!((star.estimate - exact).abs() < 1e-10 * exact);
        let prime = preimage_measure(pivot, pivot, delta, Branch::VPrime, r, 200_000, 2);
        let exact = 8.0 * PI / 3.0 * (r.powi(3) - (r * r - delta * delta).powf(1.5));
        assert!((prime.estimate - exact).abs() < 4.0 * prime.se, "{prime:?} vs {exact}");
    }
}

#[test]
fn preimage_measure_agrees_with_direct_sampling() {
    // crude oracle: sample (v*, ν*) directly and weight by |w·ν*|
    let r = 2.0;
    let pivot = Vec2::ZERO;
    let vj = Vec2::new(0.7, 0.2);
    let delta = 0.4;
    let mut rng = stream_rng(9, 0);
    let n = 400_000;
    let (mut s_star, mut s_prime) = (0.0, 0.0);
    for _ in 0..n {
        let rad = r * rng.random::<f64>().sqrt();
        let v = Vec2::from_angle(2.0 * PI * rng.random::<f64>()) * rad;
        let nu = Vec2::from_angle(2.0 * PI * rng.random::<f64>());
        let p = carleman_map(v, nu, pivot).unwrap();
        let b = v.dot(nu).abs();
        if (p.v_prime_star - vj).norm() <= delta {
            s_star += b;
        }
        if (p.v_prime - vj).norm() <= delta {
            s_prime += b;
        }
    }
    let vol = PI * r * r * 2.0 * PI / n as f64;
    let a = preimage_measure(pivot, vj, delta, Branch::VPrimeStar, r, 100_000, 5);
    let b = preimage_measure(pivot, vj, delta, Branch::VPrime, r, 100_000, 6);
    assert!((a.estimate - s_star * vol).abs() < 0.03 * a.estimate, "{} vs {}", a.estimate, s_star * vol);
    assert!((b.estimate - s_prime * vol).abs() < 0.03 * b.estimate, "{} vs {}", b.estimate, s_prime * vol);
}

#[test]
fn delta_exponents() {
    let pivot = Vec2::new(0.1, -0.3);
    let deltas: Vec<f64> = (5..=10).map(|k| 2f64.powi(-k)).collect();
    let at = preimage_scaling(pivot, pivot, &deltas, Branch::VPrimeStar, 4.0, 20_000, 1).unwrap();
    assert!((at.exponent - 1.0).abs() < 0.1, "{at:?}");
    let far = pivot + Vec2::new(0.6, 0.8);
    let off = preimage_scaling(pivot, far, &deltas, Branch::VPrimeStar, 4.0, 20_000, 2).unwrap();
    assert!((off.exponent - 2.0).abs() < 0.2, "{off:?}");
    let p = preimage_scaling(pivot, far, &deltas, Branch::VPrime, 4.0, 20_000, 3).unwrap();
    assert!((p.exponent - 2.0).abs() < 0.2, "{p:?}");
}

#[test]
fn singular_integral_grows_logarithmically() {
    let dists: Vec<f64> = (2..=8).map(|k| 2f64.powi(-k)).collect();
    let scan = singular_integral_scan(Vec2::ZERO, &dists, 4.0, 50_000, 7).unwrap();
    for w in scan.rows.windows(2) {
        assert!(w[1].estimate > w[0].estimate - 3.0 * (w[0].se + w[1].se));
    }
    let leading = 4.0 * PI * 16.0;
    assert!((scan.c1 - leading).abs() < 0.1 * leading, "{scan:?}");
    assert!((scan.c1_first - scan.c1_second).abs() < 0.15 * scan.c1, "{scan:?}");
}

proptest! {
    #[test]
    fn relative_speed_is_preserved_by_both_branches(
        px in -4.0..4.0f64, py in -4.0..4.0f64, vx in -4.0..4.0f64, vy in -4.0..4.0f64, th in 0.0..6.3f64
    ) {
        let (pivot, v) = (Vec2::new(px, py), Vec2::new(vx, vy));
        let nu = Vec2::from_angle(th);
        let p = carleman_map(v, nu, pivot).unwrap();
        let rel = (v - pivot).norm();
        prop_assert!(((p.v_prime - p.v_prime_star).norm() - rel).abs() <= 1e-12 * (1.0 + rel));
        let lhs = (p.v_prime_star - p.v_prime).norm2();
        let rhs = (p.v_prime_star - pivot).norm2() + (p.v_prime - pivot).norm2();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs));
        // the map realises the collision law
        let (a, b) = apply_scattering(pivot, v, nu).unwrap();
        prop_assert!((a - p.v_prime).norm() <= 1e-12 * (1.0 + rel));
        prop_assert!((b - p.v_prime_star).norm() <= 1e-12 * (1.0 + rel));
        let (c, d) = apply_scattering(a, b, nu).unwrap();
        prop_assert!((c - pivot).norm() <= 1e-12 * (1.0 + rel) && (d - v).norm() <= 1e-12 * (1.0 + rel));
    }
}
