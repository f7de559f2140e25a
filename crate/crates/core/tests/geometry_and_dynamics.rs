use kinlab::ensemble::{sample_gibbs, EnsembleSpec};
use kinlab::rng::stream_rng;
use kinlab::sim::{
    apply_scattering, evolve, predict_pair_collision, Direction, EvolveOptions, NeighborMode, ParticleConfig,
};
use kinlab::torus::{candidate_images, min_image_disp, torus_distance, TorusPoint, Vec2};
use proptest::prelude::*;

fn tp(x: f64, y: f64) -> TorusPoint {
    TorusPoint::new(x, y)
}

fn opts(mode: NeighborMode) -> EvolveOptions {
    EvolveOptions { neighbor: mode, ..Default::default() }
}

#[test]
fn image_count_for_unit_horizon() {
    // every lattice point within 2.51 of rel_pos, compared with a brute scan
    for rel in [Vec2::new(0.0, 0.0), Vec2::new(0.3, -0.2), Vec2::new(-0.5, 0.49)] {
        let q = candidate_images(rel, 2.0, 1.0, 0.01);
        assert!(q.len() <= 37, "{}", q.len());
        let mut brute = 0;
        for a in -5i64..=5 {
            for b in -5i64..=5 {
                if (rel + Vec2::new(a as f64, b as f64)).norm() <= 2.51 {
                    brute += 1;
                    assert!(q.contains(&[a, b]));
                }
            }
        }
        assert_eq!(brute, q.len());
    }
}

#[test]
fn image_count_grows_quadratically() {
    let rel = Vec2::new(0.1, 0.2);
    let q = candidate_images(rel, 10.0, 3.0, 0.01);
    let r: f64 = 30.51;
    let mut brute = 0usize;
    for a in -40i64..=40 {
        for b in -40i64..=40 {
            if (rel + Vec2::new(a as f64, b as f64)).norm() <= r {
                brute += 1;
            }
        }
    }
    assert_eq!(q.len(), brute);
    let area = std::f64::consts::PI * r * r;
    assert!((q.len() as f64 - area).abs() < 4.0 * r, "{} vs {area}", q.len());
}

#[test]
fn scattering_examples() {
    let (a, b) = apply_scattering(Vec2::new(1.0, 0.0), Vec2::new(-1.0, 0.0), Vec2::new(-1.0, 0.0)).unwrap();
    assert_eq!((a, b), (Vec2::new(-1.0, 0.0), Vec2::new(1.0, 0.0)));
    let (a, b) = apply_scattering(Vec2::new(0.0, 1.0), Vec2::new(0.0, -1.0), Vec2::new(1.0, 0.0)).unwrap();
    assert_eq!((a, b), (Vec2::new(0.0, 1.0), Vec2::new(0.0, -1.0)));
    let (a, b) = apply_scattering(Vec2::new(1.0, 1.0), Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)).unwrap();
    assert_eq!((a, b), (Vec2::new(0.0, 1.0), Vec2::new(1.0, 0.0)));
    assert_eq!(a.norm2() + b.norm2(), 2.0);
    assert!(apply_scattering(Vec2::ZERO, Vec2::ZERO, Vec2::new(1.0, 1e-4)).is_err());
}

#[test]
fn prediction_examples() {
    let e = predict_pair_collision(&tp(0.2, 0.5), Vec2::new(1.0, 0.0), &tp(0.5, 0.5), Vec2::ZERO, 0.1, 1.0).unwrap();
    assert!((e.time - 0.2).abs() < 1e-12);
    assert!((e.nu - Vec2::new(-1.0, 0.0)).norm() < 1e-12);
    // receding pair with a short horizon: no image reachable
    assert!(predict_pair_collision(&tp(0.2, 0.5), Vec2::new(-1.0, 0.0), &tp(0.5, 0.5), Vec2::ZERO, 0.1, 0.3).is_none());
    // through the periodic image
    let e = predict_pair_collision(&tp(0.95, 0.5), Vec2::new(1.0, 0.0), &tp(0.15, 0.5), Vec2::ZERO, 0.1, 1.0).unwrap();
    assert!((e.time - 0.1).abs() < 1e-12, "{}", e.time);
    assert!((e.nu - Vec2::new(-1.0, 0.0)).norm() < 1e-12);
}

#[test]
fn single_particle_free_flight() {
    let c = ParticleConfig::new(vec![tp(0.3, 0.9)], vec![Vec2::new(0.45, 1.25)], 0.01, 0.0).unwrap();
    let out = evolve(&c, 1.0, Direction::Forward, &EvolveOptions::default()).unwrap();
    assert!(out.events.is_empty());
    assert!(torus_distance(&out.config.positions[0], &tp(0.75, 0.15)) < 1e-14);
    assert_eq!(out.windings[0], [0, 2]);
}

#[test]
fn head_on_pair_collides_once() {
    let c = ParticleConfig::new(vec![tp(0.2, 0.5), tp(0.5, 0.5)], vec![Vec2::new(1.0, 0.0), Vec2::ZERO], 0.1, 0.0)
        .unwrap();
    let out = evolve(&c, 0.5, Direction::Forward, &EvolveOptions::default()).unwrap();
    assert_eq!(out.events.len(), 1);
    assert!((out.events[0].time - 0.2).abs() < 1e-12);
    assert_eq!(out.config.velocities, vec![Vec2::ZERO, Vec2::new(1.0, 0.0)]);
    assert!((out.config.positions[0].x() - 0.4).abs() < 1e-12);
    assert!((out.config.positions[1].x() - 0.8).abs() < 1e-12);
}

fn gibbs(n: usize, alpha: f64, seed: u64) -> ParticleConfig {
    let spec = EnsembleSpec::new(n, 1.0, alpha, seed).unwrap();
    sample_gibbs(&spec, &mut stream_rng(seed, 0)).unwrap()
}

#[test]
fn reversibility_small_systems() {
    for seed in 0..20u64 {
        let n = 3 + (seed as usize * 7) % 60;
        let c = gibbs(n, 1.0, seed);
        let fwd = evolve(&c, 0.1, Direction::Forward, &EvolveOptions::default()).unwrap();
        let mut back = fwd.config.clone();
        back.flip_velocities();
        let mut ret = evolve(&back, 0.1, Direction::Forward, &EvolveOptions::default()).unwrap().config;
        ret.flip_velocities();
        for k in 0..n {
            assert!(torus_distance(&ret.positions[k], &c.positions[k]) < 1e-9);
            assert!((ret.velocities[k] - c.velocities[k]).norm() < 1e-9);
        }
    }
}

#[test]
fn backward_run_reverses_event_log() {
    let c = gibbs(80, 1.0, 11);
    let fwd = evolve(&c, 0.15, Direction::Forward, &EvolveOptions::default()).unwrap();
    assert!(fwd.events.len() > 3);
    let bwd = evolve(&fwd.config, 0.15, Direction::Backward, &EvolveOptions::default()).unwrap();
    assert_eq!(bwd.events.len(), fwd.events.len());
    for (a, b) in fwd.events.iter().zip(bwd.events.iter().rev()) {
        assert_eq!((a.i, a.j), (b.i, b.j));
        assert!((a.time - b.time).abs() < 1e-9);
        assert!((a.nu - b.nu).norm() < 1e-7);
    }
    assert!((bwd.config.time - c.time).abs() < 1e-12);
    for k in 0..c.len() {
        assert!(torus_distance(&bwd.config.positions[k], &c.positions[k]) < 1e-9);
    }
}

#[test]
fn cell_lists_match_all_pairs() {
    for seed in 0..12u64 {
        let n = 16 + (seed as usize * 3) % 35;
        let c = gibbs(n, 1.0, 100 + seed);
        let a = evolve(&c, 0.3, Direction::Forward, &opts(NeighborMode::CellList)).unwrap();
        let b = evolve(&c, 0.3, Direction::Forward, &opts(NeighborMode::AllPairs)).unwrap();
        assert!(a.diagnostics.used_cells && !b.diagnostics.used_cells);
        assert_eq!(a.events.len(), b.events.len(), "seed {seed}");
        for (x, y) in a.events.iter().zip(&b.events) {
            assert_eq!((x.i, x.j), (y.i, y.j));
            assert!((x.time - y.time).abs() < 1e-9);
        }
        for k in 0..n {
            assert!(torus_distance(&a.config.positions[k], &b.config.positions[k]) < 1e-9);
        }
    }
}

#[test]
fn no_overlap_and_conservation_along_run() {
    let c = gibbs(200, 2.0, 5);
    let e0 = c.kinetic_energy();
    let p0 = c.total_momentum();
    let mut cur = c;
    let mut collisions = 0;
    for _ in 0..200 {
        let out = evolve(&cur, 0.01, Direction::Forward, &EvolveOptions::default()).unwrap();
        collisions += out.events.len();
        cur = out.config;
        let (d, _, _) = cur.min_pair_distance();
        assert!(d >= cur.eps - 1e-9, "overlap {d}");
    }
    assert!(collisions > 50);
    assert!(((cur.kinetic_energy() - e0) / e0).abs() < 1e-10);
    assert!((cur.total_momentum() - p0).norm() < 1e-10 * (2.0 * e0).sqrt() * 200f64.sqrt());
}

#[test]
fn identical_inputs_give_identical_logs() {
    let c = gibbs(300, 1.0, 9);
    let a = evolve(&c, 2.0, Direction::Forward, &EvolveOptions::default()).unwrap();
    let b = evolve(&c, 2.0, Direction::Forward, &EvolveOptions::default()).unwrap();
    assert_eq!(a.events, b.events);
    assert_eq!(a.config, b.config);
}

#[test]
fn event_limit_aborts() {
    let c = gibbs(100, 2.0, 1);
    let o = EvolveOptions { max_events: 5, ..Default::default() };
    assert!(matches!(evolve(&c, 10.0, Direction::Forward, &o), Err(kinlab::Error::TooManyEvents { .. })));
}

proptest! {
    #[test]
    fn min_image_antisymmetric_and_minimal(ax in 0.0..1.0f64, ay in 0.0..1.0f64, bx in 0.0..1.0f64, by in 0.0..1.0f64) {
        let (a, b) = (tp(ax, ay), tp(bx, by));
        let r = min_image_disp(&a, &b);
        let s = min_image_disp(&b, &a);
        prop_assert!(r.x >= -0.5 && r.x < 0.5 && r.y >= -0.5 && r.y < 0.5);
        if r.x.abs() < 0.5 - 1e-12 && r.y.abs() < 0.5 - 1e-12 {
            prop_assert!((r + s).norm() < 1e-12);
        }
        for qx in -3..=3 {
            for qy in -3..=3 {
                let d = a.as_vec() - b.as_vec() + Vec2::new(qx as f64, qy as f64);
                prop_assert!(r.norm() <= d.norm() + 1e-12);
            }
        }
    }

    #[test]
    fn candidate_images_cover_reachable_contacts(
        rx in -0.5..0.5f64, ry in -0.5..0.5f64, wx in -3.0..3.0f64, wy in -3.0..3.0f64, h in 0.0..2.0f64
    ) {
        let eps = 0.02;
        let rel = Vec2::new(rx, ry);
        let w = Vec2::new(wx, wy);
        let qs = candidate_images(rel, w.norm(), h, eps);
        // dense-time scan for every image with a contact in [0, h]
        for qx in -8i64..=8 {
            for qy in -8i64..=8 {
                let r = rel + Vec2::new(qx as f64, qy as f64);
                let hit = (0..=400).any(|k| (r + w * (h * k as f64 / 400.0)).norm() <= eps);
                if hit {
                    prop_assert!(qs.contains(&[qx, qy]));
                }
            }
        }
    }

    #[test]
    fn scattering_conserves_and_is_involutive(
        a in -5.0..5.0f64, b in -5.0..5.0f64, c in -5.0..5.0f64, d in -5.0..5.0f64, th in 0.0..6.3f64
    ) {
        let (vi, vj, nu) = (Vec2::new(a, b), Vec2::new(c, d), Vec2::from_angle(th));
        let (wi, wj) = apply_scattering(vi, vj, nu).unwrap();
        let e = vi.norm2() + vj.norm2();
        prop_assert!((wi.norm2() + wj.norm2() - e).abs() <= 1e-12 * e.max(1e-300) + 1e-300);
        prop_assert!(((wi + wj) - (vi + vj)).norm() <= 1e-12 * (vi.norm() + vj.norm()));
        let (ui, uj) = apply_scattering(wi, wj, nu).unwrap();
        prop_assert!((ui - vi).norm() < 1e-12 && (uj - vj).norm() < 1e-12);
    }
}
