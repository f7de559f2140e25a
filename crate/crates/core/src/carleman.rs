//! Carleman parametrization of collision parameters and Monte-Carlo checks
//! of the associated measure estimates.
//!
//! For a pivot velocity v̄ and collision parameters (v*, ν*) with
//! w = v* − v̄, the map is V' = v̄ + (w·ν*)ν*, V'_* = v* − (w·ν*)ν*.
//! The pair is orthogonal about v̄, and b dv* dν* with b = |w·ν*| is sent
//! to 2·dV' dS(V'_*): the map is two-to-one, (ν*, w·ν*) and (−ν*, −w·ν*)
//! giving the same image.

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Rng};
use crate::stats::{linear_fit, weighted_linear_fit};
use crate::torus::Vec2;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Default velocity bound.
pub const DEFAULT_RADIUS: f64 = 4.0;
const CHUNK: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarlemanPair {
    pub v_prime: Vec2,
    pub v_prime_star: Vec2,
    pub pivot: Vec2,
}

impl CarlemanPair {
    /// |(V' − v̄)·(V'_* − v̄)|
    pub fn orthogonality_defect(&self) -> f64 {
        ((self.v_prime - self.pivot).dot(self.v_prime_star - self.pivot)).abs()
    }
}

pub fn carleman_map(v_star: Vec2, nu_star: Vec2, pivot: Vec2) -> Result<CarlemanPair> {
    if (nu_star.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParam(format!("nu_star must be a unit vector, |nu| = {}", nu_star.norm())));
    }
    let n = (v_star - pivot).dot(nu_star);
    Ok(CarlemanPair { v_prime: pivot + n * nu_star, v_prime_star: v_star - n * nu_star, pivot })
}

/// Mean and standard error of i.i.d. draws of `f`, evaluated in fixed-size
/// chunks with one RNG stream per chunk so the result is independent of the
/// thread count.
fn mc<F>(samples: usize, seed: u64, f: F) -> (f64, f64)
where
    F: Fn(&mut Rng) -> f64 + Sync,
{
    if samples == 0 {
        return (0.0, 0.0);
    }
    let chunks = samples.div_ceil(CHUNK);
    let parts: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let n = CHUNK.min(samples - c * CHUNK);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let x = f(&mut rng);
                s += x;
                s2 += x * x;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = samples as f64;
    let mean = s / n;
    let var = if samples > 1 { ((s2 - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    (mean, (var / n).sqrt())
}

fn uniform_in_disk(rng: &mut Rng, center: Vec2, r: f64) -> Vec2 {
    let rad = r * rng.random::<f64>().sqrt();
    center + rad * Vec2::from_angle(2.0 * PI * rng.random::<f64>())
}

/// Largest orthogonality defect over `pairs` random (v̄, v*, ν*) with
/// v̄ uniform in [−R, R]² and v* uniform in B_{√2R}(v̄).
pub fn max_orthogonality_defect(pairs: usize, radius: f64, seed: u64) -> f64 {
    let chunks = pairs.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let mut worst: f64 = 0.0;
            for _ in 0..CHUNK.min(pairs - c * CHUNK) {
                let pivot = Vec2::new(radius * (2.0 * rng.random::<f64>() - 1.0), radius * (2.0 * rng.random::<f64>() - 1.0));
                let v = uniform_in_disk(&mut rng, pivot, 2f64.sqrt() * radius);
                let nu = Vec2::from_angle(2.0 * PI * rng.random::<f64>());
                let p = carleman_map(v, nu, pivot).expect("unit normal");
                worst = worst.max(p.orthogonality_defect());
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PushforwardReport {
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
}

impl PushforwardReport {
    pub fn se(&self) -> f64 {
        self.lhs_se.hypot(self.rhs_se)
    }
    /// |lhs − rhs| in units of the combined standard error.
    pub fn z(&self) -> f64 {
        let se = self.se();
        if se == 0.0 {
            if self.lhs == self.rhs { 0.0 } else { f64::INFINITY }
        } else {
            (self.lhs - self.rhs).abs() / se
        }
    }
}

/// Compare ∫ φ(V', V'_*) |w·ν*| dv* dν* with 2∫ φ(V', V'_*) dV' dS(V'_*).
/// φ is restricted to |V' − v̄| ≤ R, |V'_* − v̄| ≤ R.
pub fn pushforward_check<F>(pivot: Vec2, radius: f64, test_fn: F, samples: usize, seed: u64) -> PushforwardReport
where
    F: Fn(Vec2, Vec2) -> f64 + Sync,
{
    let r = radius;
    let phi = |a: Vec2, b: Vec2| {
        if (a - pivot).norm() <= r && (b - pivot).norm() <= r {
            test_fn(a, b)
        } else {
            0.0
        }
    };
    // v* uniform in B_{√2R}(v̄), ν* uniform on S¹
    let vol_l = PI * 2.0 * r * r * 2.0 * PI;
    let (lhs, lhs_se) = mc(samples, seed, |rng| {
        let v = uniform_in_disk(rng, pivot, 2f64.sqrt() * r);
        let nu = Vec2::from_angle(2.0 * PI * rng.random::<f64>());
        let p = carleman_map(v, nu, pivot).expect("unit normal");
        vol_l * phi(p.v_prime, p.v_prime_star) * (v - pivot).dot(nu).abs()
    });
    // V' uniform in B_R(v̄), signed arclength S uniform in [−R, R]
    let vol_r = 2.0 * PI * r * r * 2.0 * r;
    let (rhs, rhs_se) = mc(samples, seed ^ 0x9e37_79b9_7f4a_7c15, |rng| {
        let vp = uniform_in_disk(rng, pivot, r);
        let s = r * (2.0 * rng.random::<f64>() - 1.0);
        let d = vp - pivot;
        let dir = if d.norm() > 0.0 { d * (1.0 / d.norm()) } else { Vec2::new(1.0, 0.0) };
        vol_r * phi(vp, pivot + s * dir.perp())
    });
    PushforwardReport { lhs, lhs_se, rhs, rhs_se }
}

/// Which post-collisional velocity is constrained to lie near v_j.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// v_i = V' (along ν*)
    VPrime,
    /// v_i = V'_* (orthogonal to ν*)
    VPrimeStar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub x: f64,
    pub estimate: f64,
    pub se: f64,
}

/// Angles φ (of ν*) for which the line v̄ + b ν*^⊥ meets B_δ(v_j): returns the
/// sampler and total measure of the feasible set.
fn feasible_angle(d: Vec2, delta: f64, rng: &mut Rng) -> (f64, f64) {
    let dn = d.norm();
    if dn <= delta {
        return (2.0 * PI * rng.random::<f64>(), 2.0 * PI);
    }
    // distance from v_j to the line is |d·ν| = |d| |cos(φ − ψ)| ≤ δ
    let psi = d.y.atan2(d.x);
    let half = (delta / dn).asin();
    let u = rng.random::<f64>();
    let centre = psi + PI / 2.0 + if u < 0.5 { 0.0 } else { PI };
    let phi = centre + half * (4.0 * (u % 0.5) - 1.0);
    (phi, 4.0 * half)
}

/// Measure of {(v*, ν*): |v* − v̄| ≤ R, |v_i − v_j| ≤ δ} under |w·ν*| dv* dν*.
pub fn preimage_measure(pivot: Vec2, v_j: Vec2, delta: f64, branch: Branch, radius: f64, samples: usize, seed: u64) -> ScanRow {
    let r = radius;
    let d = v_j - pivot;
    let (estimate, se) = match branch {
        Branch::VPrimeStar => mc(samples, seed, |rng| {
            // ∫dφ ∫db (R² − b²) 1{|v̄ + bν^⊥ − v_j| ≤ δ}, inner integral exact
            let (phi, width) = feasible_angle(d, delta, rng);
            let perp = Vec2::from_angle(phi).perp();
            let b0 = d.dot(perp);
            let dist2 = (d.norm2() - b0 * b0).max(0.0);
            if dist2 > delta * delta {
                return 0.0;
            }
            let h = (delta * delta - dist2).sqrt();
            let lo = (b0 - h).max(-r);
            let hi = (b0 + h).min(r);
            if hi <= lo {
                return 0.0;
            }
            let prim = |b: f64| r * r * b - b * b * b / 3.0;
            width * (prim(hi) - prim(lo))
        }),
        Branch::VPrime => mc(samples, seed, |rng| {
            // 2∫dV' 2√(R² − |V'−v̄|²) over V' ∈ B_δ(v_j) ∩ B_R(v̄)
            let vp = uniform_in_disk(rng, v_j, delta);
            let a2 = (vp - pivot).norm2();
            if a2 > r * r {
                return 0.0;
            }
            PI * delta * delta * 4.0 * (r * r - a2).sqrt()
        }),
    };
    ScanRow { x: delta, estimate, se }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub branch: Branch,
    pub rows: Vec<ScanRow>,
    pub exponent: f64,
    pub exponent_se: f64,
}

/// Fit the δ-exponent of `preimage_measure` over a list of δ.
pub fn preimage_scaling(
    pivot: Vec2,
    v_j: Vec2,
    deltas: &[f64],
    branch: Branch,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<ExponentFit> {
    if deltas.len() < 2 || deltas.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::InvalidParam("need at least two positive deltas".into()));
    }
    let rows: Vec<ScanRow> = deltas
        .iter()
        .enumerate()
        .map(|(i, &d)| preimage_measure(pivot, v_j, d, branch, radius, samples, seed.wrapping_add(i as u64)))
        .collect();
    if rows.iter().any(|r| r.estimate <= 0.0) {
        return Err(Error::Resolution("zero estimate in delta scan; increase samples".into()));
    }
    let x: Vec<f64> = rows.iter().map(|r| r.x.ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.estimate.ln()).collect();
    let (exponent, exponent_se) = if rows.iter().all(|r| r.se > 0.0) {
        let w: Vec<f64> = rows.iter().map(|r| (r.estimate / r.se).powi(2)).collect();
        let (_, b, se) = weighted_linear_fit(&x, &y, &w);
        (b, se)
    } else {
        (linear_fit(&x, &y).1, 0.0)
    };
    Ok(ExponentFit { branch, rows, exponent, exponent_se })
}

/// ∫ |w·ν*| / |V'_* − v_j| dv* dν* over |v* − v̄| ≤ R.
pub fn singular_integral(pivot: Vec2, v_j: Vec2, radius: f64, samples: usize, seed: u64) -> ScanRow {
    let r = radius;
    let d = v_j - pivot;
    let (estimate, se) = mc(samples, seed, |rng| {
        // ∫dφ ∫db (R² − b²)/√((b − b0)² + d⊥²), b drawn ∝ 1/√((b − b0)² + d⊥²)
        let phi = 2.0 * PI * rng.random::<f64>();
        let nu = Vec2::from_angle(phi);
        let b0 = d.dot(nu.perp());
        let dperp = d.dot(nu).abs().max(1e-300);
        let lo = ((-r - b0) / dperp).asinh();
        let hi = ((r - b0) / dperp).asinh();
        let z = hi - lo;
        let b = b0 + dperp * (lo + z * rng.random::<f64>()).sinh();
        2.0 * PI * z * (r * r - b * b)
    });
    ScanRow { x: d.norm(), estimate, se }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularScan {
    pub rows: Vec<ScanRow>,
    /// Fit estimate ≈ c1 |log dist| + c2 over all rows.
    pub c1: f64,
    pub c2: f64,
    /// The same slope fitted on the first and second half of the scan.
    pub c1_first: f64,
    pub c1_second: f64,
}

/// Scan the singular integral over |v̄ − v_j| ∈ `dists` (direction e₁).
pub fn singular_integral_scan(pivot: Vec2, dists: &[f64], radius: f64, samples: usize, seed: u64) -> Result<SingularScan> {
    if dists.len() < 4 || dists.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::InvalidParam("need at least four positive distances".into()));
    }
    let rows: Vec<ScanRow> = dists
        .iter()
        .enumerate()
        .map(|(i, &x)| singular_integral(pivot, pivot + Vec2::new(x, 0.0), radius, samples, seed.wrapping_add(i as u64)))
        .collect();
    let lx: Vec<f64> = rows.iter().map(|r| r.x.ln().abs()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.estimate).collect();
    let (c2, c1) = linear_fit(&lx, &y);
    let h = rows.len() / 2;
    let c1_first = linear_fit(&lx[..h], &y[..h]).1;
    let c1_second = linear_fit(&lx[h..], &y[h..]).1;
    Ok(SingularScan { rows, c1, c2, c1_first, c1_second })
}
