//! Event-driven hard-disk dynamics on the unit torus.

mod engine;
mod io;

pub use engine::{evolve, Direction, EvolveOptions, Evolution, NeighborMode, RunDiagnostics};
pub use io::{read_events_jsonl, read_snapshot, write_events_jsonl, write_snapshot, Snapshot};

use crate::error::{Error, Result};
use crate::torus::{candidate_images, min_image_disp, TorusPoint, Vec2, Velocity};
use serde::{Deserialize, Serialize};

/// Roots with |Δv·ν| below this are grazing and are not collisions.
pub const GRAZING_TOL: f64 = 1e-12;

/// Full microstate of N disks of diameter `eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleConfig {
    pub positions: Vec<TorusPoint>,
    pub velocities: Vec<Velocity>,
    pub eps: f64,
    pub time: f64,
}

/// A binary collision; `nu = (x_i − x_j)/eps` at contact (pre-collisional).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    #[serde(rename = "t")]
    pub time: f64,
    pub i: usize,
    pub j: usize,
    pub nu: Vec2,
}

impl ParticleConfig {
    /// Build and validate (equal lengths, finite data, no overlaps beyond 1e-9·eps).
    pub fn new(positions: Vec<TorusPoint>, velocities: Vec<Velocity>, eps: f64, time: f64) -> Result<Self> {
        let c = ParticleConfig { positions, velocities, eps, time };
        c.validate()?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.len() != self.velocities.len() {
            return Err(Error::InvalidConfig(format!(
                "{} positions but {} velocities",
                self.positions.len(),
                self.velocities.len()
            )));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::InvalidConfig(format!("eps = {} outside (0, 1/2)", self.eps)));
        }
        if self.velocities.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite velocity".into()));
        }
        let (d, i, j) = self.min_pair_distance();
        if d < self.eps * (1.0 - 1e-9) {
            return Err(Error::InvalidConfig(format!(
                "particles {i} and {j} overlap: distance {d} < eps {}",
                self.eps
            )));
        }
        Ok(())
    }

    /// Smallest pairwise torus distance with the pair attaining it (∞ for N < 2).
    ///
    /// Exact whenever the minimum is below the hash-cell side (≥ eps);
    /// otherwise the returned distance is that lower bound.
    pub fn min_pair_distance(&self) -> (f64, usize, usize) {
        let n = self.len();
        let mut best = (f64::INFINITY, 0, 0);
        if n < 2 {
            return best;
        }
        // grid hash with cell side ≥ eps when it pays off
        let nc = ((1.0 / self.eps).floor() as usize).min((n as f64).sqrt() as usize + 1);
        if nc < 4 {
            for i in 0..n {
                for j in i + 1..n {
                    let d = min_image_disp(&self.positions[i], &self.positions[j]).norm();
                    if d < best.0 {
                        best = (d, i, j);
                    }
                }
            }
            return best;
        }
        let cell = |p: &TorusPoint| -> (usize, usize) {
            (((p.x() * nc as f64) as usize).min(nc - 1), ((p.y() * nc as f64) as usize).min(nc - 1))
        };
        let mut heads: Vec<Vec<usize>> = vec![Vec::new(); nc * nc];
        for (k, p) in self.positions.iter().enumerate() {
            let (cx, cy) = cell(p);
            heads[cx * nc + cy].push(k);
        }
        for (k, p) in self.positions.iter().enumerate() {
            let (cx, cy) = cell(p);
            for dx in [nc - 1, 0, 1] {
                for dy in [nc - 1, 0, 1] {
                    for &m in &heads[((cx + dx) % nc) * nc + (cy + dy) % nc] {
                        if m > k {
                            let d = min_image_disp(p, &self.positions[m]).norm();
                            if d < best.0 {
                                best = (d, k, m);
                            }
                        }
                    }
                }
            }
        }
        // cells wider than eps: any pair closer than eps is found; report ∞-free value
        if best.0.is_infinite() {
            best.0 = self.eps.max(1.0 / nc as f64);
        }
        best
    }

    /// ½ Σ |v_i|².
    pub fn kinetic_energy(&self) -> f64 {
        kinetic_energy(&self.velocities)
    }

    /// Σ v_i.
    pub fn total_momentum(&self) -> Vec2 {
        total_momentum(&self.velocities)
    }

    /// Reverse every velocity (time-reversal involution).
    pub fn flip_velocities(&mut self) {
        for v in &mut self.velocities {
            *v = -*v;
        }
    }
}

pub fn kinetic_energy(vel: &[Velocity]) -> f64 {
    0.5 * vel.iter().map(|v| v.norm2()).sum::<f64>()
}

pub fn total_momentum(vel: &[Velocity]) -> Vec2 {
    vel.iter().fold(Vec2::ZERO, |a, &v| a + v)
}

/// Specular reflection of the pair (v_i, v_j) across the contact normal `nu`.
pub fn apply_scattering(vi: Velocity, vj: Velocity, nu: Vec2) -> Result<(Velocity, Velocity)> {
    if (nu.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParam(format!("contact normal not unit: |nu| = {}", nu.norm())));
    }
    Ok(scatter_unchecked(vi, vj, nu))
}

#[inline]
pub(crate) fn scatter_unchecked(vi: Velocity, vj: Velocity, nu: Vec2) -> (Velocity, Velocity) {
    let c = (vi - vj).dot(nu);
    (vi - c * nu, vj + c * nu)
}

/// Earliest contact time τ ≥ 0 of two free disks with relative position `r`
/// and relative velocity `dv` (the root of |r + dv·τ| = eps on the approach
/// branch). Returns `Err(())` for a grazing root, `Ok(None)` for no root.
#[inline]
pub(crate) fn contact_time(r: Vec2, dv: Vec2, eps: f64) -> std::result::Result<Option<f64>, ()> {
    let b = r.dot(dv);
    if b >= 0.0 {
        return Ok(None);
    }
    let a = dv.norm2();
    let c = r.norm2() - eps * eps;
    let disc = b * b - a * c;
    if disc <= 0.0 {
        return if disc == 0.0 && a > 0.0 { Err(()) } else { Ok(None) };
    }
    let sq = disc.sqrt();
    // |Δv·ν| at contact equals sqrt(disc)/eps
    if sq < GRAZING_TOL * eps {
        return Err(());
    }
    if c <= 0.0 {
        // touching / overlapping by rounding while approaching: collide now
        return if -b >= GRAZING_TOL * r.norm() { Ok(Some(0.0)) } else { Err(()) };
    }
    Ok(Some(c / (-b + sq)))
}

/// Next collision of the pair within `horizon` over all periodic images.
///
/// Returns the event (time relative to now) with `nu` at contact.
pub fn predict_pair_collision(
    xi: &TorusPoint,
    vi: Velocity,
    xj: &TorusPoint,
    vj: Velocity,
    eps: f64,
    horizon: f64,
) -> Option<CollisionEvent> {
    let r0 = min_image_disp(xi, xj);
    let dv = vi - vj;
    let mut best: Option<(f64, Vec2)> = None;
    for q in candidate_images(r0, dv.norm(), horizon, eps) {
        let r = r0 + Vec2::new(q[0] as f64, q[1] as f64);
        if let Ok(Some(t)) = contact_time(r, dv, eps) {
            if t <= horizon && best.is_none_or(|(bt, _)| t < bt) {
                let c = r + dv * t;
                best = Some((t, c * (1.0 / c.norm())));
            }
        }
    }
    best.map(|(time, nu)| CollisionEvent { time, i: 0, j: 1, nu })
}
