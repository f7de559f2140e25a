//! Exact per-mode solutions of the acoustic and Stokes–Fourier systems.
//!
//! Fields are stored as Fourier coefficients of (ρ, u, θ) on T²; every
//! mode evolves independently by a closed-form matrix exponential.

use crate::error::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

type C = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HydroMode {
    pub k: [i32; 2],
    pub rho: C,
    pub u: [C; 2],
    pub theta: C,
}

impl HydroMode {
    pub fn new(k: [i32; 2]) -> Self {
        let z = C::new(0.0, 0.0);
        HydroMode { k, rho: z, u: [z, z], theta: z }
    }

    /// Physical wave vector 2πk.
    pub fn wavevector(&self) -> [f64; 2] {
        [2.0 * PI * self.k[0] as f64, 2.0 * PI * self.k[1] as f64]
    }

    fn energy(&self) -> f64 {
        self.rho.norm_sqr() + self.u[0].norm_sqr() + self.u[1].norm_sqr() + self.theta.norm_sqr()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HydroFields {
    pub beta: f64,
    pub modes: Vec<HydroMode>,
    /// Viscosity and conductivity (used by the Stokes–Fourier evolution).
    pub mu: Option<f64>,
    pub kappa: Option<f64>,
}

impl HydroFields {
    pub fn new(beta: f64) -> Self {
        HydroFields { beta, modes: Vec::new(), mu: None, kappa: None }
    }

    pub fn mode(&self, k: [i32; 2]) -> Option<&HydroMode> {
        self.modes.iter().find(|m| m.k == k)
    }

    pub fn mode_mut(&mut self, k: [i32; 2]) -> &mut HydroMode {
        if let Some(i) = self.modes.iter().position(|m| m.k == k) {
            &mut self.modes[i]
        } else {
            self.modes.push(HydroMode::new(k));
            self.modes.last_mut().unwrap()
        }
    }

    /// Add a real field component `a·cos(2πk·x)` given as the pair of
    /// conjugate modes ±k with coefficient a/2.
    pub fn add_cosine(&mut self, k: [i32; 2], f: impl Fn(&mut HydroMode, C)) {
        let half = C::new(0.5, 0.0);
        if k == [0, 0] {
            f(self.mode_mut(k), C::new(1.0, 0.0));
        } else {
            f(self.mode_mut(k), half);
            f(self.mode_mut([-k[0], -k[1]]), half);
        }
    }

    /// Largest violation of g(−k) = conj g(k).
    pub fn hermitian_defect(&self) -> f64 {
        let map: BTreeMap<[i32; 2], &HydroMode> = self.modes.iter().map(|m| (m.k, m)).collect();
        let mut worst: f64 = 0.0;
        for m in &self.modes {
            let z = C::new(0.0, 0.0);
            let (r, u0, u1, t) = match map.get(&[-m.k[0], -m.k[1]]) {
                Some(o) => (o.rho, o.u[0], o.u[1], o.theta),
                None => (z, z, z, z),
            };
            worst = worst
                .max((m.rho - r.conj()).norm())
                .max((m.u[0] - u0.conj()).norm())
                .max((m.u[1] - u1.conj()).norm())
                .max((m.theta - t.conj()).norm());
        }
        worst
    }

    /// max_k |k·u_hat(k)| / |k|.
    pub fn divergence_defect(&self) -> f64 {
        self.modes
            .iter()
            .filter(|m| m.k != [0, 0])
            .map(|m| {
                let (a, b) = (m.k[0] as f64, m.k[1] as f64);
                (m.u[0] * a + m.u[1] * b).norm() / a.hypot(b)
            })
            .fold(0.0, f64::max)
    }

    /// Σ_k (|ρ̂|² + |û|² + |θ̂|²).
    pub fn energy(&self) -> f64 {
        self.modes.iter().map(|m| m.energy()).sum()
    }

    pub fn velocity_energy(&self) -> f64 {
        self.modes.iter().map(|m| m.u[0].norm_sqr() + m.u[1].norm_sqr()).sum()
    }

    /// Write as CSV: k1,k2 followed by re/im of ρ, u₁, u₂, θ.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k1,k2,rho_re,rho_im,u1_re,u1_im,u2_re,u2_im,theta_re,theta_im")?;
        let mut modes = self.modes.clone();
        modes.sort_by_key(|m| m.k);
        for m in modes {
            writeln!(
                w,
                "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                m.k[0], m.k[1], m.rho.re, m.rho.im, m.u[0].re, m.u[0].im, m.u[1].re, m.u[1].im, m.theta.re, m.theta.im
            )?;
        }
        Ok(())
    }
}

/// Evolve the acoustic system ∂ρ + ∇·u/√β = 0, ∂u + ∇(ρ+θ)/√β = 0,
/// ∂θ + ∇·u/√β = 0 exactly by a duration `t` (any sign).
pub fn acoustic_evolve(fields: &HydroFields, t: f64) -> HydroFields {
    let mut out = fields.clone();
    let c = 1.0 / fields.beta.sqrt();
    let i = C::new(0.0, 1.0);
    for m in &mut out.modes {
        if m.k == [0, 0] {
            continue;
        }
        let kv = m.wavevector();
        let kn = kv[0].hypot(kv[1]);
        let e = [kv[0] / kn, kv[1] / kn];
        let ul = m.u[0] * e[0] + m.u[1] * e[1];
        let ut = -m.u[0] * e[1] + m.u[1] * e[0];
        let s = m.rho + m.theta;
        let d = m.rho - m.theta;
        // s'' = −2c²|K|² s, ω = √2 c |K|
        let omega = 2f64.sqrt() * c * kn;
        let (sn, cs) = (omega * t).sin_cos();
        let r2 = 2f64.sqrt();
        let s_t = s * cs - i * ul * (r2 * sn);
        let ul_t = ul * cs - i * s * (sn / r2);
        m.rho = (s_t + d) * 0.5;
        m.theta = (s_t - d) * 0.5;
        m.u = [ul_t * e[0] - ut * e[1], ul_t * e[1] + ut * e[0]];
    }
    out
}

/// Evolve the Stokes–Fourier system by τ: each mode decays with rate
/// μ|2πk|²/√β (velocity) and κ|2πk|²/√β (temperature).
pub fn stokes_evolve(fields: &HydroFields, tau: f64) -> Result<HydroFields> {
    let mu = fields.mu.ok_or_else(|| Error::InvalidParam("Stokes evolution needs mu".into()))?;
    let kappa = fields.kappa.ok_or_else(|| Error::InvalidParam("Stokes evolution needs kappa".into()))?;
    let div = fields.divergence_defect();
    if div > 1e-10 {
        return Err(Error::InvalidParam(format!("velocity field not divergence-free: defect {div:.3e}")));
    }
    let mut out = fields.clone();
    let sb = fields.beta.sqrt();
    for m in &mut out.modes {
        let kv = m.wavevector();
        let k2 = kv[0] * kv[0] + kv[1] * kv[1];
        let du = (-mu * k2 * tau / sb).exp();
        let dt = (-kappa * k2 * tau / sb).exp();
        m.u = [m.u[0] * du, m.u[1] * du];
        m.theta *= dt;
    }
    Ok(out)
}

/// ρ̂ − θ̂ per mode, invariant under the acoustic flow.
pub fn conserved_acoustic_quantity(fields: &HydroFields) -> Vec<([i32; 2], C)> {
    fields.modes.iter().map(|m| (m.k, m.rho - m.theta)).collect()
}

/// Leray projection: u_hat ← u_hat − k(k·u_hat)/|k|² for k ≠ 0.
pub fn leray_project(fields: &HydroFields) -> HydroFields {
    let mut out = fields.clone();
    for m in &mut out.modes {
        if m.k == [0, 0] {
            continue;
        }
        let (a, b) = (m.k[0] as f64, m.k[1] as f64);
        let k2 = a * a + b * b;
        let kd = (m.u[0] * a + m.u[1] * b) / k2;
        m.u = [m.u[0] - kd * a, m.u[1] - kd * b];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stokes_single_mode_amplitude() {
        let mut f = HydroFields::new(1.0);
        f.mu = Some(0.5);
        f.kappa = Some(0.5);
        f.mode_mut([1, 0]).u = [C::new(0.0, 0.0), C::new(1.0, 0.0)];
        let g = stokes_evolve(&f, 0.1).unwrap();
        let a = g.mode([1, 0]).unwrap().u[1].re;
        assert!((a - (-0.5 * 4.0 * PI * PI * 0.1f64).exp()).abs() < 1e-15);
        assert!((a - 0.1388).abs() < 2e-4);
    }
}
