//! Linearized Boltzmann operator for hard disks on a truncated velocity
//! grid, with a spectral-in-space solver and transport coefficients.

mod field;
mod operator;

pub use field::{evolve, semigroup_covariance, semigroup_covariance_series, KineticEvolveOptions, KineticField, KineticTrajectory, Scaling};
pub use operator::{transport_coefficients, CollisionOperator, TransportCoefficients};

use crate::error::{Error, Result};
use crate::ensemble::maxwellian;
use crate::quadrature::gauss_legendre_on;
use crate::torus::Vec2;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Truncation radius (times 1/√β) used by default; 5 loses ~4e-6 of the
/// Maxwellian mass on a square grid.
pub const DEFAULT_VMAX: f64 = 5.5;
pub const DEFAULT_NANGLE: usize = 64;

/// Parameters that determine a velocity grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_v: usize,
    pub v_max: f64,
    pub n_angle: usize,
    pub beta: f64,
}

impl GridSpec {
    pub fn new(n_v: usize, beta: f64) -> Self {
        GridSpec { n_v, v_max: DEFAULT_VMAX / beta.sqrt(), n_angle: DEFAULT_NANGLE, beta }
    }
}

/// Uniform tensor grid on [−v_max, v_max]² with trapezoid weights times M_β.
#[derive(Debug, Clone)]
pub struct VelocityGrid {
    pub spec: GridSpec,
    pub h: f64,
    pub nodes: Vec<Vec2>,
    /// Quadrature weights including the Maxwellian factor.
    pub weights: Vec<f64>,
}

impl VelocityGrid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        let GridSpec { n_v, v_max, n_angle, beta } = spec;
        if n_v < 4 || n_v % 2 != 0 {
            return Err(Error::InvalidParam(format!("n_v must be even and ≥ 4, got {n_v}")));
        }
        if n_angle < 4 || n_angle % 2 != 0 {
            return Err(Error::InvalidParam(format!("n_angle must be even and ≥ 4, got {n_angle}")));
        }
        if !(beta > 0.0) || !(v_max > 0.0) {
            return Err(Error::InvalidParam("beta and v_max must be positive".into()));
        }
        let h = 2.0 * v_max / (n_v - 1) as f64;
        let x: Vec<f64> = (0..n_v).map(|i| -v_max + h * i as f64).collect();
        let w1: Vec<f64> = (0..n_v).map(|i| if i == 0 || i == n_v - 1 { h / 2.0 } else { h }).collect();
        let mut nodes = Vec::with_capacity(n_v * n_v);
        let mut weights = Vec::with_capacity(n_v * n_v);
        for i in 0..n_v {
            for j in 0..n_v {
                let v = Vec2::new(x[i], x[j]);
                nodes.push(v);
                weights.push(w1[i] * w1[j] * maxwellian(v, beta));
            }
        }
        let g = VelocityGrid { spec, h, nodes, weights };
        let mass = g.mass();
        if !(mass >= 1.0 - 1e-6 && mass <= 1.0 + 1e-12) {
            return Err(Error::Resolution(format!("grid captures Maxwellian mass {mass:.9}, outside [1-1e-6, 1]")));
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights.iter().zip(f).zip(g).map(|((w, a), b)| w * a * b).sum()
    }

    pub fn norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).sqrt()
    }

    pub fn map(&self, f: impl Fn(Vec2) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&v| f(v)).collect()
    }

    /// Orthonormal hydrodynamic basis 1, √β v₁, √β v₂, (β|v|² − 2)/2
    /// (orthonormal for the exact Maxwellian).
    pub fn hydro_basis(&self) -> [Vec<f64>; 4] {
        let b = self.spec.beta;
        let sb = b.sqrt();
        [
            self.map(|_| 1.0),
            self.map(|v| sb * v.x),
            self.map(|v| sb * v.y),
            self.map(|v| (b * v.norm2() - 2.0) / 2.0),
        ]
    }

    /// Bilinear interpolation stencil at p, extrapolating from the nearest
    /// cell outside the grid. Weights sum to 1 and reproduce affine functions.
    #[inline]
    pub fn stencil(&self, p: Vec2) -> ([usize; 4], [f64; 4]) {
        let n = self.spec.n_v;
        let fi = (p.x + self.spec.v_max) / self.h;
        let fj = (p.y + self.spec.v_max) / self.h;
        let i0 = (fi.floor() as i64).clamp(0, n as i64 - 2) as usize;
        let j0 = (fj.floor() as i64).clamp(0, n as i64 - 2) as usize;
        let a = fi - i0 as f64;
        let b = fj - j0 as f64;
        (
            [i0 * n + j0, (i0 + 1) * n + j0, i0 * n + j0 + 1, (i0 + 1) * n + j0 + 1],
            [(1.0 - a) * (1.0 - b), a * (1.0 - b), (1.0 - a) * b, a * b],
        )
    }

    pub fn interpolate(&self, f: &[f64], p: Vec2) -> f64 {
        let (idx, w) = self.stencil(p);
        (0..4).map(|k| w[k] * f[idx[k]]).sum()
    }
}

/// a(|v|) = ∫ M_β(v₁) ((v₁ − v)·ν)₊ dν dv₁ = 2 ∫ M_β(v₁)|v − v₁| dv₁, by polar
/// quadrature centred at v.
pub fn collision_frequency(v: Vec2, beta: f64) -> f64 {
    let s = 1.0 / beta.sqrt();
    let vn = v.norm();
    let lo = (vn - 12.0 * s).max(0.0);
    let hi = vn + 12.0 * s;
    let (r, wr) = gauss_legendre_on(160, lo, hi);
    let nphi = 128;
    let mut acc = 0.0;
    for (ri, wi) in r.iter().zip(&wr) {
        let mut ang = 0.0;
        for m in 0..nphi {
            let e = Vec2::from_angle(2.0 * PI * m as f64 / nphi as f64);
            ang += maxwellian(v + *ri * e, beta);
        }
        acc += wi * ri * ri * ang * (2.0 * PI / nphi as f64);
    }
    2.0 * acc
}
