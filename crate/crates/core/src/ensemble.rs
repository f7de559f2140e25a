//! Gibbs sampling with hard-core exclusion and the signed initial datum
//! realised as (sample, weight) pairs.

use crate::error::{Error, Result};
use crate::quadrature::gauss_hermite_normal;
use crate::rng::{stream_rng, Rng};
use crate::sim::ParticleConfig;
use crate::torus::{min_image_disp, TorusPoint, Vec2, Velocity};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

/// Area fraction above which sampling is refused.
pub const MAX_AREA_FRACTION: f64 = 0.3;
/// Whole-configuration acceptance below which sequential insertion is used.
pub const REJECTION_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n: usize,
    pub beta: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn new(n: usize, beta: f64, alpha: f64, seed: u64) -> Result<Self> {
        let s = EnsembleSpec { n, beta, alpha, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParam("N must be ≥ 1".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParam(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParam(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.eps() >= 0.5 {
            return Err(Error::InvalidParam(format!("eps = alpha/N = {} must be < 1/2", self.eps())));
        }
        Ok(())
    }

    /// Disk diameter ε = α/N.
    pub fn eps(&self) -> f64 {
        self.alpha / self.n as f64
    }

    /// Fraction of the torus covered by the disks, Nπε²/4.
    pub fn area_fraction(&self) -> f64 {
        self.n as f64 * PI * self.eps().powi(2) / 4.0
    }

    /// Probability that N uniform disks have no overlap, to leading order.
    pub fn expected_acceptance(&self) -> f64 {
        let n = self.n as f64;
        (-0.5 * n * (n - 1.0) * PI * self.eps().powi(2)).exp()
    }
}

/// Maxwellian velocity: independent N(0, 1/β) components.
pub fn sample_maxwellian<R: rand::Rng + ?Sized>(beta: f64, rng: &mut R) -> Velocity {
    let s = 1.0 / beta.sqrt();
    let a: f64 = StandardNormal.sample(rng);
    let b: f64 = StandardNormal.sample(rng);
    Vec2::new(a * s, b * s)
}

/// M_β(v) = (β/2π) e^{−β|v|²/2}.
pub fn maxwellian(v: Vec2, beta: f64) -> f64 {
    beta / (2.0 * PI) * (-0.5 * beta * v.norm2()).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GibbsStrategy {
    WholeConfiguration,
    SequentialInsertion,
}

/// Statistics of one Gibbs draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsDraw {
    pub strategy: GibbsStrategy,
    /// Number of full configurations attempted (≥ 1).
    pub attempts: u64,
}

/// Uniform grid hash for overlap checks (cell side ≥ eps).
struct Hash {
    nc: usize,
    cells: Vec<Vec<u32>>,
}

impl Hash {
    fn new(eps: f64, n: usize) -> Self {
        let nc = ((1.0 / eps).floor() as usize).clamp(1, ((n as f64).sqrt() as usize).max(1) * 2);
        Hash { nc, cells: vec![Vec::new(); nc * nc] }
    }
    fn clear(&mut self) {
        for c in &mut self.cells {
            c.clear();
        }
    }
    fn cell(&self, p: &TorusPoint) -> (usize, usize) {
        let nc = self.nc;
        (((p.x() * nc as f64) as usize).min(nc - 1), ((p.y() * nc as f64) as usize).min(nc - 1))
    }
    fn insert(&mut self, p: &TorusPoint, k: usize) {
        let (cx, cy) = self.cell(p);
        self.cells[cx * self.nc + cy].push(k as u32);
    }
    /// Does `p` come closer than `eps` to any stored point?
    fn hits(&self, p: &TorusPoint, pts: &[TorusPoint], eps: f64) -> bool {
        let nc = self.nc;
        let (cx, cy) = self.cell(p);
        let e2 = eps * eps;
        if nc < 3 {
            return self.cells.iter().flatten().any(|&m| min_image_disp(p, &pts[m as usize]).norm2() < e2);
        }
        for dx in [nc - 1, 0, 1] {
            for dy in [nc - 1, 0, 1] {
                for &m in &self.cells[((cx + dx) % nc) * nc + (cy + dy) % nc] {
                    if min_image_disp(p, &pts[m as usize]).norm2() < e2 {
                        return true;
                    }
                }
            }
        }
        false
    }
}

/// Draw a configuration from the Gibbs measure M_{N,β}.
pub fn sample_gibbs(spec: &EnsembleSpec, rng: &mut Rng) -> Result<ParticleConfig> {
    sample_gibbs_with_stats(spec, rng).map(|(c, _)| c)
}

/// As [`sample_gibbs`], also reporting the strategy and attempt count.
///
/// Both strategies are exact: sequential insertion restarts from scratch
/// on the first overlap, which accepts exactly the same configurations as
/// whole-configuration rejection but fails earlier.
pub fn sample_gibbs_with_stats(spec: &EnsembleSpec, rng: &mut Rng) -> Result<(ParticleConfig, GibbsDraw)> {
    spec.validate()?;
    if spec.area_fraction() >= MAX_AREA_FRACTION {
        return Err(Error::DensityTooHigh(format!(
            "area fraction {:.3} ≥ {MAX_AREA_FRACTION}",
            spec.area_fraction()
        )));
    }
    let n = spec.n;
    let eps = spec.eps();
    let acc = spec.expected_acceptance();
    let strategy =
        if acc >= REJECTION_FLOOR { GibbsStrategy::WholeConfiguration } else { GibbsStrategy::SequentialInsertion };
    let max_attempts = ((50.0 / acc.max(1e-300)).min(1e6) as u64).max(1000);
    let mut hash = Hash::new(eps, n);
    let mut pts: Vec<TorusPoint> = Vec::with_capacity(n);
    let mut attempts = 0u64;
    loop {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::DensityTooHigh(format!(
                "no admissible configuration after {max_attempts} attempts (expected acceptance {acc:.2e})"
            )));
        }
        pts.clear();
        hash.clear();
        let mut ok = true;
        match strategy {
            GibbsStrategy::WholeConfiguration => {
                for _ in 0..n {
                    pts.push(TorusPoint::new(rng.random::<f64>(), rng.random::<f64>()));
                }
                for k in 0..n {
                    if hash.hits(&pts[k], &pts, eps) {
                        ok = false;
                        break;
                    }
                    hash.insert(&pts[k], k);
                }
            }
            GibbsStrategy::SequentialInsertion => {
                for k in 0..n {
                    let p = TorusPoint::new(rng.random::<f64>(), rng.random::<f64>());
                    if hash.hits(&p, &pts, eps) {
                        ok = false;
                        break;
                    }
                    pts.push(p);
                    hash.insert(&p, k);
                }
            }
        }
        if ok {
            break;
        }
    }
    let velocities = (0..n).map(|_| sample_maxwellian(spec.beta, rng)).collect();
    let cfg = ParticleConfig { positions: pts, velocities, eps, time: 0.0 };
    Ok((cfg, GibbsDraw { strategy, attempts }))
}

/// Gibbs sample for replica `r` of `spec`, on its own RNG stream.
pub fn sample_replica(spec: &EnsembleSpec, replica: u64) -> Result<ParticleConfig> {
    let mut rng = stream_rng(spec.seed, replica);
    sample_gibbs(spec, &mut rng)
}

/// Velocity basis of the registry (hydrodynamic basis).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// 1
    One,
    /// √β v₁
    V1,
    /// √β v₂
    V2,
    /// (β|v|² − 2)/2
    Energy,
}

impl Basis {
    #[inline]
    pub fn eval(self, v: Vec2, beta: f64) -> f64 {
        match self {
            Basis::One => 1.0,
            Basis::V1 => beta.sqrt() * v.x,
            Basis::V2 => beta.sqrt() * v.y,
            Basis::Energy => 0.5 * (beta * v.norm2() - 2.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    #[default]
    Cos,
    Sin,
}

/// Built-in single-particle function `trig(2π k·x) · basis(v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierModeFn {
    pub k: [i32; 2],
    pub basis: Basis,
    #[serde(default)]
    pub phase: Phase,
}

impl FourierModeFn {
    pub fn new(k: [i32; 2], basis: Basis) -> Self {
        FourierModeFn { k, basis, phase: Phase::Cos }
    }
    #[inline]
    pub fn spatial(&self, x: &TorusPoint) -> f64 {
        let a = 2.0 * PI * (self.k[0] as f64 * x.x() + self.k[1] as f64 * x.y());
        match self.phase {
            Phase::Cos => a.cos(),
            Phase::Sin => a.sin(),
        }
    }
    #[inline]
    pub fn eval(&self, x: &TorusPoint, v: Vec2, beta: f64) -> f64 {
        self.spatial(x) * self.basis.eval(v, beta)
    }
    /// Exact mean under M_β dv dx.
    pub fn exact_mean(&self) -> f64 {
        let spatial_mean = match (self.k == [0, 0], self.phase) {
            (true, Phase::Cos) => 1.0,
            _ => 0.0,
        };
        let v_mean = if self.basis == Basis::One { 1.0 } else { 0.0 };
        spatial_mean * v_mean
    }
}

/// Linear combination of registry modes; the empty combination is g ≡ 0.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct G0 {
    pub terms: Vec<(f64, FourierModeFn)>,
}

impl G0 {
    pub fn zero() -> Self {
        G0 { terms: Vec::new() }
    }
    pub fn mode(k: [i32; 2], basis: Basis) -> Self {
        G0 { terms: vec![(1.0, FourierModeFn::new(k, basis))] }
    }
    pub fn scaled(mut self, c: f64) -> Self {
        for t in &mut self.terms {
            t.0 *= c;
        }
        self
    }
    pub fn plus(mut self, other: G0) -> Self {
        self.terms.extend(other.terms);
        self
    }
    #[inline]
    pub fn eval(&self, x: &TorusPoint, v: Vec2, beta: f64) -> f64 {
        self.terms.iter().map(|(c, f)| c * f.eval(x, v, beta)).sum()
    }
    pub fn exact_mean(&self) -> f64 {
        self.terms.iter().map(|(c, f)| c * f.exact_mean()).sum()
    }
}

type Evaluator = dyn Fn(&TorusPoint, Vec2) -> f64 + Send + Sync;

/// Test function h(x, v) for fluctuation fields and initial data.
#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    evaluator: Arc<Evaluator>,
    pub mean_zero: bool,
    /// Registry form, when the function comes from the built-in registry.
    pub registry: Option<G0>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction").field("name", &self.name).field("mean_zero", &self.mean_zero).finish()
    }
}

impl TestFunction {
    /// Wrap a closure; a function declared mean-zero is checked by quadrature (1e-8).
    pub fn custom<F>(name: &str, beta: f64, mean_zero: bool, f: F) -> Result<Self>
    where
        F: Fn(&TorusPoint, Vec2) -> f64 + Send + Sync + 'static,
    {
        let tf = TestFunction { name: name.to_string(), evaluator: Arc::new(f), mean_zero, registry: None };
        if mean_zero {
            let m = tf.quadrature_mean(beta);
            if m.abs() > 1e-8 {
                return Err(Error::InvalidParam(format!("test function '{name}' has mean {m:.3e}, not zero")));
            }
        }
        Ok(tf)
    }

    /// Registry function at inverse temperature `beta`, checked to be mean-zero.
    pub fn from_g0(name: &str, g0: &G0, beta: f64) -> Result<Self> {
        let g = g0.clone();
        let mut tf = Self::custom(name, beta, true, move |x, v| g.eval(x, v, beta))?;
        tf.registry = Some(g0.clone());
        Ok(tf)
    }

    pub fn zero() -> Self {
        TestFunction { name: "zero".into(), evaluator: Arc::new(|_, _| 0.0), mean_zero: true, registry: Some(G0::zero()) }
    }

    #[inline]
    pub fn eval(&self, x: &TorusPoint, v: Vec2) -> f64 {
        (self.evaluator)(x, v)
    }

    /// ∫∫ M_β h dv dx by a 32×32 trapezoid in x and 24×24 Gauss–Hermite in v.
    pub fn quadrature_mean(&self, beta: f64) -> f64 {
        let nx = 32;
        let (gv, gw) = gauss_hermite_normal(24);
        let s = 1.0 / beta.sqrt();
        let mut total = 0.0;
        for a in 0..nx {
            for b in 0..nx {
                let x = TorusPoint::new(a as f64 / nx as f64, b as f64 / nx as f64);
                let mut inner = 0.0;
                for (p, wp) in gv.iter().zip(&gw) {
                    for (q, wq) in gv.iter().zip(&gw) {
                        inner += wp * wq * self.eval(&x, Vec2::new(p * s, q * s));
                    }
                }
                total += inner;
            }
        }
        total / (nx * nx) as f64
    }
}

/// Σ_i g0(x_i, v_i): the weight attached to a Gibbs sample.
pub fn perturbation_weight(config: &ParticleConfig, g0: &TestFunction) -> f64 {
    config.positions.iter().zip(&config.velocities).map(|(x, &v)| g0.eval(x, v)).sum()
}

/// A Gibbs sample carrying the signed weight Σ_i g0(z_i) of its initial state.
#[derive(Debug, Clone)]
pub struct WeightedSample {
    pub config: ParticleConfig,
    pub weight: f64,
}

impl WeightedSample {
    pub fn new(config: ParticleConfig, g0: &TestFunction) -> Self {
        let weight = perturbation_weight(&config, g0);
        WeightedSample { config, weight }
    }
}

/// Widom-type estimate of the probability that a uniformly placed extra
/// disk avoids all disks, i.e. of Z_{N+1}/Z_N. Returns (estimate, SE)
/// over the supplied samples, `trials` insertions per sample.
pub fn insertion_probability(samples: &[ParticleConfig], trials: usize, rng: &mut Rng) -> (f64, f64) {
    if samples.is_empty() || samples.iter().all(|c| c.is_empty()) {
        return (1.0, 0.0);
    }
    let per: Vec<f64> = samples
        .iter()
        .map(|c| {
            if c.is_empty() {
                return 1.0;
            }
            let mut hash = Hash::new(c.eps, c.len());
            for (k, p) in c.positions.iter().enumerate() {
                hash.insert(p, k);
            }
            let mut free = 0usize;
            for _ in 0..trials {
                let p = TorusPoint::new(rng.random::<f64>(), rng.random::<f64>());
                if !hash.hits(&p, &c.positions, c.eps) {
                    free += 1;
                }
            }
            free as f64 / trials as f64
        })
        .collect();
    crate::stats::mean_se(&per)
}
