//! Cumulant decomposition of symmetric functions on a finite state space.
//!
//! A tensor of order m stores the *relative* density F = f/M^{⊗m} on
//! {0..d-1}^m (first slot most significant). Marginals of f correspond to
//! contracting trailing slots of F against M.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Largest tensor handled densely.
pub const MAX_ENTRIES: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteModel {
    pub d: usize,
    pub weights: Vec<f64>,
    pub n: usize,
}

impl DiscreteModel {
    pub fn new(weights: Vec<f64>, n: usize) -> Result<Self> {
        let d = weights.len();
        if d == 0 || n == 0 {
            return Err(Error::InvalidParam("need d ≥ 1 states and N ≥ 1 particles".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidParam("state weights must be positive".into()));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-14 {
            return Err(Error::InvalidParam(format!("state weights sum to {s}, not 1")));
        }
        if (d as f64).powi(n as i32) > MAX_ENTRIES as f64 {
            return Err(Error::InvalidParam(format!("d^N = {d}^{n} exceeds the dense cap {MAX_ENTRIES}")));
        }
        Ok(DiscreteModel { d, weights, n })
    }

    /// Random positive weights normalised to 1.
    pub fn random<R: Rng + ?Sized>(d: usize, n: usize, rng: &mut R) -> Result<Self> {
        let raw: Vec<f64> = (0..d).map(|_| 0.2 + rng.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        let mut w: Vec<f64> = raw.iter().map(|x| x / s).collect();
        // put the rounding residue on the largest weight so the sum is 1 to the last bit
        let resid = 1.0 - w.iter().sum::<f64>();
        let imax = (0..d).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
        w[imax] += resid;
        Self::new(w, n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricTensor {
    pub order: usize,
    pub d: usize,
    pub values: Vec<f64>,
}

impl SymmetricTensor {
    pub fn zeros(order: usize, d: usize) -> Self {
        SymmetricTensor { order, d, values: vec![0.0; d.pow(order as u32)] }
    }

    /// Tensor with values f(z_1, …, z_m); `f` must be symmetric.
    pub fn from_fn(order: usize, d: usize, f: impl Fn(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(order, d);
        let mut digits = vec![0usize; order];
        for idx in 0..t.values.len() {
            decode(idx, d, &mut digits);
            t.values[idx] = f(&digits);
        }
        t
    }

    /// Random symmetric tensor with i.i.d. uniform(−1,1) values per multiset.
    pub fn random<R: Rng + ?Sized>(order: usize, d: usize, rng: &mut R) -> Self {
        let mut t = Self::zeros(order, d);
        let mut digits = vec![0usize; order];
        for idx in 0..t.values.len() {
            decode(idx, d, &mut digits);
            digits.sort_unstable();
            let canon = encode(&digits, d);
            t.values[idx] = if canon == idx { rng.random::<f64>() * 2.0 - 1.0 } else { t.values[canon] };
        }
        t
    }

    #[inline]
    pub fn get(&self, z: &[usize]) -> f64 {
        self.values[encode(z, self.d)]
    }

    /// Σ F · M^{⊗m}.
    pub fn mean(&self, m: &DiscreteModel) -> f64 {
        let mut t = self.clone();
        while t.order > 0 {
            t = contract_last(&t, &m.weights);
        }
        t.values[0]
    }

    /// Subtract the M-mean so that the tensor is mean-zero.
    pub fn centered(mut self, m: &DiscreteModel) -> Self {
        let mu = self.mean(m);
        for v in &mut self.values {
            *v -= mu;
        }
        self
    }

    /// Squared L²(M^{⊗m}) norm.
    pub fn norm2(&self, m: &DiscreteModel) -> f64 {
        let sq = SymmetricTensor { order: self.order, d: self.d, values: self.values.iter().map(|v| v * v).collect() };
        sq.mean(m)
    }

    /// Largest |F(σZ) − F(Z)| over adjacent transpositions.
    pub fn symmetry_defect(&self) -> f64 {
        let mut digits = vec![0usize; self.order];
        let mut worst: f64 = 0.0;
        for idx in 0..self.values.len() {
            decode(idx, self.d, &mut digits);
            for p in 0..self.order.saturating_sub(1) {
                digits.swap(p, p + 1);
                worst = worst.max((self.values[encode(&digits, self.d)] - self.values[idx]).abs());
                digits.swap(p, p + 1);
            }
        }
        worst
    }

    pub fn linear_combination(a: f64, x: &Self, b: f64, y: &Self) -> Self {
        SymmetricTensor {
            order: x.order,
            d: x.d,
            values: x.values.iter().zip(&y.values).map(|(u, v)| a * u + b * v).collect(),
        }
    }
}

#[inline]
fn decode(mut idx: usize, d: usize, out: &mut [usize]) {
    for slot in out.iter_mut().rev() {
        *slot = idx % d;
        idx /= d;
    }
}

#[inline]
fn encode(z: &[usize], d: usize) -> usize {
    z.iter().fold(0, |acc, &x| acc * d + x)
}

fn contract_last(t: &SymmetricTensor, w: &[f64]) -> SymmetricTensor {
    let d = t.d;
    let values = t.values.chunks_exact(d).map(|c| c.iter().zip(w).map(|(a, b)| a * b).sum()).collect();
    SymmetricTensor { order: t.order - 1, d, values }
}

fn check(f: &SymmetricTensor, m: &DiscreteModel) -> Result<()> {
    if f.d != m.d {
        return Err(Error::InvalidParam(format!("tensor has d = {}, model d = {}", f.d, m.d)));
    }
    Ok(())
}

/// Marginal of order s (relative density), contracting slots s+1..N against M.
pub fn marginal(f: &SymmetricTensor, s: usize, m: &DiscreteModel) -> Result<SymmetricTensor> {
    check(f, m)?;
    if s > f.order {
        return Err(Error::InvalidParam(format!("marginal order {s} > tensor order {}", f.order)));
    }
    let mut t = f.clone();
    while t.order > s {
        t = contract_last(&t, &m.weights);
    }
    Ok(t)
}

/// Cumulant of order m by inclusion–exclusion over subsets of {1..m}:
/// g^m(Z_m) = Σ_{k=1}^m (−1)^{m−k} Σ_{|σ|=k} F^{(k)}(Z_σ).
pub fn cumulant(f: &SymmetricTensor, order: usize, m: &DiscreteModel) -> Result<SymmetricTensor> {
    check(f, m)?;
    if order == 0 || order > f.order {
        return Err(Error::InvalidParam(format!("cumulant order must be in 1..={}", f.order)));
    }
    let marg: Vec<SymmetricTensor> = (0..=order).map(|k| marginal(f, k, m)).collect::<Result<_>>()?;
    Ok(cumulant_from_marginals(&marg, order, f.d))
}

fn cumulant_from_marginals(marg: &[SymmetricTensor], order: usize, d: usize) -> SymmetricTensor {
    let mut out = SymmetricTensor::zeros(order, d);
    let mut digits = vec![0usize; order];
    for idx in 0..out.values.len() {
        decode(idx, d, &mut digits);
        let mut acc = 0.0;
        for mask in 1u32..(1u32 << order) {
            let k = mask.count_ones() as usize;
            let mut sub = 0usize;
            for (p, &z) in digits.iter().enumerate() {
                if mask & (1 << p) != 0 {
                    sub = sub * d + z;
                }
            }
            let v = marg[k].values[sub];
            if (order - k) % 2 == 0 {
                acc += v;
            } else {
                acc -= v;
            }
        }
        out.values[idx] = acc;
    }
    out
}

/// All cumulants g^1..g^N of a tensor of order N.
pub fn all_cumulants(f: &SymmetricTensor, m: &DiscreteModel) -> Result<Vec<SymmetricTensor>> {
    check(f, m)?;
    let marg: Vec<SymmetricTensor> = (0..=f.order).map(|k| marginal(f, k, m)).collect::<Result<_>>()?;
    Ok((1..=f.order).map(|k| cumulant_from_marginals(&marg, k, f.d)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// max |F − Σ_m Σ_σ g^m(Z_σ)|
    pub reconstruction_err: f64,
    /// max over m, slots and remaining indices of |Σ_j M_j g^m(…j…)|
    pub orthogonality_err: f64,
    /// |Σ_m C(N,m)‖g^m‖² − ‖F‖²|
    pub parseval_err: f64,
    /// max_m (‖g^m‖² − ‖F‖²/C(N,m)), clipped at 0
    pub bound_violation: f64,
    /// max_{m≥2} max |g^m|
    pub higher_order_max: f64,
}

impl IdentityReport {
    pub fn max_error(&self) -> f64 {
        self.reconstruction_err.max(self.orthogonality_err).max(self.parseval_err).max(self.bound_violation)
    }
}

pub fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Check reconstruction, orthogonality, the norm identity and the binomial bound.
pub fn verify_identities(f: &SymmetricTensor, m: &DiscreteModel) -> Result<IdentityReport> {
    check(f, m)?;
    let n = f.order;
    if (f.values.len() as f64) * 2f64.powi(n as i32) > 4e8 {
        return Err(Error::InvalidParam("tensor too large for exhaustive reconstruction check".into()));
    }
    let mean = f.mean(m);
    if mean.abs() > 1e-12 * f.values.iter().map(|v| v.abs()).fold(1.0, f64::max) {
        return Err(Error::Precondition(format!("tensor is not mean-zero (mean {mean:.3e})")));
    }
    let g = all_cumulants(f, m)?;
    let d = f.d;

    let mut reconstruction_err: f64 = 0.0;
    let mut digits = vec![0usize; n];
    for idx in 0..f.values.len() {
        decode(idx, d, &mut digits);
        let mut acc = 0.0;
        for mask in 1u32..(1u32 << n) {
            let k = mask.count_ones() as usize;
            let mut sub = 0usize;
            for (p, &z) in digits.iter().enumerate() {
                if mask & (1 << p) != 0 {
                    sub = sub * d + z;
                }
            }
            acc += g[k - 1].values[sub];
        }
        reconstruction_err = reconstruction_err.max((acc - f.values[idx]).abs());
    }

    let mut orthogonality_err: f64 = 0.0;
    for gm in &g {
        let order = gm.order;
        let mut dg = vec![0usize; order];
        for slot in 0..order {
            let stride = d.pow((order - 1 - slot) as u32);
            for idx in 0..gm.values.len() {
                decode(idx, d, &mut dg);
                if dg[slot] != 0 {
                    continue;
                }
                let s: f64 = (0..d).map(|j| m.weights[j] * gm.values[idx + j * stride]).sum();
                orthogonality_err = orthogonality_err.max(s.abs());
            }
        }
    }

    let fn2 = f.norm2(m);
    let mut total = 0.0;
    let mut bound_violation: f64 = 0.0;
    let mut higher_order_max: f64 = 0.0;
    for (k, gm) in g.iter().enumerate() {
        let c = binomial(n, k + 1);
        let g2 = gm.norm2(m);
        total += c * g2;
        bound_violation = bound_violation.max(g2 - fn2 / c);
        if k >= 1 {
            higher_order_max = gm.values.iter().fold(higher_order_max, |a, v| a.max(v.abs()));
        }
    }
    Ok(IdentityReport {
        reconstruction_err,
        orthogonality_err,
        parseval_err: (total - fn2).abs(),
        bound_violation: bound_violation.max(0.0),
        higher_order_max,
    })
}

/// Relative density of the product-form datum M^{⊗N} Σ_i g(z_i), with g
/// centred so that Σ_j M_j g_j = 0. Returns the tensor and the centred g.
pub fn product_form(g: &[f64], m: &DiscreteModel) -> (SymmetricTensor, Vec<f64>) {
    let mean: f64 = g.iter().zip(&m.weights).map(|(a, w)| a * w).sum();
    let gc: Vec<f64> = g.iter().map(|a| a - mean).collect();
    let gg = gc.clone();
    (SymmetricTensor::from_fn(m.n, m.d, move |z| z.iter().map(|&j| gg[j]).sum()), gc)
}
