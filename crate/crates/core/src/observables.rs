//! Fluctuation fields, equilibrium time covariances and weighted
//! one-particle marginals.

use crate::ensemble::{perturbation_weight, sample_replica, EnsembleSpec, TestFunction, WeightedSample};
use crate::error::{Error, Result};
use crate::sim::{self, Direction, EvolveOptions, ParticleConfig};
use crate::stats::jackknife_mean;
use crate::torus::Vec2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// ζ(h) = N^{−1/2} Σ_i h(x_i, v_i).
pub fn fluctuation_field(config: &ParticleConfig, h: &TestFunction) -> f64 {
    if config.is_empty() {
        return 0.0;
    }
    let s: f64 = config.positions.iter().zip(&config.velocities).map(|(x, &v)| h.eval(x, v)).sum();
    s / (config.len() as f64).sqrt()
}

/// Configurations of one Gibbs-initialised replica at each of `times`
/// (nondecreasing, ≥ 0), evolved forward with the hard-disk engine.
pub fn replica_snapshots(
    spec: &EnsembleSpec,
    replica: u64,
    times: &[f64],
    opts: &EvolveOptions,
) -> Result<Vec<ParticleConfig>> {
    check_times(times)?;
    let mut cfg = sample_replica(spec, replica)?;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let dt = t - cfg.time;
        if dt > 0.0 {
            let quiet = EvolveOptions { record_events: false, ..opts.clone() };
            cfg = sim::evolve(&cfg, dt, Direction::Forward, &quiet)?.config;
        }
        out.push(cfg.clone());
    }
    Ok(out)
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParam("times must be finite, nonnegative and nondecreasing".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceMeta {
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub eps: f64,
    pub replicas: usize,
    pub seed: u64,
    pub h: String,
    pub h_tilde: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub meta: CovarianceMeta,
}

impl CovarianceSeries {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = w;
        writeln!(w, "t,cov,se")?;
        for ((t, c), s) in self.times.iter().zip(&self.values).zip(&self.std_errors) {
            writeln!(w, "{t},{c},{s}")?;
        }
        Ok(())
    }

    pub fn write_meta<W: Write>(&self, w: W) -> Result<()> {
        Ok(serde_json::to_writer_pretty(w, &self.meta)?)
    }
}

/// E[ζ(h, Z(0)) ζ(h̃, Z(t))] under the Gibbs measure, one fresh trajectory per replica.
pub fn covariance(
    spec: &EnsembleSpec,
    h: &TestFunction,
    h_tilde: &TestFunction,
    times: &[f64],
    replicas: usize,
) -> Result<CovarianceSeries> {
    let mut v = covariance_pairs(spec, &[(h.clone(), h_tilde.clone())], times, replicas)?;
    Ok(v.remove(0))
}

/// Several (h, h̃) pairs on shared trajectories.
pub fn covariance_pairs(
    spec: &EnsembleSpec,
    pairs: &[(TestFunction, TestFunction)],
    times: &[f64],
    replicas: usize,
) -> Result<Vec<CovarianceSeries>> {
    spec.validate()?;
    check_times(times)?;
    if replicas < 2 {
        return Err(Error::InvalidParam("covariance needs at least 2 replicas".into()));
    }
    for (h, ht) in pairs {
        for f in [h, ht] {
            if !f.mean_zero {
                return Err(Error::Precondition(format!("test function '{}' is not declared mean-zero", f.name)));
            }
        }
    }
    let opts = EvolveOptions::default();
    // products[r][p][k] = ζ(h_p, Z_r(0)) ζ(h̃_p, Z_r(t_k))
    let products: Vec<Vec<Vec<f64>>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut cfg = sample_replica(spec, r)?;
            let z0: Vec<f64> = pairs.iter().map(|(h, _)| fluctuation_field(&cfg, h)).collect();
            let mut out = vec![Vec::with_capacity(times.len()); pairs.len()];
            for &t in times {
                let dt = t - cfg.time;
                if dt > 0.0 {
                    let quiet = EvolveOptions { record_events: false, ..opts.clone() };
                    cfg = sim::evolve(&cfg, dt, Direction::Forward, &quiet)?.config;
                }
                for (p, (_, ht)) in pairs.iter().enumerate() {
                    out[p].push(z0[p] * fluctuation_field(&cfg, ht));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(p, (h, ht))| {
            let (values, std_errors) = (0..times.len())
                .map(|k| {
                    let xs: Vec<f64> = products.iter().map(|r| r[p][k]).collect();
                    jackknife_mean(&xs)
                })
                .unzip();
            CovarianceSeries {
                times: times.to_vec(),
                values,
                std_errors,
                meta: CovarianceMeta {
                    n: spec.n,
                    alpha: spec.alpha,
                    beta: spec.beta,
                    eps: spec.eps(),
                    replicas,
                    seed: spec.seed,
                    h: h.name.clone(),
                    h_tilde: ht.name.clone(),
                },
            }
        })
        .collect())
}

/// Replicas r = 0..replicas−1 with weights Σ g0(z_i(0)), evolved to time t.
pub fn weighted_samples(spec: &EnsembleSpec, g0: &TestFunction, t: f64, replicas: usize) -> Result<Vec<WeightedSample>> {
    spec.validate()?;
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let cfg = sample_replica(spec, r)?;
            let weight = perturbation_weight(&cfg, g0);
            let cfg = evolve_to(cfg, t)?;
            Ok(WeightedSample { config: cfg, weight })
        })
        .collect()
}

fn evolve_to(cfg: ParticleConfig, t: f64) -> Result<ParticleConfig> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParam(format!("time must be ≥ 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(cfg);
    }
    let opts = EvolveOptions { record_events: false, ..Default::default() };
    Ok(sim::evolve(&cfg, t, Direction::Forward, &opts)?.config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalBins {
    pub nx: usize,
    pub nv: usize,
    pub v_max: f64,
}

impl MarginalBins {
    /// v range ±5/√β.
    pub fn new(nx: usize, nv: usize, beta: f64) -> Result<Self> {
        if nx == 0 || nv == 0 {
            return Err(Error::InvalidParam("bin counts must be ≥ 1".into()));
        }
        if !(beta > 0.0) {
            return Err(Error::InvalidParam(format!("beta must be > 0, got {beta}")));
        }
        Ok(MarginalBins { nx, nv, v_max: 5.0 / beta.sqrt() })
    }

    pub fn len(&self) -> usize {
        self.nx * self.nx * self.nv * self.nv
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn dv(&self) -> f64 {
        2.0 * self.v_max / self.nv as f64
    }

    /// Index (ix1, ix2, iv1, iv2) → flat, x₁ slowest.
    pub fn flat(&self, ix1: usize, ix2: usize, iv1: usize, iv2: usize) -> usize {
        ((ix1 * self.nx + ix2) * self.nv + iv1) * self.nv + iv2
    }

    fn locate(&self, x: [f64; 2], v: Vec2) -> Option<usize> {
        let vi = |c: f64| {
            let k = ((c + self.v_max) / self.dv()).floor();
            (k >= 0.0 && k < self.nv as f64).then_some(k as usize)
        };
        let xi = |c: f64| ((c * self.nx as f64) as usize).min(self.nx - 1);
        Some(self.flat(xi(x[0]), xi(x[1]), vi(v.x)?, vi(v.y)?))
    }
}

/// Density estimate of N f_N^{(1)}(t) on a (x₁, x₂, v₁, v₂) grid, with
/// per-bin standard errors over replicas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalHistogram {
    pub bins: MarginalBins,
    pub density: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub replicas: usize,
    /// Total |weight| of particles outside the velocity window.
    pub overflow: f64,
    sums: Vec<f64>,
    per_replica: Vec<Vec<(usize, f64)>>,
}

impl MarginalHistogram {
    fn projected(&self, key: impl Fn(usize, usize, usize, usize) -> usize, len: usize, volume: f64) -> (Vec<f64>, Vec<f64>) {
        let b = &self.bins;
        let r = self.replicas as f64;
        let mut per: Vec<Vec<f64>> = vec![vec![0.0; len]; self.replicas];
        for (rep, entries) in self.per_replica.iter().enumerate() {
            for &(flat, w) in entries {
                let iv2 = flat % b.nv;
                let iv1 = (flat / b.nv) % b.nv;
                let ix2 = (flat / (b.nv * b.nv)) % b.nx;
                let ix1 = flat / (b.nv * b.nv * b.nx);
                per[rep][key(ix1, ix2, iv1, iv2)] += w / volume;
            }
        }
        (0..len)
            .map(|k| {
                let xs: Vec<f64> = per.iter().map(|p| p[k]).collect();
                if r < 2.0 {
                    (xs.iter().sum::<f64>() / r.max(1.0), 0.0)
                } else {
                    jackknife_mean(&xs)
                }
            })
            .unzip()
    }

    /// Density in x₁ (integrated over x₂ and v): (values, SE).
    pub fn x1_projection(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.bins.nx;
        self.projected(|ix1, _, _, _| ix1, n, self.bins.dx())
    }

    /// Density in (v₁, v₂) (integrated over x), v₂ fastest.
    pub fn velocity_projection(&self) -> (Vec<f64>, Vec<f64>) {
        let nv = self.bins.nv;
        let dv = self.bins.dv();
        self.projected(|_, _, iv1, iv2| iv1 * nv + iv2, nv * nv, dv * dv)
    }

    /// CSV of the x₁ projection: x1_center,density,se.
    pub fn write_x1_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let (d, se) = self.x1_projection();
        writeln!(w, "x1,density,se")?;
        for (k, (a, s)) in d.iter().zip(&se).enumerate() {
            writeln!(w, "{},{a},{s}", (k as f64 + 0.5) * self.bins.dx())?;
        }
        Ok(())
    }

    /// CSV of all nonzero bins: x1,x2,v1,v2 centres, density, se.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let b = &self.bins;
        writeln!(w, "x1,x2,v1,v2,density,se")?;
        for ix1 in 0..b.nx {
            for ix2 in 0..b.nx {
                for iv1 in 0..b.nv {
                    for iv2 in 0..b.nv {
                        let k = b.flat(ix1, ix2, iv1, iv2);
                        if self.sums[k] != 0.0 {
                            let xc = |i: usize| (i as f64 + 0.5) * b.dx();
                            let vc = |i: usize| -b.v_max + (i as f64 + 0.5) * b.dv();
                            writeln!(w, "{},{},{},{},{},{}", xc(ix1), xc(ix2), vc(iv1), vc(iv2), self.density[k], self.std_errors[k])?;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Histogram of Σ_r w_r Σ_i δ_{z_i^r(t)} / (replicas · bin volume).
pub fn weighted_marginal(samples: &[WeightedSample], bins: &MarginalBins) -> MarginalHistogram {
    let nb = bins.len();
    let vol = bins.dx().powi(2) * bins.dv().powi(2);
    let mut sums = vec![0.0; nb];
    let mut sq = vec![0.0; nb];
    let mut overflow = 0.0;
    let mut per_replica = Vec::with_capacity(samples.len());
    for s in samples {
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for (x, &v) in s.config.positions.iter().zip(&s.config.velocities) {
            match bins.locate([x.x(), x.y()], v) {
                Some(k) => entries.push((k, s.weight)),
                None => overflow += s.weight.abs(),
            }
        }
        entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
        for (k, w) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == k => last.1 += w,
                _ => merged.push((k, w)),
            }
        }
        for &(k, w) in &merged {
            sums[k] += w;
            sq[k] += w * w;
        }
        per_replica.push(merged);
    }
    let r = samples.len() as f64;
    let (density, std_errors) = (0..nb)
        .map(|k| {
            if r == 0.0 {
                return (0.0, 0.0);
            }
            let m = sums[k] / r;
            let se = if r > 1.0 { ((sq[k] / r - m * m).max(0.0) / (r - 1.0)).sqrt() } else { 0.0 };
            (m / vol, se / vol)
        })
        .unzip();
    MarginalHistogram { bins: *bins, density, std_errors, replicas: samples.len(), overflow, sums, per_replica }
}

/// (1/R) Σ_r w_r Σ_i h̃(z_i^r(t)) with jackknife SE — the exact (unbinned)
/// contraction of the weighted marginal against h̃.
pub fn weighted_contraction(samples: &[WeightedSample], h_tilde: &TestFunction) -> (f64, f64) {
    let xs: Vec<f64> = samples
        .iter()
        .map(|s| s.weight * s.config.positions.iter().zip(&s.config.velocities).map(|(x, &v)| h_tilde.eval(x, v)).sum::<f64>())
        .collect();
    jackknife_mean(&xs)
}
