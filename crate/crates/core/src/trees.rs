//! Collision trees, backward pseudo-trajectories and Monte-Carlo
//! evaluation of the Duhamel series for the first marginal.
//!
//! Particles are labelled 0..s in creation order; particle i ≥ 1 is
//! adjoined to `parent(i) < i` at time t_i, with t ≥ t_1 ≥ t_2 ≥ … ≥ 0.

use crate::ensemble::{sample_maxwellian, TestFunction};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Rng};
use crate::sim::{self, Direction, EvolveOptions, NeighborMode, ParticleConfig};
use crate::stats::weighted_linear_fit;
use crate::torus::{min_image_disp, TorusPoint, Vec2};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CollisionTree {
    /// parents[i − 1] = a(i) for i = 1..s.
    pub parents: Vec<usize>,
}

impl CollisionTree {
    pub fn new(parents: Vec<usize>) -> Result<Self> {
        for (k, &a) in parents.iter().enumerate() {
            if a > k {
                return Err(Error::InvalidParam(format!("parent of particle {} is {a}, must be < {}", k + 1, k + 1)));
            }
        }
        Ok(CollisionTree { parents })
    }

    /// Number of particles.
    pub fn size(&self) -> usize {
        self.parents.len() + 1
    }

    pub fn parent(&self, i: usize) -> usize {
        self.parents[i - 1]
    }

    /// Position of the tree in the lexicographic enumeration of all (s−1)! trees.
    pub fn rank(&self) -> usize {
        self.parents.iter().enumerate().fold(0, |acc, (k, &a)| acc * (k + 1) + a)
    }
}

/// Uniform tree with s particles: each a(i) uniform on {0..i−1}.
pub fn sample_tree(s: usize, rng: &mut Rng) -> Result<CollisionTree> {
    if s == 0 {
        return Err(Error::InvalidParam("tree size must be ≥ 1".into()));
    }
    Ok(CollisionTree { parents: (1..s).map(|i| rng.random_range(0..i)).collect() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingParams {
    /// Creation times t_1 ≥ … ≥ t_{s−1}.
    pub times: Vec<f64>,
    pub nus: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
}

impl BranchingParams {
    /// Times as sorted uniforms on [0, t], ν uniform, v ~ M_β.
    pub fn sample(s: usize, t: f64, beta: f64, rng: &mut Rng) -> Self {
        let m = s.saturating_sub(1);
        let mut times: Vec<f64> = (0..m).map(|_| t * rng.random::<f64>()).collect();
        times.sort_by(|a, b| b.total_cmp(a));
        let nus = (0..m).map(|_| Vec2::from_angle(2.0 * PI * rng.random::<f64>())).collect();
        let velocities = (0..m).map(|_| sample_maxwellian(beta, rng)).collect();
        BranchingParams { times, nus, velocities }
    }

    fn check(&self, s: usize, t: f64) -> Result<()> {
        let m = s - 1;
        if self.times.len() != m || self.nus.len() != m || self.velocities.len() != m {
            return Err(Error::InvalidParam(format!("branching parameters must have length {m}")));
        }
        if self.times.iter().any(|&x| !(0.0..=t).contains(&x)) || self.times.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidParam("creation times must be nonincreasing within [0, t]".into()));
        }
        if self.nus.iter().any(|n| (n.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::InvalidParam("creation normals must be unit vectors".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryMode {
    /// Disks of diameter ε, created at contact, with recollisions.
    Bbgky,
    /// Point particles created on their parent, free flow.
    Boltzmann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Creation {
    pub particle: usize,
    pub parent: usize,
    pub time: f64,
    pub nu: Vec2,
    /// (v_i − v_{a(i)}(t_i⁺))·ν_i before any scattering.
    pub cross_section: f64,
    pub scattered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recollision {
    pub time: f64,
    pub i: usize,
    pub j: usize,
    pub nu: Vec2,
    /// Lattice vector q with X_i − X_j − εν = q in unwrapped coordinates
    /// continued through the whole backward history.
    pub image: [i64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoTrajectory {
    pub mode: TrajectoryMode,
    pub creations: Vec<Creation>,
    pub recollisions: Vec<Recollision>,
    /// Z_s(0); only meaningful when `valid`.
    pub positions: Vec<TorusPoint>,
    pub velocities: Vec<Vec2>,
    /// False when a creation overlapped an existing particle.
    pub valid: bool,
}

impl PseudoTrajectory {
    /// Π_i (v_i − v_{a(i)})·ν_i over creations (signed).
    pub fn cross_section_product(&self) -> f64 {
        self.creations.iter().map(|c| c.cross_section).product()
    }
}

/// Backward pseudo-trajectory from (x₁, v₁) at time t down to time 0.
pub fn run_pseudo_trajectory(
    z1: (TorusPoint, Vec2),
    t: f64,
    tree: &CollisionTree,
    params: &BranchingParams,
    eps: f64,
    mode: TrajectoryMode,
) -> Result<PseudoTrajectory> {
    let s = tree.size();
    if !(t >= 0.0) {
        return Err(Error::InvalidParam(format!("time must be ≥ 0, got {t}")));
    }
    params.check(s, t)?;
    if mode == TrajectoryMode::Bbgky && !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidParam(format!("BBGKY mode needs eps in (0, 1/2), got {eps}")));
    }
    let mut pos = vec![z1.0];
    let mut vel = vec![z1.1];
    // integer offsets of the unwrapped positions (BBGKY image bookkeeping)
    let mut off: Vec<[i64; 2]> = vec![[0, 0]];
    let mut creations = Vec::with_capacity(s - 1);
    let mut recollisions = Vec::new();
    let mut now = t;
    let opts = EvolveOptions { neighbor: NeighborMode::AllPairs, max_events: 1_000_000, ..Default::default() };

    let flow = |pos: &mut Vec<TorusPoint>,
                    vel: &mut Vec<Vec2>,
                    off: &mut Vec<[i64; 2]>,
                    recollisions: &mut Vec<Recollision>,
                    from: f64,
                    to: f64|
     -> Result<()> {
        let dt = from - to;
        if dt <= 0.0 {
            return Ok(());
        }
        match mode {
            TrajectoryMode::Boltzmann => {
                for (x, v) in pos.iter_mut().zip(vel.iter()) {
                    *x = x.shifted(*v * (-dt));
                }
            }
            TrajectoryMode::Bbgky => {
                if pos.len() == 1 {
                    pos[0] = pos[0].shifted(vel[0] * (-dt));
                    return Ok(());
                }
                let cfg = ParticleConfig { positions: pos.clone(), velocities: vel.clone(), eps, time: from };
                let ev = sim::evolve(&cfg, dt, Direction::Backward, &opts)?;
                for (e, q) in ev.events.iter().zip(&ev.event_images) {
                    let image = [q[0] + off[e.i][0] - off[e.j][0], q[1] + off[e.i][1] - off[e.j][1]];
                    recollisions.push(Recollision { time: e.time, i: e.i, j: e.j, nu: e.nu, image });
                }
                for (o, w) in off.iter_mut().zip(&ev.windings) {
                    o[0] += w[0];
                    o[1] += w[1];
                }
                *pos = ev.config.positions;
                *vel = ev.config.velocities;
            }
        }
        Ok(())
    };

    for i in 1..s {
        let ti = params.times[i - 1];
        flow(&mut pos, &mut vel, &mut off, &mut recollisions, now, ti)?;
        now = ti;
        let a = tree.parent(i);
        let nu = params.nus[i - 1];
        let vi = params.velocities[i - 1];
        let (xi, oi) = match mode {
            TrajectoryMode::Boltzmann => (pos[a], off[a]),
            TrajectoryMode::Bbgky => {
                let d = nu * eps;
                let xi = pos[a].shifted(d);
                let ux = pos[a].x() + off[a][0] as f64 + d.x;
                let uy = pos[a].y() + off[a][1] as f64 + d.y;
                let oi = [(ux - xi.x()).round() as i64, (uy - xi.y()).round() as i64];
                (xi, oi)
            }
        };
        if mode == TrajectoryMode::Bbgky {
            let overlap = pos.iter().enumerate().any(|(j, xj)| j != a && min_image_disp(&xi, xj).norm() <= eps);
            if overlap {
                return Ok(PseudoTrajectory {
                    mode,
                    creations,
                    recollisions,
                    positions: pos,
                    velocities: vel,
                    valid: false,
                });
            }
        }
        let va = vel[a];
        let c = (vi - va).dot(nu);
        let scattered = c > 0.0;
        let (va_new, vi_new) = if scattered {
            let k = (va - vi).dot(nu);
            (va - k * nu, vi + k * nu)
        } else {
            (va, vi)
        };
        vel[a] = va_new;
        pos.push(xi);
        vel.push(vi_new);
        off.push(oi);
        creations.push(Creation { particle: i, parent: a, time: ti, nu, cross_section: c, scattered });
    }
    flow(&mut pos, &mut vel, &mut off, &mut recollisions, now, 0.0)?;
    debug_assert!(mode == TrajectoryMode::Bbgky || recollisions.is_empty());
    Ok(PseudoTrajectory { mode, creations, recollisions, positions: pos, velocities: vel, valid: true })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// p = 0: a particle meets its own creation partner through a nonzero image.
    SelfRecollision,
    /// p = 1: the second parent is not the parent of the first.
    P1,
    /// p = 2: the second parent is the parent of the first.
    P2,
    /// Any recollision after the first.
    Multiple,
}

/// Scenario tag for each recollision of a BBGKY trajectory.
pub fn classify_recollision(traj: &PseudoTrajectory, tree: &CollisionTree) -> Result<Vec<Scenario>> {
    let first = traj
        .recollisions
        .first()
        .ok_or_else(|| Error::Precondition("trajectory has no recollision".into()))?;
    // creations preceding the recollision in backward time, most recent first
    let mut events: Vec<&Creation> = traj.creations.iter().filter(|c| c.time > first.time).collect();
    events.reverse();
    let mut set = vec![first.i, first.j];
    let mut parents: Vec<(usize, bool)> = Vec::new(); // (particle created, both ends in set)
    for c in events {
        let k = c.particle;
        let a = tree.parent(k);
        let k_in = set.contains(&k);
        let a_in = set.contains(&a);
        if k_in || (a_in && c.scattered) {
            parents.push((k, k_in && a_in));
            if parents.len() == 2 {
                break;
            }
        }
        if k_in {
            for x in set.iter_mut() {
                if *x == k {
                    *x = a;
                }
            }
        }
    }
    let tag = match parents.as_slice() {
        [(_, true), ..] if first.image != [0, 0] => Scenario::SelfRecollision,
        [(k1, _), (k2, _)] if tree.parent(*k1) == *k2 => Scenario::P2,
        _ => Scenario::P1,
    };
    let mut out = vec![tag];
    out.resize(traj.recollisions.len(), Scenario::Multiple);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecollisionRow {
    pub eps: f64,
    pub probability: f64,
    /// None when no recollision was observed (censored).
    pub se: Option<f64>,
    pub hits: usize,
    pub invalid: usize,
    pub scenarios: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecollisionReport {
    pub rows: Vec<RecollisionRow>,
    pub slope: Option<f64>,
    pub slope_se: Option<f64>,
}

/// Probability of at least one recollision under the branching measure
/// weighted by Π|cross-sections|, per ε, with common random numbers across ε.
pub fn recollision_probability(
    z1: (TorusPoint, Vec2),
    t: f64,
    s: usize,
    eps_list: &[f64],
    beta: f64,
    samples: usize,
    seed: u64,
) -> Result<RecollisionReport> {
    if s == 0 {
        return Err(Error::InvalidParam("tree size must be ≥ 1".into()));
    }
    if eps_list.iter().any(|&e| !(e > 0.0 && e < 0.5)) {
        return Err(Error::InvalidParam("eps values must lie in (0, 1/2)".into()));
    }
    let ne = eps_list.len();
    #[derive(Clone)]
    struct Acc {
        sw: f64,
        hit: Vec<f64>,
        hit2: Vec<f64>,
        sw2: f64,
        hits: Vec<usize>,
        invalid: Vec<usize>,
        scen: Vec<[usize; 4]>,
    }
    let empty = Acc {
        sw: 0.0,
        hit: vec![0.0; ne],
        hit2: vec![0.0; ne],
        sw2: 0.0,
        hits: vec![0; ne],
        invalid: vec![0; ne],
        scen: vec![[0; 4]; ne],
    };
    let chunks = samples.div_ceil(CHUNK);
    let parts: Vec<Result<Acc>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let mut acc = empty.clone();
            for _ in 0..CHUNK.min(samples - c * CHUNK) {
                let tree = sample_tree(s, &mut rng)?;
                let params = BranchingParams::sample(s, t, beta, &mut rng);
                let mut weight = None;
                for (e, &eps) in eps_list.iter().enumerate() {
                    let tr = run_pseudo_trajectory(z1, t, &tree, &params, eps, TrajectoryMode::Bbgky)?;
                    // the weight Π|c_i| does not depend on ε when no recollision precedes a creation;
                    // use the Boltzmann-free value so all ε share it exactly
                    let wt = *weight.get_or_insert_with(|| {
                        run_pseudo_trajectory(z1, t, &tree, &params, 0.0, TrajectoryMode::Boltzmann)
                            .map(|b| b.cross_section_product().abs())
                            .unwrap_or(0.0)
                    });
                    if e == 0 {
                        acc.sw += wt;
                        acc.sw2 += wt * wt;
                    }
                    if !tr.valid {
                        acc.invalid[e] += 1;
                    } else if !tr.recollisions.is_empty() {
                        acc.hit[e] += wt;
                        acc.hit2[e] += wt * wt;
                        acc.hits[e] += 1;
                        let tag = classify_recollision(&tr, &tree)?[0];
                        acc.scen[e][tag as usize] += 1;
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let mut tot = empty;
    for p in parts {
        let p = p?;
        tot.sw += p.sw;
        tot.sw2 += p.sw2;
        for e in 0..ne {
            tot.hit[e] += p.hit[e];
            tot.hit2[e] += p.hit2[e];
            tot.hits[e] += p.hits[e];
            tot.invalid[e] += p.invalid[e];
            for k in 0..4 {
                tot.scen[e][k] += p.scen[e][k];
            }
        }
    }
    let rows: Vec<RecollisionRow> = (0..ne)
        .map(|e| {
            let p = if tot.sw > 0.0 { tot.hit[e] / tot.sw } else { 0.0 };
            // delta-method SE of a self-normalised ratio: Σ w²(X − p)² / (Σw)²
            let var = tot.hit2[e] * (1.0 - 2.0 * p) + p * p * tot.sw2;
            let se = (tot.hits[e] > 0).then(|| var.max(0.0).sqrt() / tot.sw);
            RecollisionRow {
                eps: eps_list[e],
                probability: p,
                se,
                hits: tot.hits[e],
                invalid: tot.invalid[e],
                scenarios: tot.scen[e],
            }
        })
        .collect();
    let fit: Vec<&RecollisionRow> = rows.iter().filter(|r| r.se.is_some_and(|s| s > 0.0)).collect();
    let (slope, slope_se) = if fit.len() >= 2 {
        let x: Vec<f64> = fit.iter().map(|r| r.eps.ln()).collect();
        let y: Vec<f64> = fit.iter().map(|r| r.probability.ln()).collect();
        let w: Vec<f64> = fit.iter().map(|r| (r.probability / r.se.unwrap()).powi(2)).collect();
        let (_, b, se) = weighted_linear_fit(&x, &y, &w);
        (Some(b), Some(se))
    } else {
        (None, None)
    };
    Ok(RecollisionReport { rows, slope, slope_se })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuhamelControls {
    /// Largest tree size kept; larger proposals are rejected and counted.
    pub s_max: usize,
    /// Pruning: at most n_k = 2^k n0 − 1 branchings in time slice k; None disables.
    pub n0: Option<u64>,
    /// Slice length h (slice k is [t − kh, t − (k−1)h]); defaults to t.
    pub slice: Option<f64>,
    /// Velocity cutoff constant C0: reject if |V_s|² > C0 |log ε|; None disables.
    pub velocity_cutoff: Option<f64>,
    /// Particle diameter (required in BBGKY mode and for the cutoff).
    pub eps: Option<f64>,
    pub beta: f64,
    /// Average each sample over the 2^{s−1} sign patterns of the creation normals.
    pub antithetic: bool,
}

impl Default for DuhamelControls {
    fn default() -> Self {
        DuhamelControls { s_max: 12, n0: None, slice: None, velocity_cutoff: None, eps: None, beta: 1.0, antithetic: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuhamelEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
    pub controls: DuhamelControls,
    pub rejected_smax: usize,
    pub rejected_pruning: usize,
    pub rejected_velocity: usize,
    pub invalid_overlap: usize,
    pub recollisions: usize,
    /// Mean contribution per tree size s = 1..=s_max.
    pub by_order: Vec<f64>,
    /// Largest relative gap between the BBGKY prefactor and α^{s−1}.
    pub prefactor_discrepancy: f64,
}

/// One sampled term of the series, for traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub s: usize,
    pub tree: Vec<usize>,
    pub params: BranchingParams,
    pub recollisions: Vec<Recollision>,
    pub weight: f64,
    pub status: SampleStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Kept,
    RejectedSmax,
    Pruned,
    VelocityCutoff,
    Overlap,
}

struct Sampler<'a> {
    z1: (TorusPoint, Vec2),
    t: f64,
    alpha: f64,
    g0: &'a TestFunction,
    c: DuhamelControls,
    mode: TrajectoryMode,
    ratio: f64,
    n_particles: f64,
}

impl Sampler<'_> {
    fn prefactor(&self, s: usize) -> f64 {
        match self.mode {
            TrajectoryMode::Boltzmann => self.alpha.powi(s as i32 - 1),
            TrajectoryMode::Bbgky => {
                let eps = self.c.eps.unwrap();
                (1..s).map(|k| (self.n_particles - k as f64) * eps).product()
            }
        }
    }

    fn proposal(&self, s: usize) -> f64 {
        (1.0 - self.ratio) * self.ratio.powi(s as i32 - 1)
    }

    fn draw(&self, rng: &mut Rng) -> Result<TraceRecord> {
        // s ~ geometric(ratio) on {1, 2, …}
        let mut s = 1;
        while s <= self.c.s_max && rng.random::<f64>() < self.ratio {
            s += 1;
        }
        if s > self.c.s_max {
            return Ok(TraceRecord {
                s,
                tree: vec![],
                params: BranchingParams { times: vec![], nus: vec![], velocities: vec![] },
                recollisions: vec![],
                weight: 0.0,
                status: SampleStatus::RejectedSmax,
            });
        }
        let tree = sample_tree(s, rng)?;
        let params = BranchingParams::sample(s, self.t, self.c.beta, rng);
        let mut rec = TraceRecord {
            s,
            tree: tree.parents.clone(),
            params: params.clone(),
            recollisions: vec![],
            weight: 0.0,
            status: SampleStatus::Kept,
        };
        if let Some(n0) = self.c.n0 {
            let h = self.c.slice.unwrap_or(self.t);
            if h > 0.0 {
                let mut counts: Vec<u64> = Vec::new();
                for &ti in &params.times {
                    let k = ((self.t - ti) / h).floor() as usize;
                    if counts.len() <= k {
                        counts.resize(k + 1, 0);
                    }
                    counts[k] += 1;
                }
                // slice k (1-based) may hold fewer than 2^k n0 branchings
                let pruned = counts.iter().enumerate().any(|(k, &c)| {
                    let cap = n0.saturating_mul(1u64.checked_shl(k as u32 + 1).unwrap_or(u64::MAX));
                    c >= cap
                });
                if pruned {
                    rec.status = SampleStatus::Pruned;
                    return Ok(rec);
                }
            }
        }
        if let (Some(c0), Some(eps)) = (self.c.velocity_cutoff, self.c.eps) {
            let e2: f64 = self.z1.1.norm2() + params.velocities.iter().map(|v| v.norm2()).sum::<f64>();
            if e2 > c0 * eps.ln().abs() {
                rec.status = SampleStatus::VelocityCutoff;
                return Ok(rec);
            }
        }
        let eps = self.c.eps.unwrap_or(0.0);
        let traj = run_pseudo_trajectory(self.z1, self.t, &tree, &params, eps, self.mode)?;
        rec.recollisions = traj.recollisions.clone();
        if !traj.valid {
            rec.status = SampleStatus::Overlap;
            return Ok(rec);
        }
        let m = s - 1;
        let term = |tr: &PseudoTrajectory| -> f64 {
            let g: f64 = tr.positions.iter().zip(&tr.velocities).map(|(x, v)| self.g0.eval(x, *v)).sum();
            tr.cross_section_product() * g
        };
        let mut sum = term(&traj);
        let mut count = 1.0;
        if self.c.antithetic && m > 0 {
            // average over all sign patterns ν_i → ±ν_i; the uniform law on S¹ is invariant
            let mut flipped = params.clone();
            for mask in 1..(1u64 << m) {
                for (k, nu) in flipped.nus.iter_mut().enumerate() {
                    *nu = if mask >> k & 1 == 1 { params.nus[k] * -1.0 } else { params.nus[k] };
                }
                let tr = run_pseudo_trajectory(self.z1, self.t, &tree, &flipped, eps, self.mode)?;
                if tr.valid {
                    sum += term(&tr);
                }
            }
            count = (1u64 << m) as f64;
        }
        rec.weight = self.prefactor(s) * (self.t * 2.0 * PI).powi(m as i32) * (sum / count) / self.proposal(s);
        Ok(rec)
    }
}

fn sampler<'a>(
    z1: (TorusPoint, Vec2),
    t: f64,
    alpha: f64,
    g0: &'a TestFunction,
    controls: &DuhamelControls,
    mode: TrajectoryMode,
) -> Result<Sampler<'a>> {
    if !(t >= 0.0) || !(alpha >= 0.0) {
        return Err(Error::InvalidParam("t and alpha must be ≥ 0".into()));
    }
    if alpha * t > 2.0 {
        return Err(Error::InvalidParam(format!("alpha·t = {} exceeds the series regime (≤ 2)", alpha * t)));
    }
    if controls.s_max == 0 {
        return Err(Error::InvalidParam("s_max must be ≥ 1".into()));
    }
    if controls.antithetic && controls.s_max > 21 {
        return Err(Error::InvalidParam("antithetic sampling supports s_max ≤ 21".into()));
    }
    let mut n_particles = 0.0;
    if mode == TrajectoryMode::Bbgky {
        let eps = controls.eps.ok_or_else(|| Error::InvalidParam("BBGKY mode needs eps".into()))?;
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::InvalidParam(format!("eps must lie in (0, 1/2), got {eps}")));
        }
        n_particles = (alpha / eps).round();
    }
    Ok(Sampler { z1, t, alpha, g0, c: *controls, mode, ratio: (alpha * t).min(0.7), n_particles })
}

/// Monte-Carlo value of the Duhamel series for g(t, z₁) = f⁽¹⁾(t, z₁)/M_β(v₁) − 1
/// for the initial datum M^{⊗N}(1 + Σ g0(z_i)).
pub fn duhamel_mc(
    z1: (TorusPoint, Vec2),
    t: f64,
    alpha: f64,
    g0: &TestFunction,
    controls: &DuhamelControls,
    mode: TrajectoryMode,
    samples: usize,
    seed: u64,
) -> Result<DuhamelEstimate> {
    let smp = sampler(z1, t, alpha, g0, controls, mode)?;
    let smax = controls.s_max;
    if t == 0.0 {
        // only the s = 1 term survives; return it without averaging round-off
        let mut by_order = vec![0.0; smax];
        by_order[0] = g0.eval(&z1.0, z1.1);
        return Ok(DuhamelEstimate {
            value: by_order[0],
            std_error: 0.0,
            samples,
            controls: *controls,
            rejected_smax: 0,
            rejected_pruning: 0,
            rejected_velocity: 0,
            invalid_overlap: 0,
            recollisions: 0,
            by_order,
            prefactor_discrepancy: 0.0,
        });
    }
    #[derive(Clone, Default)]
    struct Acc {
        s: f64,
        s2: f64,
        rej: [usize; 4],
        recoll: usize,
        order: Vec<f64>,
    }
    let chunks = samples.div_ceil(CHUNK);
    let parts: Vec<Result<Acc>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let mut a = Acc { order: vec![0.0; smax], ..Default::default() };
            for _ in 0..CHUNK.min(samples - c * CHUNK) {
                let r = smp.draw(&mut rng)?;
                match r.status {
                    SampleStatus::Kept => {
                        a.s += r.weight;
                        a.s2 += r.weight * r.weight;
                        a.order[r.s - 1] += r.weight;
                    }
                    SampleStatus::RejectedSmax => a.rej[0] += 1,
                    SampleStatus::Pruned => a.rej[1] += 1,
                    SampleStatus::VelocityCutoff => a.rej[2] += 1,
                    SampleStatus::Overlap => a.rej[3] += 1,
                }
                if !r.recollisions.is_empty() {
                    a.recoll += 1;
                }
            }
            Ok(a)
        })
        .collect();
    let mut tot = Acc { order: vec![0.0; smax], ..Default::default() };
    for p in parts {
        let p = p?;
        tot.s += p.s;
        tot.s2 += p.s2;
        tot.recoll += p.recoll;
        for k in 0..4 {
            tot.rej[k] += p.rej[k];
        }
        for k in 0..smax {
            tot.order[k] += p.order[k];
        }
    }
    let n = samples.max(1) as f64;
    let mean = tot.s / n;
    let var = if samples > 1 { ((tot.s2 - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    let prefactor_discrepancy = if mode == TrajectoryMode::Bbgky {
        (1..=smax)
            .map(|s| {
                let a = alpha.powi(s as i32 - 1);
                if a > 0.0 { (smp.prefactor(s) - a).abs() / a } else { 0.0 }
            })
            .fold(0.0, f64::max)
    } else {
        0.0
    };
    Ok(DuhamelEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
        samples,
        controls: *controls,
        rejected_smax: tot.rej[0],
        rejected_pruning: tot.rej[1],
        rejected_velocity: tot.rej[2],
        invalid_overlap: tot.rej[3],
        recollisions: tot.recoll,
        by_order: tot.order.iter().map(|x| x / n).collect(),
        prefactor_discrepancy,
    })
}

/// The first `count` samples of stream 0 of `duhamel_mc`, for trace dumps.
pub fn duhamel_traces(
    z1: (TorusPoint, Vec2),
    t: f64,
    alpha: f64,
    g0: &TestFunction,
    controls: &DuhamelControls,
    mode: TrajectoryMode,
    count: usize,
    seed: u64,
) -> Result<Vec<TraceRecord>> {
    let smp = sampler(z1, t, alpha, g0, controls, mode)?;
    let mut rng = stream_rng(seed, 0);
    (0..count.min(CHUNK)).map(|_| smp.draw(&mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub pairs: usize,
    pub skipped_recollision: usize,
    pub skipped_overlap: usize,
    /// max over pairs of (position gap − s·ε).
    pub max_excess: f64,
    /// max over pairs of position gap / (s·ε).
    pub max_ratio: f64,
    /// max over pairs and particles of |v_BBGKY − v_Boltzmann|.
    pub max_velocity_gap: f64,
}

/// Matched BBGKY/Boltzmann pseudo-trajectories (s uniform on 1..=s_max,
/// z₁ ~ uniform × M_β) until `pairs` recollision-free valid pairs are found.
pub fn shift_bound_check(pairs: usize, s_max: usize, t: f64, eps: f64, beta: f64, seed: u64) -> Result<ShiftReport> {
    if s_max == 0 {
        return Err(Error::InvalidParam("s_max must be ≥ 1".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let mut rep = ShiftReport {
        pairs: 0,
        skipped_recollision: 0,
        skipped_overlap: 0,
        max_excess: f64::NEG_INFINITY,
        max_ratio: 0.0,
        max_velocity_gap: 0.0,
    };
    let limit = pairs.saturating_mul(100).max(1000);
    let mut attempts = 0;
    while rep.pairs < pairs {
        attempts += 1;
        if attempts > limit {
            return Err(Error::Precondition(format!("only {} recollision-free pairs in {limit} attempts", rep.pairs)));
        }
        let s = rng.random_range(1..=s_max);
        let z1 = (TorusPoint::new(rng.random(), rng.random()), sample_maxwellian(beta, &mut rng));
        let tree = sample_tree(s, &mut rng)?;
        let params = BranchingParams::sample(s, t, beta, &mut rng);
        let a = run_pseudo_trajectory(z1, t, &tree, &params, eps, TrajectoryMode::Bbgky)?;
        if !a.valid {
            rep.skipped_overlap += 1;
            continue;
        }
        if !a.recollisions.is_empty() {
            rep.skipped_recollision += 1;
            continue;
        }
        let b = run_pseudo_trajectory(z1, t, &tree, &params, eps, TrajectoryMode::Boltzmann)?;
        let gap = a.positions.iter().zip(&b.positions).map(|(x, y)| min_image_disp(x, y).norm()).fold(0.0, f64::max);
        let vgap = a.velocities.iter().zip(&b.velocities).map(|(x, y)| (*x - *y).norm()).fold(0.0, f64::max);
        let bound = s as f64 * eps;
        rep.max_excess = rep.max_excess.max(gap - bound);
        rep.max_ratio = rep.max_ratio.max(gap / bound);
        rep.max_velocity_gap = rep.max_velocity_gap.max(vgap);
        rep.pairs += 1;
    }
    Ok(rep)
}
