//! Priority-queue event loop with lazy invalidation.
//!
//! Two neighbour strategies share the loop:
//! * cell lists (side ≥ eps): pairs are predicted when they become
//!   neighbours (cell crossing) or after a velocity change; only the
//!   nearest image is used, which is exact because cells are wider than eps;
//! * all pairs over periodic images up to a rebuild horizon, used for few
//!   particles or large eps (pseudo-trajectories).

use super::{contact_time, scatter_unchecked, CollisionEvent, ParticleConfig};
use crate::error::{Error, Result};
use crate::torus::{candidate_images, min_image_component, TorusPoint, Vec2};
use serde::{Deserialize, Serialize};
use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborMode {
    Auto,
    CellList,
    AllPairs,
}

#[derive(Debug, Clone)]
pub struct EvolveOptions {
    /// Abort after this many collisions.
    pub max_events: u64,
    /// Image-enumeration horizon between full rebuilds (all-pairs mode).
    pub horizon: f64,
    pub neighbor: NeighborMode,
    pub record_events: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions { max_events: 50_000_000, horizon: 1.0, neighbor: NeighborMode::Auto, record_events: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub collisions: u64,
    pub cell_crossings: u64,
    pub rebuilds: u64,
    /// Tangential contacts skipped by the grazing guard.
    pub grazing_skipped: u64,
    /// Largest per-collision relative kinetic-energy change.
    pub max_energy_defect: f64,
    /// Largest per-collision |Δ(v_i+v_j)| / (|v_i|+|v_j|).
    pub max_momentum_defect: f64,
    pub used_cells: bool,
}

#[derive(Debug, Clone)]
pub struct Evolution {
    pub config: ParticleConfig,
    /// Time-sorted collisions (absolute times; decreasing for backward runs).
    pub events: Vec<CollisionEvent>,
    /// For each recorded event, the integer vector q with
    /// X_i − X_j − eps·nu = q in unwrapped coordinates relative to the
    /// starting positions.
    pub event_images: Vec<[i64; 2]>,
    /// Net number of periodic wraps per particle over the run.
    pub windings: Vec<[i64; 2]>,
    pub diagnostics: RunDiagnostics,
}

/// Evolve `config` by a duration `t ≥ 0` forward or backward in time.
///
/// Backward evolution flips the velocities, runs forward and flips back.
pub fn evolve(config: &ParticleConfig, t: f64, direction: Direction, opts: &EvolveOptions) -> Result<Evolution> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParam(format!("evolution time must be finite and ≥ 0, got {t}")));
    }
    config.validate()?;
    let mut start = config.clone();
    if direction == Direction::Backward {
        start.flip_velocities();
    }
    let mut eng = Engine::new(&start, opts);
    eng.run(t)?;
    let mut out = eng.finish(&start, t);
    if direction == Direction::Backward {
        out.config.flip_velocities();
        out.config.time = config.time - t;
        for e in &mut out.events {
            e.time = config.time - (e.time - config.time);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Collision,
    Cross,
    Rebuild,
}

#[derive(Debug, Clone, Copy)]
struct Ev {
    t: f64,
    i: u32,
    j: u32,
    kind: Kind,
    ci: u32,
    cj: u32,
    /// crossing axis (0/1) and sign
    axis: u8,
    up: bool,
}

impl PartialEq for Ev {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Ev {}
impl PartialOrd for Ev {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Ev {
    fn cmp(&self, o: &Self) -> Ordering {
        self.t
            .total_cmp(&o.t)
            .then(self.i.cmp(&o.i))
            .then(self.j.cmp(&o.j))
            .then((self.kind as u8).cmp(&(o.kind as u8)))
    }
}

struct Cells {
    nc: usize,
    side: f64,
    cell: Vec<[usize; 2]>,
    members: Vec<Vec<u32>>,
}

impl Cells {
    #[inline]
    fn idx(&self, c: [usize; 2]) -> usize {
        c[0] * self.nc + c[1]
    }
}

struct Engine<'o> {
    eps: f64,
    pos: Vec<Vec2>,
    vel: Vec<Vec2>,
    tloc: Vec<f64>,
    wind: Vec<[i64; 2]>,
    count: Vec<u32>,
    now: f64,
    heap: BinaryHeap<Reverse<Ev>>,
    cells: Option<Cells>,
    horizon_end: f64,
    t_end: f64,
    opts: &'o EvolveOptions,
    diag: RunDiagnostics,
    events: Vec<CollisionEvent>,
    images: Vec<[i64; 2]>,
    t0: f64,
}

impl<'o> Engine<'o> {
    fn new(cfg: &ParticleConfig, opts: &'o EvolveOptions) -> Self {
        let n = cfg.len();
        let max_nc = (1.0 / (cfg.eps * (1.0 + 1e-9))).floor() as usize;
        let want = (n as f64).sqrt().round() as usize;
        let nc = want.min(max_nc);
        let use_cells = match opts.neighbor {
            NeighborMode::AllPairs => false,
            NeighborMode::CellList => max_nc >= 4,
            NeighborMode::Auto => n >= 16 && nc >= 4,
        };
        let cells = if use_cells {
            let nc = nc.max(4).min(max_nc);
            let mut c = Cells { nc, side: 1.0 / nc as f64, cell: Vec::with_capacity(n), members: vec![Vec::new(); nc * nc] };
            for (k, p) in cfg.positions.iter().enumerate() {
                let cc = [((p.x() * nc as f64) as usize).min(nc - 1), ((p.y() * nc as f64) as usize).min(nc - 1)];
                c.cell.push(cc);
                let id = c.idx(cc);
                c.members[id].push(k as u32);
            }
            Some(c)
        } else {
            None
        };
        Engine {
            eps: cfg.eps,
            pos: cfg.positions.iter().map(|p| p.as_vec()).collect(),
            vel: cfg.velocities.clone(),
            tloc: vec![0.0; n],
            wind: vec![[0, 0]; n],
            count: vec![0; n],
            now: 0.0,
            heap: BinaryHeap::new(),
            diag: RunDiagnostics { used_cells: use_cells, ..Default::default() },
            cells,
            horizon_end: 0.0,
            t_end: 0.0,
            opts,
            events: Vec::new(),
            images: Vec::new(),
            t0: cfg.time,
        }
    }

    #[inline]
    fn advance(&mut self, k: usize, t: f64) {
        let dt = t - self.tloc[k];
        if dt != 0.0 {
            let p = self.pos[k] + self.vel[k] * dt;
            let (x, wx) = wrap_count(p.x);
            let (y, wy) = wrap_count(p.y);
            self.pos[k] = Vec2::new(x, y);
            self.wind[k][0] += wx;
            self.wind[k][1] += wy;
            self.tloc[k] = t;
        }
    }

    fn run(&mut self, t_end: f64) -> Result<()> {
        self.t_end = t_end;
        let n = self.pos.len();
        if self.cells.is_some() {
            for k in 0..n {
                self.predict_cell_neighbourhood(k, true);
                self.schedule_crossing(k);
            }
        } else {
            self.rebuild();
        }
        while let Some(Reverse(ev)) = self.heap.pop() {
            if ev.t > t_end {
                break;
            }
            match ev.kind {
                Kind::Collision => {
                    let (i, j) = (ev.i as usize, ev.j as usize);
                    if self.count[i] != ev.ci || self.count[j] != ev.cj {
                        continue;
                    }
                    self.now = ev.t;
                    self.collide(i, j)?;
                }
                Kind::Cross => {
                    let i = ev.i as usize;
                    if self.count[i] != ev.ci {
                        continue;
                    }
                    self.now = ev.t;
                    self.cross(i, ev.axis as usize, ev.up);
                }
                Kind::Rebuild => {
                    self.now = ev.t;
                    self.rebuild();
                }
            }
            if self.heap.len() > 16 * n + 4096 {
                let count = &self.count;
                self.heap.retain(|Reverse(e)| match e.kind {
                    Kind::Collision => count[e.i as usize] == e.ci && count[e.j as usize] == e.cj,
                    Kind::Cross => count[e.i as usize] == e.ci,
                    Kind::Rebuild => true,
                });
            }
        }
        self.now = t_end;
        for k in 0..n {
            self.advance(k, t_end);
        }
        Ok(())
    }

    fn finish(self, start: &ParticleConfig, t: f64) -> Evolution {
        let config = ParticleConfig {
            positions: self.pos.iter().map(|p| TorusPoint::new(p.x, p.y)).collect(),
            velocities: self.vel,
            eps: start.eps,
            time: start.time + t,
        };
        Evolution { config, events: self.events, event_images: self.images, windings: self.wind, diagnostics: self.diag }
    }

    /// Time until the pair (i, j) touches through displacement `r`, pushed if within limits.
    #[inline]
    fn push_pair(&mut self, i: usize, j: usize, r: Vec2, limit: f64) {
        let dv = self.vel[i] - self.vel[j];
        match contact_time(r, dv, self.eps) {
            Ok(Some(tau)) => {
                let t = self.now + tau;
                if t <= limit {
                    let (a, b) = if i < j { (i, j) } else { (j, i) };
                    self.heap.push(Reverse(Ev {
                        t,
                        i: a as u32,
                        j: b as u32,
                        kind: Kind::Collision,
                        ci: self.count[a],
                        cj: self.count[b],
                        axis: 0,
                        up: false,
                    }));
                }
            }
            Ok(None) => {}
            Err(()) => self.diag.grazing_skipped += 1,
        }
    }

    /// Predict k against its full 3×3 neighbourhood (cell mode).
    /// With `only_higher`, pairs are predicted once (initialisation).
    fn predict_cell_neighbourhood(&mut self, k: usize, only_higher: bool) {
        let cells = self.cells.as_ref().unwrap();
        let nc = cells.nc;
        let c = cells.cell[k];
        let mut partners: Vec<u32> = Vec::with_capacity(16);
        for dx in [nc - 1, 0, 1] {
            for dy in [nc - 1, 0, 1] {
                let id = cells.idx([(c[0] + dx) % nc, (c[1] + dy) % nc]);
                partners.extend(cells.members[id].iter().copied().filter(|&m| m as usize != k));
            }
        }
        self.predict_against(k, &partners, only_higher);
    }

    fn predict_against(&mut self, k: usize, partners: &[u32], only_higher: bool) {
        let now = self.now;
        self.advance(k, now);
        for &m in partners {
            let m = m as usize;
            if only_higher && m < k {
                continue;
            }
            self.advance(m, now);
            let r = Vec2::new(
                min_image_component(self.pos[k].x - self.pos[m].x),
                min_image_component(self.pos[k].y - self.pos[m].y),
            );
            self.push_pair(k, m, r, self.t_end);
        }
    }

    fn schedule_crossing(&mut self, k: usize) {
        let cells = self.cells.as_ref().unwrap();
        let c = cells.cell[k];
        let side = cells.side;
        let v = self.vel[k];
        let mut best: Option<(f64, u8, bool)> = None;
        for axis in 0..2 {
            let (p, vc) = if axis == 0 { (self.pos[k].x, v.x) } else { (self.pos[k].y, v.y) };
            if vc == 0.0 {
                continue;
            }
            // offset from the lower cell edge, robust to wrap rounding
            let u = min_image_component(p - c[axis] as f64 * side);
            let dt = if vc > 0.0 { (side - u) / vc } else { u / -vc };
            let dt = dt.max(0.0);
            if best.is_none_or(|b| dt < b.0) {
                best = Some((dt, axis as u8, vc > 0.0));
            }
        }
        if let Some((dt, axis, up)) = best {
            let t = self.tloc[k] + dt;
            if t <= self.t_end {
                self.heap.push(Reverse(Ev {
                    t,
                    i: k as u32,
                    j: u32::MAX - 1,
                    kind: Kind::Cross,
                    ci: self.count[k],
                    cj: 0,
                    axis,
                    up,
                }));
            }
        }
    }

    fn cross(&mut self, k: usize, axis: usize, up: bool) {
        self.diag.cell_crossings += 1;
        let now = self.now;
        self.advance(k, now);
        let cells = self.cells.as_mut().unwrap();
        let nc = cells.nc;
        let old = cells.cell[k];
        let mut new = old;
        new[axis] = if up { (old[axis] + 1) % nc } else { (old[axis] + nc - 1) % nc };
        let oid = cells.idx(old);
        let pos_in = cells.members[oid].iter().position(|&m| m as usize == k).unwrap();
        cells.members[oid].swap_remove(pos_in);
        let nid = cells.idx(new);
        cells.members[nid].push(k as u32);
        cells.cell[k] = new;
        // newly adjacent strip: one further step in the direction of motion
        let far = if up { (new[axis] + 1) % nc } else { (new[axis] + nc - 1) % nc };
        let mut partners: Vec<u32> = Vec::with_capacity(8);
        for d in [nc - 1, 0, 1] {
            let mut c = [0usize; 2];
            c[axis] = far;
            c[1 - axis] = (new[1 - axis] + d) % nc;
            partners.extend(cells.members[cells.idx(c)].iter().copied());
        }
        self.predict_against(k, &partners, false);
        self.schedule_crossing(k);
    }

    fn rebuild(&mut self) {
        self.diag.rebuilds += 1;
        self.heap.clear();
        let now = self.now;
        let n = self.pos.len();
        for k in 0..n {
            self.advance(k, now);
        }
        self.horizon_end = now + self.opts.horizon;
        let limit = self.horizon_end.min(self.t_end);
        for i in 0..n {
            for j in i + 1..n {
                self.predict_images(i, j, limit);
            }
        }
        if self.horizon_end < self.t_end {
            self.heap.push(Reverse(Ev {
                t: self.horizon_end,
                i: u32::MAX,
                j: u32::MAX,
                kind: Kind::Rebuild,
                ci: 0,
                cj: 0,
                axis: 0,
                up: false,
            }));
        }
    }

    fn predict_images(&mut self, i: usize, j: usize, limit: f64) {
        let r0 = Vec2::new(
            min_image_component(self.pos[i].x - self.pos[j].x),
            min_image_component(self.pos[i].y - self.pos[j].y),
        );
        let dv = self.vel[i] - self.vel[j];
        let span = (limit - self.now).max(0.0);
        let mut best: Option<f64> = None;
        for q in candidate_images(r0, dv.norm(), span, self.eps) {
            let r = r0 + Vec2::new(q[0] as f64, q[1] as f64);
            match contact_time(r, dv, self.eps) {
                Ok(Some(tau)) => {
                    if tau <= span && best.is_none_or(|b| tau < b) {
                        best = Some(tau);
                    }
                }
                Ok(None) => {}
                Err(()) => self.diag.grazing_skipped += 1,
            }
        }
        if let Some(tau) = best {
            self.heap.push(Reverse(Ev {
                t: self.now + tau,
                i: i as u32,
                j: j as u32,
                kind: Kind::Collision,
                ci: self.count[i],
                cj: self.count[j],
                axis: 0,
                up: false,
            }));
        }
    }

    fn collide(&mut self, i: usize, j: usize) -> Result<()> {
        let now = self.now;
        self.advance(i, now);
        self.advance(j, now);
        let r = Vec2::new(
            min_image_component(self.pos[i].x - self.pos[j].x),
            min_image_component(self.pos[i].y - self.pos[j].y),
        );
        let nu = r * (1.0 / r.norm());
        let (vi, vj) = (self.vel[i], self.vel[j]);
        let dvn = (vi - vj).dot(nu);
        if dvn >= 0.0 {
            // numerically tangential or separating at the predicted contact
            self.diag.grazing_skipped += 1;
            self.count[i] += 1;
            self.count[j] += 1;
            self.repredict(i, j);
            return Ok(());
        }
        let (wi, wj) = scatter_unchecked(vi, vj, nu);
        let e0 = vi.norm2() + vj.norm2();
        let e1 = wi.norm2() + wj.norm2();
        if e0 > 0.0 {
            self.diag.max_energy_defect = self.diag.max_energy_defect.max((e1 - e0).abs() / e0);
        }
        let scale = vi.norm() + vj.norm();
        if scale > 0.0 {
            self.diag.max_momentum_defect =
                self.diag.max_momentum_defect.max(((wi + wj) - (vi + vj)).norm() / scale);
        }
        self.vel[i] = wi;
        self.vel[j] = wj;
        self.count[i] += 1;
        self.count[j] += 1;
        self.diag.collisions += 1;
        if self.diag.collisions > self.opts.max_events {
            return Err(Error::TooManyEvents { events: self.diag.collisions, limit: self.opts.max_events });
        }
        if self.opts.record_events {
            self.events.push(CollisionEvent { time: self.t0 + now, i, j, nu });
            let d = (self.pos[i] + iv(self.wind[i])) - (self.pos[j] + iv(self.wind[j])) - nu * self.eps;
            self.images.push([d.x.round() as i64, d.y.round() as i64]);
        }
        self.repredict(i, j);
        Ok(())
    }

    fn repredict(&mut self, i: usize, j: usize) {
        if self.cells.is_some() {
            self.predict_cell_neighbourhood(i, false);
            self.predict_cell_neighbourhood(j, false);
            self.schedule_crossing(i);
            self.schedule_crossing(j);
        } else {
            let limit = self.horizon_end.min(self.t_end);
            let n = self.pos.len();
            let now = self.now;
            for k in 0..n {
                self.advance(k, now);
            }
            for a in [i, j] {
                for m in 0..n {
                    if m != a && !(a == j && m == i) {
                        let (p, q) = if a < m { (a, m) } else { (m, a) };
                        self.predict_images(p, q, limit);
                    }
                }
            }
        }
    }
}

#[inline]
fn iv(w: [i64; 2]) -> Vec2 {
    Vec2::new(w[0] as f64, w[1] as f64)
}

/// Wrap into [0,1) returning the number of periods removed.
#[inline]
fn wrap_count(c: f64) -> (f64, i64) {
    let f = c.floor();
    let mut w = c - f;
    let mut k = f as i64;
    if w >= 1.0 {
        w = 0.0;
        k += 1;
    }
    (w, k)
}
