use super::{CollisionOperator, GridSpec, VelocityGrid};
use crate::ensemble::{Phase, G0};
use crate::error::{Error, Result};
use crate::hydro::{HydroFields, HydroMode};
use crate::torus::{TorusPoint, Vec2};
use num_complex::Complex64 as C;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{BufRead, Write};

/// g(x, v) = Σ_k ĝ_k(v) e^{2πi k·x} on a velocity grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticField {
    pub grid: GridSpec,
    pub modes: Vec<[i32; 2]>,
    /// coeffs[m][p]: mode m at velocity node p.
    pub coeffs: Vec<Vec<C>>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    grid: GridSpec,
    modes: Vec<[i32; 2]>,
    layout: String,
}

const LAYOUT: &str = "f64le re,im; velocity index fastest, then mode";

impl KineticField {
    pub fn zeros(grid: GridSpec, modes: Vec<[i32; 2]>) -> Self {
        let n = grid.n_v * grid.n_v;
        let coeffs = vec![vec![C::new(0.0, 0.0); n]; modes.len()];
        KineticField { grid, modes, coeffs }
    }

    pub fn mode_index(&self, k: [i32; 2]) -> Option<usize> {
        self.modes.iter().position(|&m| m == k)
    }

    pub fn mode(&self, k: [i32; 2]) -> Option<&[C]> {
        self.mode_index(k).map(|i| self.coeffs[i].as_slice())
    }

    pub fn mode_mut(&mut self, k: [i32; 2]) -> &mut Vec<C> {
        let i = match self.mode_index(k) {
            Some(i) => i,
            None => {
                self.modes.push(k);
                self.coeffs.push(vec![C::new(0.0, 0.0); self.grid.n_v * self.grid.n_v]);
                self.modes.len() - 1
            }
        };
        &mut self.coeffs[i]
    }

    /// Real field a(v)·cos(2πk·x) as the conjugate pair ±k.
    pub fn add_cosine(&mut self, k: [i32; 2], grid: &VelocityGrid, f: impl Fn(Vec2) -> f64) {
        let vals = grid.map(f);
        let (c, targets) = if k == [0, 0] { (1.0, vec![k]) } else { (0.5, vec![k, [-k[0], -k[1]]]) };
        for t in targets {
            for (z, a) in self.mode_mut(t).iter_mut().zip(&vals) {
                *z += c * a;
            }
        }
    }

    /// Registry function Σ c · trig(2πk·x) · basis(v) on the grid.
    pub fn from_g0(grid: &VelocityGrid, g0: &G0) -> Self {
        let beta = grid.spec.beta;
        let mut f = Self::zeros(grid.spec, Vec::new());
        for (coef, term) in &g0.terms {
            let vals = grid.map(|v| coef * term.basis.eval(v, beta));
            let targets: Vec<([i32; 2], C)> = match (term.k == [0, 0], term.phase) {
                (true, Phase::Cos) => vec![(term.k, C::new(1.0, 0.0))],
                (true, Phase::Sin) => vec![],
                (false, Phase::Cos) => vec![(term.k, C::new(0.5, 0.0)), ([-term.k[0], -term.k[1]], C::new(0.5, 0.0))],
                (false, Phase::Sin) => vec![(term.k, C::new(0.0, -0.5)), ([-term.k[0], -term.k[1]], C::new(0.0, 0.5))],
            };
            for (k, c) in targets {
                for (z, a) in f.mode_mut(k).iter_mut().zip(&vals) {
                    *z += c * a;
                }
            }
        }
        f
    }

    /// Lift hydrodynamic fields: ρ + √β u·v + θ(β|v|² − 2)/2 per mode.
    pub fn from_hydro(grid: &VelocityGrid, h: &HydroFields) -> Self {
        let b = grid.spec.beta;
        let sb = b.sqrt();
        let mut f = Self::zeros(grid.spec, Vec::new());
        for m in &h.modes {
            let c = f.mode_mut(m.k);
            for (z, v) in c.iter_mut().zip(&grid.nodes) {
                *z = m.rho + (m.u[0] * v.x + m.u[1] * v.y) * sb + m.theta * ((b * v.norm2() - 2.0) / 2.0);
            }
        }
        f
    }

    /// Hydrodynamic projection (ρ, u, θ) of each mode.
    pub fn to_hydro(&self, grid: &VelocityGrid) -> HydroFields {
        let basis = grid.hydro_basis();
        let mut h = HydroFields::new(grid.spec.beta);
        for (k, c) in self.modes.iter().zip(&self.coeffs) {
            let proj = |e: &[f64]| -> C { c.iter().zip(e).zip(&grid.weights).map(|((z, e), w)| z * (e * w)).sum() };
            let mut m = HydroMode::new(*k);
            m.rho = proj(&basis[0]);
            m.u = [proj(&basis[1]), proj(&basis[2])];
            m.theta = proj(&basis[3]);
            h.modes.push(m);
        }
        h
    }

    /// ∫dx ∫M dv |g|² = Σ_k Σ_v W |ĝ_k|².
    pub fn norm(&self, grid: &VelocityGrid) -> f64 {
        self.coeffs
            .iter()
            .map(|c| c.iter().zip(&grid.weights).map(|(z, w)| w * z.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// ∫dx ∫M dv f ḡ over all stored modes (modes matched by wave vector).
    pub fn inner(&self, other: &KineticField, grid: &VelocityGrid) -> C {
        let mut acc = C::new(0.0, 0.0);
        for (k, c) in self.modes.iter().zip(&self.coeffs) {
            if let Some(d) = other.mode(*k) {
                acc += c.iter().zip(d).zip(&grid.weights).map(|((a, b), w)| a * b.conj() * w).sum::<C>();
            }
        }
        acc
    }

    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (k, c) in self.modes.iter().zip(&self.coeffs) {
            match self.mode([-k[0], -k[1]]) {
                Some(d) => {
                    for (a, b) in c.iter().zip(d) {
                        worst = worst.max((a - b.conj()).norm());
                    }
                }
                None => worst = worst.max(c.iter().map(|z| z.norm()).fold(0.0, f64::max)),
            }
        }
        worst
    }

    /// Pointwise value Σ_k ĝ_k(v) e^{2πik·x}, bilinear in v between nodes.
    pub fn eval(&self, grid: &VelocityGrid, x: &TorusPoint, v: Vec2) -> C {
        let (idx, w) = grid.stencil(v);
        let mut acc = C::new(0.0, 0.0);
        for (k, c) in self.modes.iter().zip(&self.coeffs) {
            let ph = 2.0 * PI * (k[0] as f64 * x.x() + k[1] as f64 * x.y());
            let gv: C = (0..4).map(|j| c[idx[j]] * w[j]).sum();
            acc += gv * C::from_polar(1.0, ph);
        }
        acc
    }

    /// One JSON header line followed by the raw coefficient array.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let h = Header { grid: self.grid, modes: self.modes.clone(), layout: LAYOUT.into() };
        serde_json::to_writer(&mut w, &h)?;
        w.write_all(b"\n")?;
        for c in &self.coeffs {
            for z in c {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let h: Header = serde_json::from_str(line.trim_end())?;
        let n = h.grid.n_v * h.grid.n_v;
        let mut coeffs = Vec::with_capacity(h.modes.len());
        let mut buf = [0u8; 8];
        for _ in 0..h.modes.len() {
            let mut c = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut buf)?;
                let re = f64::from_le_bytes(buf);
                r.read_exact(&mut buf)?;
                c.push(C::new(re, f64::from_le_bytes(buf)));
            }
            coeffs.push(c);
        }
        Ok(KineticField { grid: h.grid, modes: h.modes, coeffs })
    }
}

/// q = 0: ∂_t g + v·∇g = −αLg (acoustic); q = 1: time rescaled by α.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    Acoustic,
    Diffusive,
}

impl Scaling {
    pub fn q(self) -> i32 {
        match self {
            Scaling::Acoustic => 0,
            Scaling::Diffusive => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KineticEvolveOptions {
    /// Upper bound on the step, in units of the equation's own time.
    pub dt_max: f64,
    /// Safety factor c in Δt ≤ c/(α^{1+q} max a).
    pub cfl: f64,
    /// Allowed relative norm growth per step.
    pub norm_tol: f64,
}

impl Default for KineticEvolveOptions {
    fn default() -> Self {
        KineticEvolveOptions { dt_max: 0.01, cfl: 0.1, norm_tol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct KineticTrajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<KineticField>,
    /// (t, ‖g(t)‖) after every step.
    pub norms: Vec<(f64, f64)>,
    pub steps: usize,
    pub rejections: usize,
}

impl KineticTrajectory {
    /// Per output time and mode: t, k, ‖ĝ_k‖ and the hydrodynamic projection.
    pub fn write_csv<W: Write>(&self, grid: &VelocityGrid, w: W) -> Result<()> {
        let mut w = w;
        writeln!(w, "t,k1,k2,norm,rho_re,rho_im,u1_re,u1_im,u2_re,u2_im,theta_re,theta_im")?;
        for (t, f) in self.times.iter().zip(&self.snapshots) {
            let h = f.to_hydro(grid);
            for (m, c) in h.modes.iter().zip(&f.coeffs) {
                let nk: f64 = c.iter().zip(&grid.weights).map(|(z, w)| w * z.norm_sqr()).sum::<f64>().sqrt();
                writeln!(
                    w,
                    "{t},{},{},{nk:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                    m.k[0], m.k[1], m.rho.re, m.rho.im, m.u[0].re, m.u[0].im, m.u[1].re, m.u[1].im, m.theta.re, m.theta.im
                )?;
            }
        }
        Ok(())
    }
}

/// Strang splitting: exact transport half steps around an RK2 collision step,
/// for ∂_t g = −α^q v·∇g − α^{1+q} L g. `times` must be nondecreasing and ≥ 0.
pub fn evolve(
    g0: &KineticField,
    op: &CollisionOperator,
    alpha: f64,
    scaling: Scaling,
    times: &[f64],
    opts: &KineticEvolveOptions,
) -> Result<KineticTrajectory> {
    if g0.grid != op.spec() {
        return Err(Error::InvalidParam("field and operator use different velocity grids".into()));
    }
    if !(alpha >= 0.0) {
        return Err(Error::InvalidParam(format!("alpha must be ≥ 0, got {alpha}")));
    }
    if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParam("output times must be nonnegative and sorted".into()));
    }
    let q = scaling.q();
    let a_tr = alpha.powi(q);
    let a_col = alpha.powi(1 + q);
    let grid = &op.grid;
    let mut dt_cap = opts.dt_max;
    if a_col > 0.0 {
        dt_cap = dt_cap.min(opts.cfl / (a_col * op.max_frequency()));
    }
    let mut g = g0.clone();
    let mut t = 0.0;
    let mut traj = KineticTrajectory { times: Vec::new(), snapshots: Vec::new(), norms: Vec::new(), steps: 0, rejections: 0 };
    let mut norm = g.norm(grid);
    traj.norms.push((0.0, norm));
    for &t_out in times {
        while t < t_out {
            let mut dt = dt_cap.min(t_out - t);
            // avoid a sliver step at the end
            if t_out - t - dt < 1e-3 * dt_cap {
                dt = t_out - t;
            }
            let mut tries = 0;
            loop {
                let next = step(&g, op, a_tr, a_col, dt);
                let n1 = next.norm(grid);
                if n1 <= norm * (1.0 + opts.norm_tol) + 1e-300 {
                    g = next;
                    norm = n1;
                    break;
                }
                traj.rejections += 1;
                tries += 1;
                if tries > 10 {
                    return Err(Error::StepRejected(format!("norm grew from {norm:.6e} to {n1:.6e} at t = {t:.4}")));
                }
                dt *= 0.5;
            }
            t += dt;
            traj.steps += 1;
            traj.norms.push((t, norm));
        }
        traj.times.push(t_out);
        traj.snapshots.push(g.clone());
    }
    Ok(traj)
}

fn step(g: &KineticField, op: &CollisionOperator, a_tr: f64, a_col: f64, dt: f64) -> KineticField {
    let nodes = &op.grid.nodes;
    let coeffs: Vec<Vec<C>> = g
        .modes
        .par_iter()
        .zip(&g.coeffs)
        .map(|(k, c)| {
            let kv = Vec2::new(2.0 * PI * k[0] as f64, 2.0 * PI * k[1] as f64);
            let half: Vec<C> = nodes.iter().map(|v| C::from_polar(1.0, -a_tr * kv.dot(*v) * dt / 2.0)).collect();
            let mut y: Vec<C> = c.iter().zip(&half).map(|(a, b)| a * b).collect();
            if a_col > 0.0 {
                let h = a_col * dt;
                let l1 = op.apply_complex(&y);
                let y1: Vec<C> = y.iter().zip(&l1).map(|(a, b)| a - b * h).collect();
                let l2 = op.apply_complex(&y1);
                y = y.iter().zip(l1.iter().zip(&l2)).map(|(a, (b, d))| a - (b + d) * (0.5 * h)).collect();
            }
            y.iter().zip(&half).map(|(a, b)| a * b).collect()
        })
        .collect();
    KineticField { grid: g.grid, modes: g.modes.clone(), coeffs }
}

/// ∫dx ∫M dv (e^{−t(v·∇ + αL)} h) · conj(h̃).
pub fn semigroup_covariance(
    h: &KineticField,
    h_tilde: &KineticField,
    op: &CollisionOperator,
    alpha: f64,
    t: f64,
    opts: &KineticEvolveOptions,
) -> Result<C> {
    let traj = evolve(h, op, alpha, Scaling::Acoustic, &[t], opts)?;
    Ok(traj.snapshots[0].inner(h_tilde, &op.grid))
}

/// Several times along one trajectory.
pub fn semigroup_covariance_series(
    h: &KineticField,
    h_tilde: &KineticField,
    op: &CollisionOperator,
    alpha: f64,
    times: &[f64],
    opts: &KineticEvolveOptions,
) -> Result<Vec<C>> {
    let traj = evolve(h, op, alpha, Scaling::Acoustic, times, opts)?;
    Ok(traj.snapshots.iter().map(|s| s.inner(h_tilde, &op.grid)).collect())
}
