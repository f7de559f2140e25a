use super::{GridSpec, VelocityGrid};
use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre_on;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Discretized linearized collision operator.
///
/// `raw` is the direct quadrature of the strong form; `sym` is its
/// symmetrization in L²(W); `apply` additionally projects out the discrete
/// collision invariants on both sides, so the evolution conserves mass,
/// momentum and energy exactly.
pub struct CollisionOperator {
    pub grid: VelocityGrid,
    raw: Option<Vec<f64>>,
    sym: Vec<f64>,
    /// W-orthonormal basis of span{1, v₁, v₂, |v|²}.
    invariants: [Vec<f64>; 4],
    /// Discrete collision frequency (diagonal loss term) per node.
    pub frequency: Vec<f64>,
}

impl CollisionOperator {
    pub fn build(spec: GridSpec) -> Result<Self> {
        Self::build_with(spec, false)
    }

    /// Keep the unsymmetrized matrix as well (doubles the memory).
    pub fn build_with(spec: GridSpec, keep_raw: bool) -> Result<Self> {
        let grid = VelocityGrid::new(spec)?;
        let n = grid.len();
        // (ν − ŵ) angles: the positive part restricts ν to a half circle
        // around ŵ = (v₁ − v)/|v₁ − v|, where the integrand is smooth.
        let (th, tw) = gauss_legendre_on(spec.n_angle / 2, -PI / 2.0, PI / 2.0);
        let ang: Vec<(f64, f64, f64)> = th.iter().zip(&tw).map(|(t, w)| (t.cos(), t.sin(), *w)).collect();

        let mut raw = vec![0.0; n * n];
        let mut frequency = vec![0.0; n];
        raw.par_chunks_mut(n).zip(frequency.par_iter_mut()).enumerate().for_each(|(p, (row, freq))| {
            let v = grid.nodes[p];
            let mut diag = 0.0;
            for q in 0..n {
                if q == p {
                    continue;
                }
                let u = grid.nodes[q];
                let w = u - v;
                let r = w.norm();
                let e = w * (1.0 / r);
                let wq = grid.weights[q];
                let mut gain = 0.0;
                for &(c, s, a) in &ang {
                    let nu = crate::torus::Vec2::new(c * e.x - s * e.y, s * e.x + c * e.y);
                    let dn = r * c;
                    let coef = wq * dn * a;
                    gain += coef;
                    let shift = dn * nu;
                    for pt in [v + shift, u - shift] {
                        let (idx, bw) = grid.stencil(pt);
                        for k in 0..4 {
                            row[idx[k]] -= coef * bw[k];
                        }
                    }
                }
                diag += gain;
                row[q] += gain;
            }
            row[p] += diag;
            *freq = diag;
        });

        let wts = &grid.weights;
        let mut sym = vec![0.0; n * n];
        sym.par_chunks_mut(n).enumerate().for_each(|(p, row)| {
            for q in 0..n {
                row[q] = 0.5 * (raw[p * n + q] + wts[q] * raw[q * n + p] / wts[p]);
            }
        });

        let invariants = w_orthonormal(&grid, [grid.map(|_| 1.0), grid.map(|v| v.x), grid.map(|v| v.y), grid.map(|v| v.norm2())]);
        Ok(CollisionOperator { grid, raw: keep_raw.then_some(raw), sym, invariants, frequency })
    }

    pub fn spec(&self) -> GridSpec {
        self.grid.spec
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn max_frequency(&self) -> f64 {
        self.frequency.iter().cloned().fold(0.0, f64::max)
    }

    fn matvec(m: &[f64], g: &[f64]) -> Vec<f64> {
        let n = g.len();
        m.par_chunks(n).map(|row| row.iter().zip(g).map(|(a, b)| a * b).sum()).collect()
    }

    /// Unsymmetrized quadrature (only if built with `keep_raw`).
    pub fn apply_raw(&self, g: &[f64]) -> Option<Vec<f64>> {
        self.raw.as_ref().map(|m| Self::matvec(m, g))
    }

    pub fn apply_sym(&self, g: &[f64]) -> Vec<f64> {
        Self::matvec(&self.sym, g)
    }

    /// Conservative operator Q L_sym Q.
    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        let qg = self.project_out(g);
        self.project_out(&self.apply_sym(&qg))
    }

    pub fn apply_complex(&self, g: &[Complex64]) -> Vec<Complex64> {
        let q = self.project_out_complex(g);
        let n = q.len();
        let out: Vec<Complex64> = self
            .sym
            .par_chunks(n)
            .map(|row| {
                let (mut re, mut im) = (0.0, 0.0);
                for (a, z) in row.iter().zip(&q) {
                    re += a * z.re;
                    im += a * z.im;
                }
                Complex64::new(re, im)
            })
            .collect();
        self.project_out_complex(&out)
    }

    fn project_out_complex(&self, g: &[Complex64]) -> Vec<Complex64> {
        let mut out = g.to_vec();
        for e in &self.invariants {
            let c: Complex64 = g.iter().zip(e).zip(&self.grid.weights).map(|((z, a), w)| z * (a * w)).sum();
            for (o, ei) in out.iter_mut().zip(e) {
                *o -= c * ei;
            }
        }
        out
    }

    /// Remove the component along the discrete collision invariants.
    pub fn project_out(&self, g: &[f64]) -> Vec<f64> {
        let mut out = g.to_vec();
        for e in &self.invariants {
            let c = self.grid.inner(e, g);
            for (o, ei) in out.iter_mut().zip(e) {
                *o -= c * ei;
            }
        }
        out
    }

    /// ⟨f, L_sym g⟩ − ⟨L_sym f, g⟩ relative to ‖f‖‖g‖.
    pub fn symmetry_defect(&self, f: &[f64], g: &[f64]) -> f64 {
        let a = self.grid.inner(f, &self.apply_sym(g));
        let b = self.grid.inner(&self.apply_sym(f), g);
        (a - b).abs() / (self.grid.norm(f) * self.grid.norm(g))
    }

    /// Relative residuals ‖Lψ‖/‖ψ‖ for ψ ∈ {1, v₁, v₂, |v|²}, using the
    /// symmetrized operator (and the raw one when available).
    pub fn kernel_residuals(&self) -> ([f64; 4], Option<[f64; 4]>) {
        let g = &self.grid;
        let psi = [g.map(|_| 1.0), g.map(|v| v.x), g.map(|v| v.y), g.map(|v| v.norm2())];
        let rel = |f: &dyn Fn(&[f64]) -> Vec<f64>| {
            let mut out = [0.0; 4];
            for (o, p) in out.iter_mut().zip(&psi) {
                *o = g.norm(&f(p)) / g.norm(p);
            }
            out
        };
        let sym = rel(&|p| self.apply_sym(p));
        let raw = self.raw.as_ref().map(|_| rel(&|p| self.apply_raw(p).unwrap()));
        (sym, raw)
    }

    /// Solve L x = b on the complement of the invariants by conjugate
    /// gradients in L²(W), projecting every iterate. Returns (x, relative
    /// residual, iterations).
    pub fn solve(&self, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, f64, usize)> {
        let g = &self.grid;
        let b = self.project_out(b);
        let bn = g.norm(&b);
        let n = b.len();
        if bn == 0.0 {
            return Ok((vec![0.0; n], 0.0, 0));
        }
        let mut x = vec![0.0; n];
        let mut r = b.clone();
        let mut p = r.clone();
        let mut rr = g.inner(&r, &r);
        for it in 1..=max_iter {
            let ap = self.apply(&p);
            let pap = g.inner(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::Resolution(format!("operator not positive on iterate {it} (pAp = {pap:.3e})")));
            }
            let a = rr / pap;
            for i in 0..n {
                x[i] += a * p[i];
                r[i] -= a * ap[i];
            }
            x = self.project_out(&x);
            r = self.project_out(&r);
            let rr_new = g.inner(&r, &r);
            if rr_new.sqrt() <= tol * bn {
                // recompute the true residual to avoid drift
                let lx = self.apply(&x);
                let true_r: Vec<f64> = b.iter().zip(&lx).map(|(a, c)| a - c).collect();
                let res = g.norm(&true_r) / bn;
                if res <= tol {
                    return Ok((x, res, it));
                }
                r = true_r;
                let rr_true = g.inner(&r, &r);
                p = r.clone();
                rr = rr_true;
                continue;
            }
            let beta = rr_new / rr;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
            rr = rr_new;
        }
        Err(Error::Resolution(format!("CG did not reach tolerance {tol:.1e} in {max_iter} iterations")))
    }

    /// Smallest eigenvalue of L on the complement of the invariants
    /// (inverse iteration).
    pub fn spectral_gap(&self, iterations: usize) -> Result<f64> {
        let g = &self.grid;
        // smooth non-hydrodynamic start vector
        let mut x = self.project_out(&g.map(|v| v.x * v.y + 0.3 * (v.x * v.x - v.y * v.y) + 0.1 * v.x * v.norm2()));
        let mut lambda = 0.0;
        for _ in 0..iterations {
            let nx = g.norm(&x);
            x.iter_mut().for_each(|a| *a /= nx);
            let (y, _, _) = self.solve(&x, 1e-10, 2000)?;
            lambda = g.inner(&x, &self.apply(&x));
            x = y;
        }
        let nx = g.norm(&x);
        x.iter_mut().for_each(|a| *a /= nx);
        Ok(lambda.min(g.inner(&x, &self.apply(&x))))
    }
}

fn w_orthonormal(grid: &VelocityGrid, basis: [Vec<f64>; 4]) -> [Vec<f64>; 4] {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(4);
    for b in basis {
        let mut v = b;
        // two Gram–Schmidt passes
        for _ in 0..2 {
            for e in &out {
                let c = grid.inner(e, &v);
                v.iter_mut().zip(e).for_each(|(a, ei)| *a -= c * ei);
            }
        }
        let nv = grid.norm(&v);
        v.iter_mut().for_each(|a| *a /= nv);
        out.push(v);
    }
    out.try_into().expect("four vectors")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportCoefficients {
    /// ⟨Φ₁₂, L⁻¹Φ₁₂⟩ with Φ₁₂ = β² v₁v₂ (the quarter contraction of the
    /// full traceless tensor reduces to this by isotropy).
    pub mu: f64,
    /// ½⟨Ψ₁, L⁻¹Ψ₁⟩ with Ψ₁ = √β v₁(β|v|²/4 − 1).
    pub kappa: f64,
    pub residual_mu: f64,
    pub residual_kappa: f64,
    pub iterations: usize,
}

pub fn transport_coefficients(op: &CollisionOperator) -> Result<TransportCoefficients> {
    let GridSpec { n_v, v_max, beta, .. } = op.spec();
    if n_v < 32 || v_max < 5.0 / beta.sqrt() - 1e-12 {
        return Err(Error::InvalidParam(format!(
            "transport coefficients need n_v ≥ 32 and v_max ≥ 5/√β (got n_v = {n_v}, v_max = {v_max})"
        )));
    }
    let g = &op.grid;
    let phi = op.project_out(&g.map(|v| beta * beta * v.x * v.y));
    let psi = op.project_out(&g.map(|v| beta.sqrt() * v.x * (beta * v.norm2() / 4.0 - 1.0)));
    let tol = 1e-8;
    let (x1, r1, i1) = op.solve(&phi, tol, 5000)?;
    let (x2, r2, i2) = op.solve(&psi, tol, 5000)?;
    Ok(TransportCoefficients {
        mu: g.inner(&phi, &x1),
        kappa: 0.5 * g.inner(&psi, &x2),
        residual_mu: r1,
        residual_kappa: r2,
        iterations: i1 + i2,
    })
}
