//! Exact one-dimensional two-electron Coulomb transport: the optimal map `T`,
//! the Kantorovich potential `u`, the effective potential `V` and its Hessian
//! on the graph of `T`.

use crate::density::Density1D;
use crate::error::{invalid, Error, Result};
use crate::quad::{integrate, integrate_from_neg_inf, integrate_to_inf, Quad, QuadTol};
use serde::{Deserialize, Serialize};

/// Symmetric 2x2 matrix stored row-major.
pub type Mat2 = [[f64; 2]; 2];

/// Anchor of the additive constant of `u`.
pub const ANCHOR: f64 = -1.0;

/// Optimal map, potential and derived fields of a median-centred density.
#[derive(Debug, Clone)]
pub struct CoulombOt {
    density: Density1D,
    u0: f64,
    tol: QuadTol,
}

impl CoulombOt {
    /// Build the transport layer and fix `u0` by `u(x0) + u(T(x0)) = 1/|x0 - T(x0)|` at `x0 = -1`.
    pub fn new(density: Density1D) -> Result<Self> {
        let mut sol = Self {
            density,
            u0: 0.0,
            tol: QuadTol::new(1e-15, 1e-12),
        };
        let t0 = sol.t(ANCHOR)?;
        if t0 == ANCHOR {
            return Err(Error::Domain {
                x: ANCHOR,
                reason: "anchor lies on the diagonal".into(),
            });
        }
        let w0 = sol.w(ANCHOR)?;
        let w1 = sol.w(t0)?;
        sol.u0 = 0.5 * (1.0 / (ANCHOR - t0).abs() - w0 - w1);
        Ok(sol)
    }

    pub fn density(&self) -> &Density1D {
        &self.density
    }

    pub fn u0(&self) -> f64 {
        self.u0
    }

    /// Optimal map `T(x) = F^{-1}(F(x) +- 1/2)`.
    pub fn t(&self, x: f64) -> Result<f64> {
        let d = &self.density;
        if x == 0.0 || !x.is_finite() {
            return Err(Error::Domain {
                x,
                reason: "the optimal map is undefined at the median".into(),
            });
        }
        if x < 0.0 {
            let lower = d.cdf(x);
            if lower < 0.25 {
                d.inv_mass0(lower)
            } else {
                d.isf(-d.mass0(x))
            }
        } else {
            let upper = d.sf(x);
            if upper < 0.25 {
                d.inv_mass0(-upper)
            } else {
                d.icdf_lower(d.mass0(x))
            }
        }
    }

    /// `T'(x) = rho(x) / rho(T(x))`.
    pub fn dt(&self, x: f64) -> Result<f64> {
        let tx = self.t(x)?;
        Ok(self.density.pdf(x) / self.density.pdf(tx))
    }

    /// `T''(x)` from differentiating the Monge-Ampere ratio.
    pub fn d2t(&self, x: f64) -> Result<f64> {
        let tx = self.t(x)?;
        let d = &self.density;
        let rt = d.pdf(tx);
        let tp = d.pdf(x) / rt;
        Ok(d.dpdf(x) / rt - tp * tp * d.dpdf(tx) / rt)
    }

    /// `u'(x) = -sign(x) / (T(x) - x)^2`, extended by 0 at the median.
    pub fn du(&self, x: f64) -> Result<f64> {
        if x == 0.0 {
            return Ok(0.0);
        }
        let tx = self.t(x)?;
        let g = tx - x;
        Ok(-x.signum() / (g * g))
    }

    /// `u''(x) = sign(x) 2 (T'(x) - 1) / (T(x) - x)^3`.
    pub fn ddu(&self, x: f64) -> Result<f64> {
        let tx = self.t(x)?;
        let tp = self.density.pdf(x) / self.density.pdf(tx);
        let g = tx - x;
        Ok(x.signum() * 2.0 * (tp - 1.0) / (g * g * g))
    }

    fn w(&self, x: f64) -> Result<f64> {
        if x == 0.0 {
            return Ok(0.0);
        }
        let mut err = None;
        let q = integrate(
            |s| match self.du(s) {
                Ok(v) => v,
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            },
            0.0,
            x,
            self.tol,
        )?;
        if let Some(e) = err {
            return Err(e);
        }
        Ok(q.value)
    }

    /// Kantorovich potential `u(x) = u0 + int_0^x u'`.
    pub fn u(&self, x: f64) -> Result<f64> {
        Ok(self.u0 + self.w(x)?)
    }

    /// `u` on many points by cumulative integration between sorted neighbours.
    pub fn u_many(&self, xs: &[f64]) -> Result<Vec<f64>> {
        let mut idx: Vec<usize> = (0..xs.len()).collect();
        idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
        let mut out = vec![0.0; xs.len()];
        let neg: Vec<usize> = idx.iter().copied().filter(|&i| xs[i] < 0.0).rev().collect();
        let pos: Vec<usize> = idx.iter().copied().filter(|&i| xs[i] >= 0.0).collect();
        for side in [neg, pos] {
            let mut prev = 0.0;
            let mut acc = 0.0;
            for i in side {
                let x = xs[i];
                if x != prev {
                    let mut err = None;
                    let q = integrate(
                        |s| match self.du(s) {
                            Ok(v) => v,
                            Err(e) => {
                                err.get_or_insert(e);
                                0.0
                            }
                        },
                        prev,
                        x,
                        self.tol,
                    )?;
                    if let Some(e) = err {
                        return Err(e);
                    }
                    acc += q.value;
                    prev = x;
                }
                out[i] = self.u0 + acc;
            }
        }
        Ok(out)
    }

    /// Effective potential `V(x, y) = 1/|x - y| - u(x) - u(y)`.
    pub fn v(&self, x: f64, y: f64) -> Result<f64> {
        if x == y {
            return Err(Error::Domain {
                x,
                reason: "the effective potential is singular on the diagonal".into(),
            });
        }
        Ok(1.0 / (x - y).abs() - self.u(x)? - self.u(y)?)
    }

    /// Gradient of `V`.
    pub fn grad_v(&self, x: f64, y: f64) -> Result<[f64; 2]> {
        if x == y {
            return Err(Error::Domain {
                x,
                reason: "the effective potential is singular on the diagonal".into(),
            });
        }
        let s = (x - y).signum();
        let r2 = (x - y) * (x - y);
        Ok([-s / r2 - self.du(x)?, s / r2 - self.du(y)?])
    }

    /// Hessian `2/|y-x|^3 [[1,-1],[-1,1]] - diag(u''(x), u''(y))`.
    pub fn hess_v(&self, x: f64, y: f64) -> Result<Mat2> {
        if x == y {
            return Err(Error::Domain {
                x,
                reason: "the effective potential is singular on the diagonal".into(),
            });
        }
        let c = 2.0 / (y - x).abs().powi(3);
        Ok([[c - self.ddu(x)?, -c], [-c, c - self.ddu(y)?]])
    }

    /// Positive eigenvalue of the Hessian on the graph, equal to its trace.
    pub fn q(&self, x: f64) -> Result<f64> {
        let tx = self.t(x)?;
        let h = self.hess_v(x, tx)?;
        Ok(h[0][0] + h[1][1])
    }

    /// `A(x) = sqrt(hess(x, T(x)))`, computed as `hess / sqrt(trace)` for the rank-one Hessian.
    pub fn sqrt_a(&self, x: f64) -> Result<Mat2> {
        let tx = self.t(x)?;
        let h = self.hess_v(x, tx)?;
        let tr = h[0][0] + h[1][1];
        if !(tr > 0.0) {
            return Err(Error::Domain {
                x,
                reason: "Hessian trace is not positive on the graph".into(),
            });
        }
        let s = tr.sqrt();
        Ok([[h[0][0] / s, h[0][1] / s], [h[1][0] / s, h[1][1] / s]])
    }

    /// Duality residual `u(x) + u(T(x)) - 1/|x - T(x)|`.
    pub fn duality_residual(&self, x: f64) -> Result<f64> {
        let tx = self.t(x)?;
        Ok(self.u(x)? + self.u(tx)? - 1.0 / (x - tx).abs())
    }

    fn line_integral<F: Fn(f64) -> Result<f64>>(
        &self,
        f: F,
        window: Option<(f64, f64)>,
    ) -> Result<LineIntegral> {
        let tol = QuadTol::new(1e-14, 1e-11);
        let mut err = None;
        let mut g = |x: f64| {
            if x == 0.0 {
                return 0.0;
            }
            match f(x) {
                Ok(v) => v,
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            }
        };
        let pieces: [Quad; 4] = [
            integrate_from_neg_inf(&mut g, -1.0, tol)?,
            integrate(&mut g, -1.0, 0.0, tol)?,
            integrate(&mut g, 0.0, 1.0, tol)?,
            integrate_to_inf(&mut g, 1.0, tol)?,
        ];
        let total: f64 = pieces.iter().map(|q| q.value).sum();
        let error: f64 = pieces.iter().map(|q| q.error).sum();
        let mut out = LineIntegral {
            value: total,
            quad_error: error,
            tail_outside_window: 0.0,
        };
        if let Some((a, b)) = window {
            let inner = integrate(&mut g, a, b, tol)?;
            out.tail_outside_window = total - inner.value;
            out.value = inner.value;
        }
        if let Some(e) = err {
            return Err(e);
        }
        Ok(out)
    }

    /// `F_OT = int rho(x) / |x - T(x)| dx`, with the dual cross-check `2 int u drho`.
    pub fn f_ot(&self, window: Option<(f64, f64)>) -> Result<FotReport> {
        let d = &self.density;
        let main = self.line_integral(|x| Ok(d.pdf(x) / (x - self.t(x)?).abs()), window)?;
        let via_u = self.line_integral(|x| Ok(2.0 * d.pdf(x) * self.u(x)?), None)?;
        Ok(FotReport {
            f_ot: main.value,
            quad_error: main.quad_error,
            tail_outside_window: main.tail_outside_window,
            two_int_u: via_u.value,
            discrepancy: via_u.value - main.value,
        })
    }

    /// `F_ZPO = 1/2 int sqrt(q) rho dx`.
    pub fn f_zpo(&self, window: Option<(f64, f64)>) -> Result<LineIntegral> {
        let d = &self.density;
        self.line_integral(|x| Ok(0.5 * self.q(x)?.sqrt() * d.pdf(x)), window)
    }

    /// Weighted functionals `(mass, F_OT, F_ZPO)` of `rho * weight` for a `T`-invariant weight.
    pub fn weighted_functionals<W: Fn(f64) -> f64>(
        &self,
        weight: W,
        breaks: &[f64],
    ) -> Result<(f64, f64, f64)> {
        let d = &self.density;
        let tol = QuadTol::new(1e-14, 1e-11);
        let mut acc = (0.0, 0.0, 0.0);
        let mut err = None;
        for w in breaks.windows(2) {
            let mut run = |k: usize| {
                integrate(
                    |x| {
                        let wt = weight(x);
                        if wt == 0.0 {
                            return 0.0;
                        }
                        let r = d.pdf(x) * wt;
                        let res = match k {
                            0 => Ok(r),
                            1 => self.t(x).map(|tx| r / (x - tx).abs()),
                            _ => self.q(x).map(|q| 0.5 * q.sqrt() * r),
                        };
                        res.unwrap_or_else(|e| {
                            err.get_or_insert(e);
                            0.0
                        })
                    },
                    w[0],
                    w[1],
                    tol,
                )
            };
            acc.0 += run(0)?.value;
            acc.1 += run(1)?.value;
            acc.2 += run(2)?.value;
        }
        if let Some(e) = err {
            return Err(e);
        }
        Ok(acc)
    }

    /// Sample `V(x, T(x) + s n)` along the unit normal `n` and bound `V / s^2`.
    pub fn quadratic_growth_check(&self, h: f64, eps0: f64) -> Result<GrowthReport> {
        let dom = DomainH::new(self, h)?;
        let mut c_max: f64 = 0.0;
        let mut limit_err: f64 = 0.0;
        let mut samples = 0;
        let lattice = dom.lattice(60)?;
        for &x in &lattice {
            let tx = self.t(x)?;
            let tp = self.dt(x)?;
            let q = self.q(x)?;
            let nrm = (1.0 + tp * tp).sqrt();
            let n = [-tp / nrm, 1.0 / nrm];
            for k in 0..12 {
                let s = eps0 * 10f64.powf(-(k as f64) / 4.0);
                for sg in [-1.0, 1.0] {
                    let (px, py) = (x + sg * s * n[0], tx + sg * s * n[1]);
                    if px == py {
                        continue;
                    }
                    let v = self.v(px, py)?;
                    let ratio = v / (s * s);
                    c_max = c_max.max(ratio);
                    samples += 1;
                    if k == 11 {
                        limit_err = limit_err.max((ratio - 0.5 * q).abs() / (0.5 * q));
                    }
                }
            }
        }
        Ok(GrowthReport {
            h,
            eps0,
            c_max,
            small_offset_rel_err: limit_err,
            samples,
        })
    }
}

/// Result of an integral over the line, optionally restricted to a window.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LineIntegral {
    pub value: f64,
    pub quad_error: f64,
    pub tail_outside_window: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FotReport {
    pub f_ot: f64,
    pub quad_error: f64,
    pub tail_outside_window: f64,
    pub two_int_u: f64,
    pub discrepancy: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GrowthReport {
    pub h: f64,
    pub eps0: f64,
    /// Largest `V / dist^2` observed within `eps0` of the graph.
    pub c_max: f64,
    /// Relative deviation of `V / s^2` from `q / 2` at the smallest offset.
    pub small_offset_rel_err: f64,
    pub samples: usize,
}

/// Invariant domain `[T(r_H), T(H)] U [r_H, H]` with `rho([0, r_H]) = rho([H, inf))`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DomainH {
    pub h: f64,
    pub r_h: f64,
    pub neg: (f64, f64),
    pub pos: (f64, f64),
}

impl DomainH {
    pub fn new(sol: &CoulombOt, h: f64) -> Result<Self> {
        if !(h > 1.0) || !h.is_finite() {
            return Err(invalid("H", format!("cutoff must exceed 1, got {h}")));
        }
        let d = sol.density();
        let r_h = d.inv_mass0(d.sf(h))?;
        if !(r_h > 0.0 && r_h < h) {
            return Err(invalid("H", "inner radius is not inside (0, H)"));
        }
        Ok(Self {
            h,
            r_h,
            neg: (sol.t(r_h)?, sol.t(h)?),
            pos: (r_h, h),
        })
    }

    pub fn contains(&self, x: f64) -> bool {
        (x >= self.neg.0 && x <= self.neg.1) || (x >= self.pos.0 && x <= self.pos.1)
    }

    /// Lebesgue measure `|Omega_H|`.
    pub fn length(&self) -> f64 {
        (self.neg.1 - self.neg.0) + (self.pos.1 - self.pos.0)
    }

    pub fn components(&self) -> [(f64, f64); 2] {
        [self.neg, self.pos]
    }

    /// `rho(Omega_H)`.
    pub fn mass(&self, d: &Density1D) -> f64 {
        (d.cdf(self.neg.1) - d.cdf(self.neg.0)) + (d.mass0(self.pos.1) - d.mass0(self.pos.0))
    }

    /// Uniform lattice with `n` points per component.
    pub fn lattice(&self, n: usize) -> Result<Vec<f64>> {
        if n < 2 {
            return Err(invalid(
                "n",
                "lattice needs at least two points per component",
            ));
        }
        let mut out = Vec::with_capacity(2 * n);
        for (a, b) in self.components() {
            for i in 0..n {
                out.push(a + (b - a) * i as f64 / (n - 1) as f64);
            }
        }
        Ok(out)
    }
}

/// Structural constants of the transport layer on `Omega_H'`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OtConstants {
    pub l_h: f64,
    pub delta_gap: f64,
    pub max_abs_ddu: f64,
    pub min_q: f64,
    pub max_t_second: f64,
}

/// `L(H)` of the construction (max of the listed norms on `Omega_H'`) and the diagonal gap on `Omega_H`.
pub fn ot_constants(sol: &CoulombOt, h: f64, n: usize) -> Result<OtConstants> {
    let dom = DomainH::new(sol, h)?;
    let domp = DomainH::new(sol, h + 1.0)?;
    let d = sol.density();
    let xs = domp.lattice(n)?;
    let us = sol.u_many(&xs)?;
    let mut l: f64 = 0.0;
    let mut max_ddu: f64 = 0.0;
    let mut min_q = f64::INFINITY;
    let mut max_t2: f64 = 0.0;
    let mut prev: Option<(f64, f64, f64)> = None;
    for (i, &x) in xs.iter().enumerate() {
        let r = d.pdf(x);
        let tp = sol.dt(x)?;
        let t2 = sol.d2t(x)?;
        let ddu = sol.ddu(x)?;
        let q = sol.q(x)?;
        let norms = [
            r,
            1.0 / r,
            1.0 / tp,
            sol.t(x)?.abs(),
            tp.abs(),
            t2.abs(),
            us[i].abs(),
            sol.du(x)?.abs(),
            ddu.abs(),
            q,
            1.0 / q,
            d.dpdf(x).abs(),
        ];
        for v in norms {
            l = l.max(v);
        }
        if let Some((px, _, pddu)) = prev {
            if i % n != 0 {
                l = l.max(((ddu - pddu) / (x - px)).abs());
            }
        }
        prev = Some((x, r, ddu));
        max_ddu = max_ddu.max(ddu.abs());
        min_q = min_q.min(q);
        max_t2 = max_t2.max(t2.abs());
    }
    let mut gap = f64::INFINITY;
    for x in dom.lattice(n)? {
        gap = gap.min((sol.t(x)? - x).abs());
    }
    Ok(OtConstants {
        l_h: l,
        delta_gap: gap,
        max_abs_ddu: max_ddu,
        min_q,
        max_t_second: max_t2,
    })
}

/// Smooth `T`-invariant cutoff equal to 1 on `Omega_H` and vanishing outside `Omega_X`.
///
/// The weight depends only on the positive member `p` of the pair `{x, T(x)}`, so
/// `rho * weight` has the same optimal map, potential and Hessian field as `rho`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WindowTaper {
    pub inner: DomainH,
    pub outer: DomainH,
}

fn ramp(t: f64) -> f64 {
    if t <= 0.0 {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        let c = (0.5 * std::f64::consts::PI * t).cos();
        let c2 = c * c;
        c2 * c2
    }
}

impl WindowTaper {
    pub fn new(sol: &CoulombOt, h: f64, x_outer: f64) -> Result<Self> {
        if !(x_outer > h) {
            return Err(invalid(
                "window",
                format!("outer cutoff {x_outer} must exceed H = {h}"),
            ));
        }
        Ok(Self {
            inner: DomainH::new(sol, h)?,
            outer: DomainH::new(sol, x_outer)?,
        })
    }

    pub fn weight(&self, sol: &CoulombOt, x: f64) -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        let p = if x > 0.0 {
            x
        } else {
            match sol.t(x) {
                Ok(v) => v,
                Err(_) => return 0.0,
            }
        };
        let (ri, hi) = self.inner.pos;
        let (ro, ho) = self.outer.pos;
        if p >= hi {
            return ramp((p - hi) / (ho - hi));
        }
        if p <= ri {
            if p <= ro {
                return 0.0;
            }
            let tp = match sol.t(p) {
                Ok(v) => v,
                Err(_) => return 0.0,
            };
            let (a, b) = (self.outer.neg.0, self.inner.neg.0);
            return ramp((b - tp) / (b - a));
        }
        1.0
    }

    /// Smallest symmetric box `[-X, X]` containing `Omega_X`.
    pub fn half_width(&self) -> f64 {
        self.outer.neg.0.abs().max(self.outer.pos.1)
    }

    /// Breakpoints of the weighted integrands.
    pub fn breaks(&self) -> Vec<f64> {
        let mut b = vec![
            self.outer.neg.0,
            self.inner.neg.0,
            self.inner.neg.1,
            self.outer.neg.1,
            self.outer.pos.0,
            self.inner.pos.0,
            self.inner.pos.1,
            self.outer.pos.1,
        ];
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b
    }
}
