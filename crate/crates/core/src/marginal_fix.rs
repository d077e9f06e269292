//! Marginal repair: monotone plan for the remaining mass, its deconvolution
//! and the assembled recovery field.

use crate::coulomb_ot::{CoulombOt, DomainH, WindowTaper};
use crate::error::{invalid, Error, Result};
use crate::grid::{
    convolve2d, w2_1d, Axis, Energy, GridField1D, GridField2D, KeScheme, PotentialField, Stencil,
};
use crate::recovery::{MainPlan, ParameterSchedule, PartitionTdelta};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Negative values of `sigma` above this threshold are clipped to zero.
pub const CLIP_TOL: f64 = 1e-10;

/// Kinetic energy of the one-dimensional marginal of the bump `(4/pi)(1 - |x|^2)^3`.
pub const KE_THETA: f64 = 1.4;

/// Radial bump `(4/pi)(1 - r^2)^3` on the unit disc; unit mass.
pub fn bump(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        let s = 1.0 - r * r;
        4.0 / PI * s * s * s
    }
}

/// One-dimensional marginal `(128/(35 pi)) (1 - s^2)^{7/2}` of [`bump`].
pub fn bump_marginal(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        128.0 / (35.0 * PI) * (1.0 - s * s).powf(3.5)
    }
}

/// `Theta_eps` sampled at cell offsets within radius `eps^{1/4}`.
pub fn bump_stencil(hx: f64, hy: f64, eps: f64) -> Result<Stencil> {
    if !(eps > 0.0) {
        return Err(invalid("eps", "must be positive"));
    }
    let r = eps.powf(0.25);
    let (rx, ry) = ((r / hx).floor() as usize, (r / hy).floor() as usize);
    if rx == 0 && ry == 0 {
        return Ok(Stencil::delta());
    }
    Stencil::sample(hx, hy, rx, ry, |dx, dy| bump(dx.hypot(dy) / r))
}

/// Remaining-mass plan `pi_0 = (Id, S o T_delta)_# sigma^1` with its diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemainderPlan {
    pub sigma1: GridField1D,
    pub sigma2: GridField1D,
    /// `T_delta # sigma^1` deposited cell by cell on the `y` axis.
    pub pushed: GridField1D,
    /// Monotone map from `pushed` to `sigma^2` at cell centres; `NaN` off the support.
    pub s_map: Vec<f64>,
    pub pi0: GridField2D,
    pub mass: f64,
    /// Mass removed by clipping negatives.
    pub clipped_mass: f64,
    pub pe: f64,
    pub pe_over_sqrt_eps: f64,
    pub masked_mass: f64,
    pub w2_squared: f64,
    /// `sup |S(y) - y|` over `Omega_H'`.
    pub sup_shift: f64,
    /// `(W_2^2 / tau)^{1/3}`.
    pub shift_scale: f64,
    /// `sup |y - T(x)|` over the support of `pi_0` with `x` in `Omega_H'`.
    pub graph_distance_inner: f64,
    /// Same supremum with `x` outside `Omega_H'`.
    pub graph_distance_outer: f64,
}

fn clip(mut f: GridField1D, name: &str) -> Result<(GridField1D, f64)> {
    let h = f.axis.h();
    let mut clipped = 0.0;
    for v in f.values.iter_mut() {
        if *v < 0.0 {
            if *v < -CLIP_TOL {
                return Err(Error::MassMismatch(format!(
                    "{name} has value {v:.3e} below -{CLIP_TOL:e}; the main-plan marginal exceeds the target"
                )));
            }
            clipped -= *v * h;
            *v = 0.0;
        }
    }
    Ok((f, clipped))
}

/// Deposit each cell mass of `mu` uniformly on the image interval of its cell edges.
fn push_forward<F: Fn(f64) -> Result<f64>>(
    mu: &GridField1D,
    target: Axis,
    map: F,
) -> Result<GridField1D> {
    let h = mu.axis.h();
    let ht = target.h();
    let mut out = vec![0.0; target.n];
    let nudge = 1e-9 * h;
    for i in 0..mu.axis.n {
        let m = mu.values[i] * h;
        if m == 0.0 {
            continue;
        }
        let (mut a, mut b) = (mu.axis.edge(i), mu.axis.edge(i + 1));
        if a == 0.0 {
            a += nudge;
        }
        if b == 0.0 {
            b -= nudge;
        }
        if a < 0.0 && b > 0.0 {
            return Err(invalid("measure", "mass on a cell straddling the median"));
        }
        let (ya, yb) = (map(a)?, map(b)?);
        let (lo, hi) = (
            ya.min(yb).clamp(target.lo, target.hi),
            ya.max(yb).clamp(target.lo, target.hi),
        );
        let k0 = (((lo - target.lo) / ht).floor() as usize).min(target.n - 1);
        let k1 = (((hi - target.lo) / ht).floor() as usize).min(target.n - 1);
        if hi - lo <= 0.0 || k0 == k1 {
            out[k0] += m;
            continue;
        }
        for (k, o) in out.iter_mut().enumerate().take(k1 + 1).skip(k0) {
            let ov = hi.min(target.edge(k + 1)) - lo.max(target.edge(k));
            if ov > 0.0 {
                *o += m * ov / (hi - lo);
            }
        }
    }
    GridField1D::new(target, out.into_iter().map(|m| m / ht).collect())
}

/// North-west-corner coupling of cell masses in the given visiting orders; marginals are exact.
fn nw_corner(a: &[f64], order_a: &[usize], b: &[f64], order_b: &[usize], ny: usize) -> Vec<f64> {
    let mut plan = vec![0.0; a.len() * ny];
    let (mut ia, mut ib) = (0, 0);
    let mut ra = order_a.first().map_or(0.0, |&k| a[k]);
    let mut rb = order_b.first().map_or(0.0, |&k| b[k]);
    while ia < order_a.len() && ib < order_b.len() {
        let cell = order_a[ia] * ny + order_b[ib];
        if ra <= rb {
            plan[cell] += ra;
            rb -= ra;
            ia += 1;
            ra = order_a.get(ia).map_or(0.0, |&k| a[k]);
        } else {
            plan[cell] += rb;
            ra -= rb;
            ib += 1;
            rb = order_b.get(ib).map_or(0.0, |&k| b[k]);
        }
    }
    // rounding leftovers of the first measure go to the last column
    if let Some(&last) = order_b.last() {
        while ia < order_a.len() {
            plan[order_a[ia] * ny + last] += ra;
            ia += 1;
            ra = order_a.get(ia).map_or(0.0, |&k| a[k]);
        }
    }
    plan
}

impl RemainderPlan {
    /// `sigma^i = rho_h - rho^i`, then the monotone coupling of `T_delta # sigma^1` with `sigma^2`.
    pub fn build(
        mp: &MainPlan,
        rho_h: &GridField1D,
        sol: &CoulombOt,
        part: &PartitionTdelta,
        sched: &ParameterSchedule,
        potential: &PotentialField,
    ) -> Result<Self> {
        let ax = rho_h.axis;
        let diff = |m: &GridField1D| -> Result<GridField1D> {
            GridField1D::new(
                ax,
                rho_h
                    .values
                    .iter()
                    .zip(&m.values)
                    .map(|(r, v)| r - v)
                    .collect(),
            )
        };
        let (s1, c1) = clip(diff(&mp.rho1)?, "sigma1")?;
        let (mut s2, c2) = clip(diff(&mp.rho2)?, "sigma2")?;
        let (m1, m2) = (s1.mass(), s2.mass());
        if (m1 - m2).abs() > 1e-6 {
            return Err(Error::MassMismatch(format!(
                "sigma masses {m1} and {m2} differ"
            )));
        }
        if m2 > 0.0 {
            let r = m1 / m2;
            s2.values.iter_mut().for_each(|v| *v *= r);
        }
        let h = ax.h();
        let a: Vec<f64> = s1.values.iter().map(|v| v * h).collect();
        let b: Vec<f64> = s2.values.iter().map(|v| v * h).collect();
        // T_delta is increasing on each half-line and sends x > 0 below x < 0
        let mut order_a: Vec<usize> = (0..ax.n).filter(|&i| ax.x(i) > 0.0).collect();
        order_a.extend((0..ax.n).filter(|&i| ax.x(i) <= 0.0));
        let order_b: Vec<usize> = (0..ax.n).collect();
        let plan = nw_corner(&a, &order_a, &b, &order_b, ax.n);
        let pi0 = GridField2D::new(ax, ax, plan.into_iter().map(|m| m / (h * h)).collect())?;

        let pushed = push_forward(&s1, ax, |x| part.t_delta(sol, x))?;
        let w2 = w2_1d(&pushed, &s2)?;
        let hprime = DomainH::new(sol, sched.h + 1.0)?;
        let sup_shift = (0..ax.n)
            .filter(|&i| hprime.contains(ax.x(i)) && w2.map[i].is_finite())
            .map(|i| (w2.map[i] - ax.x(i)).abs())
            .fold(0.0, f64::max);

        let (mut gin, mut gout): (f64, f64) = (0.0, 0.0);
        for i in 0..ax.n {
            let x = ax.x(i);
            let tx = sol.t(x).ok();
            for j in 0..ax.n {
                if pi0.at(i, j) <= 0.0 {
                    continue;
                }
                let d = tx.map_or(f64::INFINITY, |t| (ax.x(j) - t).abs());
                if hprime.contains(x) {
                    gin = gin.max(d);
                } else {
                    gout = gout.max(d);
                }
            }
        }
        let (pe, masked_mass) = pi0.potential_energy(potential)?;
        Ok(Self {
            mass: s1.mass(),
            clipped_mass: c1 + c2,
            sigma1: s1,
            sigma2: s2,
            pushed,
            s_map: w2.map,
            pi0,
            pe,
            pe_over_sqrt_eps: pe / sched.eps.sqrt(),
            masked_mass,
            w2_squared: w2.w2_squared,
            sup_shift,
            shift_scale: (w2.w2_squared / sched.tau).cbrt(),
            graph_distance_inner: gin,
            graph_distance_outer: gout,
        })
    }
}

/// Deconvolution of a plan against a compact kernel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeconvolvedPlan {
    pub pi_tilde: GridField2D,
    /// Stencil radius in cells along `x` and `y`.
    pub radius_cells: (usize, usize),
    /// Discrete marginals of the stencil.
    pub theta_x: Vec<f64>,
    pub theta_y: Vec<f64>,
    /// Max absolute marginal deviation from the marginals of `pi_0`, in density units.
    pub marginal_error: (f64, f64),
    pub min_value: f64,
    /// Support growth in `x` and `y` beyond the bounding box of `pi_0`.
    pub support_growth: (f64, f64),
    /// `2 eps^{1/4}`.
    pub support_allowance: f64,
}

impl DeconvolvedPlan {
    pub fn support_ok(&self) -> bool {
        let tol = 1e-12 * (1.0 + self.support_allowance);
        self.support_growth.0 <= self.support_allowance + tol
            && self.support_growth.1 <= self.support_allowance + tol
    }
}

fn bbox(f: &GridField2D) -> Option<(f64, f64, f64, f64)> {
    let mut bb: Option<(f64, f64, f64, f64)> = None;
    for i in 0..f.ax.n {
        for j in 0..f.ay.n {
            if f.at(i, j) > 0.0 {
                let (x, y) = (f.ax.x(i), f.ay.x(j));
                bb = Some(match bb {
                    None => (x, x, y, y),
                    Some((a, b, c, d)) => (a.min(x), b.max(x), c.min(y), d.max(y)),
                });
            }
        }
    }
    bb
}

/// Deconvolve against `Theta_eps`.
pub fn deconvolve(pi0: &GridField2D, eps: f64) -> Result<DeconvolvedPlan> {
    let k = bump_stencil(pi0.ax.h(), pi0.ay.h(), eps)?;
    deconvolve_with(pi0, &k, 2.0 * eps.powf(0.25))
}

/// `sigma^1(x) sigma^2(y) sum theta(x' - x) theta(y' - y) Pi(x', y') / (sigma^1_k(x') sigma^2_k(y'))` with `Pi = pi_0 * k`.
pub fn deconvolve_with(
    pi0: &GridField2D,
    k: &Stencil,
    support_allowance: f64,
) -> Result<DeconvolvedPlan> {
    if pi0.values.iter().any(|v| !(*v >= 0.0)) {
        return Err(invalid("plan", "values must be finite and nonnegative"));
    }
    let (nx, ny) = (pi0.ax.n, pi0.ay.n);
    let (hx, hy) = (pi0.ax.h(), pi0.ay.h());
    let (sx, sy) = (2 * k.rx + 1, 2 * k.ry + 1);
    let theta_x: Vec<f64> = (0..sx).map(|a| (0..sy).map(|b| k.at(a, b)).sum()).collect();
    let theta_y: Vec<f64> = (0..sy).map(|b| (0..sx).map(|a| k.at(a, b)).sum()).collect();

    let s1: Vec<f64> = pi0.marginal_x().values.iter().map(|v| v * hx).collect();
    let s2: Vec<f64> = pi0.marginal_y().values.iter().map(|v| v * hy).collect();
    let pm = pi0.scaled(hx * hy);
    let pe = convolve2d(&pm, k)?;
    let (px, py) = (pe.ax.n, pe.ay.n);
    let smooth = |s: &[f64], th: &[f64], n_out: usize| -> Vec<f64> {
        let mut out = vec![0.0; n_out];
        for (i0, &v) in s.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for (a, &t) in th.iter().enumerate() {
                out[i0 + a] += t * v;
            }
        }
        out
    };
    let s1e = smooth(&s1, &theta_x, px);
    let s2e = smooth(&s2, &theta_y, py);
    const FLOOR: f64 = 1e-300;
    // q[i'][j] = sum_b theta_y(b) Pi(i', j + b) / (s1e(i') s2e(j + b))
    let q: Vec<f64> = (0..px)
        .into_par_iter()
        .flat_map_iter(|ip| {
            let mut row = vec![0.0; ny];
            let d1 = s1e[ip].max(FLOOR);
            if s1e[ip] > 0.0 {
                for (j, r) in row.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (b, &t) in theta_y.iter().enumerate() {
                        let v = pe.values[ip * py + j + b];
                        if v != 0.0 {
                            acc += t * v / (d1 * s2e[j + b].max(FLOOR));
                        }
                    }
                    *r = acc;
                }
            }
            row
        })
        .collect();
    let values: Vec<f64> = (0..nx)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut row = vec![0.0; ny];
            if s1[i] > 0.0 {
                for (a, &t) in theta_x.iter().enumerate() {
                    if t == 0.0 {
                        continue;
                    }
                    let qr = &q[(i + a) * ny..(i + a + 1) * ny];
                    for (r, v) in row.iter_mut().zip(qr) {
                        *r += t * v;
                    }
                }
                for (j, r) in row.iter_mut().enumerate() {
                    *r *= s1[i] * s2[j] / (hx * hy);
                }
            }
            row
        })
        .collect();
    let pi_tilde = GridField2D::new(pi0.ax, pi0.ay, values)?;
    let mx = pi_tilde.marginal_x();
    let my = pi_tilde.marginal_y();
    let err = |m: &GridField1D, s: &[f64], h: f64| {
        m.values
            .iter()
            .zip(s)
            .map(|(v, w)| (v - w / h).abs())
            .fold(0.0, f64::max)
    };
    let growth = match (bbox(pi0), bbox(&pi_tilde)) {
        (Some(a), Some(b)) => (
            (a.0 - b.0).max(b.1 - a.1).max(0.0),
            (a.2 - b.2).max(b.3 - a.3).max(0.0),
        ),
        _ => (0.0, 0.0),
    };
    Ok(DeconvolvedPlan {
        min_value: pi_tilde.min_value(),
        marginal_error: (err(&mx, &s1, hx), err(&my, &s2, hy)),
        pi_tilde,
        radius_cells: (k.rx, k.ry),
        theta_x,
        theta_y,
        support_growth: growth,
        support_allowance,
    })
}

/// Measured constant of `KE(Pi~) <= KE(sigma^1) + KE(sigma^2) + C ||Pi_0||_1 / sqrt(eps)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KeBoundCheck {
    pub ke_tilde: f64,
    pub ke_sigma1: f64,
    pub ke_sigma2: f64,
    pub mass: f64,
    /// `(KE(Pi~) - KE(sigma^1) - KE(sigma^2)) sqrt(eps) / ||Pi_0||_1`.
    pub constant: f64,
    /// `10 KE(theta)`.
    pub limit: f64,
    pub holds: bool,
}

/// Forward-difference kinetic energies, the jointly convex discretization.
pub fn ke_bound_check(pi0: &GridField2D, dp: &DeconvolvedPlan, eps: f64) -> KeBoundCheck {
    let ke_tilde = dp.pi_tilde.kinetic_energy(KeScheme::Forward);
    let ke_sigma1 = pi0.marginal_x().kinetic_energy();
    let ke_sigma2 = pi0.marginal_y().kinetic_energy();
    let mass = pi0.mass();
    let constant = if mass > 0.0 {
        (ke_tilde - ke_sigma1 - ke_sigma2) * eps.sqrt() / mass
    } else {
        0.0
    };
    let limit = 10.0 * KE_THETA;
    KeBoundCheck {
        ke_tilde,
        ke_sigma1,
        ke_sigma2,
        mass,
        constant,
        limit,
        holds: constant <= limit,
    }
}

/// Both sides of `eps^{-1/2} PE(Pi~) <= C_H eps^{-1/2} PE(pi_0) + C ||Pi_0||_1` with `C_H = 1`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PeBoundCheck {
    pub pe0_over_sqrt_eps: f64,
    pub pe_tilde_over_sqrt_eps: f64,
    pub mass: f64,
    /// Smallest `C` for which the inequality holds with `C_H = 1`.
    pub constant: f64,
    /// `eps^{-1/2} PE(Pi~) / (eps^{-1/2} PE(pi_0) + ||Pi_0||_1)`.
    pub ratio: f64,
    /// Mass of `pi_0` farther than `c` from the graph of `T` inside `Omega_H'` or off it outside.
    pub support_condition_ok: bool,
}

pub fn deconvolution_pe_bound_check(
    rp: &RemainderPlan,
    dp: &DeconvolvedPlan,
    potential: &PotentialField,
    eps: f64,
    graph_radius: f64,
) -> Result<PeBoundCheck> {
    let support_ok =
        rp.graph_distance_inner <= graph_radius && rp.graph_distance_outer <= rp.pi0.ax.h();
    pe_bound_check(&rp.pi0, dp, potential, eps, support_ok)
}

/// [`PeBoundCheck`] for an arbitrary plan with a caller-supplied support verdict.
pub fn pe_bound_check(
    pi0: &GridField2D,
    dp: &DeconvolvedPlan,
    potential: &PotentialField,
    eps: f64,
    support_ok: bool,
) -> Result<PeBoundCheck> {
    let se = eps.sqrt();
    let (p0, _) = pi0.potential_energy(potential)?;
    let (pt, _) = dp.pi_tilde.potential_energy(potential)?;
    let pe0 = p0 / se;
    let ptl = pt / se;
    let mass = pi0.mass();
    Ok(PeBoundCheck {
        pe0_over_sqrt_eps: pe0,
        pe_tilde_over_sqrt_eps: ptl,
        mass,
        constant: if mass > 0.0 {
            ((ptl - pe0) / mass).max(0.0)
        } else {
            0.0
        },
        ratio: ptl / (pe0 + mass),
        support_condition_ok: support_ok,
    })
}

/// Final field `psi^2 = gammabar + Pi~` with its energy budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryField {
    pub psi_sq: GridField2D,
    pub energy: Energy,
    pub energy_main: Energy,
    pub energy_remainder: Energy,
    /// `||marg_1 - rho_h||_1` and `||marg_2 - rho_h||_1`.
    pub marginal_residual: (f64, f64),
    pub min_value: f64,
    /// `F_ZPO` of the windowed density.
    pub f_zpo: f64,
    pub gap: f64,
    /// `E(psi) <= E(sqrt gammabar) + E(sqrt Pi~)` up to `1e-12` relative.
    pub subadditive: bool,
}

/// `1/2 int sqrt(q) rho chi` for the window taper `chi`.
pub fn windowed_zpo(sol: &CoulombOt, taper: &WindowTaper) -> Result<f64> {
    let (_, _, zpo) = sol.weighted_functionals(|x| taper.weight(sol, x), &taper.breaks())?;
    Ok(zpo)
}

pub fn assemble_recovery(
    mp: &MainPlan,
    dp: &DeconvolvedPlan,
    rho_h: &GridField1D,
    potential: &PotentialField,
    eps: f64,
    f_zpo: f64,
) -> Result<RecoveryField> {
    let psi_sq = mp.gammabar.add(&dp.pi_tilde)?;
    let energy = psi_sq.e_eps(potential, eps, KeScheme::Centered)?;
    let energy_main = mp.gammabar.e_eps(potential, eps, KeScheme::Centered)?;
    let energy_remainder = dp.pi_tilde.e_eps(potential, eps, KeScheme::Centered)?;
    let r1 = psi_sq.marginal_x().l1_distance(rho_h)?;
    let r2 = psi_sq.marginal_y().l1_distance(rho_h)?;
    let upper = energy_main.e + energy_remainder.e;
    Ok(RecoveryField {
        min_value: psi_sq.min_value(),
        psi_sq,
        energy,
        energy_main,
        energy_remainder,
        marginal_residual: (r1, r2),
        f_zpo,
        gap: energy.e - f_zpo,
        subadditive: energy.e <= upper * (1.0 + 1e-12),
    })
}
