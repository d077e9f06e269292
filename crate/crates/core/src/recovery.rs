//! Main plan: truncated Gaussians with frozen matrices superposed along the
//! graph of the piecewise-linear interpolant `T_delta`.

use crate::coulomb_ot::{ot_constants, CoulombOt, DomainH, Mat2, WindowTaper};
use crate::error::{invalid, Error, Result};
use crate::grid::{Axis, DiagonalRule, Energy, GridField1D, GridField2D, KeScheme, PotentialField};
use crate::quad::{gauss_legendre_on, integrate, newton_bisect, QuadTol};
use crate::trunc_gauss::TruncatedGaussian;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Schedule parameter addressed by an override.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    N,
    Beta,
    Delta,
    Tau,
}

impl Param {
    pub const ALL: [Param; 4] = [Param::N, Param::Beta, Param::Delta, Param::Tau];

    pub fn name(&self) -> &'static str {
        match self {
            Param::N => "n",
            Param::Beta => "beta",
            Param::Delta => "delta",
            Param::Tau => "tau",
        }
    }

    /// `ln` of the default value at `L = |ln eps|`.
    fn default_ln(&self, l: f64) -> f64 {
        let ll = l.ln();
        match self {
            Param::N => 1.25 * ll,
            Param::Beta => -0.5 * l + 3.0 * ll,
            Param::Delta => -0.125 * l - ll,
            Param::Tau => -ll / 3.0,
        }
    }
}

impl FromStr for Param {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "n" => Ok(Param::N),
            "beta" => Ok(Param::Beta),
            "delta" => Ok(Param::Delta),
            "tau" => Ok(Param::Tau),
            other => Err(Error::Parse(format!(
                "unknown schedule parameter {other:?}"
            ))),
        }
    }
}

/// Replacement rule for one schedule parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rule {
    /// Fixed value `v`.
    Absolute { v: f64 },
    /// `c` times the default.
    Scale { c: f64 },
    /// `c eps^p`.
    Power { c: f64, p: f64 },
    /// `c |ln eps|^p`.
    LogPower { c: f64, p: f64 },
}

impl Rule {
    fn ln_value(&self, param: Param, l: f64) -> f64 {
        match *self {
            Rule::Absolute { v } => v.ln(),
            Rule::Scale { c } => c.ln() + param.default_ln(l),
            Rule::Power { c, p } => c.ln() - p * l,
            Rule::LogPower { c, p } => c.ln() + p * l.ln(),
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::Absolute { v } => write!(f, "{v}"),
            Rule::Scale { c } => write!(f, "*{c}"),
            Rule::Power { c, p } => write!(f, "{c}@{p}"),
            Rule::LogPower { c, p } => write!(f, "{c}@log{p}"),
        }
    }
}

fn parse_num(s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|e| Error::Parse(format!("bad number {s:?}: {e}")))?;
    if !v.is_finite() {
        return Err(Error::Parse(format!("number {s:?} is not finite")));
    }
    Ok(v)
}

/// One override `name=rule`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Override {
    pub param: Param,
    pub rule: Rule,
}

impl FromStr for Override {
    type Err = Error;

    /// Accepts `v`, `*c`, `c@p` and `c@logp` after `name=`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, rhs) = s
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("override {s:?} must look like name=rule")))?;
        let param: Param = name.parse()?;
        let rhs = rhs.trim();
        let rule = if let Some(c) = rhs.strip_prefix('*') {
            Rule::Scale { c: parse_num(c)? }
        } else if let Some((c, p)) = rhs.split_once('@') {
            let c = parse_num(c)?;
            match p.trim().strip_prefix("log") {
                Some(p) => Rule::LogPower {
                    c,
                    p: parse_num(p)?,
                },
                None => Rule::Power {
                    c,
                    p: parse_num(p)?,
                },
            }
        } else {
            Rule::Absolute { v: parse_num(rhs)? }
        };
        let positive = match rule {
            Rule::Absolute { v } => v > 0.0,
            Rule::Scale { c } | Rule::Power { c, .. } | Rule::LogPower { c, .. } => c > 0.0,
        };
        if !positive {
            return Err(Error::Parse(format!(
                "override {s:?} must have a positive value or coefficient"
            )));
        }
        Ok(Override { param, rule })
    }
}

impl fmt::Display for Override {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.param.name(), self.rule)
    }
}

/// Parse a comma- or whitespace-separated override list.
pub fn parse_overrides(s: &str) -> Result<Vec<Override>> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect()
}

/// Overrides used for desk-scale runs: `beta = eps^{1/3} / 2`, half the default `delta`,
/// `tau = 0.01 |ln eps|^{-1/3}`.
pub fn tuned_overrides() -> Vec<Override> {
    vec![
        Override {
            param: Param::Beta,
            rule: Rule::Power {
                c: 0.5,
                p: 1.0 / 3.0,
            },
        },
        Override {
            param: Param::Delta,
            rule: Rule::Scale { c: 0.5 },
        },
        Override {
            param: Param::Tau,
            rule: Rule::LogPower {
                c: 0.01,
                p: -1.0 / 3.0,
            },
        },
    ]
}

/// Override list where the token `tuned` expands to [`tuned_overrides`] and `none` to nothing.
///
/// Later entries win for the same parameter.
pub fn resolve_overrides(s: &str) -> Result<Vec<Override>> {
    let mut out = Vec::new();
    for tok in s
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
    {
        match tok {
            "tuned" => out.extend(tuned_overrides()),
            "none" => {}
            t => out.push(t.parse()?),
        }
    }
    Ok(out)
}

/// One asymptotic ordering `lhs << rhs` evaluated at a concrete `eps`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`.
    pub ratio: f64,
    pub holds: bool,
    /// `log10(rhs / lhs)`; positive when the ordering holds.
    pub margin_decades: f64,
}

/// Parameters `(eps, H, N, beta, delta, tau)` of the construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterSchedule {
    pub eps: f64,
    pub h: f64,
    pub n: f64,
    pub beta: f64,
    pub delta: f64,
    pub tau: f64,
    pub overrides: Vec<Override>,
    pub validity: Vec<OrderingCheck>,
}

fn ln_params(l: f64, overrides: &[Override]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (k, p) in Param::ALL.iter().enumerate() {
        out[k] = overrides
            .iter()
            .rev()
            .find(|o| o.param == *p)
            .map(|o| o.rule.ln_value(*p, l))
            .unwrap_or_else(|| p.default_ln(l));
    }
    out
}

/// `(name, ln lhs, ln rhs)` of every ordering at `L = |ln eps|`.
fn ln_orderings(l: f64, lp: [f64; 4]) -> Vec<(&'static str, f64, f64)> {
    let [n, b, d, t] = lp;
    let e = -l;
    vec![
        ("eps^(1/2) N << beta", 0.5 * e + n, b),
        ("beta << eps^(2/5)", b, 0.4 * e),
        ("(beta N)^(1/2) << delta", 0.5 * (b + n), d),
        ("delta << eps^(1/8) N^(-3/5)", d, 0.125 * e - 0.6 * n),
        ("delta^2 / eps^(1/4) << tau", 2.0 * d - 0.25 * e, t),
        ("eps^(1/2) N^2 / beta << tau", 0.5 * e + 2.0 * n - b, t),
        ("beta delta N / eps^(1/2) << tau", b + d + n - 0.5 * e, t),
        ("beta^(1/2) N^(1/2) << tau", 0.5 * (b + n), t),
        ("eps^(1/4) << beta^(1/2) N^(1/2)", 0.25 * e, 0.5 * (b + n)),
        ("beta << eps^(1/4)", b, 0.25 * e),
    ]
}

impl ParameterSchedule {
    /// Defaults `N = L^{5/4}`, `beta = eps^{1/2} L^3`, `delta = eps^{1/8} / L`, `tau = L^{-1/3}` with `L = |ln eps|`, then overrides.
    pub fn new(eps: f64, h: f64, overrides: &[Override]) -> Result<Self> {
        if !(eps > 0.0 && eps < (-1.0f64).exp()) {
            return Err(invalid("eps", format!("must lie in (0, 1/e), got {eps}")));
        }
        if !(h > 1.0) || !h.is_finite() {
            return Err(invalid("H", format!("must exceed 1, got {h}")));
        }
        let l = -eps.ln();
        let lp = ln_params(l, overrides);
        let [n, beta, delta, tau] = lp.map(f64::exp);
        for (p, v) in Param::ALL.iter().zip([n, beta, delta, tau]) {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(
                    "schedule",
                    format!("{} evaluates to {v}", p.name()),
                ));
            }
        }
        let validity = ln_orderings(l, lp)
            .into_iter()
            .map(|(name, a, b)| OrderingCheck {
                name: name.to_string(),
                lhs: a.exp(),
                rhs: b.exp(),
                ratio: (a - b).exp(),
                holds: a < b,
                margin_decades: (b - a) / std::f64::consts::LN_10,
            })
            .collect();
        Ok(Self {
            eps,
            h,
            n,
            beta,
            delta,
            tau,
            overrides: overrides.to_vec(),
            validity,
        })
    }

    pub fn tuned(eps: f64, h: f64) -> Result<Self> {
        Self::new(eps, h, &tuned_overrides())
    }

    pub fn all_hold(&self) -> bool {
        self.validity.iter().all(|c| c.holds)
    }

    pub fn failed(&self) -> Vec<&OrderingCheck> {
        self.validity.iter().filter(|c| !c.holds).collect()
    }
}

/// Smallest `|log10 eps|` beyond which every ordering holds, searched on `|ln eps|` up to `1e8`.
///
/// Returns `None` when some ordering still fails at the end of the search range.
pub fn all_hold_threshold(overrides: &[Override]) -> Option<f64> {
    let ok = |l: f64| {
        ln_orderings(l, ln_params(l, overrides))
            .iter()
            .all(|o| o.1 < o.2)
    };
    let mut hi = 1.5;
    while !ok(hi) {
        hi *= 1.5;
        if hi > 1e8 {
            return None;
        }
    }
    // last failure below `hi` on a geometric scan, then bisection
    let mut lo = 1.0;
    let mut x = 1.0;
    while x < hi {
        if !ok(x) {
            lo = x;
        }
        x *= 1.01;
    }
    if ok(lo) {
        return Some(lo / std::f64::consts::LN_10);
    }
    let mut hi = (lo * 1.01).max(lo + 1e-12);
    while !ok(hi) {
        hi *= 1.01;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi / std::f64::consts::LN_10)
}

/// Subdivision of `Omega_H` with the piecewise-linear interpolant `T_delta`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionTdelta {
    pub domain: DomainH,
    /// Intervals `[a_i, b_i]`, sorted.
    pub intervals: Vec<(f64, f64)>,
    /// `(T(a_i), T(b_i))`.
    pub images: Vec<(f64, f64)>,
    /// Freeze points `x_i` with `T'(x_i)` equal to the chord slope.
    pub freeze: Vec<f64>,
    pub slopes: Vec<f64>,
    /// `|T'(x_i) - slope_i|`.
    pub slope_residuals: Vec<f64>,
    /// Intervals where the bracket failed and the midpoint was used.
    pub midpoint_fallbacks: usize,
}

impl PartitionTdelta {
    /// Equal-length subdivision of each component with lengths in `(delta/2, delta)`.
    pub fn build(sol: &CoulombOt, h: f64, delta: f64) -> Result<Self> {
        let domain = DomainH::new(sol, h)?;
        let mut intervals = Vec::new();
        for (lo, hi) in domain.components() {
            let len = hi - lo;
            if !(delta > 0.0) || len < 0.5 * delta {
                return Err(invalid(
                    "delta",
                    format!("{delta} is too large for a component of length {len}"),
                ));
            }
            let m = ((len / delta) * (1.0 + 1e-12)).ceil().max(1.0) as usize;
            let m = if len / m as f64 <= 0.5 * delta {
                m - 1
            } else {
                m
            }
            .max(1);
            for k in 0..m {
                let a = lo + len * k as f64 / m as f64;
                let b = if k + 1 == m {
                    hi
                } else {
                    lo + len * (k + 1) as f64 / m as f64
                };
                intervals.push((a, b));
            }
        }
        let mut images = Vec::with_capacity(intervals.len());
        let mut freeze = Vec::with_capacity(intervals.len());
        let mut slopes = Vec::with_capacity(intervals.len());
        let mut residuals = Vec::with_capacity(intervals.len());
        let mut fallbacks = 0;
        for &(a, b) in &intervals {
            let (ta, tb) = (sol.t(a)?, sol.t(b)?);
            let slope = (tb - ta) / (b - a);
            let g = |x: f64| sol.dt(x).unwrap_or(f64::NAN) - slope;
            let k = 32;
            let pts: Vec<f64> = (0..=k).map(|j| a + (b - a) * j as f64 / k as f64).collect();
            let vals: Vec<f64> = pts.iter().map(|&x| g(x)).collect();
            let mut found = None;
            for j in 0..k {
                if vals[j] == 0.0 {
                    found = Some(pts[j]);
                    break;
                }
                if vals[j] * vals[j + 1] < 0.0 {
                    let (lo, hi, sgn) = if vals[j] < 0.0 {
                        (pts[j], pts[j + 1], 1.0)
                    } else {
                        (pts[j], pts[j + 1], -1.0)
                    };
                    let r = newton_bisect(
                        |x| sgn * g(x),
                        |x| sgn * sol.d2t(x).unwrap_or(f64::NAN),
                        lo,
                        hi,
                        1e-14,
                    );
                    found = r.ok();
                    break;
                }
            }
            let x = match found {
                Some(x) => x,
                None => {
                    fallbacks += 1;
                    0.5 * (a + b)
                }
            };
            images.push((ta, tb));
            freeze.push(x);
            slopes.push(slope);
            residuals.push(g(x).abs());
        }
        Ok(Self {
            domain,
            intervals,
            images,
            freeze,
            slopes,
            slope_residuals: residuals,
            midpoint_fallbacks: fallbacks,
        })
    }

    /// Index of the interval containing `x`.
    pub fn locate(&self, x: f64) -> Option<usize> {
        let k = self.intervals.partition_point(|iv| iv.1 < x);
        (k < self.intervals.len() && self.intervals[k].0 <= x).then_some(k)
    }

    /// `T_delta(x)`: affine on each interval, equal to `T` elsewhere.
    pub fn t_delta(&self, sol: &CoulombOt, x: f64) -> Result<f64> {
        match self.locate(x) {
            Some(k) => {
                let (a, b) = self.intervals[k];
                let (ta, tb) = self.images[k];
                let s = (x - a) / (b - a);
                Ok((1.0 - s) * ta + s * tb)
            }
            None => sol.t(x),
        }
    }

    /// `sup |T_delta - T|` on a lattice with `per_interval` points per interval.
    pub fn max_interp_error(&self, sol: &CoulombOt, per_interval: usize) -> Result<f64> {
        let mut m: f64 = 0.0;
        for (k, &(a, b)) in self.intervals.iter().enumerate() {
            let (ta, tb) = self.images[k];
            for j in 0..=per_interval {
                let s = j as f64 / per_interval as f64;
                let x = a + s * (b - a);
                m = m.max(((1.0 - s) * ta + s * tb - sol.t(x)?).abs());
            }
        }
        Ok(m)
    }

    pub fn max_length(&self) -> f64 {
        self.intervals
            .iter()
            .map(|iv| iv.1 - iv.0)
            .fold(0.0, f64::max)
    }

    pub fn min_length(&self) -> f64 {
        self.intervals
            .iter()
            .map(|iv| iv.1 - iv.0)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Square domain and resolution of a grid run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    /// The taper equals one on `Omega_{taper_start}`.
    pub taper_start: f64,
    /// Outer cutoff `X` of the window taper; the grid is `[-X, X]^2`.
    pub window: f64,
    /// Minimum number of cells per transverse kernel scale `1/sqrt(a)`.
    pub min_cells_per_width: f64,
}

impl GridSpec {
    /// Taper from `H + 1/2` to `X = H + 3/2` and a four-cell resolution guard.
    pub fn for_h(h: f64, n: usize) -> Self {
        Self {
            n,
            taper_start: h + 0.5,
            window: h + 1.5,
            min_cells_per_width: 4.0,
        }
    }
}

/// Cell integrals of `rho * chi` divided by the cell width.
pub fn target_density(sol: &CoulombOt, taper: &WindowTaper, axis: Axis) -> Result<GridField1D> {
    let d = sol.density();
    let values: Result<Vec<f64>> = (0..axis.n)
        .into_par_iter()
        .map(|i| {
            let (a, b) = (axis.edge(i), axis.edge(i + 1));
            let mut breaks = vec![a];
            breaks.extend(taper.breaks().into_iter().filter(|&x| x > a && x < b));
            if a < 0.0 && b > 0.0 {
                breaks.push(0.0);
            }
            breaks.push(b);
            breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let mut acc = 0.0;
            for w in breaks.windows(2) {
                acc += integrate(
                    |x| d.pdf(x) * taper.weight(sol, x),
                    w[0],
                    w[1],
                    QuadTol::new(1e-15, 1e-12),
                )?
                .value;
            }
            Ok(acc / axis.h())
        })
        .collect();
    GridField1D::new(axis, values?)
}

/// Frozen kernel of one interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelRecord {
    pub interval: usize,
    pub x_freeze: f64,
    pub m: Mat2,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    pub path_start: [f64; 2],
    pub path_end: [f64; 2],
}

/// One Gaussian placed at a quadrature node.
#[derive(Debug, Clone, Copy)]
struct Deposit {
    kernel: usize,
    center: [f64; 2],
    weight: f64,
    i0: usize,
    i1: usize,
    j0: usize,
    j1: usize,
    norm: f64,
}

/// Main plan on the grid with its marginals and diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MainPlan {
    pub gammabar: GridField2D,
    pub rho1: GridField1D,
    pub rho2: GridField1D,
    pub mass: f64,
    /// `rho(Omega_H) - tau |Omega_H|`.
    pub mass_expected: f64,
    pub kernels: Vec<KernelRecord>,
    pub nodes_per_interval: usize,
    /// Smallest `(1/sqrt(a)) / h` over the kernels.
    pub cells_per_width: f64,
    /// Largest number of interval kernels whose first marginal covers a common point.
    pub max_overlap: usize,
    /// Largest half-diagonal of a kernel support.
    pub support_radius: f64,
    /// `sqrt(beta N) + delta^2`.
    pub support_bound: f64,
    /// Mass removed by [`MainPlan::apply_window_cap`].
    pub cap_removed_mass: f64,
}

impl MainPlan {
    /// Superpose `Gamma_{M(x_i), N}` at `(x, T_delta(x))` weighted by `rho - tau` on every interval.
    pub fn build(
        sol: &CoulombOt,
        part: &PartitionTdelta,
        sched: &ParameterSchedule,
        axis: Axis,
    ) -> Result<Self> {
        let d = sol.density();
        let (eps, beta, n, tau) = (sched.eps, sched.beta, sched.n, sched.tau);
        let hprime = DomainH::new(sol, sched.h + 1.0)?;
        for (a, b) in hprime.components() {
            let m = d.pdf(a).min(d.pdf(b));
            if !(m > tau) {
                return Err(invalid(
                    "tau",
                    format!("rho - tau must be positive on Omega_H'; min rho = {m}, tau = {tau}"),
                ));
            }
        }
        let h = axis.h();
        let nodes = 8usize.max((4.0 * sched.delta / eps.powf(0.25)).ceil() as usize);
        let mut kernels = Vec::with_capacity(part.intervals.len());
        let mut gauss = Vec::with_capacity(part.intervals.len());
        let mut deposits = Vec::new();
        let mut min_cells = f64::INFINITY;
        let mut radius: f64 = 0.0;
        for (k, &(a, b)) in part.intervals.iter().enumerate() {
            let xf = part.freeze[k];
            let amat = sol.sqrt_a(xf)?;
            let g = TruncatedGaussian::make_kernel(amat, eps, beta, Some(n), [0.0, 0.0])?;
            min_cells = min_cells.min(1.0 / g.a.sqrt() / h);
            radius = radius.max(g.h1.half_width().hypot(g.h2.half_width()));
            let (ta, tb) = part.images[k];
            kernels.push(KernelRecord {
                interval: k,
                x_freeze: xf,
                m: g.m,
                a: g.a,
                b: g.b,
                theta: g.theta,
                path_start: [a, ta],
                path_end: [b, tb],
            });
            let (bx0, bx1, by0, by1) = g.bounding_box();
            for (x, w) in gauss_legendre_on(nodes, a, b) {
                let y = part.t_delta(sol, x)?;
                let wt = w * (d.pdf(x) - tau);
                let (lo_x, hi_x, lo_y, hi_y) = (x + bx0, x + bx1, y + by0, y + by1);
                if lo_x < axis.lo || hi_x > axis.hi || lo_y < axis.lo || hi_y > axis.hi {
                    return Err(Error::GridTooSmall(format!(
                        "kernel support [{lo_x:.3}, {hi_x:.3}] x [{lo_y:.3}, {hi_y:.3}] leaves the grid [{:.3}, {:.3}]^2; \
                         a window of at least {:.3} is required",
                        axis.lo,
                        axis.hi,
                        [lo_x.abs(), hi_x.abs(), lo_y.abs(), hi_y.abs()].into_iter().fold(0.0, f64::max)
                    )));
                }
                let cell = |v: f64| (((v - axis.lo) / h).floor().max(0.0) as usize).min(axis.n - 1);
                deposits.push(Deposit {
                    kernel: k,
                    center: [x, y],
                    weight: wt,
                    i0: cell(lo_x),
                    i1: cell(hi_x),
                    j0: cell(lo_y),
                    j1: cell(hi_y),
                    norm: 0.0,
                });
            }
            gauss.push(g);
        }
        if min_cells < 4.0 {
            return Err(Error::UnderResolved(format!(
                "transverse kernel width is {min_cells:.2} cells; need n >= {}",
                (axis.n as f64 * 4.0 / min_cells).ceil()
            )));
        }
        let sample = |dep: &Deposit, i: usize, j: usize| {
            let g = &gauss[dep.kernel];
            g.eval(axis.x(i) - dep.center[0], axis.x(j) - dep.center[1])
        };
        deposits.par_iter_mut().for_each(|dep| {
            let mut s = 0.0;
            for i in dep.i0..=dep.i1 {
                for j in dep.j0..=dep.j1 {
                    s += sample(dep, i, j);
                }
            }
            dep.norm = s * h * h;
        });
        if let Some(bad) = deposits.iter().find(|d| !(d.norm > 0.0)) {
            return Err(Error::UnderResolved(format!(
                "kernel at ({:.4}, {:.4}) has no mass at cell centres",
                bad.center[0], bad.center[1]
            )));
        }
        let ny = axis.n;
        let rows: Vec<Vec<f64>> = (0..axis.n)
            .into_par_iter()
            .map(|i| {
                let mut row = vec![0.0; ny];
                for dep in deposits.iter().filter(|d| d.i0 <= i && i <= d.i1) {
                    let c = dep.weight / dep.norm;
                    for (j, r) in row.iter_mut().enumerate().take(dep.j1 + 1).skip(dep.j0) {
                        *r += c * sample(dep, i, j);
                    }
                }
                row
            })
            .collect();
        let gammabar = GridField2D::new(axis, axis, rows.concat())?;
        let mass = gammabar.mass();
        let mass_expected = part.domain.mass(d) - tau * part.domain.length();

        let mut max_overlap = 0;
        for i in 0..axis.n {
            let x = axis.x(i);
            let mut count = 0;
            for (k, g) in gauss.iter().enumerate() {
                let (a, b) = part.intervals[k];
                let r = g.marginal_support(0);
                if x >= a - r && x <= b + r {
                    count += 1;
                }
            }
            max_overlap = max_overlap.max(count);
        }
        let interp = part.max_interp_error(sol, 8)?;
        Ok(Self {
            rho1: gammabar.marginal_x(),
            rho2: gammabar.marginal_y(),
            gammabar,
            mass,
            mass_expected,
            kernels,
            nodes_per_interval: nodes,
            cells_per_width: min_cells,
            max_overlap,
            support_radius: radius + interp,
            support_bound: (beta * n).sqrt() + sched.delta * sched.delta,
            cap_removed_mass: 0.0,
        })
    }

    /// Scale rows by `min(1, rho_h / rho^1)`, then columns by `min(1, rho_h / rho^2)`,
    /// so both marginals lie below the windowed target.
    pub fn apply_window_cap(&mut self, rho_h: &GridField1D) -> Result<f64> {
        if rho_h.axis != self.gammabar.ax || rho_h.axis != self.gammabar.ay {
            return Err(invalid("rho_h", "lives on a different grid"));
        }
        let before = self.gammabar.mass();
        let ratio = |t: f64, m: f64| if m > t { t.max(0.0) / m } else { 1.0 };
        let ny = self.gammabar.ay.n;
        let r: Vec<f64> = (0..ny)
            .map(|i| ratio(rho_h.values[i], self.rho1.values[i]))
            .collect();
        for (i, row) in self.gammabar.values.chunks_mut(ny).enumerate() {
            if r[i] < 1.0 {
                row.iter_mut().for_each(|v| *v *= r[i]);
            }
        }
        let m2 = self.gammabar.marginal_y();
        let c: Vec<f64> = (0..ny)
            .map(|j| ratio(rho_h.values[j], m2.values[j]))
            .collect();
        if c.iter().any(|&v| v < 1.0) {
            for row in self.gammabar.values.chunks_mut(ny) {
                row.iter_mut().zip(&c).for_each(|(v, s)| *v *= s);
            }
        }
        self.rho1 = self.gammabar.marginal_x();
        self.rho2 = self.gammabar.marginal_y();
        let removed = before - self.gammabar.mass();
        self.cap_removed_mass += removed;
        Ok(removed)
    }

    /// `min (rho_h - rho^i) / tau` over cells of `Omega_H'`, for both marginals.
    pub fn lower_marginal_constant(
        &self,
        rho_h: &GridField1D,
        hprime: &DomainH,
        tau: f64,
    ) -> (f64, f64) {
        let c = |m: &GridField1D| {
            let mut best = f64::INFINITY;
            for i in 0..m.axis.n {
                if hprime.contains(m.axis.x(i)) {
                    best = best.min((rho_h.values[i] - m.values[i]) / tau);
                }
            }
            best
        };
        (c(&self.rho1), c(&self.rho2))
    }
}

/// Energy of the main plan against its continuum target.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MainPlanEnergy {
    pub energy: Energy,
    /// `1/2 int_{Omega_H} sqrt(q) rho`.
    pub target: f64,
    pub gap: f64,
    /// `|sqrt(eps) KE - PE / sqrt(eps)| / E`.
    pub equipartition: f64,
}

/// `1/2 int_{Omega_H} sqrt(q) rho`.
pub fn omega_h_zpo(sol: &CoulombOt, dom: &DomainH) -> Result<f64> {
    let breaks = [dom.neg.0, dom.neg.1, dom.pos.0, dom.pos.1];
    let (_, _, zpo) =
        sol.weighted_functionals(|x| if dom.contains(x) { 1.0 } else { 0.0 }, &breaks)?;
    Ok(zpo)
}

pub fn main_plan_energy(
    mp: &MainPlan,
    v: &PotentialField,
    sol: &CoulombOt,
    sched: &ParameterSchedule,
) -> Result<MainPlanEnergy> {
    let energy = mp.gammabar.e_eps(v, sched.eps, KeScheme::Centered)?;
    let dom = DomainH::new(sol, sched.h)?;
    let target = omega_h_zpo(sol, &dom)?;
    Ok(MainPlanEnergy {
        energy,
        target,
        gap: energy.e - target,
        equipartition: (energy.sqrt_eps_ke - energy.pe_over_sqrt_eps).abs() / energy.e,
    })
}

/// Grid, taper and potential shared by the construction and its diagnostics.
#[derive(Debug, Clone)]
pub struct GridSetup {
    pub axis: Axis,
    pub taper: WindowTaper,
    pub rho_h: GridField1D,
    pub potential: PotentialField,
}

impl GridSetup {
    pub fn new(sol: &CoulombOt, h: f64, spec: &GridSpec) -> Result<Self> {
        let taper = WindowTaper::new(sol, spec.taper_start.max(h), spec.window)?;
        let axis = Axis::symmetric(taper.half_width(), spec.n)?;
        let rho_h = target_density(sol, &taper, axis)?;
        let potential = PotentialField::coulomb(sol, axis, axis, DiagonalRule::Mask)?;
        Ok(Self {
            axis,
            taper,
            rho_h,
            potential,
        })
    }
}

/// `L(H)` on a lattice, re-exported for reports.
pub fn l_constant(sol: &CoulombOt, h: f64) -> Result<f64> {
    Ok(ot_constants(sol, h, 200)?.l_h)
}
