//! Strictly positive densities on the line with CDF, tail and quantile access.
//!
//! Every density is re-centred at construction so that `cdf(0) = 1/2`.
//! Tail functions are evaluated directly rather than as `1 - cdf`, which keeps
//! the optimal map accurate where one endpoint of a pair sits far in a tail.

use crate::error::{invalid, Error, Result};
use crate::quad::{integrate_pieces, newton_bisect, QuadTol};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

/// Parametric description of a density family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityFamily {
    /// `c_p (1 + x^2)^(-p/2)` with `p` in `[2, 3]`.
    PowerTail { p: f64 },
    /// Strictly increasing nodes with positive pdf samples.
    Tabulated { nodes: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone)]
struct PowerTail {
    p: f64,
    c: f64,
}

impl PowerTail {
    fn new(p: f64) -> Self {
        let c = (ln_gamma(0.5 * p) - ln_gamma(0.5 * (p - 1.0))).exp() / PI.sqrt();
        Self { p, c }
    }

    fn nu(&self) -> f64 {
        self.p - 1.0
    }

    fn pdf(&self, x: f64) -> f64 {
        self.c * (1.0 + x * x).powf(-0.5 * self.p)
    }

    fn dpdf(&self, x: f64) -> f64 {
        -self.p * x * self.c * (1.0 + x * x).powf(-0.5 * self.p - 1.0)
    }

    /// `cdf(x) - 1/2`.
    fn mass0(&self, x: f64) -> f64 {
        if self.p == 2.0 {
            return x.atan() / PI;
        }
        if self.p == 3.0 {
            return x / (2.0 * (1.0 + x * x).sqrt());
        }
        let z = x * x / (1.0 + x * x);
        0.5 * x.signum() * beta_reg(0.5, 0.5 * self.nu(), z)
    }

    /// Upper tail mass for `x >= 0`.
    fn upper(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        if self.p == 2.0 {
            return if x == 0.0 { 0.5 } else { (1.0 / x).atan() / PI };
        }
        if self.p == 3.0 {
            let r = (1.0 + x * x).sqrt();
            return 0.5 / (r * (r + x));
        }
        0.5 * beta_reg(0.5 * self.nu(), 0.5, 1.0 / (1.0 + x * x))
    }

    fn inv_mass0(&self, m: f64) -> Option<f64> {
        if self.p == 2.0 {
            return Some((PI * m).tan());
        }
        if self.p == 3.0 {
            return Some(2.0 * m / (1.0 - 4.0 * m * m).sqrt());
        }
        None
    }

    /// Inverse of `upper` on `(0, 1/2]`.
    fn inv_upper(&self, s: f64) -> Option<f64> {
        if self.p == 2.0 {
            return Some(1.0 / (PI * s).tan());
        }
        if self.p == 3.0 {
            return Some((1.0 - 2.0 * s) / (2.0 * (s * (1.0 - s)).sqrt()));
        }
        None
    }
}

#[derive(Debug, Clone)]
struct Tabulated {
    x: Vec<f64>,
    v: Vec<f64>,
    /// Mass left of each node.
    left: Vec<f64>,
    /// Mass right of each node.
    right: Vec<f64>,
    ell: f64,
}

impl Tabulated {
    fn new(nodes: &[f64], values: &[f64]) -> Result<Self> {
        if nodes.len() < 2 || nodes.len() != values.len() {
            return Err(invalid(
                "tabulated",
                "need at least two (x, pdf) rows of equal length",
            ));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) || nodes.iter().any(|x| !x.is_finite()) {
            return Err(invalid(
                "tabulated",
                "nodes must be finite and strictly increasing",
            ));
        }
        if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(invalid(
                "tabulated",
                "pdf samples must be finite and strictly positive",
            ));
        }
        let n = nodes.len();
        let ell = 0.5 * (nodes[n - 1] - nodes[0]);
        let mut total = (values[0] + values[n - 1]) * ell;
        for i in 0..n - 1 {
            total += 0.5 * (values[i] + values[i + 1]) * (nodes[i + 1] - nodes[i]);
        }
        let v: Vec<f64> = values.iter().map(|y| y / total).collect();
        let mut left = vec![0.0; n];
        left[0] = v[0] * ell;
        for i in 0..n - 1 {
            left[i + 1] = left[i] + 0.5 * (v[i] + v[i + 1]) * (nodes[i + 1] - nodes[i]);
        }
        let mut right = vec![0.0; n];
        right[n - 1] = v[n - 1] * ell;
        for i in (0..n - 1).rev() {
            right[i] = right[i + 1] + 0.5 * (v[i] + v[i + 1]) * (nodes[i + 1] - nodes[i]);
        }
        Ok(Self {
            x: nodes.to_vec(),
            v,
            left,
            right,
            ell,
        })
    }

    fn segment(&self, x: f64) -> usize {
        match self.x.binary_search_by(|a| a.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(self.x.len() - 2),
            Err(i) => i - 1,
        }
    }

    fn pdf(&self, x: f64) -> f64 {
        let n = self.x.len();
        if x <= self.x[0] {
            let r = 1.0 + (self.x[0] - x) / self.ell;
            return self.v[0] / (r * r);
        }
        if x >= self.x[n - 1] {
            let r = 1.0 + (x - self.x[n - 1]) / self.ell;
            return self.v[n - 1] / (r * r);
        }
        let i = self.segment(x);
        let t = (x - self.x[i]) / (self.x[i + 1] - self.x[i]);
        self.v[i] + t * (self.v[i + 1] - self.v[i])
    }

    fn dpdf(&self, x: f64) -> f64 {
        let n = self.x.len();
        if x < self.x[0] {
            let r = 1.0 + (self.x[0] - x) / self.ell;
            return 2.0 * self.v[0] / (self.ell * r * r * r);
        }
        if x > self.x[n - 1] {
            let r = 1.0 + (x - self.x[n - 1]) / self.ell;
            return -2.0 * self.v[n - 1] / (self.ell * r * r * r);
        }
        let i = self.segment(x);
        (self.v[i + 1] - self.v[i]) / (self.x[i + 1] - self.x[i])
    }

    fn cdf(&self, x: f64) -> f64 {
        let n = self.x.len();
        if x <= self.x[0] {
            let r = 1.0 + (self.x[0] - x) / self.ell;
            return self.v[0] * self.ell / r;
        }
        if x >= self.x[n - 1] {
            return 1.0 - self.sf(x);
        }
        let i = self.segment(x);
        let h = self.x[i + 1] - self.x[i];
        let t = x - self.x[i];
        self.left[i] + self.v[i] * t + 0.5 * (self.v[i + 1] - self.v[i]) * t * t / h
    }

    fn sf(&self, x: f64) -> f64 {
        let n = self.x.len();
        if x >= self.x[n - 1] {
            let r = 1.0 + (x - self.x[n - 1]) / self.ell;
            return self.v[n - 1] * self.ell / r;
        }
        if x <= self.x[0] {
            return 1.0 - self.cdf(x);
        }
        let i = self.segment(x);
        let h = self.x[i + 1] - self.x[i];
        let t = self.x[i + 1] - x;
        self.right[i + 1] + self.v[i + 1] * t + 0.5 * (self.v[i] - self.v[i + 1]) * t * t / h
    }

    fn breakpoints(&self) -> &[f64] {
        &self.x
    }
}

#[derive(Debug, Clone)]
enum Kind {
    PowerTail(PowerTail),
    Tabulated(Tabulated),
}

/// A strictly positive, median-centred probability density on the line.
///
/// Base coordinates are `xi = scale * x + shift`, with `shift` the base median.
#[derive(Debug, Clone)]
pub struct Density1D {
    kind: Kind,
    family: DensityFamily,
    shift: f64,
    scale: f64,
}

/// Power-tail density `c_p (1 + x^2)^(-p/2)`; `p = 2` is the Cauchy density.
pub fn make_power_tail(p: f64) -> Result<Density1D> {
    if !(2.0..=3.0).contains(&p) {
        return Err(invalid(
            "p",
            format!("power-tail exponent must lie in [2, 3], got {p}"),
        ));
    }
    Ok(Density1D {
        kind: Kind::PowerTail(PowerTail::new(p)),
        family: DensityFamily::PowerTail { p },
        shift: 0.0,
        scale: 1.0,
    })
}

/// Tabulated density: linear pdf between nodes, `x^-2` tails, normalized and median-centred.
pub fn make_tabulated(nodes: &[f64], values: &[f64]) -> Result<Density1D> {
    let tab = Tabulated::new(nodes, values)?;
    let lo = tab.x[0] - 1e3 * tab.ell;
    let hi = tab.x[tab.x.len() - 1] + 1e3 * tab.ell;
    let median = newton_bisect(|x| tab.cdf(x) - 0.5, |x| tab.pdf(x), lo, hi, 1e-15)?;
    Ok(Density1D {
        kind: Kind::Tabulated(tab),
        family: DensityFamily::Tabulated {
            nodes: nodes.to_vec(),
            values: values.to_vec(),
        },
        shift: median,
        scale: 1.0,
    })
}

/// Build a density from its family description.
pub fn from_family(f: &DensityFamily) -> Result<Density1D> {
    match f {
        DensityFamily::PowerTail { p } => make_power_tail(*p),
        DensityFamily::Tabulated { nodes, values } => make_tabulated(nodes, values),
    }
}

impl Density1D {
    pub fn family(&self) -> &DensityFamily {
        &self.family
    }

    /// Dilated copy `lambda * pdf(lambda * x)`.
    pub fn dilated(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(invalid("lambda", "dilation must be positive and finite"));
        }
        let mut d = self.clone();
        d.scale *= lambda;
        Ok(d)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Always 0 after construction.
    pub fn median(&self) -> f64 {
        0.0
    }

    fn xi(&self, x: f64) -> f64 {
        self.scale * x + self.shift
    }

    fn xi_inv(&self, xi: f64) -> f64 {
        (xi - self.shift) / self.scale
    }

    pub fn is_symmetric(&self) -> bool {
        matches!(self.kind, Kind::PowerTail(_))
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let xi = self.xi(x);
        self.scale
            * match &self.kind {
                Kind::PowerTail(p) => p.pdf(xi),
                Kind::Tabulated(t) => t.pdf(xi),
            }
    }

    pub fn dpdf(&self, x: f64) -> f64 {
        let xi = self.xi(x);
        self.scale
            * self.scale
            * match &self.kind {
                Kind::PowerTail(p) => p.dpdf(xi),
                Kind::Tabulated(t) => t.dpdf(xi),
            }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            self.lower_tail(x)
        } else {
            0.5 + self.mass0(x)
        }
    }

    /// `1 - cdf(x)`, accurate in the upper tail.
    pub fn sf(&self, x: f64) -> f64 {
        if x > 0.0 {
            self.upper_tail(x)
        } else {
            0.5 - self.mass0(x)
        }
    }

    /// Signed mass between the median and `x`, i.e. `cdf(x) - 1/2`.
    pub fn mass0(&self, x: f64) -> f64 {
        let xi = self.xi(x);
        match &self.kind {
            Kind::PowerTail(p) => p.mass0(xi),
            Kind::Tabulated(t) => {
                if x >= 0.0 {
                    0.5 - t.sf(xi)
                } else {
                    t.cdf(xi) - 0.5
                }
            }
        }
    }

    /// `cdf(x)` for `x <= 0`.
    fn lower_tail(&self, x: f64) -> f64 {
        let xi = self.xi(x);
        match &self.kind {
            Kind::PowerTail(p) => p.upper(-xi),
            Kind::Tabulated(t) => t.cdf(xi),
        }
    }

    /// `sf(x)` for `x >= 0`.
    fn upper_tail(&self, x: f64) -> f64 {
        let xi = self.xi(x);
        match &self.kind {
            Kind::PowerTail(p) => p.upper(xi),
            Kind::Tabulated(t) => t.sf(xi),
        }
    }

    /// Bracket `[lo, hi]` on the side of 0 given by `sign` containing the mass level.
    fn bracket(&self, positive: bool, mut f: impl FnMut(f64) -> bool) -> (f64, f64) {
        let mut r = 1.0 / self.scale;
        let mut inner = 0.0;
        for _ in 0..2000 {
            let x = if positive { r } else { -r };
            if f(x) {
                break;
            }
            inner = r;
            r *= 2.0;
        }
        if positive {
            (inner, r)
        } else {
            (-r, -inner)
        }
    }

    /// `x >= 0` with `sf(x) = s`, for `s` in `(0, 1/2]`.
    pub fn isf(&self, s: f64) -> Result<f64> {
        if !(s > 0.0 && s <= 0.5) {
            return Err(invalid(
                "s",
                format!("upper-tail level must lie in (0, 1/2], got {s}"),
            ));
        }
        if let Kind::PowerTail(p) = &self.kind {
            if let Some(xi) = p.inv_upper(s) {
                return Ok(self.xi_inv(xi));
            }
        }
        if s == 0.5 {
            return Ok(0.0);
        }
        let (lo, hi) = self.bracket(true, |x| self.upper_tail(x) <= s);
        let ls = s.ln();
        newton_bisect(
            |x| ls - self.upper_tail(x).ln(),
            |x| self.pdf(x) / self.upper_tail(x),
            lo,
            hi,
            1e-14,
        )
    }

    /// `x <= 0` with `cdf(x) = s`, for `s` in `(0, 1/2]`.
    pub fn icdf_lower(&self, s: f64) -> Result<f64> {
        if !(s > 0.0 && s <= 0.5) {
            return Err(invalid(
                "s",
                format!("lower-tail level must lie in (0, 1/2], got {s}"),
            ));
        }
        if self.is_symmetric() {
            return Ok(-self.isf(s)?);
        }
        if s == 0.5 {
            return Ok(0.0);
        }
        let (lo, hi) = self.bracket(false, |x| self.lower_tail(x) <= s);
        let ls = s.ln();
        newton_bisect(
            |x| self.lower_tail(x).ln() - ls,
            |x| self.pdf(x) / self.lower_tail(x),
            lo,
            hi,
            1e-14,
        )
    }

    /// `x` with `mass0(x) = m`, for `m` in `(-1/2, 1/2)`.
    pub fn inv_mass0(&self, m: f64) -> Result<f64> {
        if !(m > -0.5 && m < 0.5) {
            return Err(invalid(
                "m",
                format!("central mass must lie in (-1/2, 1/2), got {m}"),
            ));
        }
        if m == 0.0 {
            return Ok(0.0);
        }
        if let Kind::PowerTail(p) = &self.kind {
            if let Some(xi) = p.inv_mass0(m) {
                return Ok(self.xi_inv(xi));
            }
        }
        if m.abs() > 0.25 {
            return if m > 0.0 {
                self.isf(0.5 - m)
            } else {
                self.icdf_lower(0.5 + m)
            };
        }
        let (lo, hi) = self.bracket(m > 0.0, |x| {
            if m > 0.0 {
                self.mass0(x) >= m
            } else {
                self.mass0(x) <= m
            }
        });
        newton_bisect(|x| self.mass0(x) - m, |x| self.pdf(x), lo, hi, 1e-16)
    }

    /// `x` with `cdf(x) = t`; the residual in `t` is at most `1e-12`.
    pub fn quantile(&self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t < 1.0) {
            return Err(invalid(
                "t",
                format!("probability must lie in (0, 1), got {t}"),
            ));
        }
        if t <= 0.25 {
            self.icdf_lower(t)
        } else if t >= 0.75 {
            self.isf(1.0 - t)
        } else {
            self.inv_mass0(t - 0.5)
        }
    }

    /// Points where the pdf loses smoothness, in physical coordinates.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.kind {
            Kind::PowerTail(_) => Vec::new(),
            Kind::Tabulated(t) => t.breakpoints().iter().map(|&xi| self.xi_inv(xi)).collect(),
        }
    }

    /// Smallest `|x|^3 pdf(x)` on `X0 <= |x| <= X1`, sampled on a geometric lattice.
    pub fn tail_constant(&self, x0: f64, x1: f64) -> f64 {
        let n = 400;
        let r = (x1 / x0).ln();
        (0..=n)
            .flat_map(|i| {
                let x = x0 * (r * i as f64 / n as f64).exp();
                [x, -x]
            })
            .map(|x| x.abs().powi(3) * self.pdf(x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Fisher-information kinetic energy `int |pdf'|^2 / (8 pdf)` over `window`.
    pub fn kinetic_energy_1d(&self, window: (f64, f64)) -> Result<f64> {
        let (a, b) = window;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(invalid("window", "must be a finite interval with a < b"));
        }
        let mut breaks = vec![a];
        breaks.extend(self.breakpoints().into_iter().filter(|&x| x > a && x < b));
        if a < 0.0 && b > 0.0 {
            breaks.push(0.0);
        }
        breaks.push(b);
        breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());
        breaks.dedup();
        let q = integrate_pieces(
            |x| {
                let p = self.pdf(x);
                let d = self.dpdf(x);
                d * d / (8.0 * p)
            },
            &breaks,
            QuadTol::new(1e-14, 1e-10),
        )
        .map_err(|e| match e {
            Error::NonFinite { x } => Error::Domain {
                x,
                reason: "kinetic-energy integrand is not finite".into(),
            },
            other => other,
        })?;
        Ok(q.value)
    }
}

/// Parse a two-column `x,pdf` CSV with an optional header row.
pub fn parse_tabulated_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::Parse(format!(
                "row {}: expected 2 columns, found {}",
                row + 1,
                rec.len()
            )));
        }
        let (a, b) = (rec[0].parse::<f64>(), rec[1].parse::<f64>());
        match (a, b) {
            (Ok(x), Ok(y)) => {
                xs.push(x);
                ys.push(y);
            }
            _ if row == 0 => continue,
            _ => return Err(Error::Parse(format!("row {}: non-numeric entry", row + 1))),
        }
    }
    Ok((xs, ys))
}
