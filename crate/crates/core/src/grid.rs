//! Cell-centred uniform grids carrying densities of plans and marginals.
//!
//! A 2D field stores cell averages `values[i * ny + j]`, `i` along `x` and `j`
//! along `y`; its mass is `sum(values) * hx * hy`.

use crate::coulomb_ot::CoulombOt;
use crate::error::{invalid, Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Cell-centred uniform axis `[lo, hi]` with `n` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(invalid(
                "axis",
                format!("need finite lo < hi, got [{lo}, {hi}]"),
            ));
        }
        if n == 0 {
            return Err(invalid("axis", "need at least one cell"));
        }
        Ok(Self { lo, hi, n })
    }

    pub fn symmetric(half_width: f64, n: usize) -> Result<Self> {
        Self::new(-half_width, half_width, n)
    }

    pub fn h(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    /// Centre of cell `i`.
    pub fn x(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.h()
    }

    pub fn edge(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.h()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    /// Cell containing `x`, if any.
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        if x < self.lo || x >= self.hi {
            return None;
        }
        Some((((x - self.lo) / self.h()) as usize).min(self.n - 1))
    }

    /// Coarser axis with `factor` cells merged.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.n.is_multiple_of(factor) {
            return Err(Error::GridTooSmall(format!(
                "{} cells cannot be pooled by {factor}",
                self.n
            )));
        }
        Self::new(self.lo, self.hi, self.n / factor)
    }
}

/// Nonnegative cell averages on a 1D axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField1D {
    pub axis: Axis,
    pub values: Vec<f64>,
}

impl GridField1D {
    pub fn new(axis: Axis, values: Vec<f64>) -> Result<Self> {
        if values.len() != axis.n {
            return Err(invalid(
                "values",
                format!("expected {} entries, got {}", axis.n, values.len()),
            ));
        }
        Ok(Self { axis, values })
    }

    pub fn zeros(axis: Axis) -> Self {
        Self {
            axis,
            values: vec![0.0; axis.n],
        }
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.axis.h()
    }

    pub fn l1_distance(&self, other: &GridField1D) -> Result<f64> {
        if self.axis != other.axis {
            return Err(invalid("axis", "fields live on different axes"));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.axis.h())
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete `KE = 1/2 sum |D sqrt(rho)|^2 h` with forward differences and zero exterior.
    pub fn kinetic_energy(&self) -> f64 {
        let h = self.axis.h();
        let s: Vec<f64> = self.values.iter().map(|v| v.max(0.0).sqrt()).collect();
        let mut acc = s[0] * s[0];
        for w in s.windows(2) {
            acc += (w[1] - w[0]) * (w[1] - w[0]);
        }
        acc += s[s.len() - 1] * s[s.len() - 1];
        0.5 * acc / h
    }

    pub fn mean_and_variance(&self) -> (f64, f64) {
        let h = self.axis.h();
        let m = self.mass();
        let mean = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.axis.x(i))
            .sum::<f64>()
            * h
            / m;
        let var = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| v * ((self.axis.x(i) - mean).powi(2) + h * h / 12.0))
            .sum::<f64>()
            * h
            / m;
        (mean, var)
    }

    pub fn to_csv(&self) -> String {
        let header = serde_json::json!({"kind": "grid1d", "lo": self.axis.lo, "hi": self.axis.hi, "n": self.axis.n});
        let mut out = format!("#{header}\nx,value\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{:?},{:?}\n", self.axis.x(i), v));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let (header, body) = split_header(text)?;
        let h: Header1D = serde_json::from_str(header)?;
        if h.kind != "grid1d" {
            return Err(Error::Parse(format!(
                "expected a grid1d header, got {}",
                h.kind
            )));
        }
        let axis = Axis::new(h.lo, h.hi, h.n)?;
        let rows = read_rows(body, 2, axis.n)?;
        let mut values = Vec::with_capacity(axis.n);
        for (i, r) in rows.iter().enumerate() {
            check_coord(r[0], axis.x(i), axis.h())?;
            values.push(check_value(r[1])?);
        }
        Self::new(axis, values)
    }
}

#[derive(Deserialize)]
struct Header1D {
    kind: String,
    lo: f64,
    hi: f64,
    n: usize,
}

#[derive(Deserialize)]
struct Header2D {
    kind: String,
    x: Axis,
    y: Axis,
}

const MAX_CELLS: usize = 1 << 26;

fn split_header(text: &str) -> Result<(&str, &str)> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let header = first
        .trim_end_matches('\r')
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse("missing '#'-prefixed JSON header line".into()))?;
    Ok((header, rest))
}

fn read_rows(body: &str, cols: usize, expected: usize) -> Result<Vec<Vec<f64>>> {
    if expected > MAX_CELLS {
        return Err(Error::Parse(format!(
            "grid of {expected} cells exceeds the supported size"
        )));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(body.as_bytes());
    let mut rows = Vec::with_capacity(expected.min(1 << 16));
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != cols {
            return Err(Error::Parse(format!(
                "expected {cols} columns, got {}",
                rec.len()
            )));
        }
        let mut row = Vec::with_capacity(cols);
        for f in rec.iter() {
            row.push(
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad number {f:?}: {e}")))?,
            );
        }
        rows.push(row);
        if rows.len() > expected {
            break;
        }
    }
    if rows.len() != expected {
        return Err(Error::Parse(format!(
            "expected {expected} rows, got {}",
            rows.len()
        )));
    }
    Ok(rows)
}

fn check_coord(got: f64, want: f64, h: f64) -> Result<()> {
    if !((got - want).abs() <= 1e-9 * h.max(want.abs())) {
        return Err(Error::Parse(format!(
            "coordinate {got} does not match cell centre {want}"
        )));
    }
    Ok(())
}

fn check_value(v: f64) -> Result<f64> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(Error::Parse(format!(
            "field values must be finite and nonnegative, got {v}"
        )));
    }
    Ok(v)
}

/// Nonnegative cell averages on a 2D rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField2D {
    pub ax: Axis,
    pub ay: Axis,
    pub values: Vec<f64>,
}

/// Kinetic-energy discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeScheme {
    /// Centred differences of `sqrt(gamma)`, one-sided at the boundary.
    Centered,
    /// Forward differences with zero exterior, the quadratic form of the 5-point Laplacian.
    Forward,
}

/// Treatment of the Coulomb singularity on the diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagonalRule {
    /// Cells with `|x - y| < 2h` are excluded from the potential energy.
    Mask,
    /// `1/|x - y|` is evaluated at `max(|x - y|, 2h)`.
    Clamp,
}

/// Potential sampled at cell centres, with masked cells flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialField {
    pub ax: Axis,
    pub ay: Axis,
    pub values: Vec<f64>,
    pub masked: Vec<bool>,
}

impl PotentialField {
    pub fn from_fn<F: Fn(f64, f64) -> f64 + Sync>(ax: Axis, ay: Axis, f: F) -> Self {
        let values: Vec<f64> = (0..ax.n * ay.n)
            .into_par_iter()
            .map(|k| f(ax.x(k / ay.n), ay.x(k % ay.n)))
            .collect();
        Self {
            ax,
            ay,
            masked: vec![false; values.len()],
            values,
        }
    }

    /// `V = 1/|x - y| - u(x) - u(y)` of the transport layer.
    pub fn coulomb(sol: &CoulombOt, ax: Axis, ay: Axis, rule: DiagonalRule) -> Result<Self> {
        let xs = ax.centers();
        let ys = ay.centers();
        let ux = sol.u_many(&xs)?;
        let uy = if ax == ay {
            ux.clone()
        } else {
            sol.u_many(&ys)?
        };
        let band = 2.0 * ax.h().max(ay.h());
        let mut values = vec![0.0; ax.n * ay.n];
        let mut masked = vec![false; ax.n * ay.n];
        for i in 0..ax.n {
            for j in 0..ay.n {
                let r = (xs[i] - ys[j]).abs();
                let k = i * ay.n + j;
                match rule {
                    DiagonalRule::Mask if r < band => {
                        masked[k] = true;
                    }
                    DiagonalRule::Mask => values[k] = 1.0 / r - ux[i] - uy[j],
                    DiagonalRule::Clamp => values[k] = 1.0 / r.max(band) - ux[i] - uy[j],
                }
            }
        }
        Ok(Self {
            ax,
            ay,
            values,
            masked,
        })
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ay.n + j]
    }
}

/// Energies of `psi = sqrt(gamma)` in the rescaled functional.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Energy {
    /// `int |grad sqrt(gamma)|^2 / 2`.
    pub ke: f64,
    /// `int V gamma` over unmasked cells.
    pub pe: f64,
    pub sqrt_eps_ke: f64,
    pub pe_over_sqrt_eps: f64,
    /// `sqrt(eps) KE + PE / sqrt(eps)`.
    pub e: f64,
    /// Mass in masked cells.
    pub masked_mass: f64,
}

impl GridField2D {
    pub fn new(ax: Axis, ay: Axis, values: Vec<f64>) -> Result<Self> {
        if values.len() != ax.n * ay.n {
            return Err(invalid(
                "values",
                format!("expected {} entries, got {}", ax.n * ay.n, values.len()),
            ));
        }
        Ok(Self { ax, ay, values })
    }

    pub fn zeros(ax: Axis, ay: Axis) -> Self {
        Self {
            ax,
            ay,
            values: vec![0.0; ax.n * ay.n],
        }
    }

    pub fn from_fn<F: Fn(f64, f64) -> f64 + Sync>(ax: Axis, ay: Axis, f: F) -> Self {
        let values = (0..ax.n * ay.n)
            .into_par_iter()
            .map(|k| f(ax.x(k / ay.n), ay.x(k % ay.n)))
            .collect();
        Self { ax, ay, values }
    }

    pub fn cell_area(&self) -> f64 {
        self.ax.h() * self.ay.h()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ay.n + j]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.values[i * self.ay.n + j]
    }

    pub fn mass(&self) -> f64 {
        let rows: Vec<f64> = self
            .values
            .chunks(self.ay.n)
            .map(|r| r.iter().sum())
            .collect();
        rows.iter().sum::<f64>() * self.cell_area()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Marginal density along `x` (integrated over `y`).
    pub fn marginal_x(&self) -> GridField1D {
        let hy = self.ay.h();
        GridField1D {
            axis: self.ax,
            values: self
                .values
                .chunks(self.ay.n)
                .map(|r| r.iter().sum::<f64>() * hy)
                .collect(),
        }
    }

    /// Marginal density along `y` (integrated over `x`).
    pub fn marginal_y(&self) -> GridField1D {
        let hx = self.ax.h();
        let mut out = vec![0.0; self.ay.n];
        for r in self.values.chunks(self.ay.n) {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        GridField1D {
            axis: self.ay,
            values: out.into_iter().map(|v| v * hx).collect(),
        }
    }

    pub fn add(&self, other: &GridField2D) -> Result<GridField2D> {
        if self.ax != other.ax || self.ay != other.ay {
            return Err(invalid("grid", "fields live on different grids"));
        }
        Ok(GridField2D {
            ax: self.ax,
            ay: self.ay,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn scaled(&self, c: f64) -> GridField2D {
        GridField2D {
            ax: self.ax,
            ay: self.ay,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// Block averages over `factor x factor` cells; mass is preserved.
    pub fn pool(&self, factor: usize) -> Result<GridField2D> {
        let ax = self.ax.coarsen(factor)?;
        let ay = self.ay.coarsen(factor)?;
        let mut out = GridField2D::zeros(ax, ay);
        let w = 1.0 / (factor * factor) as f64;
        for i in 0..self.ax.n {
            for j in 0..self.ay.n {
                *out.at_mut(i / factor, j / factor) += w * self.at(i, j);
            }
        }
        Ok(out)
    }

    /// Kinetic energy `int |grad sqrt(gamma)|^2 / 2` under the chosen scheme.
    pub fn kinetic_energy(&self, scheme: KeScheme) -> f64 {
        let (nx, ny) = (self.ax.n, self.ay.n);
        let (hx, hy) = (self.ax.h(), self.ay.h());
        let s: Vec<f64> = self.values.iter().map(|v| v.max(0.0).sqrt()).collect();
        let at = |i: usize, j: usize| s[i * ny + j];
        let rows: Vec<f64> = (0..nx)
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0;
                for j in 0..ny {
                    match scheme {
                        KeScheme::Centered => {
                            let gx = if nx == 1 {
                                0.0
                            } else if i == 0 {
                                (at(1, j) - at(0, j)) / hx
                            } else if i == nx - 1 {
                                (at(i, j) - at(i - 1, j)) / hx
                            } else {
                                (at(i + 1, j) - at(i - 1, j)) / (2.0 * hx)
                            };
                            let gy = if ny == 1 {
                                0.0
                            } else if j == 0 {
                                (at(i, 1) - at(i, 0)) / hy
                            } else if j == ny - 1 {
                                (at(i, j) - at(i, j - 1)) / hy
                            } else {
                                (at(i, j + 1) - at(i, j - 1)) / (2.0 * hy)
                            };
                            acc += gx * gx + gy * gy;
                        }
                        KeScheme::Forward => {
                            let c = at(i, j);
                            let xn = if i + 1 < nx { at(i + 1, j) } else { 0.0 };
                            let yn = if j + 1 < ny { at(i, j + 1) } else { 0.0 };
                            acc += ((xn - c) / hx).powi(2) + ((yn - c) / hy).powi(2);
                            if i == 0 {
                                acc += (c / hx).powi(2);
                            }
                            if j == 0 {
                                acc += (c / hy).powi(2);
                            }
                        }
                    }
                }
                acc
            })
            .collect();
        0.5 * rows.iter().sum::<f64>() * hx * hy
    }

    /// `(int V gamma, masked mass)`.
    pub fn potential_energy(&self, v: &PotentialField) -> Result<(f64, f64)> {
        if self.ax != v.ax || self.ay != v.ay {
            return Err(invalid("potential", "potential lives on a different grid"));
        }
        let ny = self.ay.n;
        let rows: Vec<(f64, f64)> = (0..self.ax.n)
            .into_par_iter()
            .map(|i| {
                let (mut pe, mut mm) = (0.0, 0.0);
                for j in 0..ny {
                    let k = i * ny + j;
                    if v.masked[k] {
                        mm += self.values[k];
                    } else {
                        pe += v.values[k] * self.values[k];
                    }
                }
                (pe, mm)
            })
            .collect();
        let a = self.cell_area();
        let pe: f64 = rows.iter().map(|r| r.0).sum();
        let mm: f64 = rows.iter().map(|r| r.1).sum();
        Ok((pe * a, mm * a))
    }

    /// Rescaled energy `sqrt(eps) KE + PE / sqrt(eps)` of `psi = sqrt(gamma)`.
    pub fn e_eps(&self, v: &PotentialField, eps: f64, scheme: KeScheme) -> Result<Energy> {
        if !(eps > 0.0) {
            return Err(invalid("eps", "must be positive"));
        }
        let ke = self.kinetic_energy(scheme);
        let (pe, masked_mass) = self.potential_energy(v)?;
        let se = eps.sqrt();
        Ok(Energy {
            ke,
            pe,
            sqrt_eps_ke: se * ke,
            pe_over_sqrt_eps: pe / se,
            e: se * ke + pe / se,
            masked_mass,
        })
    }

    pub fn to_csv(&self) -> String {
        let header = serde_json::json!({"kind": "grid2d", "x": self.ax, "y": self.ay});
        let mut out = format!("#{header}\nx,y,value\n");
        for i in 0..self.ax.n {
            for j in 0..self.ay.n {
                out.push_str(&format!(
                    "{:?},{:?},{:?}\n",
                    self.ax.x(i),
                    self.ay.x(j),
                    self.at(i, j)
                ));
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let (header, body) = split_header(text)?;
        let h: Header2D = serde_json::from_str(header)?;
        if h.kind != "grid2d" {
            return Err(Error::Parse(format!(
                "expected a grid2d header, got {}",
                h.kind
            )));
        }
        let ax = Axis::new(h.x.lo, h.x.hi, h.x.n)?;
        let ay = Axis::new(h.y.lo, h.y.hi, h.y.n)?;
        let cells =
            ax.n.checked_mul(ay.n)
                .ok_or_else(|| Error::Parse("grid size overflows".into()))?;
        let rows = read_rows(body, 3, cells)?;
        let mut values = Vec::with_capacity(rows.len());
        for (k, r) in rows.iter().enumerate() {
            check_coord(r[0], ax.x(k / ay.n), ax.h())?;
            check_coord(r[1], ay.x(k % ay.n), ay.h())?;
            values.push(check_value(r[2])?);
        }
        Self::new(ax, ay, values)
    }
}

/// Sampled compact kernel with integer cell offsets; weights sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stencil {
    pub rx: usize,
    pub ry: usize,
    /// `(2 rx + 1) x (2 ry + 1)` weights, row-major in `x` offset.
    pub weights: Vec<f64>,
}

impl Stencil {
    /// Sample `k(dx, dy)` at cell offsets within `[-rx, rx] x [-ry, ry]` and normalize.
    pub fn sample<F: Fn(f64, f64) -> f64>(
        hx: f64,
        hy: f64,
        rx: usize,
        ry: usize,
        k: F,
    ) -> Result<Self> {
        let mut weights = Vec::with_capacity((2 * rx + 1) * (2 * ry + 1));
        for a in 0..=2 * rx {
            for b in 0..=2 * ry {
                let v = k((a as f64 - rx as f64) * hx, (b as f64 - ry as f64) * hy);
                if !(v.is_finite() && v >= 0.0) {
                    return Err(invalid("kernel", "samples must be finite and nonnegative"));
                }
                weights.push(v);
            }
        }
        let s: f64 = weights.iter().sum();
        if !(s > 0.0) {
            return Err(Error::UnderResolved(
                "kernel has no mass at cell offsets".into(),
            ));
        }
        weights.iter_mut().for_each(|w| *w /= s);
        Ok(Self { rx, ry, weights })
    }

    pub fn delta() -> Self {
        Self {
            rx: 0,
            ry: 0,
            weights: vec![1.0],
        }
    }

    pub fn at(&self, a: usize, b: usize) -> f64 {
        self.weights[a * (2 * self.ry + 1) + b]
    }
}

/// Direct convolution; the output grid is padded by the stencil radius so no mass is lost.
pub fn convolve2d(field: &GridField2D, k: &Stencil) -> Result<GridField2D> {
    let (hx, hy) = (field.ax.h(), field.ay.h());
    let ax = Axis::new(
        field.ax.lo - k.rx as f64 * hx,
        field.ax.hi + k.rx as f64 * hx,
        field.ax.n + 2 * k.rx,
    )?;
    let ay = Axis::new(
        field.ay.lo - k.ry as f64 * hy,
        field.ay.hi + k.ry as f64 * hy,
        field.ay.n + 2 * k.ry,
    )?;
    let (nx, ny) = (ax.n, ay.n);
    let (sx, sy) = (2 * k.rx + 1, 2 * k.ry + 1);
    let values: Vec<f64> = (0..nx)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut row = vec![0.0; ny];
            for a in 0..sx {
                // output i = input i0 + a, input index i0 = i - a
                if i < a || i - a >= field.ax.n {
                    continue;
                }
                let i0 = i - a;
                for b in 0..sy {
                    let w = k.at(a, b);
                    if w == 0.0 {
                        continue;
                    }
                    for j0 in 0..field.ay.n {
                        row[j0 + b] += w * field.at(i0, j0);
                    }
                }
            }
            row
        })
        .collect();
    GridField2D::new(ax, ay, values)
}

/// Quadratic Wasserstein distance between two 1D fields and the monotone map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct W2Result {
    pub w2_squared: f64,
    /// `S(x_i) = F_nu^{-1}(F_mu(x_i))` at the cell centres of `mu`; `NaN` where `mu` has no mass.
    pub map: Vec<f64>,
}

/// Cumulative masses at cell edges.
fn edge_cdf(f: &GridField1D) -> Vec<f64> {
    let h = f.axis.h();
    let mut c = Vec::with_capacity(f.values.len() + 1);
    let mut acc = 0.0;
    c.push(0.0);
    for v in &f.values {
        acc += v * h;
        c.push(acc);
    }
    c
}

/// Quantile of the piecewise-uniform distribution with edge cumulative masses `cdf`;
/// `right` selects the right-continuous version at atoms of the level set.
fn pl_quantile(axis: &Axis, cdf: &[f64], t: f64, right: bool) -> f64 {
    let n = axis.n;
    let k = if right {
        cdf.partition_point(|&c| c <= t)
    } else {
        cdf.partition_point(|&c| c < t)
    }
    .clamp(1, n);
    let (c0, c1) = (cdf[k - 1], cdf[k]);
    let frac = if c1 > c0 {
        ((t - c0) / (c1 - c0)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    axis.edge(k - 1) + frac * axis.h()
}

/// `W_2^2` by the quantile identity for piecewise-uniform cells, with mass tolerance `1e-8`.
pub fn w2_1d(mu: &GridField1D, nu: &GridField1D) -> Result<W2Result> {
    if mu.values.iter().chain(&nu.values).any(|v| !(*v >= 0.0)) {
        return Err(invalid("measure", "values must be nonnegative"));
    }
    let cm = edge_cdf(mu);
    let cn = edge_cdf(nu);
    let (mm, mn) = (cm[cm.len() - 1], cn[cn.len() - 1]);
    if (mm - mn).abs() > 1e-8 * mm.max(mn).max(1.0) {
        return Err(Error::MassMismatch(format!("masses {mm} and {mn} differ")));
    }
    let mass = mm.min(mn);
    let mut ts: Vec<f64> = cm
        .iter()
        .chain(&cn)
        .copied()
        .filter(|&t| t <= mass)
        .collect();
    ts.push(mass);
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup();
    let mut w2 = 0.0;
    for seg in ts.windows(2) {
        let (t0, t1) = (seg[0], seg[1]);
        if t1 <= t0 {
            continue;
        }
        let d0 = pl_quantile(&mu.axis, &cm, t0, true) - pl_quantile(&nu.axis, &cn, t0, true);
        let d1 = pl_quantile(&mu.axis, &cm, t1, false) - pl_quantile(&nu.axis, &cn, t1, false);
        // difference is affine on the segment
        w2 += (t1 - t0) * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
    }
    let map = (0..mu.axis.n)
        .map(|i| {
            if mu.values[i] <= 0.0 {
                return f64::NAN;
            }
            let t = (0.5 * (cm[i] + cm[i + 1]) * mass / mm).min(mass);
            pl_quantile(&nu.axis, &cn, t, false)
        })
        .collect();
    Ok(W2Result {
        w2_squared: w2,
        map,
    })
}
