//! Independent variational oracles: the unconstrained ground state, the
//! marginal-constrained minimum on coarse grids, the harmonic-oscillator
//! inequality and the degenerate-Hessian construction.

use crate::coulomb_ot::{CoulombOt, Mat2};
use crate::error::{invalid, Error, Result};
use crate::grid::{Axis, DiagonalRule, Energy, GridField1D, GridField2D, KeScheme, PotentialField};
use crate::quad::{integrate, QuadTol};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// `kin (-Delta_h) + diag(w)` with zero Dirichlet exterior on the active cells.
#[derive(Debug, Clone)]
pub struct GridOperator {
    pub ax: Axis,
    pub ay: Axis,
    pub kin: f64,
    pub w: Vec<f64>,
    /// Cells outside the active set are held at zero.
    pub active: Option<Vec<bool>>,
}

impl GridOperator {
    /// Operator whose Rayleigh quotient is `E_eps` with forward-difference kinetic energy.
    pub fn e_eps(v: &PotentialField, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(invalid("eps", "must be positive"));
        }
        let se = eps.sqrt();
        Ok(Self {
            ax: v.ax,
            ay: v.ay,
            kin: 0.5 * se,
            w: v.values.iter().map(|x| x / se).collect(),
            active: None,
        })
    }

    fn is_active(&self, k: usize) -> bool {
        self.active.as_ref().is_none_or(|a| a[k])
    }

    pub fn len(&self) -> usize {
        self.ax.n * self.ay.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let (hx, hy) = (self.ax.h(), self.ay.h());
        let d0 = self.kin * (2.0 / (hx * hx) + 2.0 / (hy * hy));
        self.w.iter().map(|w| d0 + w).collect()
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (nx, ny) = (self.ax.n, self.ay.n);
        let (cx, cy) = (
            self.kin / self.ax.h().powi(2),
            self.kin / self.ay.h().powi(2),
        );
        let d0 = 2.0 * cx + 2.0 * cy;
        y.par_chunks_mut(ny).enumerate().for_each(|(i, row)| {
            for (j, out) in row.iter_mut().enumerate() {
                let k = i * ny + j;
                if !self.is_active(k) {
                    *out = 0.0;
                    continue;
                }
                let mut s = (d0 + self.w[k]) * x[k];
                if i > 0 {
                    s -= cx * x[k - ny];
                }
                if i + 1 < nx {
                    s -= cx * x[k + ny];
                }
                if j > 0 {
                    s -= cy * x[k - 1];
                }
                if j + 1 < ny {
                    s -= cy * x[k + 1];
                }
                *out = s;
            }
        });
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Lowest eigenpair from an iterative solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenResult {
    pub value: f64,
    /// Unit Euclidean norm.
    pub vector: Vec<f64>,
    /// `||A v - lambda v||`.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EigenOpts {
    /// Stop when `||A v - lambda v|| <= tol * max(|lambda|, g)`, `g` the Gershgorin bound of `A`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EigenOpts {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 20_000,
        }
    }
}

/// Single-vector LOBPCG with a Jacobi preconditioner.
pub fn lowest_eigenpair(op: &GridOperator, x0: &[f64], opts: EigenOpts) -> Result<EigenResult> {
    let n = op.len();
    if x0.len() != n {
        return Err(invalid(
            "start vector",
            "length differs from the operator size",
        ));
    }
    let mask = |v: &mut Vec<f64>| {
        if let Some(a) = &op.active {
            v.iter_mut().zip(a).for_each(|(x, &on)| {
                if !on {
                    *x = 0.0
                }
            });
        }
    };
    let diag = op.diagonal();
    let mut x = x0.to_vec();
    mask(&mut x);
    let nx = norm(&x);
    if !(nx > 0.0) {
        return Err(invalid(
            "start vector",
            "must be nonzero on the active cells",
        ));
    }
    x.iter_mut().for_each(|v| *v /= nx);
    let mut ax = vec![0.0; n];
    op.apply(&x, &mut ax);
    let mut p: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut lambda = dot(&x, &ax);
    let mut res = f64::INFINITY;
    let floor = 1e-3 * diag.iter().fold(0.0f64, |m, d| m.max(d.abs())).max(1e-300);
    let offdiag = 2.0 * op.kin * (1.0 / op.ax.h().powi(2) + 1.0 / op.ay.h().powi(2));
    let gersh = diag.iter().fold(0.0f64, |m, d| m.max(d.abs() + offdiag));
    for it in 0..opts.max_iter {
        let r: Vec<f64> = ax.iter().zip(&x).map(|(a, v)| a - lambda * v).collect();
        res = norm(&r);
        if res <= opts.tol * lambda.abs().max(gersh) {
            return Ok(EigenResult {
                value: lambda,
                vector: x,
                residual: res,
                iterations: it,
            });
        }
        let mut w: Vec<f64> = r
            .iter()
            .zip(&diag)
            .map(|(r, d)| r / (d - lambda).abs().max(floor))
            .collect();
        mask(&mut w);
        let mut basis = vec![(x.clone(), ax.clone())];
        let mut aw = vec![0.0; n];
        op.apply(&w, &mut aw);
        let mut cand = vec![(w, aw)];
        if let Some(pp) = p.take() {
            cand.push(pp);
        }
        // Gram-Schmidt twice, carrying A-images by linearity
        for (mut v, mut av) in cand {
            for _ in 0..2 {
                for (q, aq) in &basis {
                    let c = dot(q, &v);
                    v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
                    av.iter_mut().zip(aq).for_each(|(a, b)| *a -= c * b);
                }
            }
            let nv = norm(&v);
            if nv > 1e-12 {
                v.iter_mut().for_each(|a| *a /= nv);
                av.iter_mut().for_each(|a| *a /= nv);
                basis.push((v, av));
            }
        }
        let k = basis.len();
        let mut g = DMatrix::<f64>::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let v = 0.5 * (dot(&basis[a].0, &basis[b].1) + dot(&basis[b].0, &basis[a].1));
                g[(a, b)] = v;
                g[(b, a)] = v;
            }
        }
        let eig = SymmetricEigen::new(g);
        let imin = (0..k)
            .min_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap())
            .unwrap();
        let c = eig.eigenvectors.column(imin);
        let mut xn = vec![0.0; n];
        let mut pn = vec![0.0; n];
        let mut apn = vec![0.0; n];
        for (a, (q, aq)) in basis.iter().enumerate() {
            let ca = c[a];
            xn.iter_mut().zip(q).for_each(|(t, s)| *t += ca * s);
            if a > 0 {
                pn.iter_mut().zip(q).for_each(|(t, s)| *t += ca * s);
                apn.iter_mut().zip(aq).for_each(|(t, s)| *t += ca * s);
            }
        }
        let nxn = norm(&xn);
        xn.iter_mut().for_each(|v| *v /= nxn);
        x = xn;
        // fresh product avoids drift in the carried images
        op.apply(&x, &mut ax);
        lambda = dot(&x, &ax);
        p = if k > 1 { Some((pn, apn)) } else { None };
    }
    Err(Error::NoConvergence {
        what: "LOBPCG lowest eigenpair",
        iterations: opts.max_iter,
        residual: res,
    })
}

/// Ground state of `-sqrt(eps) Delta / 2 + V / sqrt(eps)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundStateResult {
    pub eigenvalue: f64,
    /// `psi` with `sum psi^2 hx hy = 1`.
    pub eigenfield: GridField2D,
    pub energy: Energy,
    pub residual: f64,
    pub iterations: usize,
    pub levels: usize,
    /// `min 1/2 sqrt(q)` over the graph inside the box, when the potential comes from a transport solution.
    pub predicted_limit: Option<f64>,
    /// Oscillator width `(eps / q)^{1/4}` at the minimizing point, in cells.
    pub cells_per_width: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GroundStateOpts {
    pub eigen: EigenOpts,
    /// Coarsest grid used for the nested warm start.
    pub coarsest: usize,
}

impl Default for GroundStateOpts {
    fn default() -> Self {
        Self {
            eigen: EigenOpts::default(),
            coarsest: 64,
        }
    }
}

fn pool_potential(v: &PotentialField) -> Option<PotentialField> {
    let (ax, ay) = (v.ax.coarsen(2).ok()?, v.ay.coarsen(2).ok()?);
    let ny = v.ay.n;
    let mut values = vec![0.0; ax.n * ay.n];
    for i in 0..v.ax.n {
        for j in 0..ny {
            values[(i / 2) * ay.n + j / 2] += 0.25 * v.values[i * ny + j];
        }
    }
    Some(PotentialField {
        ax,
        ay,
        masked: vec![false; values.len()],
        values,
    })
}

fn prolong(x: &[f64], ax: Axis, ay: Axis) -> Vec<f64> {
    let (nx, ny) = (2 * ax.n, 2 * ay.n);
    let mut out = vec![0.0; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            out[i * ny + j] = x[(i / 2) * ay.n + j / 2];
        }
    }
    out
}

/// Lowest eigenpair with nested coarse-grid warm starts from the all-ones vector.
pub fn ground_state(
    v: &PotentialField,
    eps: f64,
    opts: GroundStateOpts,
) -> Result<GroundStateResult> {
    if v.masked.iter().any(|&m| m) {
        return Err(invalid(
            "potential",
            "the eigen-solve needs a clamped potential, not a masked one",
        ));
    }
    let mut chain = vec![v.clone()];
    while chain.last().unwrap().ax.n > opts.coarsest && chain.last().unwrap().ay.n > opts.coarsest {
        match pool_potential(chain.last().unwrap()) {
            Some(c) => chain.push(c),
            None => break,
        }
    }
    let levels = chain.len();
    let mut x: Vec<f64> = vec![1.0; chain.last().unwrap().values.len()];
    let mut result = None;
    let mut iterations = 0;
    for (lvl, pot) in chain.iter().enumerate().rev() {
        let op = GridOperator::e_eps(pot, eps)?;
        let eopts = if lvl == 0 {
            opts.eigen
        } else {
            EigenOpts {
                tol: opts.eigen.tol.max(1e-8),
                ..opts.eigen
            }
        };
        let r = lowest_eigenpair(&op, &x, eopts)?;
        iterations += r.iterations;
        if lvl > 0 {
            x = prolong(&r.vector, pot.ax, pot.ay);
        }
        result = Some(r);
    }
    let r = result.unwrap();
    let (hx, hy) = (v.ax.h(), v.ay.h());
    let scale = 1.0 / (hx * hy).sqrt();
    // Perron vector: fix the sign
    let sign = if r.vector.iter().sum::<f64>() < 0.0 {
        -1.0
    } else {
        1.0
    };
    let psi: Vec<f64> = r.vector.iter().map(|a| sign * a * scale).collect();
    let gamma = GridField2D::new(v.ax, v.ay, psi.iter().map(|a| a * a).collect())?;
    let energy = gamma.e_eps(v, eps, KeScheme::Forward)?;
    Ok(GroundStateResult {
        eigenvalue: r.value,
        eigenfield: GridField2D::new(v.ax, v.ay, psi)?,
        energy,
        residual: r.residual,
        iterations,
        levels,
        predicted_limit: None,
        cells_per_width: None,
    })
}

/// Ground state of the transport potential with clamped diagonal on `[-w, w]^2`.
///
/// `min_cells` guards the oscillator width at the predicted minimizer.
pub fn coulomb_ground_state(
    sol: &CoulombOt,
    half_width: f64,
    n: usize,
    eps: f64,
    min_cells: Option<f64>,
    opts: GroundStateOpts,
) -> Result<GroundStateResult> {
    let ax = Axis::symmetric(half_width, n)?;
    let limit = predicted_limit(sol, ax, ax)?;
    let q = (2.0 * limit).powi(2);
    let cells = (eps / q).powf(0.25) / ax.h();
    if let Some(c) = min_cells {
        if cells < c {
            return Err(Error::UnderResolved(format!(
                "oscillator width spans {cells:.2} cells, need {c}"
            )));
        }
    }
    let v = PotentialField::coulomb(sol, ax, ax, DiagonalRule::Clamp)?;
    let mut gs = ground_state(&v, eps, opts)?;
    gs.predicted_limit = Some(limit);
    gs.cells_per_width = Some(cells);
    Ok(gs)
}

/// `min 1/2 sqrt(q(x))` over graph points `(x, T(x))` inside the box.
pub fn predicted_limit(sol: &CoulombOt, ax: Axis, ay: Axis) -> Result<f64> {
    let inside = |x: f64| -> Option<f64> {
        let t = sol.t(x).ok()?;
        (x > ax.lo && x < ax.hi && t > ay.lo && t < ay.hi)
            .then(|| sol.q(x).ok().map(|q| 0.5 * q.max(0.0).sqrt()))?
    };
    let m = 20_000;
    let mut best = (f64::INFINITY, f64::NAN);
    for k in 0..=m {
        let x = ax.lo + (ax.hi - ax.lo) * k as f64 / m as f64;
        if x == 0.0 {
            continue;
        }
        if let Some(v) = inside(x) {
            if v < best.0 {
                best = (v, x);
            }
        }
    }
    if !best.0.is_finite() {
        return Err(invalid("box", "contains no point of the graph of T"));
    }
    // golden-section refinement around the lattice minimizer
    let step = (ax.hi - ax.lo) / m as f64;
    let (mut a, mut b) = (best.1 - step, best.1 + step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let f = |x: f64| inside(x).unwrap_or(f64::INFINITY);
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    Ok(best.0.min(f(0.5 * (a + b))))
}

/// Concentration of `|psi|^2` on `{V > t}` against Markov bounds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MarkovCheck {
    pub t: f64,
    pub mass_above: f64,
    /// `sqrt(eps) E / t`.
    pub bound: f64,
    /// `eps E / t`, informational.
    pub bound_eps: f64,
    /// `int V |psi|^2 / t`.
    pub direct: f64,
    pub holds: bool,
}

pub fn markov_check(gs: &GroundStateResult, v: &PotentialField, eps: f64, t: f64) -> MarkovCheck {
    let a = gs.eigenfield.cell_area();
    let mut above = 0.0;
    let mut pe = 0.0;
    for (k, psi) in gs.eigenfield.values.iter().enumerate() {
        let p2 = psi * psi * a;
        pe += v.values[k] * p2;
        if v.values[k] > t {
            above += p2;
        }
    }
    let bound = eps.sqrt() * gs.eigenvalue / t;
    MarkovCheck {
        t,
        mass_above: above,
        bound,
        bound_eps: eps * gs.eigenvalue / t,
        direct: pe / t,
        holds: above <= bound,
    }
}

/// Options of the dual solve for the marginal-constrained minimum.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConstrainedOpts {
    /// Stop when `max |marg - rho| <= tol * max rho` on both axes.
    pub tol: f64,
    pub max_iter: usize,
    pub memory: usize,
    pub eigen: EigenOpts,
    /// Proportional-fitting sweeps applied to the final plan.
    pub ipfp_sweeps: usize,
    /// Largest KKT residual returned as a result rather than an error.
    pub accept: f64,
}

impl Default for ConstrainedOpts {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 2000,
            memory: 12,
            eigen: EigenOpts {
                tol: 1e-12,
                max_iter: 50_000,
            },
            ipfp_sweeps: 200,
            accept: 1e-5,
        }
    }
}

/// Marginal-constrained minimizer of the discrete `E_eps`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstrainedResult {
    /// Plan after proportional fitting; feasible to round-off.
    pub plan: GridField2D,
    pub energy: Energy,
    /// Lagrangian dual value, a lower bound on the constrained minimum.
    pub dual_value: f64,
    /// Largest of the relative marginal, eigen and block-balance residuals at the dual optimum.
    pub kkt_residual: f64,
    /// `max |marg - rho|` of the fitted plan.
    pub marginal_residual: f64,
    /// Mass of each support block, row-major over the runs of `rho_x` and `rho_y`.
    pub block_masses: Vec<f64>,
    pub iterations: usize,
}

struct Lbfgs {
    memory: usize,
    /// Diagonal of the initial inverse Hessian.
    diag: Vec<f64>,
    s: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
}

impl Lbfgs {
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let k = self.s.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&self.y[i], &self.s[i]);
            alpha[i] = rho * dot(&self.s[i], &q);
            q.iter_mut()
                .zip(&self.y[i])
                .for_each(|(a, b)| *a -= alpha[i] * b);
        }
        let gamma = if k > 0 {
            let y = &self.y[k - 1];
            let ydy: f64 = y.iter().zip(&self.diag).map(|(a, d)| a * a * d).sum();
            dot(&self.s[k - 1], y) / ydy
        } else {
            1.0
        };
        q.iter_mut()
            .zip(&self.diag)
            .for_each(|(a, d)| *a *= gamma * d);
        for ((y, s), al) in self.y.iter().zip(&self.s).zip(&alpha).take(k) {
            let beta = dot(y, &q) / dot(y, s);
            q.iter_mut().zip(s).for_each(|(a, b)| *a += (al - beta) * b);
        }
        q.iter_mut().for_each(|a| *a = -*a);
        q
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        if dot(&s, &y) > 1e-16 * norm(&s) * norm(&y) {
            if self.s.len() == self.memory {
                self.s.remove(0);
                self.y.remove(0);
            }
            self.s.push(s);
            self.y.push(y);
        }
    }
}

fn lbfgs_minimize<F, R>(
    mut f: F,
    z0: Vec<f64>,
    diag: Vec<f64>,
    memory: usize,
    max_iter: usize,
    resid: R,
    tol: f64,
) -> Result<(Vec<f64>, usize)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    R: Fn(&[f64]) -> f64,
{
    let mut z = z0;
    let (mut fz, mut g) = f(&z)?;
    let mut lb = Lbfgs {
        memory,
        diag,
        s: Vec::new(),
        y: Vec::new(),
    };
    let mut iterations = 0;
    while resid(&g) > tol {
        if iterations >= max_iter {
            return Err(Error::NoConvergence {
                what: "constrained dual ascent",
                iterations,
                residual: resid(&g),
            });
        }
        iterations += 1;
        let mut d = lb.direction(&g);
        let mut slope = dot(&d, &g);
        if !(slope < 0.0) {
            lb.s.clear();
            lb.y.clear();
            d = lb.direction(&g);
            slope = dot(&d, &g);
        }
        let mut step = if lb.s.is_empty() {
            1e-2 / norm(&d).max(1e-300)
        } else {
            1.0
        };
        let (zn, fn_, gn) = loop {
            let zt: Vec<f64> = z.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            let (ft, gt) = f(&zt)?;
            if ft <= fz + 1e-4 * step * slope {
                break (zt, ft, gt);
            }
            step *= 0.5;
            if step < 1e-20 {
                // round-off floor of the eigen-solves; the caller judges the residual
                return Ok((z, iterations));
            }
        };
        let s: Vec<f64> = zn.iter().zip(&z).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        lb.push(s, y);
        z = zn;
        fz = fn_;
        g = gn;
    }
    Ok((z, iterations))
}

/// Maximal runs `[start, end)` of positive entries.
fn positive_runs(v: &[f64]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (k, &x) in v.iter().enumerate() {
        match (x > 0.0, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                out.push((s, k));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, v.len()));
    }
    out
}

/// Rectangle of the support; connected, so its ground state is simple.
struct Block {
    rows: (usize, usize),
    cols: (usize, usize),
    op: GridOperator,
    warm: Vec<f64>,
}

struct BlockEval {
    /// Negated dual value.
    f: f64,
    g: Vec<f64>,
    eigs: Vec<EigenResult>,
}

struct BlockDual<'a> {
    base: &'a GridOperator,
    blocks: Vec<Block>,
    rho_x: &'a GridField1D,
    rho_y: &'a GridField1D,
    eigen: EigenOpts,
}

impl BlockDual<'_> {
    fn evaluate(&mut self, z: &[f64], masses: &[f64]) -> Result<BlockEval> {
        let (nx, ny) = (self.base.ax.n, self.base.ay.n);
        let (hx, hy) = (self.base.ax.h(), self.base.ay.h());
        let (a, b) = z.split_at(nx);
        let mut mx = vec![0.0; nx];
        let mut my = vec![0.0; ny];
        let mut eigs = Vec::with_capacity(self.blocks.len());
        let mut dual = dot(a, &self.rho_x.values) * hx + dot(b, &self.rho_y.values) * hy;
        for (blk, &mc) in self.blocks.iter_mut().zip(masses) {
            let bw = blk.cols.1 - blk.cols.0;
            for (k, w) in blk.op.w.iter_mut().enumerate() {
                let (i, j) = (blk.rows.0 + k / bw, blk.cols.0 + k % bw);
                *w = self.base.w[i * ny + j] - a[i] - b[j];
            }
            let e = lowest_eigenpair(&blk.op, &blk.warm, self.eigen)?;
            blk.warm.clone_from(&e.vector);
            dual += mc * e.value;
            let dens = mc / (hx * hy);
            for (k, v) in e.vector.iter().enumerate() {
                let (i, j) = (blk.rows.0 + k / bw, blk.cols.0 + k % bw);
                let g = dens * v * v;
                mx[i] += g * hy;
                my[j] += g * hx;
            }
            eigs.push(e);
        }
        let mut g = Vec::with_capacity(nx + ny);
        g.extend((0..nx).map(|i| -(self.rho_x.values[i] - mx[i]) * hx));
        g.extend((0..ny).map(|j| -(self.rho_y.values[j] - my[j]) * hy));
        Ok(BlockEval { f: -dual, g, eigs })
    }
}

/// Convex minimization over plans `gamma >= 0` with marginals `rho_x`, `rho_y`.
///
/// The support of the marginals splits the grid into rectangular blocks. For
/// fixed block masses the dual `<a, rho_x> + <b, rho_y> + sum_c m_c lambda_c(H - a (+) b)`
/// is smooth and is maximized by L-BFGS; a single free block mass is then fixed by
/// convex bisection on `dF/dt`. The plan `sum_c m_c v_c^2` is finally polished by
/// proportional fitting.
pub fn constrained_min(
    v: &PotentialField,
    rho_x: &GridField1D,
    rho_y: &GridField1D,
    eps: f64,
    opts: ConstrainedOpts,
) -> Result<ConstrainedResult> {
    if rho_x.axis != v.ax || rho_y.axis != v.ay {
        return Err(invalid("marginals", "must live on the potential's axes"));
    }
    if v.masked.iter().any(|&m| m) {
        return Err(invalid(
            "potential",
            "the dual solve needs a clamped potential",
        ));
    }
    if rho_x
        .values
        .iter()
        .chain(&rho_y.values)
        .any(|r| !(*r >= 0.0))
    {
        return Err(invalid("marginals", "must be nonnegative"));
    }
    let (nx, ny) = (v.ax.n, v.ay.n);
    if nx * ny > 1 << 16 {
        return Err(Error::GridTooSmall(format!(
            "constrained oracle is limited to 65536 cells, got {nx} x {ny}"
        )));
    }
    let (hx, hy) = (v.ax.h(), v.ay.h());
    let m = rho_x.mass();
    if !(m > 0.0) || (m - rho_y.mass()).abs() > 1e-10 * m.max(1.0) {
        return Err(Error::MassMismatch(format!(
            "marginal masses {m} and {}",
            rho_y.mass()
        )));
    }
    let base = GridOperator::e_eps(v, eps)?;
    let rr = positive_runs(&rho_x.values);
    let cr = positive_runs(&rho_y.values);
    let run_mass = |runs: &[(usize, usize)], f: &GridField1D| -> Vec<f64> {
        runs.iter()
            .map(|&(s, e)| f.values[s..e].iter().sum::<f64>() * f.axis.h())
            .collect()
    };
    let (rm, cm) = (run_mass(&rr, rho_x), run_mass(&cr, rho_y));
    let (kr, kc) = (rr.len(), cr.len());
    if (kr - 1) * (kc - 1) > 1 {
        return Err(invalid(
            "marginals",
            format!(
                "support splits into {kr} x {kc} blocks; at most one free block mass is supported"
            ),
        ));
    }
    let mut blocks = Vec::with_capacity(kr * kc);
    for &rows in &rr {
        for &cols in &cr {
            let sub_x = Axis::new(v.ax.edge(rows.0), v.ax.edge(rows.1), rows.1 - rows.0)?;
            let sub_y = Axis::new(v.ay.edge(cols.0), v.ay.edge(cols.1), cols.1 - cols.0)?;
            let len = sub_x.n * sub_y.n;
            blocks.push(Block {
                rows,
                cols,
                op: GridOperator {
                    ax: sub_x,
                    ay: sub_y,
                    kin: base.kin,
                    w: vec![0.0; len],
                    active: None,
                },
                warm: vec![1.0; len],
            });
        }
    }
    // block (i, j) has index i * kc + j
    let masses_at = |t: f64| -> Vec<f64> {
        if kr == 1 {
            cm.clone()
        } else if kc == 1 {
            rm.clone()
        } else {
            vec![t, rm[0] - t, cm[0] - t, m - rm[0] - cm[0] + t]
        }
    };
    let scale = rho_x.linf().max(rho_y.linf());
    let resid = |g: &[f64]| {
        let gx = g[..nx].iter().fold(0.0f64, |s, v| s.max(v.abs())) / hx;
        let gy = g[nx..].iter().fold(0.0f64, |s, v| s.max(v.abs())) / hy;
        gx.max(gy) / scale
    };
    let mut dual = BlockDual {
        base: &base,
        blocks,
        rho_x,
        rho_y,
        eigen: opts.eigen,
    };
    let mut z = vec![0.0; nx + ny];
    // inverse diagonal Hessian scales like 1 / (rho h)
    let diag: Vec<f64> = rho_x
        .values
        .iter()
        .map(|r| 1.0 / ((r + 1e-3 * scale) * hx))
        .chain(rho_y.values.iter().map(|r| 1.0 / ((r + 1e-3 * scale) * hy)))
        .collect();
    let mut iterations = 0;
    let mut solve = |t: f64, z: &mut Vec<f64>, dual: &mut BlockDual| -> Result<BlockEval> {
        let masses = masses_at(t);
        let (zn, it) = lbfgs_minimize(
            |zz| dual.evaluate(zz, &masses).map(|e| (e.f, e.g)),
            z.clone(),
            diag.clone(),
            opts.memory,
            opts.max_iter,
            resid,
            opts.tol,
        )?;
        iterations += it;
        *z = zn;
        dual.evaluate(z, &masses)
    };
    let deriv =
        |e: &BlockEval| e.eigs[0].value - e.eigs[1].value - e.eigs[2].value + e.eigs[3].value;
    let dscale = |e: &BlockEval| e.eigs.iter().fold(1.0f64, |s, r| s.max(r.value.abs()));
    let (t, eval, outer_resid) = if (kr - 1) * (kc - 1) == 0 {
        (0.0, solve(0.0, &mut z, &mut dual)?, 0.0)
    } else {
        let pad = 1e-10 * m;
        let mut lo = (rm[0] + cm[0] - m).max(0.0) + pad;
        let mut hi = rm[0].min(cm[0]) - pad;
        if !(hi > lo) {
            let t = 0.5 * (lo + hi);
            (t, solve(t, &mut z, &mut dual)?, 0.0)
        } else {
            let el = solve(lo, &mut z, &mut dual)?;
            let mut dl = deriv(&el);
            if dl >= 0.0 {
                (lo, el, 0.0)
            } else {
                let eh = solve(hi, &mut z, &mut dual)?;
                let mut dh = deriv(&eh);
                if dh <= 0.0 {
                    (hi, eh, 0.0)
                } else {
                    // Illinois regula falsi on the monotone derivative
                    let mut best = (lo, el);
                    let mut side = 0i8;
                    let mut done = None;
                    for _ in 0..80 {
                        let t = (lo * dh - hi * dl) / (dh - dl);
                        let e = solve(t, &mut z, &mut dual)?;
                        let d = deriv(&e);
                        let rel = d.abs() / dscale(&e);
                        if rel <= 1e-9 || hi - lo <= 1e-13 * m {
                            done = Some((t, e, rel));
                            break;
                        }
                        if d < 0.0 {
                            lo = t;
                            dl = d;
                            if side == -1 {
                                dh *= 0.5;
                            }
                            side = -1;
                        } else {
                            hi = t;
                            dh = d;
                            if side == 1 {
                                dl *= 0.5;
                            }
                            side = 1;
                        }
                        best = (t, e);
                    }
                    match done {
                        Some(x) => x,
                        None => {
                            let rel = deriv(&best.1).abs() / dscale(&best.1);
                            (best.0, best.1, rel)
                        }
                    }
                }
            }
        }
    };
    let masses = masses_at(t);
    let eig_rel = eval
        .eigs
        .iter()
        .map(|e| e.residual / e.value.abs().max(1.0))
        .fold(0.0, f64::max);
    let kkt_residual = resid(&eval.g).max(eig_rel).max(outer_resid);
    if !(kkt_residual <= opts.accept) {
        return Err(Error::NoConvergence {
            what: "constrained dual ascent",
            iterations,
            residual: kkt_residual,
        });
    }
    let mut values = vec![0.0; nx * ny];
    for ((blk, e), &mc) in dual.blocks.iter().zip(&eval.eigs).zip(&masses) {
        let bw = blk.cols.1 - blk.cols.0;
        let dens = mc / (hx * hy);
        for (k, x) in e.vector.iter().enumerate() {
            values[(blk.rows.0 + k / bw) * ny + blk.cols.0 + k % bw] = dens * x * x;
        }
    }
    let mut plan = GridField2D::new(v.ax, v.ay, values)?;
    ipfp(&mut plan, rho_x, rho_y, opts.ipfp_sweeps);
    let mres = plan
        .marginal_x()
        .values
        .iter()
        .zip(&rho_x.values)
        .chain(plan.marginal_y().values.iter().zip(&rho_y.values))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let energy = plan.e_eps(v, eps, KeScheme::Forward)?;
    Ok(ConstrainedResult {
        plan,
        energy,
        dual_value: -eval.f,
        kkt_residual,
        marginal_residual: mres,
        block_masses: masses,
        iterations,
    })
}

/// Alternate row and column rescaling towards the prescribed marginals.
pub fn ipfp(plan: &mut GridField2D, rho_x: &GridField1D, rho_y: &GridField1D, sweeps: usize) {
    let ny = plan.ay.n;
    for _ in 0..sweeps {
        let mx = plan.marginal_x();
        for (i, row) in plan.values.chunks_mut(ny).enumerate() {
            if mx.values[i] > 0.0 {
                let r = rho_x.values[i] / mx.values[i];
                row.iter_mut().for_each(|v| *v *= r);
            }
        }
        let my = plan.marginal_y();
        let c: Vec<f64> = (0..ny)
            .map(|j| {
                if my.values[j] > 0.0 {
                    rho_y.values[j] / my.values[j]
                } else {
                    1.0
                }
            })
            .collect();
        for row in plan.values.chunks_mut(ny) {
            row.iter_mut().zip(&c).for_each(|(v, s)| *v *= s);
        }
    }
}

/// `int eps |grad psi|^2 + |A x|^2 psi^2 / int psi^2` with interior forward differences.
pub fn oscillator_quotient(psi: &GridField2D, a: Mat2, eps: f64) -> f64 {
    let (nx, ny) = (psi.ax.n, psi.ay.n);
    let (hx, hy) = (psi.ax.h(), psi.ay.h());
    let (mut grad, mut pot, mut l2) = (0.0, 0.0, 0.0);
    for i in 0..nx {
        let x = psi.ax.x(i);
        for j in 0..ny {
            let y = psi.ay.x(j);
            let p = psi.at(i, j);
            if i + 1 < nx {
                grad += ((psi.at(i + 1, j) - p) / hx).powi(2);
            }
            if j + 1 < ny {
                grad += ((psi.at(i, j + 1) - p) / hy).powi(2);
            }
            let ax = a[0][0] * x + a[0][1] * y;
            let ay = a[1][0] * x + a[1][1] * y;
            pot += (ax * ax + ay * ay) * p * p;
            l2 += p * p;
        }
    }
    (eps * grad + pot) / l2
}

/// `e^{-x^T A x / (2 sqrt(eps))}` sampled at cell centres.
pub fn oscillator_gaussian(ax: Axis, ay: Axis, a: Mat2, eps: f64, center: [f64; 2]) -> GridField2D {
    let se = eps.sqrt();
    GridField2D::from_fn(ax, ay, |x, y| {
        let (u, v) = (x - center[0], y - center[1]);
        let q = a[0][0] * u * u + (a[0][1] + a[1][0]) * u * v + a[1][1] * v * v;
        (-q / (2.0 * se)).exp()
    })
}

/// Lower bound `tr(A) sqrt(eps) / (1 + C sqrt(eps))` with `C = sqrt(2) / (r^2 lambda)`.
pub fn oscillator_lower_bound(a: Mat2, eps: f64, r: f64) -> Result<f64> {
    let tr = a[0][0] + a[1][1];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    let (lam, big) = (0.5 * tr - disc, 0.5 * tr + disc);
    if !(lam > 0.0) {
        return Err(invalid("A", "must be positive definite"));
    }
    if eps.sqrt() > lam * lam * r * r / (2.0 * big) {
        return Err(invalid(
            "eps",
            "outside the range sqrt(eps) <= lambda^2 r^2 / (n Lambda)",
        ));
    }
    let c = 2f64.sqrt() / (r * r * lam);
    Ok(tr * eps.sqrt() / (1.0 + c * eps.sqrt()))
}

/// Random smooth trial fields: perturbed Gaussians modulated by low cosine modes.
pub fn random_trial_fields(
    ax: Axis,
    ay: Axis,
    a: Mat2,
    eps: f64,
    count: usize,
    seed: u64,
) -> Vec<GridField2D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lx, ly) = (ax.hi - ax.lo, ay.hi - ay.lo);
    (0..count)
        .map(|_| {
            let s1: f64 = rng.random_range(0.3..3.0);
            let s2: f64 = rng.random_range(0.3..3.0);
            let off: f64 = rng.random_range(-0.5..0.5);
            let am = [[a[0][0] * s1, off], [off, a[1][1] * s2]];
            let am = if am[0][0] * am[1][1] > off * off {
                am
            } else {
                [[am[0][0], 0.0], [0.0, am[1][1]]]
            };
            let c = [rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)];
            let modes: Vec<(f64, f64, f64, f64)> = (0..6)
                .map(|_| {
                    (
                        rng.random_range(0..4) as f64,
                        rng.random_range(0..4) as f64,
                        rng.random_range(-0.4..0.4),
                        rng.random_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect();
            let se = eps.sqrt();
            GridField2D::from_fn(ax, ay, |x, y| {
                let mut m = 1.0;
                for &(kx, ky, amp, ph) in &modes {
                    m += amp
                        * (std::f64::consts::PI * (kx * (x - ax.lo) / lx + ky * (y - ay.lo) / ly)
                            + ph)
                            .cos();
                }
                let (u, v) = (x - c[0], y - c[1]);
                let q = am[0][0] * u * u + 2.0 * am[0][1] * u * v + am[1][1] * v * v;
                m * (-q / (2.0 * se)).exp()
            })
        })
        .collect()
}

/// `h(N)` in dimension `d`: normalized energy ratio of `(e^{-|z|^2/2} - e^{-N})_+` on the ball of radius `sqrt(2N)`.
pub fn h_ratio(n: f64, d: usize) -> Result<f64> {
    if !(n > 0.0) || d == 0 {
        return Err(invalid("N", "must be positive with d >= 1"));
    }
    let r = (2.0 * n).sqrt();
    let en = (-n).exp();
    let df = d as f64;
    let tol = QuadTol::new(1e-15, 1e-13);
    let num = integrate(
        |t| t.powf(df + 1.0) * (2.0 * (-t * t).exp() - 2.0 * (-0.5 * t * t).exp() * en + en * en),
        0.0,
        r,
        tol,
    )?
    .value;
    let den = integrate(
        |t| t.powf(df - 1.0) * ((-t * t).exp() - 2.0 * (-0.5 * t * t).exp() * en + en * en),
        0.0,
        r,
        tol,
    )?
    .value;
    Ok(num / (df * den))
}

/// Energy trace of the point-concentration construction for a quadratic potential `x^T D x / 2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaRecoveryPoint {
    pub eps: f64,
    pub eta: f64,
    pub n: f64,
    /// `tr(A) h(N) / 2`, the bound from the construction.
    pub bound: f64,
    /// `E_eps` of the normalized field on the grid.
    pub energy: f64,
    /// `tr(sqrt(D)) / 2`.
    pub target: f64,
}

/// `eta` solving `sqrt(eps) = sqrt(eta) delta_v^2 / (-2 ln eta)` on `(0, e^{-2})`.
pub fn delta_eta(eps: f64, delta_v: f64) -> Result<f64> {
    let f = |eta: f64| eta.sqrt() * delta_v * delta_v / (-2.0 * eta.ln()) - eps.sqrt();
    let (mut lo, mut hi) = (1e-300f64, (-2.0f64).exp());
    if f(hi) < 0.0 {
        return Err(invalid(
            "eps",
            "too large for the point-concentration schedule",
        ));
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Build `f_eps = (e^{-x^T A x / (2 sqrt eps)} - e^{-N})_+` with `A = sqrt(D) + sqrt(eta) I`, `N = -ln eta`,
/// for diagonal `D = diag(d1, d2)`, and evaluate `E_eps` with `V = x^T D x / 2` on an `n x n` grid fitted to its support.
pub fn delta_recovery(d: [f64; 2], eps: f64, delta_v: f64, n: usize) -> Result<DeltaRecoveryPoint> {
    if d.iter().any(|v| !(*v >= 0.0)) {
        return Err(invalid("D", "must be positive semidefinite"));
    }
    let eta = delta_eta(eps, delta_v)?;
    let big_n = -eta.ln();
    let se = eps.sqrt();
    let a = [d[0].sqrt() + eta.sqrt(), d[1].sqrt() + eta.sqrt()];
    // support x^T A x < 2 N sqrt(eps)
    let half = [
        (2.0 * big_n * se / a[0]).sqrt() * 1.02,
        (2.0 * big_n * se / a[1]).sqrt() * 1.02,
    ];
    let ax = Axis::symmetric(half[0], n)?;
    let ay = Axis::symmetric(half[1], n)?;
    let cut = (-big_n).exp();
    let gamma = GridField2D::from_fn(ax, ay, |x, y| {
        let f = ((-(a[0] * x * x + a[1] * y * y) / (2.0 * se)).exp() - cut).max(0.0);
        f * f
    });
    let m = gamma.mass();
    let gamma = gamma.scaled(1.0 / m);
    let v = PotentialField::from_fn(ax, ay, |x, y| 0.5 * (d[0] * x * x + d[1] * y * y));
    let e = gamma.e_eps(&v, eps, KeScheme::Centered)?;
    Ok(DeltaRecoveryPoint {
        eps,
        eta,
        n: big_n,
        bound: 0.5 * (a[0] + a[1]) * h_ratio(big_n, 2)?,
        energy: e.e,
        target: 0.5 * (d[0].sqrt() + d[1].sqrt()),
    })
}
