//! Rectangularly truncated anisotropic Gaussians.
//!
//! In the eigenframe `(w, z)` of `M` (eigenvalues `a >= b`), the untruncated
//! kernel is `e^{-a w^2} e^{-b z^2}` and the truncated one is
//! `(e^{-a w^2/2} - e^{-N/2})_+^2 (e^{-b z^2/2} - e^{-N/2})_+^2`, both normalized.
//! The `z` axis points along `(cos theta, sin theta)`.

use crate::coulomb_ot::Mat2;
use crate::error::{invalid, Result};
use crate::quad::{gauss_legendre, integrate_pieces, QuadTol};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use std::f64::consts::PI;

/// Normalization `G_{alpha,N}` of the one-dimensional factor; `None` means `N = inf`.
pub fn g_alpha_n(alpha: f64, n: Option<f64>) -> f64 {
    let g_inf = (PI / alpha).sqrt();
    match n {
        None => g_inf,
        Some(n) => {
            g_inf * erf(n.sqrt())
                - 2.0 * (-0.5 * n).exp() * (2.0 * PI / alpha).sqrt() * erf((0.5 * n).sqrt())
                + 2.0 * (-n).exp() * (n / alpha).sqrt()
        }
    }
}

/// One-dimensional factor `h_alpha(t)`, normalized to unit mass.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Factor {
    pub alpha: f64,
    pub n: Option<f64>,
    pub g: f64,
}

impl Factor {
    pub fn new(alpha: f64, n: Option<f64>) -> Self {
        Self {
            alpha,
            n,
            g: g_alpha_n(alpha, n),
        }
    }

    /// Half-width of the support; untruncated factors report the `e^{-40}` level.
    pub fn half_width(&self) -> f64 {
        match self.n {
            Some(n) => (n / self.alpha).sqrt(),
            None => (40.0 / self.alpha).sqrt(),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let e = (-0.5 * self.alpha * t * t).exp();
        match self.n {
            None => e * e / self.g,
            Some(n) => {
                let f = e - (-0.5 * n).exp();
                if f > 0.0 {
                    f * f / self.g
                } else {
                    0.0
                }
            }
        }
    }

    /// `(h', h'')` at `t`.
    pub fn derivs(&self, t: f64) -> (f64, f64) {
        let a = self.alpha;
        let e = (-0.5 * a * t * t).exp();
        let (f, fp, fpp) = match self.n {
            None => (e, -a * t * e, (a * a * t * t - a) * e),
            Some(n) => {
                let f = e - (-0.5 * n).exp();
                if f <= 0.0 {
                    return (0.0, 0.0);
                }
                (f, -a * t * e, (a * a * t * t - a) * e)
            }
        };
        (2.0 * f * fp / self.g, 2.0 * (fp * fp + f * fpp) / self.g)
    }

    /// Closed-form `int |(sqrt h)'|^2 / 2`.
    pub fn kinetic_energy(&self) -> f64 {
        match self.n {
            None => 0.25 * self.alpha,
            Some(n) => {
                self.alpha.sqrt() / self.g
                    * (0.25 * PI.sqrt())
                    * (erf(n.sqrt()) - 2.0 / PI.sqrt() * (-n).exp() * n.sqrt())
            }
        }
    }
}

/// Normalized kernel `Gamma_{M,N}` centred at `center`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TruncatedGaussian {
    pub m: Mat2,
    pub n: Option<f64>,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    pub g: f64,
    pub h1: Factor,
    pub h2: Factor,
    pub center: [f64; 2],
}

/// Eigen-decomposition `(a, b, theta)` of an SPD matrix, `theta` the angle of the `b` eigenvector.
pub fn eigenframe(m: &Mat2) -> Result<(f64, f64, f64)> {
    let (p, r, s) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    if ![p, r, s].iter().all(|v| v.is_finite()) {
        return Err(invalid("M", "entries must be finite"));
    }
    let mean = 0.5 * (p + s);
    let dev = (0.25 * (p - s) * (p - s) + r * r).sqrt();
    let (a, b) = (mean + dev, mean - dev);
    if !(b > 0.0) {
        return Err(invalid(
            "M",
            format!("matrix is not positive definite (eigenvalues {a}, {b})"),
        ));
    }
    if dev <= 1e-14 * mean.abs() {
        return Ok((a, b, 0.0));
    }
    let (vx, vy) = if (b - p).abs() >= (b - s).abs() {
        (r, b - p)
    } else {
        (b - s, r)
    };
    let mut theta = vy.atan2(vx);
    if theta > 0.5 * PI {
        theta -= PI;
    } else if theta <= -0.5 * PI {
        theta += PI;
    }
    Ok((a, b, theta))
}

impl TruncatedGaussian {
    pub fn from_matrix(m: Mat2, n: Option<f64>, center: [f64; 2]) -> Result<Self> {
        if let Some(nv) = n {
            if !(nv >= 3.0) || !nv.is_finite() {
                return Err(invalid(
                    "N",
                    format!("truncation level must be finite and at least 3, got {nv}"),
                ));
            }
        }
        let (a, b, theta) = eigenframe(&m)?;
        let h1 = Factor::new(a, n);
        let h2 = Factor::new(b, n);
        Ok(Self {
            m,
            n,
            a,
            b,
            theta,
            g: h1.g * h2.g,
            h1,
            h2,
            center,
        })
    }

    /// Kernel for `M = A / sqrt(eps) + I / beta` with `A` positive semidefinite of rank at most one.
    pub fn make_kernel(
        a_mat: Mat2,
        eps: f64,
        beta: f64,
        n: Option<f64>,
        center: [f64; 2],
    ) -> Result<Self> {
        if !(eps > 0.0) || !(beta > 0.0) || !beta.is_finite() {
            return Err(invalid("eps/beta", "must be positive and finite"));
        }
        let tr = a_mat[0][0] + a_mat[1][1];
        let det = a_mat[0][0] * a_mat[1][1] - a_mat[0][1] * a_mat[1][0];
        if tr < -1e-14 || det.abs() > 1e-8 * (tr * tr).max(1e-300) {
            return Err(invalid(
                "A",
                "must be positive semidefinite with a zero eigenvalue",
            ));
        }
        let se = eps.sqrt();
        let m = [
            [a_mat[0][0] / se + 1.0 / beta, a_mat[0][1] / se],
            [a_mat[1][0] / se, a_mat[1][1] / se + 1.0 / beta],
        ];
        Self::from_matrix(m, n, center)
    }

    pub fn det(&self) -> f64 {
        self.a * self.b
    }

    pub fn trace(&self) -> f64 {
        self.a + self.b
    }

    /// Eigen-coordinates `(w, z)` of a point.
    pub fn to_frame(&self, x: f64, y: f64) -> (f64, f64) {
        let (c, s) = (self.theta.cos(), self.theta.sin());
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        (-s * dx + c * dy, c * dx + s * dy)
    }

    /// Physical point of eigen-coordinates `(w, z)`.
    pub fn from_frame(&self, w: f64, z: f64) -> (f64, f64) {
        let (c, s) = (self.theta.cos(), self.theta.sin());
        (
            self.center[0] + c * z - s * w,
            self.center[1] + s * z + c * w,
        )
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let (w, z) = self.to_frame(x, y);
        self.h1.eval(w) * self.h2.eval(z)
    }

    /// Axis-aligned bounding box `(xmin, xmax, ymin, ymax)` of the support rectangle.
    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        let (lw, lz) = (self.h1.half_width(), self.h2.half_width());
        let (c, s) = (self.theta.cos().abs(), self.theta.sin().abs());
        let rx = c * lz + s * lw;
        let ry = s * lz + c * lw;
        (
            self.center[0] - rx,
            self.center[0] + rx,
            self.center[1] - ry,
            self.center[1] + ry,
        )
    }

    /// Kinetic energy `int |grad sqrt Gamma|^2 / 2`; equals `tr M / 4` without truncation.
    pub fn kinetic_energy(&self) -> f64 {
        self.h1.kinetic_energy() + self.h2.kinetic_energy()
    }

    /// Marginal density of the first (`axis = 0`) or second coordinate, relative to the centre,
    /// as the convolution of rescaled factors.
    pub fn marginal(&self, axis: usize, t: f64) -> f64 {
        let (c, s) = (self.theta.cos().abs(), self.theta.sin().abs());
        let (s1, s2) = if axis == 0 { (s, c) } else { (c, s) };
        conv_rescaled(&self.h1, s1, &self.h2, s2, t)
    }

    /// Half-width of the marginal's support along `axis`.
    pub fn marginal_support(&self, axis: usize) -> f64 {
        let (c, s) = (self.theta.cos().abs(), self.theta.sin().abs());
        let (s1, s2) = if axis == 0 { (s, c) } else { (c, s) };
        s1 * self.h1.half_width() + s2 * self.h2.half_width()
    }
}

/// `((h1)_{s1} * (h2)_{s2})(t)` with `phi_s(x) = phi(x / s) / s`; a zero scale collapses the factor to a point mass.
pub fn conv_rescaled(h1: &Factor, s1: f64, h2: &Factor, s2: f64, t: f64) -> f64 {
    const TINY: f64 = 1e-14;
    if s1 <= TINY && s2 <= TINY {
        return 0.0;
    }
    if s1 <= TINY {
        return h2.eval(t / s2) / s2;
    }
    if s2 <= TINY {
        return h1.eval(t / s1) / s1;
    }
    let (l1, l2) = (h1.half_width(), h2.half_width());
    let lo = (-l2).max((t - s1 * l1) / s2);
    let hi = l2.min((t + s1 * l1) / s2);
    if !(hi > lo) {
        return 0.0;
    }
    let mut breaks = vec![lo, hi];
    if lo < 0.0 && hi > 0.0 {
        breaks.insert(1, 0.0);
    }
    let mid = t / s2;
    if mid > lo && mid < hi {
        breaks.push(mid);
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }
    integrate_pieces(
        |z| h2.eval(z) * h1.eval((t - s2 * z) / s1) / s1,
        &breaks,
        QuadTol::new(1e-16, 1e-11),
    )
    .map(|q| q.value)
    .unwrap_or(f64::NAN)
}

/// Composite Gauss-Legendre nodes on consecutive breakpoints.
fn composite_rule(breaks: &[f64], panels: usize, order: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(order);
    let mut out = Vec::new();
    for seg in breaks.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let h = (b - a) / panels as f64;
        for p in 0..panels {
            let lo = a + p as f64 * h;
            for (xi, wi) in x.iter().zip(&w) {
                out.push((lo + 0.5 * h * (xi + 1.0), 0.5 * h * wi));
            }
        }
    }
    out
}

/// Empirical constants of the truncation inequalities at one `(a, b, N, theta)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TruncationReport {
    pub a: f64,
    pub b: f64,
    pub n: f64,
    pub theta: f64,
    /// `G_{M,N} < G_{M,inf}`.
    pub gn_below_ginf: bool,
    /// `(G_inf - G_N) / (e^{-N/2} G_inf)`.
    pub c_norm: f64,
    /// `||Gamma_N - Gamma_inf||_inf / (sqrt(det M) e^{-N/2})`.
    pub c_linf: f64,
    /// `||Gamma_N - Gamma_inf||_1 / (N e^{-N/2})`.
    pub c_l1: f64,
    /// `||eta_N - eta_inf||_inf / (sqrt(a) sqrt(N) e^{-N/2})`.
    pub c_marg: f64,
    /// `int |Mx|^2 |Gamma_N - Gamma_inf| / (tr M N e^{-N/2})`.
    pub c_quad: f64,
    /// `|KE_N - KE_inf| / (tr M e^{-N/2})`.
    pub c_ke: f64,
    pub diff_l1: f64,
    pub diff_linf: f64,
}

impl TruncationReport {
    pub fn max_constant(&self) -> f64 {
        [
            self.c_norm,
            self.c_linf,
            self.c_l1,
            self.c_marg,
            self.c_quad,
            self.c_ke,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Measure the truncation inequalities for `M = diag(a, b)` rotated by `theta`.
pub fn truncation_error_report(a: f64, b: f64, n: f64, theta: f64) -> Result<TruncationReport> {
    if !(n >= 3.0) {
        return Err(invalid("N", "truncation level must be at least 3"));
    }
    if !(a >= b && b > 0.0) {
        return Err(invalid("a/b", "need a >= b > 0"));
    }
    let decay = (-0.5 * n).exp();
    let fa_n = Factor::new(a, Some(n));
    let fb_n = Factor::new(b, Some(n));
    let fa_i = Factor::new(a, None);
    let fb_i = Factor::new(b, None);
    let g_n = fa_n.g * fb_n.g;
    let g_i = fa_i.g * fb_i.g;

    let samples = |f_n: &Factor, f_i: &Factor| -> (Vec<f64>, Vec<f64>) {
        let sw = f_n.half_width();
        let k = 600;
        let mut pts: Vec<f64> = (0..=k)
            .map(|i| -1.5 * sw + 3.0 * sw * i as f64 / k as f64)
            .collect();
        pts.extend([sw, -sw, 0.0]);
        (
            pts.iter().map(|&t| f_n.eval(t)).collect(),
            pts.iter().map(|&t| f_i.eval(t)).collect(),
        )
    };
    let (an, ai) = samples(&fa_n, &fa_i);
    let (bn, bi) = samples(&fb_n, &fb_i);
    let mut linf: f64 = 0.0;
    for (x_n, x_i) in an.iter().zip(&ai) {
        for (y_n, y_i) in bn.iter().zip(&bi) {
            linf = linf.max((x_n * y_n - x_i * y_i).abs());
        }
    }

    let rule = |f_n: &Factor, f_i: &Factor| {
        let (s, l) = (
            f_n.half_width(),
            f_i.half_width().max(1.5 * f_n.half_width()),
        );
        composite_rule(&[-l, -s, 0.0, s, l], 8, 20)
    };
    let rw = rule(&fa_n, &fa_i);
    let rz = rule(&fb_n, &fb_i);
    let wn: Vec<f64> = rw.iter().map(|p| fa_n.eval(p.0)).collect();
    let wi: Vec<f64> = rw.iter().map(|p| fa_i.eval(p.0)).collect();
    let zn: Vec<f64> = rz.iter().map(|p| fb_n.eval(p.0)).collect();
    let zi: Vec<f64> = rz.iter().map(|p| fb_i.eval(p.0)).collect();
    let mut l1 = 0.0;
    let mut quad = 0.0;
    for (i, &(w, ww)) in rw.iter().enumerate() {
        for (j, &(z, wz)) in rz.iter().enumerate() {
            let d = (wn[i] * zn[j] - wi[i] * zi[j]).abs() * ww * wz;
            l1 += d;
            quad += (a * a * w * w + b * b * z * z) * d;
        }
    }

    let (c, s) = (theta.cos().abs(), theta.sin().abs());
    let reach = s * fa_n.half_width() + c * fb_n.half_width();
    let mut marg: f64 = 0.0;
    let k = 400;
    for i in 0..=k {
        let t = -1.2 * reach + 2.4 * reach * i as f64 / k as f64;
        let e_n = conv_rescaled(&fa_n, s, &fb_n, c, t);
        let e_i = conv_rescaled(&fa_i, s, &fb_i, c, t);
        marg = marg.max((e_n - e_i).abs());
    }

    let ke_n = fa_n.kinetic_energy() + fb_n.kinetic_energy();
    let ke_i = 0.25 * (a + b);
    Ok(TruncationReport {
        a,
        b,
        n,
        theta,
        gn_below_ginf: g_n < g_i,
        c_norm: (g_i - g_n) / (decay * g_i),
        c_linf: linf / ((a * b).sqrt() * decay),
        c_l1: l1 / (n * decay),
        c_marg: marg / (a.sqrt() * n.sqrt() * decay),
        c_quad: quad / ((a + b) * n * decay),
        c_ke: (ke_n - ke_i).abs() / ((a + b) * decay),
        diff_l1: l1,
        diff_linf: linf,
    })
}

/// `beta^{1/2} ||h'||_1 + beta ||h''||_1` for the factor with `b = 1 / beta`.
pub fn h2_derivative_bound(beta: f64, n: Option<f64>) -> f64 {
    let f = Factor::new(1.0 / beta, n);
    let l = f.half_width();
    let infl = beta.sqrt();
    let mut breaks = vec![0.0, infl.min(l), l];
    breaks.dedup();
    let rule = composite_rule(&breaks, 16, 20);
    let (mut d1, mut d2) = (0.0, 0.0);
    for (t, w) in rule {
        let (p1, p2) = f.derivs(t);
        d1 += 2.0 * p1.abs() * w;
        d2 += 2.0 * p2.abs() * w;
    }
    beta.sqrt() * d1 + beta * d2
}

/// `||Gamma_1 - Gamma_2||_1` by a midpoint rule on the first kernel's frame.
pub fn kernel_l1_distance(k1: &TruncatedGaussian, k2: &TruncatedGaussian) -> f64 {
    let (lw, lz) = (k1.h1.half_width(), k1.h2.half_width());
    let (mut wmin, mut wmax, mut zmin, mut zmax) = (-lw, lw, -lz, lz);
    let (lw2, lz2) = (k2.h1.half_width(), k2.h2.half_width());
    for (sw, sz) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
        let (x, y) = k2.from_frame(sw * lw2, sz * lz2);
        let (w, z) = k1.to_frame(x, y);
        wmin = wmin.min(w);
        wmax = wmax.max(w);
        zmin = zmin.min(z);
        zmax = zmax.max(z);
    }
    let n = 800;
    let (hw, hz) = ((wmax - wmin) / n as f64, (zmax - zmin) / n as f64);
    let mut acc = 0.0;
    for i in 0..n {
        let w = wmin + (i as f64 + 0.5) * hw;
        for j in 0..n {
            let z = zmin + (j as f64 + 0.5) * hz;
            let (x, y) = k1.from_frame(w, z);
            acc += (k1.eval(x, y) - k2.eval(x, y)).abs();
        }
    }
    acc * hw * hz
}

/// Right-hand side `eps^{-1/4} delta^2 + eps^{-1/2} beta delta` of the kernel-distance estimate.
pub fn kernel_distance_scale(eps: f64, beta: f64, delta: f64) -> f64 {
    eps.powf(-0.25) * delta * delta + eps.powf(-0.5) * beta * delta
}
