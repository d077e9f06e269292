//! Adaptive Gauss-Kronrod quadrature and Gauss-Legendre rules.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct QuadTol {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for QuadTol {
    fn default() -> Self {
        Self {
            abs: 1e-13,
            rel: 1e-10,
            max_intervals: 4000,
        }
    }
}

impl QuadTol {
    pub fn new(abs: f64, rel: f64) -> Self {
        Self {
            abs,
            rel,
            ..Self::default()
        }
    }
}

/// Value and error estimate of an adaptive integral.
#[derive(Debug, Clone, Copy)]
pub struct Quad {
    pub value: f64,
    pub error: f64,
    pub evals: usize,
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Result<(f64, f64)> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    if !fc.is_finite() {
        return Err(Error::NonFinite { x: c });
    }
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let (x1, x2) = (c - dx, c + dx);
        let (f1, f2) = (f(x1), f(x2));
        if !f1.is_finite() {
            return Err(Error::NonFinite { x: x1 });
        }
        if !f2.is_finite() {
            return Err(Error::NonFinite { x: x2 });
        }
        k += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            g += WG[j / 2] * (f1 + f2);
        }
    }
    Ok((k * h, ((k - g) * h).abs()))
}

/// Adaptive G7-K15 quadrature of `f` over `[a, b]` with global bisection of the worst interval.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: QuadTol) -> Result<Quad> {
    if a == b {
        return Ok(Quad {
            value: 0.0,
            error: 0.0,
            evals: 0,
        });
    }
    if b < a {
        let q = integrate(f, b, a, tol)?;
        return Ok(Quad {
            value: -q.value,
            ..q
        });
    }
    let mut parts: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(64);
    let (v, e) = gk15(&mut f, a, b)?;
    parts.push((a, b, v, e));
    let mut evals = 15;
    loop {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if err <= tol.abs.max(tol.rel * total.abs()) {
            return Ok(Quad {
                value: total,
                error: err,
                evals,
            });
        }
        if parts.len() >= tol.max_intervals {
            return Err(Error::NoConvergence {
                what: "adaptive quadrature",
                iterations: parts.len(),
                residual: err,
            });
        }
        let (worst, _) = parts
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, p)| {
                if p.3 > acc.1 {
                    (i, p.3)
                } else {
                    acc
                }
            });
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Err(Error::NoConvergence {
                what: "adaptive quadrature (interval underflow)",
                iterations: parts.len(),
                residual: err,
            });
        }
        let (v1, e1) = gk15(&mut f, lo, mid)?;
        let (v2, e2) = gk15(&mut f, mid, hi)?;
        evals += 30;
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
}

/// Integral over consecutive breakpoints; each piece gets the full tolerance budget share.
pub fn integrate_pieces<F: FnMut(f64) -> f64>(
    mut f: F,
    breaks: &[f64],
    tol: QuadTol,
) -> Result<Quad> {
    let mut out = Quad {
        value: 0.0,
        error: 0.0,
        evals: 0,
    };
    for w in breaks.windows(2) {
        let q = integrate(&mut f, w[0], w[1], tol)?;
        out.value += q.value;
        out.error += q.error;
        out.evals += q.evals;
    }
    Ok(out)
}

/// Integral over `[a, inf)` through the substitution `x = a + t/(1-t)`.
pub fn integrate_to_inf<F: FnMut(f64) -> f64>(mut f: F, a: f64, tol: QuadTol) -> Result<Quad> {
    integrate(
        |t| {
            let s = 1.0 - t;
            let v = f(a + t / s) / (s * s);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        tol,
    )
}

/// Integral over `(-inf, b]`.
pub fn integrate_from_neg_inf<F: FnMut(f64) -> f64>(
    mut f: F,
    b: f64,
    tol: QuadTol,
) -> Result<Quad> {
    integrate_to_inf(|y| f(-y), -b, tol)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pnm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            z = 0.0;
            dp = 1.0;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n == 1 {
        w[0] = 2.0;
    }
    (x, w)
}

/// Gauss-Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    x.iter()
        .zip(&w)
        .map(|(&xi, &wi)| (c + h * xi, h * wi))
        .collect()
}

/// Root of an increasing function on `[lo, hi]` by safeguarded Newton iteration.
pub fn newton_bisect<F, D>(f: F, df: D, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let (flo, fhi) = (f(lo), f(hi));
    if flo > 0.0 || fhi < 0.0 {
        return Err(Error::NoConvergence {
            what: "bracketed root search (no sign change)",
            iterations: 0,
            residual: flo.abs().min(fhi.abs()),
        });
    }
    let mut x = 0.5 * (lo + hi);
    for it in 0..300 {
        let fx = f(x);
        if fx.abs() <= tol {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = df(x);
        let xn = x - fx / d;
        x = if d > 0.0 && xn > lo && xn < hi {
            xn
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * x.abs().max(1e-300) * 4.0 {
            return Ok(x);
        }
        if it == 299 {
            return Err(Error::NoConvergence {
                what: "bracketed root search",
                iterations: 300,
                residual: fx.abs(),
            });
        }
    }
    Ok(x)
}
