use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sce_core::grid::{Axis, GridField2D, PotentialField, Stencil};
use sce_core::marginal_fix::{
    bump, bump_marginal, bump_stencil, deconvolve, deconvolve_with, ke_bound_check, pe_bound_check,
    KE_THETA,
};
use sce_core::quad::{integrate, QuadTol};
use std::f64::consts::PI;

fn random_plan(rng: &mut ChaCha8Rng, n: usize, zero_frac: f64) -> GridField2D {
    let ax = Axis::symmetric(1.0, n).unwrap();
    let vals = (0..n * n)
        .map(|_| {
            if rng.random_bool(zero_frac) {
                0.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    GridField2D::new(ax, ax, vals).unwrap()
}

fn diagonal_plan(n: usize) -> GridField2D {
    let ax = Axis::symmetric(1.0, n).unwrap();
    GridField2D::from_fn(ax, ax, |x, y| {
        if (x - y).abs() < 1e-9 && x.abs() < 0.5 {
            1.0
        } else {
            0.0
        }
    })
}

#[test]
fn bump_and_marginal_closed_forms() {
    let tol = QuadTol::new(1e-14, 1e-12);
    let mass = integrate(|r| 2.0 * PI * r * bump(r), 0.0, 1.0, tol)
        .unwrap()
        .value;
    assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-12);
    for s in [0.0f64, 0.3, 0.7, 0.95] {
        let h = (1.0 - s * s).sqrt();
        let direct = integrate(|t| bump(s.hypot(t)), -h, h, tol).unwrap().value;
        assert_abs_diff_eq!(bump_marginal(s), direct, epsilon = 1e-11);
    }
    let ke = integrate(
        |s| {
            let m = bump_marginal(s);
            let d = -7.0 * 128.0 / (35.0 * PI) * s * (1.0 - s * s).powf(2.5);
            if m > 0.0 {
                d * d / (8.0 * m)
            } else {
                0.0
            }
        },
        -1.0,
        1.0,
        tol,
    )
    .unwrap()
    .value;
    assert_abs_diff_eq!(ke, KE_THETA, epsilon = 1e-9);
}

#[test]
fn stencil_radius_follows_quarter_power() {
    let k = bump_stencil(0.01, 0.02, 1e-4).unwrap();
    assert_eq!((k.rx, k.ry), (10, 5));
    assert_abs_diff_eq!(k.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
    assert_eq!(bump_stencil(1.0, 1.0, 1e-4).unwrap(), Stencil::delta());
    assert!(bump_stencil(0.1, 0.1, 0.0).is_err());
}

#[test]
fn product_plan_is_fixed_point_for_separable_kernel() {
    let ax = Axis::symmetric(1.0, 16).unwrap();
    let s1: Vec<f64> = (0..16)
        .map(|i| 1.0 + (i as f64 * 0.7).sin().abs())
        .collect();
    let s2: Vec<f64> = (0..16)
        .map(|j| {
            if j % 5 == 0 {
                0.0
            } else {
                0.5 + j as f64 / 16.0
            }
        })
        .collect();
    let pi0 = GridField2D::from_fn(ax, ax, |x, y| {
        s1[ax.cell_of(x).unwrap()] * s2[ax.cell_of(y).unwrap()]
    });
    let k = Stencil::sample(ax.h(), ax.h(), 3, 2, |dx, dy| {
        (1.0 - (dx / 0.6).powi(2)).max(0.0) * (1.0 - (dy / 0.4).powi(2)).max(0.0)
    })
    .unwrap();
    let dp = deconvolve_with(&pi0, &k, 1.0).unwrap();
    let top = pi0.values.iter().fold(0.0f64, |m, v| m.max(*v));
    for (a, b) in dp.pi_tilde.values.iter().zip(&pi0.values) {
        assert_abs_diff_eq!(*a, *b, epsilon = 1e-10 * top);
    }
}

#[test]
fn marginals_exact_on_random_small_plans() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for eps in [1e-2, 3e-2, 1e-1, 0.3] {
        for _ in 0..20 {
            let p = random_plan(&mut rng, 8, 0.3);
            let dp = deconvolve(&p, eps).unwrap();
            assert!(
                dp.marginal_error.0 <= 1e-12 && dp.marginal_error.1 <= 1e-12,
                "{:?}",
                dp.marginal_error
            );
            assert!(dp.min_value >= 0.0);
            assert!(dp.support_ok());
            assert_abs_diff_eq!(dp.pi_tilde.mass(), p.mass(), epsilon = 1e-12 * p.mass());
            let ke = ke_bound_check(&p, &dp, eps);
            assert!(ke.holds, "eps {eps}: constant {}", ke.constant);
        }
    }
}

#[test]
fn pe_on_graph_scales_like_sqrt_eps() {
    let p = diagonal_plan(256);
    let v = PotentialField::from_fn(p.ax, p.ay, |x, y| 0.5 * (x - y).powi(2));
    let pts: Vec<(f64, f64)> = (0..9)
        .map(|k| {
            let eps = 10f64.powf(-4.0 + 2.0 * k as f64 / 8.0);
            let dp = deconvolve(&p, eps).unwrap();
            let pb = pe_bound_check(&p, &dp, &v, eps, true).unwrap();
            assert_eq!(pb.pe0_over_sqrt_eps, 0.0);
            (eps.ln(), (pb.pe_tilde_over_sqrt_eps * eps.sqrt()).ln())
        })
        .collect();
    let n = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope - 0.5).abs() <= 0.1, "slope {slope}");
}

#[test]
fn deconvolution_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random_plan(&mut rng, 24, 0.5);
    let v = PotentialField::from_fn(p.ax, p.ay, |x, y| (x - y).powi(2) + 0.2 * (x + y).abs());
    let eps = 1e-3;
    let a = pe_bound_check(&p, &deconvolve(&p, eps).unwrap(), &v, eps, true).unwrap();
    let p2 = p.scaled(2.0);
    let b = pe_bound_check(&p2, &deconvolve(&p2, eps).unwrap(), &v, eps, true).unwrap();
    assert_abs_diff_eq!(
        b.pe_tilde_over_sqrt_eps,
        2.0 * a.pe_tilde_over_sqrt_eps,
        epsilon = 1e-12 * a.pe_tilde_over_sqrt_eps
    );
    assert_abs_diff_eq!(b.mass, 2.0 * a.mass, epsilon = 1e-12);
    assert_abs_diff_eq!(
        b.constant,
        a.constant,
        epsilon = 1e-10 * a.constant.max(1.0)
    );
}

#[test]
fn rejects_negative_plans() {
    let ax = Axis::symmetric(1.0, 4).unwrap();
    let mut vals = vec![1.0; 16];
    vals[3] = -1e-3;
    let p = GridField2D::new(ax, ax, vals).unwrap();
    assert!(deconvolve(&p, 1e-2).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn exact_marginals_and_positivity(seed in any::<u64>(), n in 6usize..20, eps in 1e-4..0.3f64, zeros in 0.0..0.8f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_plan(&mut rng, n, zeros);
        prop_assume!(p.mass() > 0.0);
        let dp = deconvolve(&p, eps).unwrap();
        let scale = p.values.iter().fold(0.0f64, |m, v| m.max(*v)) * n as f64;
        prop_assert!(dp.marginal_error.0 <= 1e-12 * scale.max(1.0));
        prop_assert!(dp.marginal_error.1 <= 1e-12 * scale.max(1.0));
        prop_assert!(dp.min_value >= 0.0);
        prop_assert!(dp.support_ok());
    }
}
