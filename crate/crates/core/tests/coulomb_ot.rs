use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use sce_core::coulomb_ot::{ot_constants, CoulombOt, DomainH, WindowTaper};
use sce_core::density::make_power_tail;
use std::f64::consts::PI;

fn cauchy() -> CoulombOt {
    CoulombOt::new(make_power_tail(2.0).unwrap()).unwrap()
}

#[test]
fn cauchy_map_is_minus_inverse() {
    let sol = cauchy();
    assert_abs_diff_eq!(sol.t(2.0).unwrap(), -0.5, epsilon = 1e-12);
    for i in 0..200 {
        let x = 0.1 + 9.9 * i as f64 / 199.0;
        assert_abs_diff_eq!(sol.t(x).unwrap(), -1.0 / x, epsilon = 1e-10);
        assert_abs_diff_eq!(sol.t(-x).unwrap(), 1.0 / x, epsilon = 1e-10);
    }
}

#[test]
fn map_rejects_median() {
    assert!(cauchy().t(0.0).is_err());
}

#[test]
fn potential_derivatives_at_unit_point() {
    let sol = cauchy();
    assert_abs_diff_eq!(sol.du(-1.0).unwrap(), 0.25, epsilon = 1e-12);
    assert_abs_diff_eq!(sol.ddu(1.0).unwrap(), 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(sol.ddu(-1.0).unwrap(), 0.0, epsilon = 1e-12);
    let x: f64 = 2.5;
    let closed = (2.0 * x.powi(3) - 2.0 * x) / (1.0 + x * x).powi(3);
    assert_abs_diff_eq!(sol.ddu(x).unwrap(), closed, epsilon = 1e-12);
}

#[test]
fn hessian_on_graph() {
    let sol = cauchy();
    assert_abs_diff_eq!(sol.q(-1.0).unwrap(), 0.5, epsilon = 1e-10);
    let g = sol.grad_v(-1.0, 1.0).unwrap();
    assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-10);
    assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-10);
    assert_abs_diff_eq!(sol.v(-1.0, 1.0).unwrap(), 0.0, epsilon = 1e-9);
    for &x in &[-3.0f64, -0.7, 0.4, 2.2] {
        let s = x.abs() + 1.0 / x.abs();
        let closed = 2.0 * (s * s - 2.0) / (s * s * s);
        assert_abs_diff_eq!(sol.q(x).unwrap(), closed, epsilon = 1e-9);
        let h = sol.hess_v(x, sol.t(x).unwrap()).unwrap();
        let tp = sol.dt(x).unwrap();
        let kx = h[0][0] + h[0][1] * tp;
        let ky = h[1][0] + h[1][1] * tp;
        assert!(kx.hypot(ky) <= 1e-6 * h[0][0].abs().max(h[1][1].abs()));
        let a = sol.sqrt_a(x).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let sq = a[i][0] * a[0][j] + a[i][1] * a[1][j];
                assert_abs_diff_eq!(sq, h[i][j], epsilon = 1e-8);
            }
        }
    }
}

#[test]
fn duality_on_omega_4() {
    let sol = cauchy();
    let dom = DomainH::new(&sol, 4.0).unwrap();
    assert_abs_diff_eq!(dom.r_h, 0.25, epsilon = 1e-12);
    for x in dom.lattice(40).unwrap() {
        assert!(sol.duality_residual(x).unwrap().abs() < 1e-8, "x = {x}");
    }
}

#[test]
fn f_ot_and_f_zpo_cauchy() {
    let sol = cauchy();
    let rep = sol.f_ot(None).unwrap();
    assert_abs_diff_eq!(rep.f_ot, 1.0 / PI, epsilon = 1e-9);
    assert!(rep.discrepancy.abs() < 1e-7, "{rep:?}");
    // (2/pi) int_0^{pi/4} sqrt(q(tan th)) dth with th = (pi/4) v^2, q = 2(s^2 - 2)/s^3.
    let zpo = sol.f_zpo(None).unwrap().value;
    let n = 20000;
    let mut acc = 0.0;
    for i in 0..n {
        let v = (i as f64 + 0.5) / n as f64;
        let x = (0.25 * PI * v * v).tan();
        let s = x + 1.0 / x;
        acc += (2.0 * (s * s - 2.0) / (s * s * s)).sqrt() * 0.5 * PI * v;
    }
    let oracle = 2.0 * acc / n as f64 / PI;
    assert_abs_diff_eq!(zpo, oracle, epsilon = 1e-7);
}

#[test]
fn f_ot_scales_under_dilation() {
    let sol = cauchy();
    let d = make_power_tail(2.5).unwrap();
    let base = CoulombOt::new(d.clone()).unwrap().f_ot(None).unwrap().f_ot;
    let scaled = CoulombOt::new(d.dilated(3.0).unwrap())
        .unwrap()
        .f_ot(None)
        .unwrap()
        .f_ot;
    assert_abs_diff_eq!(scaled, 3.0 * base, epsilon = 1e-8);
    let neg = sol.f_ot(Some((-1e9, -1e-12))).unwrap().f_ot;
    assert_abs_diff_eq!(neg, 0.5 / PI, epsilon = 1e-7);
}

#[test]
fn growth_constant_tends_to_half_q() {
    let rep = cauchy().quadratic_growth_check(4.0, 0.05).unwrap();
    assert!(rep.small_offset_rel_err < 1e-2, "{rep:?}");
    assert!(rep.c_max.is_finite() && rep.c_max < 1.0);
}

#[test]
fn structural_constants_cauchy() {
    let c = ot_constants(&cauchy(), 4.0, 200).unwrap();
    assert!(c.delta_gap > 0.0);
    assert_abs_diff_eq!(c.delta_gap, 2.0, epsilon = 1e-3);
    assert!(c.min_q > 0.0 && c.max_abs_ddu.is_finite());
}

#[test]
fn taper_preserves_invariance() {
    let sol = cauchy();
    let tap = WindowTaper::new(&sol, 4.0, 5.5).unwrap();
    for i in 1..400 {
        let x = -6.0 + 12.0 * i as f64 / 400.0;
        if x.abs() < 1e-9 {
            continue;
        }
        let tx = sol.t(x).unwrap();
        assert_abs_diff_eq!(tap.weight(&sol, x), tap.weight(&sol, tx), epsilon = 1e-12);
        if tap.inner.contains(x) {
            assert_eq!(tap.weight(&sol, x), 1.0);
        }
        if !tap.outer.contains(x) {
            assert_eq!(tap.weight(&sol, x), 0.0);
        }
    }
}

proptest! {
    #[test]
    fn involution_and_mass_balance(x in prop_oneof![-50.0..-0.02f64, 0.02..50.0f64], p in 2.0..3.0f64) {
        let sol = CoulombOt::new(make_power_tail(p).unwrap()).unwrap();
        let tx = sol.t(x).unwrap();
        prop_assert!(tx * x < 0.0);
        prop_assert!((sol.t(tx).unwrap() - x).abs() <= 1e-8 * (1.0 + x.abs()));
        let d = sol.density();
        let shift = if x < 0.0 { 0.5 } else { -0.5 };
        prop_assert!((d.cdf(tx) - d.cdf(x) - shift).abs() < 1e-10);
    }

    #[test]
    fn effective_potential_nonnegative(x in -20.0..20.0f64, y in -20.0..20.0f64) {
        prop_assume!((x - y).abs() > 1e-3);
        let sol = cauchy();
        prop_assert!(sol.v(x, y).unwrap() >= -1e-8);
    }
}
