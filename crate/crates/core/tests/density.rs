use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use sce_core::density::{
    from_family, make_power_tail, make_tabulated, parse_tabulated_csv, DensityFamily,
};
use sce_core::quad::{integrate_pieces, QuadTol};
use std::f64::consts::PI;

#[test]
fn cauchy_closed_forms() {
    let d = make_power_tail(2.0).unwrap();
    assert_abs_diff_eq!(d.pdf(0.0), 1.0 / PI, epsilon = 1e-12);
    assert_abs_diff_eq!(d.cdf(0.0), 0.5, epsilon = 1e-14);
    assert_abs_diff_eq!(d.cdf(1.0), 0.75, epsilon = 1e-12);
    assert_abs_diff_eq!(d.quantile(0.5).unwrap(), 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(d.quantile(0.75).unwrap(), 1.0, epsilon = 1e-10);
    assert_abs_diff_eq!(d.quantile(d.cdf(2.5)).unwrap(), 2.5, epsilon = 1e-10);
    for i in 0..50 {
        let x = -20.0 + 40.0 * i as f64 / 49.0;
        let closed = 0.5 + x.atan() / PI;
        assert_abs_diff_eq!(d.cdf(x), closed, epsilon = 1e-12);
        assert_abs_diff_eq!(d.sf(x), 1.0 - closed, epsilon = 1e-12);
    }
}

#[test]
fn power_tail_normalized() {
    for p in [2.0, 2.3, 2.5, 2.8, 3.0] {
        let d = make_power_tail(p).unwrap();
        let tol = QuadTol::new(1e-13, 1e-11);
        let core = integrate_pieces(|x| d.pdf(x), &[-1e4, 0.0, 1e4], tol)
            .unwrap()
            .value;
        let tails = d.cdf(-1e4) + d.sf(1e4);
        assert_abs_diff_eq!(core + tails, 1.0, epsilon = 1e-8);
    }
}

#[test]
fn exponent_range_enforced() {
    assert!(make_power_tail(1.9).is_err());
    assert!(make_power_tail(3.1).is_err());
    assert!(make_power_tail(f64::NAN).is_err());
}

#[test]
fn cauchy_tail_hypothesis() {
    let d = make_power_tail(2.0).unwrap();
    // |x|^3 pdf is increasing for |x| > 0 and crosses 1 near 3.47.
    assert_abs_diff_eq!(
        d.tail_constant(3.0, 1e3),
        27.0 / (10.0 * PI),
        epsilon = 1e-12
    );
    assert!(d.tail_constant(3.5, 1e3) >= 1.0);
    assert!(make_power_tail(3.0).unwrap().tail_constant(3.0, 1e3) > 0.0);
}

#[test]
fn kinetic_energy_stable_in_window() {
    let d = make_power_tail(2.0).unwrap();
    let k50 = d.kinetic_energy_1d((-50.0, 50.0)).unwrap();
    let k100 = d.kinetic_energy_1d((-100.0, 100.0)).unwrap();
    assert!(k50.is_finite() && k50 > 0.0);
    assert!((k100 - k50).abs() < 1e-6);
    // Closed form for the Cauchy density: int x^2 / (2 pi (1 + x^2)^3) = 1/16.
    assert_abs_diff_eq!(k100, 1.0 / 16.0, epsilon = 1e-6);
}

#[test]
fn tabulated_gaussian_fisher_information() {
    let sigma = 0.7;
    let n = 4001;
    let nodes: Vec<f64> = (0..n)
        .map(|i| -8.0 * sigma + 16.0 * sigma * i as f64 / (n - 1) as f64)
        .collect();
    let values: Vec<f64> = nodes
        .iter()
        .map(|x| (-x * x / (2.0 * sigma * sigma)).exp().max(1e-300))
        .collect();
    let d = make_tabulated(&nodes, &values).unwrap();
    assert_abs_diff_eq!(d.cdf(0.0), 0.5, epsilon = 1e-10);
    let ke = d.kinetic_energy_1d((-6.0 * sigma, 6.0 * sigma)).unwrap();
    let exact = 1.0 / (8.0 * sigma * sigma);
    assert!((ke - exact).abs() / exact < 1e-3, "ke {ke} vs {exact}");
}

#[test]
fn flat_patch_contributes_nothing() {
    let d = make_tabulated(&[-2.0, -1.0, 1.0, 2.0], &[0.1, 0.3, 0.3, 0.1]).unwrap();
    let shift = -d.quantile(0.5).unwrap();
    let ke = d.kinetic_energy_1d((-0.9 + shift, 0.9 + shift)).unwrap();
    assert_abs_diff_eq!(ke, 0.0, epsilon = 1e-14);
}

#[test]
fn tabulated_recentres_asymmetric_input() {
    let d = make_tabulated(&[0.0, 1.0, 2.0, 5.0], &[1.0, 2.0, 1.0, 0.5]).unwrap();
    assert_abs_diff_eq!(d.cdf(0.0), 0.5, epsilon = 1e-12);
    assert!(!d.is_symmetric());
}

#[test]
fn tabulated_rejects_bad_input() {
    assert!(make_tabulated(&[0.0], &[1.0]).is_err());
    assert!(make_tabulated(&[0.0, 0.0], &[1.0, 1.0]).is_err());
    assert!(make_tabulated(&[0.0, 1.0], &[1.0, 0.0]).is_err());
    assert!(make_tabulated(&[0.0, 1.0], &[1.0]).is_err());
}

#[test]
fn csv_parsing() {
    let (x, y) = parse_tabulated_csv("x,pdf\n# comment\n-1, 0.2\n0,0.5\n1,0.2\n").unwrap();
    assert_eq!(x, vec![-1.0, 0.0, 1.0]);
    assert_eq!(y, vec![0.2, 0.5, 0.2]);
    assert!(parse_tabulated_csv("1,2\nfoo,3\n").is_err());
    assert!(parse_tabulated_csv("1,2,3\n").is_err());
}

#[test]
fn family_round_trip() {
    let fam = DensityFamily::PowerTail { p: 2.5 };
    let json = serde_json::to_string(&fam).unwrap();
    let back: DensityFamily = serde_json::from_str(&json).unwrap();
    assert_eq!(back, fam);
    assert_abs_diff_eq!(
        from_family(&back).unwrap().pdf(0.3),
        make_power_tail(2.5).unwrap().pdf(0.3),
        epsilon = 0.0
    );
}

fn arb_density() -> impl Strategy<Value = sce_core::density::Density1D> {
    prop_oneof![
        (2.0..=3.0f64).prop_map(|p| make_power_tail(p).unwrap()),
        proptest::collection::vec(0.05..2.0f64, 4..12).prop_map(|v| {
            let nodes: Vec<f64> = (0..v.len()).map(|i| i as f64 * 0.7 - 1.3).collect();
            make_tabulated(&nodes, &v).unwrap()
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantile_inverts_cdf(d in arb_density(), x in -30.0..30.0f64) {
        let back = d.quantile(d.cdf(x)).unwrap();
        prop_assert!((back - x).abs() <= 1e-9 * (1.0 + x.abs()), "{back} vs {x}");
    }

    #[test]
    fn cdf_derivative_is_pdf(d in arb_density(), x in -10.0..10.0f64) {
        prop_assume!(d.breakpoints().iter().all(|b| (b - x).abs() > 1e-3));
        let h = 1e-5;
        let fd = (d.cdf(x + h) - d.cdf(x - h)) / (2.0 * h);
        prop_assert!((fd - d.pdf(x)).abs() <= 1e-8, "{fd} vs {}", d.pdf(x));
    }

    #[test]
    fn positive_and_monotone(d in arb_density(), x in -100.0..100.0f64, dx in 1e-3..5.0f64) {
        prop_assert!(d.pdf(x) > 0.0);
        prop_assert!(d.cdf(x + dx) > d.cdf(x));
        prop_assert!((d.cdf(x) + d.sf(x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_power_tail(p in 2.0..=3.0f64, x in 0.0..50.0f64, t in 0.01..0.99f64) {
        let d = make_power_tail(p).unwrap();
        prop_assert!((d.pdf(x) - d.pdf(-x)).abs() <= 1e-15);
        let (a, b) = (d.quantile(t).unwrap(), d.quantile(1.0 - t).unwrap());
        prop_assert!((a + b).abs() <= 1e-9 * (1.0 + a.abs()));
    }
}
