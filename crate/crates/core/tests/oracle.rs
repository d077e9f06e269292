use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use sce_core::coulomb_ot::CoulombOt;
use sce_core::density::make_power_tail;
use sce_core::grid::{Axis, DiagonalRule, GridField1D, GridField2D, KeScheme, PotentialField};
use sce_core::oracle::{
    constrained_min, coulomb_ground_state, delta_eta, delta_recovery, ground_state, h_ratio, ipfp,
    lowest_eigenpair, markov_check, oscillator_gaussian, oscillator_lower_bound,
    oscillator_quotient, predicted_limit, random_trial_fields, ConstrainedOpts, EigenOpts,
    GridOperator, GroundStateOpts,
};
use sce_core::Error;
use std::f64::consts::PI;

fn cauchy() -> CoulombOt {
    CoulombOt::new(make_power_tail(2.0).unwrap()).unwrap()
}

/// Closed form of `h(N)` in two dimensions.
fn h_closed_2d(n: f64) -> f64 {
    let (e1, e2) = ((-n).exp(), (-2.0 * n).exp());
    let num = PI
        * (2.0 * (1.0 - (1.0 + 2.0 * n) * e2) - 8.0 * e1 * (1.0 - (1.0 + n) * e1)
            + 2.0 * n * n * e2);
    let den = 2.0 * PI * ((1.0 - e2) - 4.0 * e1 * (1.0 - e1) + 2.0 * n * e2);
    num / den
}

fn dense(op: &GridOperator) -> DMatrix<f64> {
    let n = op.len();
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for k in 0..n {
        e[k] = 1.0;
        op.apply(&e, &mut col);
        e[k] = 0.0;
        for (r, v) in col.iter().enumerate() {
            m[(r, k)] = *v;
        }
    }
    m
}

#[test]
fn lobpcg_matches_dense_eigensolver() {
    let ax = Axis::new(-1.0, 1.3, 9).unwrap();
    let ay = Axis::new(-0.7, 1.0, 11).unwrap();
    let v = PotentialField::from_fn(ax, ay, |x, y| {
        (3.0 * x).sin().abs() + (x - y).powi(2) + 0.3 * y
    });
    let op = GridOperator::e_eps(&v, 2e-2).unwrap();
    let m = dense(&op);
    assert!((&m - m.transpose()).amax() < 1e-12);
    let lam = SymmetricEigen::new(m).eigenvalues.min();
    let r = lowest_eigenpair(&op, &vec![1.0; op.len()], EigenOpts::default()).unwrap();
    assert_abs_diff_eq!(r.value, lam, epsilon = 1e-9 * lam.abs().max(1.0));
    assert!(r.residual <= 1e-8);
}

#[test]
fn quadratic_potential_eigenvalue() {
    let ax = Axis::symmetric(1.5, 256).unwrap();
    let v = PotentialField::from_fn(ax, ax, |x, y| 0.5 * (x * x + 4.0 * y * y));
    let gs = ground_state(&v, 1e-2, GroundStateOpts::default()).unwrap();
    assert_abs_diff_eq!(gs.eigenvalue, 1.5, epsilon = 1.5e-3);
    assert!(gs.levels >= 3);
    assert!(gs.eigenfield.values.iter().all(|p| *p >= -1e-12));
    let mass: f64 =
        gs.eigenfield.values.iter().map(|p| p * p).sum::<f64>() * gs.eigenfield.cell_area();
    assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-10);
    // The Rayleigh quotient of the eigenfield is the discrete energy of |psi|^2.
    assert_abs_diff_eq!(gs.energy.e, gs.eigenvalue, epsilon = 1e-8);
}

#[test]
fn masked_potential_rejected() {
    let sol = cauchy();
    let ax = Axis::symmetric(2.0, 32).unwrap();
    let v = PotentialField::coulomb(&sol, ax, ax, DiagonalRule::Mask).unwrap();
    assert!(ground_state(&v, 1e-2, GroundStateOpts::default()).is_err());
}

#[test]
fn coulomb_eigenvalue_decreases_with_eps() {
    let sol = cauchy();
    let vals: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|&eps| {
            coulomb_ground_state(&sol, 2.5, 256, eps, Some(6.0), GroundStateOpts::default())
                .unwrap()
                .eigenvalue
        })
        .collect();
    assert!(vals[0] > vals[1] && vals[1] > vals[2], "{vals:?}");
}

#[test]
fn predicted_limit_matches_minimum_of_half_sqrt_q() {
    let sol = cauchy();
    let ax = Axis::symmetric(2.5, 64).unwrap();
    let limit = predicted_limit(&sol, ax, ax).unwrap();
    let brute = (1..200_000)
        .map(|k| 0.4 + 2.1 * k as f64 / 200_000.0)
        .flat_map(|x| [x, -x])
        .map(|x| 0.5 * sol.q(x).unwrap().sqrt())
        .fold(f64::INFINITY, f64::min);
    assert_abs_diff_eq!(limit, brute, epsilon = 1e-9);
}

#[test]
fn resolution_guard() {
    let sol = cauchy();
    let r = coulomb_ground_state(&sol, 2.5, 64, 1e-4, Some(6.0), GroundStateOpts::default());
    assert!(matches!(r, Err(Error::UnderResolved(_))));
}

#[test]
fn markov_bound_on_ground_state() {
    let sol = cauchy();
    let eps = 1e-2;
    let gs = coulomb_ground_state(&sol, 2.5, 128, eps, None, GroundStateOpts::default()).unwrap();
    let ax = Axis::symmetric(2.5, 128).unwrap();
    let v = PotentialField::coulomb(&sol, ax, ax, DiagonalRule::Clamp).unwrap();
    for t in [0.01, 0.1, 1.0] {
        let mk = markov_check(&gs, &v, eps, t);
        assert!(mk.holds, "{mk:?}");
        assert!(mk.mass_above <= mk.direct * (1.0 + 1e-12));
    }
}

#[test]
fn h_ratio_closed_form() {
    for n in [0.5, 1.0, 3.0, 8.6, 20.0, 40.0] {
        assert_abs_diff_eq!(h_ratio(n, 2).unwrap(), h_closed_2d(n), epsilon = 1e-10);
    }
    assert!((h_ratio(20.0, 2).unwrap() - 1.0).abs() <= 1e-3);
    assert!(h_ratio(0.0, 2).is_err());
    assert!(h_ratio(1.0, 0).is_err());
}

#[test]
fn delta_eta_solves_schedule() {
    for eps in [1e-3, 1e-5, 1e-8] {
        let eta = delta_eta(eps, 2.0).unwrap();
        let lhs = eta.sqrt() * 4.0 / (-2.0 * eta.ln());
        assert_abs_diff_eq!(lhs, eps.sqrt(), epsilon = 1e-10 * eps.sqrt());
    }
    assert!(delta_eta(0.5, 0.1).is_err());
}

#[test]
fn delta_recovery_flat_direction() {
    let p = delta_recovery([0.0, 0.0], 1e-5, 2.0, 256).unwrap();
    assert_eq!(p.target, 0.0);
    // V = 0 leaves only the kinetic half of the bound.
    assert!((p.energy - 0.5 * p.bound).abs() <= 0.01 * p.bound, "{p:?}");
    let q = delta_recovery([0.0, 0.0], 1e-7, 2.0, 256).unwrap();
    assert!(q.energy < p.energy);
    assert!(delta_recovery([-1.0, 0.0], 1e-5, 2.0, 64).is_err());
}

#[test]
fn constrained_without_potential_is_product() {
    let ax = Axis::symmetric(1.0, 16).unwrap();
    let rx = GridField1D::new(
        ax,
        (0..16).map(|i| 1.0 + 0.5 * (ax.x(i) * 2.0).cos()).collect(),
    )
    .unwrap();
    let raw: Vec<f64> = (0..16).map(|j| 0.4 + (ax.x(j) + 0.3).powi(2)).collect();
    let s: f64 = raw.iter().sum::<f64>() * ax.h();
    let ry = GridField1D::new(ax, raw.iter().map(|v| v * rx.mass() / s).collect()).unwrap();
    let v = PotentialField::from_fn(ax, ax, |_, _| 0.0);
    let eps = 1e-2f64;
    let r = constrained_min(&v, &rx, &ry, eps, ConstrainedOpts::default()).unwrap();
    let want = eps.sqrt() * (rx.kinetic_energy() + ry.kinetic_energy());
    assert_abs_diff_eq!(r.energy.e, want, epsilon = 1e-6 * want);
    assert!(r.kkt_residual <= 1e-5);
    assert!(r.marginal_residual <= 1e-8);
}

#[test]
fn constrained_above_unconstrained() {
    let ax = Axis::symmetric(2.0, 32).unwrap();
    let v = PotentialField::from_fn(ax, ax, |x, y| 0.5 * (x - y).powi(2) + 0.1 * (x + y).powi(2));
    let rho = GridField1D::new(
        ax,
        (0..32).map(|i| (-(ax.x(i) - 0.3).powi(2)).exp()).collect(),
    )
    .unwrap();
    let eps = 1e-2;
    let gs = ground_state(&v, eps, GroundStateOpts::default()).unwrap();
    let r = constrained_min(&v, &rho, &rho, eps, ConstrainedOpts::default()).unwrap();
    let m = rho.mass();
    assert!(
        r.energy.e / m >= gs.eigenvalue * (1.0 - 1e-9),
        "{} < {}",
        r.energy.e / m,
        gs.eigenvalue
    );
    assert!(r.dual_value <= r.energy.e * (1.0 + 1e-6));
    let direct = r.plan.e_eps(&v, eps, KeScheme::Forward).unwrap().e;
    assert_abs_diff_eq!(direct, r.energy.e, epsilon = 1e-12 * direct);
}

#[test]
fn constrained_rejects_bad_marginals() {
    let ax = Axis::symmetric(1.0, 8).unwrap();
    let v = PotentialField::from_fn(ax, ax, |x, y| (x - y).powi(2));
    let a = GridField1D::new(ax, vec![1.0; 8]).unwrap();
    let b = GridField1D::new(ax, vec![2.0; 8]).unwrap();
    assert!(constrained_min(&v, &a, &b, 1e-2, ConstrainedOpts::default()).is_err());
    let other = GridField1D::new(Axis::symmetric(2.0, 8).unwrap(), vec![1.0; 8]).unwrap();
    assert!(constrained_min(&v, &other, &a, 1e-2, ConstrainedOpts::default()).is_err());
}

#[test]
fn ipfp_fits_marginals() {
    let ax = Axis::symmetric(1.0, 12).unwrap();
    let mut plan = GridField2D::from_fn(ax, ax, |x, y| (-(x - y).powi(2) * 4.0).exp());
    let rx = GridField1D::new(ax, (0..12).map(|i| 1.0 + ax.x(i)).collect()).unwrap();
    let ry = GridField1D::new(ax, (0..12).map(|i| 1.0 - 0.5 * ax.x(i)).collect()).unwrap();
    ipfp(&mut plan, &rx, &ry, 500);
    assert!(plan.marginal_x().l1_distance(&rx).unwrap() < 1e-8);
    assert!(plan.marginal_y().l1_distance(&ry).unwrap() < 1e-8);
}

#[test]
fn oscillator_gaussian_attains_trace() {
    let a = [[1.0, 0.0], [0.0, 2.0]];
    let ax = Axis::symmetric(1.5, 512).unwrap();
    let g = oscillator_gaussian(ax, ax, a, 1e-2, [0.0, 0.0]);
    assert!((oscillator_quotient(&g, a, 1e-2) - 0.3).abs() <= 0.003);
    assert!(oscillator_lower_bound(a, 1e-2, 1.0).unwrap() < 0.3);
    assert!(oscillator_lower_bound(a, 0.5, 1.0).is_err());
    assert!(oscillator_lower_bound([[1.0, 0.0], [0.0, 0.0]], 1e-4, 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn oscillator_bound_on_random_fields(a1 in 1.0..3.0f64, a2 in 1.0..3.0f64, eps in 1e-3..1e-2f64, seed in any::<u64>()) {
        let a = [[a1, 0.0], [0.0, a2]];
        let lb = oscillator_lower_bound(a, eps, 1.0);
        prop_assume!(lb.is_ok());
        let lb = lb.unwrap();
        let ax = Axis::symmetric(2.0, 128).unwrap();
        for f in random_trial_fields(ax, ax, a, eps, 4, seed) {
            let q = oscillator_quotient(&f, a, eps);
            prop_assert!(q >= lb, "{q} < {lb}");
        }
    }

    #[test]
    fn h_ratio_above_one_and_decreasing(n in 0.5..30.0f64) {
        let (a, b) = (h_ratio(n, 2).unwrap(), h_ratio(n + 0.5, 2).unwrap());
        prop_assert!(a >= 1.0 - 1e-12 && b <= a + 1e-12);
    }
}
