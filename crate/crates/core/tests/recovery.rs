use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use sce_core::coulomb_ot::{CoulombOt, DomainH};
use sce_core::density::make_power_tail;
use sce_core::recovery::{
    all_hold_threshold, l_constant, main_plan_energy, parse_overrides, resolve_overrides,
    tuned_overrides, GridSetup, GridSpec, MainPlan, Override, Param, ParameterSchedule,
    PartitionTdelta, Rule,
};

fn cauchy() -> CoulombOt {
    CoulombOt::new(make_power_tail(2.0).unwrap()).unwrap()
}

#[test]
fn default_schedule_at_1e_minus_4() {
    let s = ParameterSchedule::new(1e-4, 4.0, &[]).unwrap();
    let l = 1e4f64.ln();
    assert_abs_diff_eq!(s.n, l.powf(1.25), epsilon = 1e-12);
    assert_abs_diff_eq!(s.n, 16.05, epsilon = 5e-3);
    assert_abs_diff_eq!(s.beta, 7.813, epsilon = 1e-3);
    assert_abs_diff_eq!(s.delta, 0.03433, epsilon = 1e-5);
    assert_abs_diff_eq!(s.tau, 0.4771, epsilon = 1e-4);
    let beta_check = s
        .validity
        .iter()
        .find(|c| c.name == "beta << eps^(2/5)")
        .unwrap();
    assert!(!beta_check.holds);
    assert_abs_diff_eq!(beta_check.ratio, 311.0, epsilon = 1.0);
    assert!(!s.all_hold());
    assert!(!s.failed().is_empty());
}

#[test]
fn all_hold_threshold_is_astronomical() {
    let t = all_hold_threshold(&[]).unwrap();
    assert_abs_diff_eq!(t, 65.32, epsilon = 0.01);
    let beyond = ParameterSchedule::new(10f64.powf(-(t + 1.0)), 4.0, &[]).unwrap();
    assert!(beyond.all_hold());
    let before = ParameterSchedule::new(10f64.powf(-(t - 1.0)), 4.0, &[]).unwrap();
    assert!(!before.all_hold());
    assert!(all_hold_threshold(&tuned_overrides()).is_none());
}

#[test]
fn schedule_rejects_bad_inputs() {
    assert!(ParameterSchedule::new(0.5, 4.0, &[]).is_err());
    assert!(ParameterSchedule::new(0.0, 4.0, &[]).is_err());
    assert!(ParameterSchedule::new(1e-3, 1.0, &[]).is_err());
    assert!(ParameterSchedule::new(1e-3, f64::NAN, &[]).is_err());
}

#[test]
fn override_grammar() {
    let ov = parse_overrides("beta=0.5@0.333, delta=*0.5 tau=0.01@log-0.5 n=12").unwrap();
    assert_eq!(
        ov[0],
        Override {
            param: Param::Beta,
            rule: Rule::Power { c: 0.5, p: 0.333 }
        }
    );
    assert_eq!(
        ov[1],
        Override {
            param: Param::Delta,
            rule: Rule::Scale { c: 0.5 }
        }
    );
    assert_eq!(
        ov[2],
        Override {
            param: Param::Tau,
            rule: Rule::LogPower { c: 0.01, p: -0.5 }
        }
    );
    assert_eq!(
        ov[3],
        Override {
            param: Param::N,
            rule: Rule::Absolute { v: 12.0 }
        }
    );
    let s = ParameterSchedule::new(1e-3, 4.0, &ov).unwrap();
    let d = ParameterSchedule::new(1e-3, 4.0, &[]).unwrap();
    assert_abs_diff_eq!(s.beta, 0.5 * 1e-3f64.powf(0.333), epsilon = 1e-14);
    assert_abs_diff_eq!(s.delta, 0.5 * d.delta, epsilon = 1e-14);
    assert_abs_diff_eq!(s.tau, 0.01 * 1e3f64.ln().powf(-0.5), epsilon = 1e-14);
    assert_eq!(s.n, 12.0);
    for bad in [
        "beta",
        "gamma=1",
        "beta=-1",
        "beta=0@1",
        "beta=*x",
        "tau=1@logx",
        "n=inf",
    ] {
        assert!(parse_overrides(bad).is_err(), "{bad}");
    }
}

#[test]
fn tuned_preset_and_later_wins() {
    let ov = resolve_overrides("tuned,beta=0.1").unwrap();
    let s = ParameterSchedule::new(1e-3, 4.0, &ov).unwrap();
    assert_abs_diff_eq!(s.beta, 0.1, epsilon = 1e-15);
    let t = ParameterSchedule::tuned(1e-3, 4.0).unwrap();
    assert_abs_diff_eq!(t.beta, 0.5 * 1e-3f64.powf(1.0 / 3.0), epsilon = 1e-14);
    assert_abs_diff_eq!(s.tau, t.tau, epsilon = 0.0);
    assert!(resolve_overrides("none").unwrap().is_empty());
    assert!(resolve_overrides("tuned,bogus").is_err());
}

#[test]
fn partition_covers_and_interpolates() {
    let sol = cauchy();
    let delta = 0.05;
    let part = PartitionTdelta::build(&sol, 4.0, delta).unwrap();
    let dom = DomainH::new(&sol, 4.0).unwrap();
    assert!(part.min_length() > 0.5 * delta);
    assert!(part.max_length() <= delta * (1.0 + 1e-12));
    for (lo, hi) in dom.components() {
        assert!(part.intervals.iter().any(|iv| iv.0 == lo));
        assert!(part.intervals.iter().any(|iv| iv.1 == hi));
    }
    for (k, &(a, b)) in part.intervals.iter().enumerate() {
        assert_eq!(part.t_delta(&sol, a).unwrap(), sol.t(a).unwrap());
        assert_abs_diff_eq!(
            part.t_delta(&sol, b).unwrap(),
            sol.t(b).unwrap(),
            epsilon = 1e-15 * (1.0 + sol.t(b).unwrap().abs())
        );
        assert!(part.freeze[k] > a && part.freeze[k] < b);
        assert!(
            part.slope_residuals[k] <= 1e-10,
            "interval {k}: {}",
            part.slope_residuals[k]
        );
    }
    assert_eq!(part.midpoint_fallbacks, 0);
    // Linear interpolation error is at most sup|T''| len^2 / 8.
    let sup_d2t = (0..=2000)
        .flat_map(|i| {
            let s = i as f64 / 2000.0;
            dom.components()
                .into_iter()
                .map(move |(lo, hi)| lo + s * (hi - lo))
        })
        .map(|x| sol.d2t(x).unwrap().abs())
        .fold(0.0, f64::max);
    let err = part.max_interp_error(&sol, 16).unwrap();
    assert!(
        err <= sup_d2t * delta * delta / 8.0 * 1.001,
        "{err} vs {}",
        sup_d2t * delta * delta / 8.0
    );
    assert!(err <= l_constant(&sol, 4.0).unwrap() * delta * delta);
    assert!(PartitionTdelta::build(&sol, 4.0, 100.0).is_err());
}

#[test]
fn main_plan_structure_at_coarse_resolution() {
    let sol = cauchy();
    let eps = 1e-2;
    let s = ParameterSchedule::tuned(eps, 4.0).unwrap();
    let part = PartitionTdelta::build(&sol, 4.0, s.delta).unwrap();
    let setup = GridSetup::new(&sol, 4.0, &GridSpec::for_h(4.0, 256)).unwrap();
    let mut mp = MainPlan::build(&sol, &part, &s, setup.axis).unwrap();
    assert!(
        (mp.mass - mp.mass_expected).abs() <= 1e-6,
        "{} vs {}",
        mp.mass,
        mp.mass_expected
    );
    let dom = DomainH::new(&sol, 4.0).unwrap();
    let (neg, pos) = (dom.neg, dom.pos);
    let rho_omega = sol.density().cdf(neg.1) - sol.density().cdf(neg.0) + sol.density().cdf(pos.1)
        - sol.density().cdf(pos.0);
    let len = (neg.1 - neg.0) + (pos.1 - pos.0);
    assert_abs_diff_eq!(mp.mass_expected, rho_omega - s.tau * len, epsilon = 1e-8);
    // At most two kernels overlap only once (beta N)^(1/2) << delta; at eps = 1e-2 it fails.
    let overlap_ordering = s
        .validity
        .iter()
        .find(|c| c.name == "(beta N)^(1/2) << delta")
        .unwrap();
    assert!(!overlap_ordering.holds && mp.max_overlap > 2);
    // Half-diagonal sqrt(N/a + N/b) <= sqrt(2 beta N) since a >= b = 1/beta.
    let bound = (2.0 * s.beta * s.n).sqrt() + part.max_interp_error(&sol, 8).unwrap();
    assert!(
        mp.support_radius <= bound * (1.0 + 1e-12),
        "{} > {bound}",
        mp.support_radius
    );
    assert!(mp.gammabar.min_value() >= 0.0);
    // T(-x) = -T(x) for a symmetric density: the plan is invariant under (x, y) -> (-x, -y).
    let n = setup.axis.n;
    let top = mp.gammabar.values.iter().fold(0.0f64, |m, v| m.max(*v));
    let mut asym: f64 = 0.0;
    let (mut pe_neg, mut pe_pos) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            asym = asym.max((mp.gammabar.at(i, j) - mp.gammabar.at(n - 1 - i, n - 1 - j)).abs());
            let k = i * n + j;
            if !setup.potential.masked[k] {
                let w = setup.potential.values[k] * mp.gammabar.values[k];
                if i < n / 2 {
                    pe_neg += w
                } else {
                    pe_pos += w
                }
            }
        }
    }
    assert!(asym <= 1e-10 * top, "{asym}");
    let area = mp.gammabar.cell_area();
    assert_abs_diff_eq!(pe_neg * area, pe_pos * area, epsilon = 1e-6);

    let e = main_plan_energy(&mp, &setup.potential, &sol, &s).unwrap();
    assert!(e.energy.e.is_finite() && e.target > 0.0);
    assert!(e.energy.masked_mass == 0.0);

    let hprime = DomainH::new(&sol, 5.0).unwrap();
    let removed = mp.apply_window_cap(&setup.rho_h).unwrap();
    assert!(removed >= 0.0 && removed == mp.cap_removed_mass);
    for i in 0..n {
        assert!(mp.rho1.values[i] <= setup.rho_h.values[i] * (1.0 + 1e-12) + 1e-300);
        assert!(mp.rho2.values[i] <= setup.rho_h.values[i] * (1.0 + 1e-12) + 1e-300);
    }
    let (c1, c2) = mp.lower_marginal_constant(&setup.rho_h, &hprime, s.tau);
    assert!(c1 >= 0.0 && c2 >= 0.0);
}

#[test]
fn tau_too_large_is_rejected() {
    let sol = cauchy();
    let ov = parse_overrides("tau=0.5").unwrap();
    let s = ParameterSchedule::new(1e-2, 4.0, &ov).unwrap();
    let part = PartitionTdelta::build(&sol, 4.0, s.delta).unwrap();
    let setup = GridSetup::new(&sol, 4.0, &GridSpec::for_h(4.0, 128)).unwrap();
    assert!(MainPlan::build(&sol, &part, &s, setup.axis).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn override_display_round_trips(c in 1e-3..10.0f64, p in -2.0..2.0f64, which in 0usize..4, kind in 0usize..4) {
        let param = Param::ALL[which];
        let rule = match kind {
            0 => Rule::Absolute { v: c },
            1 => Rule::Scale { c },
            2 => Rule::Power { c, p },
            _ => Rule::LogPower { c, p },
        };
        let o = Override { param, rule };
        let back: Override = o.to_string().parse().unwrap();
        prop_assert_eq!(back, o);
    }

    #[test]
    fn default_orderings_fail_at_desk_scale(log10_eps in 1.0..12.0f64) {
        let s = ParameterSchedule::new(10f64.powf(-log10_eps), 4.0, &[]).unwrap();
        prop_assert!(!s.all_hold());
        for c in &s.validity {
            prop_assert_eq!(c.holds, c.margin_decades > 0.0);
        }
    }
}
