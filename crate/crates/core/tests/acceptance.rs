//! Acceptance criteria 1-8; one `PASS`/`FAIL` line each, nonzero exit on any failure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sce_core::coulomb_ot::{CoulombOt, DomainH};
use sce_core::density::make_power_tail;
use sce_core::grid::{Axis, DiagonalRule, GridField2D, KeScheme, PotentialField};
use sce_core::marginal_fix::{
    assemble_recovery, deconvolve, ke_bound_check, pe_bound_check, windowed_zpo, RemainderPlan,
};
use sce_core::oracle::{
    constrained_min, coulomb_ground_state, delta_recovery, ground_state, h_ratio, markov_check,
    oscillator_gaussian, oscillator_lower_bound, oscillator_quotient, predicted_limit,
    random_trial_fields, ConstrainedOpts, GroundStateOpts,
};
use sce_core::quad::gauss_legendre_on;
use sce_core::recovery::{
    tuned_overrides, GridSetup, GridSpec, MainPlan, ParameterSchedule, PartitionTdelta,
};
use sce_core::run::{recover, RecoverOptions};
use sce_core::trunc_gauss::{g_alpha_n, truncation_error_report, TruncatedGaussian};
use std::f64::consts::PI;
use std::time::{Duration, Instant};

type Outcome = Result<(bool, String), String>;
type Criterion = (u32, Duration, fn() -> Outcome);

fn cauchy() -> CoulombOt {
    CoulombOt::new(make_power_tail(2.0).unwrap()).unwrap()
}

fn gl(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels)
        .flat_map(|p| gauss_legendre_on(20, a + p as f64 * h, a + (p + 1) as f64 * h))
        .map(|(x, w)| w * f(x))
        .sum()
}

fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>()
}

fn closed_form_ot() -> Outcome {
    let sol = cauchy();
    let mut t_err: f64 = 0.0;
    for i in 0..=2000 {
        let x = 0.1 + 9.9 * i as f64 / 2000.0;
        for s in [x, -x] {
            t_err = t_err.max((sol.t(s).map_err(|e| e.to_string())? + 1.0 / s).abs());
        }
    }
    let f_ot = sol.f_ot(None).map_err(|e| e.to_string())?.f_ot;
    let q = sol.q(-1.0).map_err(|e| e.to_string())?;
    let dom = DomainH::new(&sol, 4.0).map_err(|e| e.to_string())?;
    let mut dual: f64 = 0.0;
    for x in dom.lattice(400).map_err(|e| e.to_string())? {
        dual = dual.max(sol.duality_residual(x).map_err(|e| e.to_string())?.abs());
    }
    let ok =
        t_err <= 1e-8 && (f_ot - 1.0 / PI).abs() <= 1e-6 && (q - 0.5).abs() <= 1e-8 && dual <= 1e-6;
    Ok((
        ok,
        format!(
            "max|T+1/x| {t_err:.1e}, F_OT-1/pi {:.1e}, q(-1)-1/2 {:.1e}, duality {dual:.1e}",
            f_ot - 1.0 / PI,
            q - 0.5
        ),
    ))
}

fn oscillator_identity() -> Outcome {
    let a = [[1.0, 0.0], [0.0, 2.0]];
    let eps = 1e-2;
    let ax = Axis::symmetric(1.5, 512).map_err(|e| e.to_string())?;
    let g = oscillator_gaussian(ax, ax, a, eps, [0.0, 0.0]);
    let qg = oscillator_quotient(&g, a, eps);
    let lb = oscillator_lower_bound(a, eps, 1.0).map_err(|e| e.to_string())?;
    let ax2 = Axis::symmetric(2.0, 256).map_err(|e| e.to_string())?;
    let fields = random_trial_fields(ax2, ax2, a, eps, 50, 7);
    let worst = fields
        .iter()
        .map(|f| oscillator_quotient(f, a, eps))
        .fold(f64::INFINITY, f64::min);
    let ok = fields.len() == 50 && (qg - 0.3).abs() <= 0.003 && worst >= lb;
    Ok((ok, format!("Gaussian quotient {qg:.6} vs 0.3, min over 50 random fields {worst:.4} >= bound {lb:.4}")))
}

fn gaussian_identities() -> Outcome {
    let m = [[3.0, 1.2], [1.2, 0.8]];
    let k = TruncatedGaussian::from_matrix(m, None, [0.0; 2]).map_err(|e| e.to_string())?;
    let (x0, x1, y0, y1) = k.bounding_box();
    let ke = gl(
        |x| {
            gl(
                |y| {
                    let (mx, my) = (m[0][0] * x + m[0][1] * y, m[1][0] * x + m[1][1] * y);
                    0.5 * (mx * mx + my * my) * k.eval(x, y)
                },
                y0,
                y1,
                24,
            )
        },
        x0,
        x1,
        24,
    );
    let exact = 0.25 * (m[0][0] + m[1][1]);
    let ke_rel = (ke - exact).abs() / exact;

    let mut g_err: f64 = 0.0;
    for (alpha, n) in [
        (1.0f64, 10.0f64),
        (1.0, 3.0),
        (7.5, 12.0),
        (0.02, 24.0),
        (300.0, 6.0),
    ] {
        let l = (n / alpha).sqrt();
        let q = gl(
            |t| {
                ((-0.5 * alpha * t * t).exp() - (-0.5 * n).exp())
                    .max(0.0)
                    .powi(2)
            },
            -l,
            l,
            64,
        );
        g_err = g_err.max((g_alpha_n(alpha, Some(n)) - q).abs() / q.max(1.0));
    }

    let mut worst: f64 = 0.0;
    let mut all_below = true;
    for ratio in [1.0, 10.0, 1e3, 1e5] {
        for n in 3..=24 {
            let r =
                truncation_error_report(ratio, 1.0, n as f64, 0.4).map_err(|e| e.to_string())?;
            all_below &= r.gn_below_ginf;
            worst = worst.max(r.max_constant());
        }
    }
    let ok = ke_rel < 1e-6 && g_err < 1e-10 && worst <= 20.0 && all_below;
    Ok((ok, format!("KE rel err {ke_rel:.1e}, G_(alpha,N) err {g_err:.1e}, max truncation constant {worst:.3}")))
}

fn deconvolution_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ax = Axis::symmetric(1.0, 8).map_err(|e| e.to_string())?;
    let (mut marg, mut ke_c, mut ke_ok, mut limit) = (0.0f64, 0.0f64, true, 0.0f64);
    for eps in [1e-2, 3e-2, 1e-1, 0.3] {
        for _ in 0..20 {
            let vals = (0..64)
                .map(|_| {
                    if rng.random_bool(0.3) {
                        0.0
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect();
            let p = GridField2D::new(ax, ax, vals).map_err(|e| e.to_string())?;
            let dp = deconvolve(&p, eps).map_err(|e| e.to_string())?;
            marg = marg.max(dp.marginal_error.0.max(dp.marginal_error.1));
            let ke = ke_bound_check(&p, &dp, eps);
            ke_ok &= ke.holds;
            ke_c = ke_c.max(ke.constant);
            limit = ke.limit;
        }
    }
    let ax = Axis::symmetric(1.0, 256).map_err(|e| e.to_string())?;
    let p = GridField2D::from_fn(ax, ax, |x, y| {
        if (x - y).abs() < 1e-9 && x.abs() < 0.5 {
            1.0
        } else {
            0.0
        }
    });
    let v = PotentialField::from_fn(ax, ax, |x, y| 0.5 * (x - y).powi(2));
    let mut pts = Vec::new();
    for k in 0..9 {
        let eps = 10f64.powf(-4.0 + 2.0 * k as f64 / 8.0);
        let dp = deconvolve(&p, eps).map_err(|e| e.to_string())?;
        let pb = pe_bound_check(&p, &dp, &v, eps, true).map_err(|e| e.to_string())?;
        pts.push((eps.ln(), (pb.pe_tilde_over_sqrt_eps * eps.sqrt()).ln()));
    }
    let slope = fit_slope(&pts);
    let ok = marg <= 1e-12 && ke_ok && (slope - 0.5).abs() <= 0.1;
    Ok((
        ok,
        format!(
            "marginal error {marg:.1e}, KE constant {ke_c:.3} <= {limit:.1}, PE slope {slope:.4}"
        ),
    ))
}

fn recovery_construction() -> Outcome {
    let sol = cauchy();
    let mut rows = Vec::new();
    for eps in [1e-2, 1e-3, 1e-4] {
        let opts = RecoverOptions {
            h: 4.0,
            eps,
            grid_n: 512,
            overrides: tuned_overrides(),
        };
        let (rec, _) = recover(&sol, &opts).map_err(|e| format!("eps {eps}: {e}"))?;
        rows.push(rec);
    }
    let resid = rows.iter().map(|r| r.marginal_residual).fold(0.0, f64::max);
    let mass = rows
        .iter()
        .map(|r| r.mass_identity_error.abs())
        .fold(0.0, f64::max);
    let c_h_ok = rows
        .iter()
        .all(|r| r.c_h_1.min(r.c_h_2) > 0.0 && r.c_h_1.max(r.c_h_2) < 1.0);
    let gaps: Vec<f64> = rows.iter().map(|r| r.gap_upper).collect();
    let pes: Vec<f64> = rows.iter().map(|r| r.pe_remainder_over_sqrt_eps).collect();
    let gap_ok = gaps.iter().all(|g| *g > 0.0) && gaps.windows(2).all(|w| w[1] < w[0]);
    let pe_ok = pes.windows(2).all(|w| w[1] < w[0]);
    let ok = resid <= 1e-3 && mass <= 1e-6 && c_h_ok && gap_ok && pe_ok;
    Ok((
        ok,
        format!(
            "residual {resid:.1e}, mass identity {mass:.1e}, c_H {:?}, gaps {gaps:.4?}, remainder PE {pes:.4?}",
            rows.iter().map(|r| (r.c_h_1.min(r.c_h_2), r.c_h_1.max(r.c_h_2))).map(|(a, b)| format!("{a:.3}/{b:.3}")).collect::<Vec<_>>()
        ),
    ))
}

fn gamma_limit_oracle() -> Outcome {
    let sol = cauchy();
    let eps = 1e-3;
    let gs = coulomb_ground_state(&sol, 2.5, 512, eps, Some(6.0), GroundStateOpts::default())
        .map_err(|e| e.to_string())?;
    let ax = Axis::symmetric(2.5, 512).map_err(|e| e.to_string())?;
    let limit = predicted_limit(&sol, ax, ax).map_err(|e| e.to_string())?;
    let v =
        PotentialField::coulomb(&sol, ax, ax, DiagonalRule::Clamp).map_err(|e| e.to_string())?;
    let markov: Vec<_> = [0.01, 0.1]
        .iter()
        .map(|&t| markov_check(&gs, &v, eps, t))
        .collect();
    let rel = (gs.eigenvalue - limit).abs() / limit;
    let ok = rel <= 0.1 && markov.iter().all(|m| m.holds);
    Ok((
        ok,
        format!(
            "eigenvalue {:.6} vs min sqrt(q)/2 {limit:.6} (rel {rel:.3}), Markov mass/bound {}",
            gs.eigenvalue,
            markov
                .iter()
                .map(|m| format!("t={}: {:.2e}/{:.2e}", m.t, m.mass_above, m.bound))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    ))
}

fn sandwich() -> Outcome {
    let eps = 1e-2;
    let sol = cauchy();
    let e = |e: sce_core::Error| e.to_string();
    let s = ParameterSchedule::tuned(eps, 4.0).map_err(e)?;
    let part = PartitionTdelta::build(&sol, 4.0, s.delta).map_err(e)?;
    let setup = GridSetup::new(&sol, 4.0, &GridSpec::for_h(4.0, 512)).map_err(e)?;
    let mut mp = MainPlan::build(&sol, &part, &s, setup.axis).map_err(e)?;
    mp.apply_window_cap(&setup.rho_h).map_err(e)?;
    let rp =
        RemainderPlan::build(&mp, &setup.rho_h, &sol, &part, &s, &setup.potential).map_err(e)?;
    let dp = deconvolve(&rp.pi0, eps).map_err(e)?;
    let zpo = windowed_zpo(&sol, &setup.taper).map_err(e)?;
    let rf = assemble_recovery(&mp, &dp, &setup.rho_h, &setup.potential, eps, zpo).map_err(e)?;
    let pooled = rf.psi_sq.pool(8).map_err(e)?;
    let v = PotentialField::coulomb(&sol, pooled.ax, pooled.ay, DiagonalRule::Clamp).map_err(e)?;
    let m = pooled.mass();
    let construction = pooled.e_eps(&v, eps, KeScheme::Forward).map_err(e)?.e / m;
    let gs = ground_state(&v, eps, GroundStateOpts::default()).map_err(e)?;
    let cm = constrained_min(
        &v,
        &pooled.marginal_x(),
        &pooled.marginal_y(),
        eps,
        ConstrainedOpts::default(),
    )
    .map_err(e)?;
    let constrained = cm.energy.e / m;
    let ok = pooled.ax.n == 64
        && gs.eigenvalue <= constrained
        && constrained <= construction
        && cm.kkt_residual <= 1e-5;
    Ok((
        ok,
        format!(
            "{:.5} <= {constrained:.5} <= {construction:.5}, KKT residual {:.1e}",
            gs.eigenvalue, cm.kkt_residual
        ),
    ))
}

fn delta_recovery_check() -> Outcome {
    let p = delta_recovery([1.0, 0.0], 1e-5, 2.0, 512).map_err(|e| e.to_string())?;
    let h20 = h_ratio(20.0, 2).map_err(|e| e.to_string())?;
    let rel = (p.energy - 0.5).abs() / 0.5;
    let ok = p.target == 0.5 && rel <= 0.05 && (h20 - 1.0).abs() <= 1e-3;
    Ok((
        ok,
        format!(
            "energy {:.5} vs 0.5 (rel {rel:.4}), h(20) - 1 = {:.1e}",
            p.energy,
            h20 - 1.0
        ),
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        (1, Duration::from_secs(10), closed_form_ot),
        (2, Duration::from_secs(60), oscillator_identity),
        (3, Duration::from_secs(60), gaussian_identities),
        (4, Duration::from_secs(60), deconvolution_exactness),
        (5, Duration::from_secs(600), recovery_construction),
        (6, Duration::from_secs(300), gamma_limit_oracle),
        (7, Duration::from_secs(300), sandwich),
        (8, Duration::from_secs(60), delta_recovery_check),
    ];
    let mut failed = 0;
    for (k, budget, run) in criteria {
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let (ok, msg) = match out {
            Ok((ok, msg)) => (ok && took <= budget, msg),
            Err(e) => (false, format!("error: {e}")),
        };
        println!(
            "{} criterion {k}: {msg} [{:.2} s of {} s]",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs()
        );
        failed += usize::from(!ok);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
