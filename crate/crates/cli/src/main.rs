use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sce_core::coulomb_ot::{ot_constants, CoulombOt, DomainH};
use sce_core::density::Density1D;
use sce_core::grid::{Axis, PotentialField};
use sce_core::oracle::{
    constrained_min, coulomb_ground_state, delta_recovery, h_ratio, markov_check, ConstrainedOpts,
    GroundStateOpts,
};
use sce_core::recovery::{resolve_overrides, GridSetup, GridSpec};
use sce_core::run::{
    oracle_cell, recover, run_sweep, validate_params, DensitySpec, OracleToggles, RecoverOptions,
    RunConfig,
};
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "sce",
    version,
    about = "Semiclassical expansion of the two-electron functional on the line"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct DensityArgs {
    /// Power-tail exponent in [2, 3]; 2 is the Cauchy density.
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Two-column CSV (x, pdf) used instead of the power tail.
    #[arg(long)]
    tabulated: Option<PathBuf>,
}

impl DensityArgs {
    fn load(&self) -> Result<Density1D> {
        let spec = match &self.tabulated {
            Some(path) => DensitySpec::Tabulated { path: path.clone() },
            None => DensitySpec::PowerTail { p: self.p },
        };
        Ok(spec.load(None)?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleMode {
    Ground,
    Constrained,
    Delta,
}

#[derive(Subcommand)]
enum Cmd {
    /// Summary of a density: normalization, median, quantiles, tail and kinetic energy.
    DescribeDensity {
        #[command(flatten)]
        density: DensityArgs,
    },
    /// Transport layer: F_OT, F_ZPO, L(H), r_H and a lattice of (x, T, u, u', u'', q).
    Ot {
        #[command(flatten)]
        density: DensityArgs,
        #[arg(long = "H", default_value_t = 4.0)]
        h: f64,
        /// Write the lattice CSV here.
        #[arg(long)]
        lattice: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        lattice_n: usize,
    },
    /// Build the recovery field for one (H, eps, n) cell.
    Recover {
        #[command(flatten)]
        density: DensityArgs,
        #[arg(long)]
        eps: f64,
        #[arg(long = "H", default_value_t = 4.0)]
        h: f64,
        #[arg(long, default_value_t = 512)]
        grid_n: usize,
        /// Schedule overrides such as `beta=0.5@0.333`; `tuned` and `none` are presets.
        #[arg(long = "override", default_value = "tuned")]
        overrides: Vec<String>,
        /// Dump the target density and the recovery field as CSV into this directory.
        #[arg(long)]
        dump_dir: Option<PathBuf>,
        /// Also dump sigma^1, sigma^2, pi_0 and the deconvolved plan.
        #[arg(long, requires = "dump_dir")]
        dump_remainder: bool,
        /// Run the ground-state and constrained oracles on the pooled grid of this size.
        #[arg(long)]
        oracle_n: Option<usize>,
    },
    /// Independent oracles.
    Oracle {
        #[command(flatten)]
        density: DensityArgs,
        #[arg(long, value_enum)]
        mode: OracleMode,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        #[arg(long, default_value_t = 512)]
        grid_n: usize,
        /// Half width of the square box for the ground state.
        #[arg(long, default_value_t = 2.5)]
        half_width: f64,
        /// Minimum oscillator width in cells; 0 disables the guard.
        #[arg(long, default_value_t = 6.0)]
        min_cells: f64,
        /// Window parameter H of the marginals for the constrained mode.
        #[arg(long = "H", default_value_t = 4.0)]
        h: f64,
        /// Diagonal of D^2 V(0) for the delta mode.
        #[arg(long, num_args = 2, default_values_t = [1.0, 0.0])]
        hessian: Vec<f64>,
    },
    /// Run a sweep described by a JSON config; exits with 2 if any cell fails.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` of the config.
        #[arg(long, env = "SCE_OUTPUT_DIR")]
        output_dir: Option<PathBuf>,
    },
    /// Orderings of the parameter schedule at (eps, H).
    ValidateParams {
        #[arg(long)]
        eps: f64,
        #[arg(long = "H", default_value_t = 4.0)]
        h: f64,
        #[arg(long = "override", default_value = "none")]
        overrides: Vec<String>,
    },
}

/// Write to stdout; a closed pipe ends output quietly.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    emit(&serde_json::to_string_pretty(v)?)
}

fn describe_density(d: &Density1D) -> Result<serde_json::Value> {
    let qs: Vec<(f64, f64)> = [0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99]
        .iter()
        .map(|&t| Ok((t, d.quantile(t)?)))
        .collect::<sce_core::Result<_>>()?;
    let tail = [3.0f64, 10.0, 30.0, 100.0]
        .iter()
        .map(|&x| x.powi(3) * d.pdf(x).min(d.pdf(-x)))
        .fold(f64::INFINITY, f64::min);
    Ok(json!({
        "family": d.family(),
        "median": d.median(),
        "pdf0": d.pdf(0.0),
        "cdf1": d.cdf(1.0),
        "symmetric": d.is_symmetric(),
        "quantiles": qs,
        "min_cubic_tail_on_3_100": tail,
        "kinetic_energy_50": d.kinetic_energy_1d((-50.0, 50.0))?,
    }))
}

fn ot(d: Density1D, h: f64, lattice: Option<&Path>, n: usize) -> Result<serde_json::Value> {
    let sol = CoulombOt::new(d)?;
    let fot = sol.f_ot(None)?;
    let zpo = sol.f_zpo(None)?;
    let dom = DomainH::new(&sol, h)?;
    let c = ot_constants(&sol, h, 400)?;
    if let Some(path) = lattice {
        let mut w =
            csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(["x", "T", "u", "du", "ddu", "q"])?;
        for x in DomainH::new(&sol, h + 1.0)?.lattice(n)? {
            let row = [x, sol.t(x)?, sol.u(x)?, sol.du(x)?, sol.ddu(x)?, sol.q(x)?];
            w.write_record(row.iter().map(f64::to_string))?;
        }
        w.flush()?;
    }
    Ok(json!({
        "f_ot": fot.f_ot,
        "f_ot_discrepancy": fot.discrepancy,
        "f_zpo": zpo.value,
        "l_h": c.l_h,
        "r_h": dom.r_h,
        "delta_gap": c.delta_gap,
        "max_abs_ddu": c.max_abs_ddu,
        "min_q": c.min_q,
    }))
}

fn joined(v: &[String]) -> String {
    v.join(",")
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::DescribeDensity { density } => print_json(&describe_density(&density.load()?)?)?,
        Cmd::Ot {
            density,
            h,
            lattice,
            lattice_n,
        } => print_json(&ot(density.load()?, h, lattice.as_deref(), lattice_n)?)?,
        Cmd::Recover {
            density,
            eps,
            h,
            grid_n,
            overrides,
            dump_dir,
            dump_remainder,
            oracle_n,
        } => {
            let sol = CoulombOt::new(density.load()?)?;
            let opts = RecoverOptions {
                h,
                eps,
                grid_n,
                overrides: resolve_overrides(&joined(&overrides))?,
            };
            let (mut rec, art) = recover(&sol, &opts)?;
            if let Some(c) = oracle_n {
                let toggles = OracleToggles {
                    ground: true,
                    constrained: true,
                    coarse_n: c,
                };
                rec.oracle = Some(oracle_cell(&sol, &art, eps, rec.f_zpo, toggles)?);
            }
            if let Some(dir) = dump_dir {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("rho_h.csv"), art.setup.rho_h.to_csv())?;
                std::fs::write(dir.join("psi_sq.csv"), art.field.psi_sq.to_csv())?;
                if dump_remainder {
                    std::fs::write(dir.join("sigma1.csv"), art.remainder.sigma1.to_csv())?;
                    std::fs::write(dir.join("sigma2.csv"), art.remainder.sigma2.to_csv())?;
                    std::fs::write(dir.join("pi0.csv"), art.remainder.pi0.to_csv())?;
                    std::fs::write(dir.join("pi_tilde.csv"), art.deconvolved.pi_tilde.to_csv())?;
                }
            }
            print_json(&json!({ "record": rec, "schedule": art.schedule }))?;
        }
        Cmd::Oracle {
            density,
            mode,
            eps,
            grid_n,
            half_width,
            min_cells,
            h,
            hessian,
        } => match mode {
            OracleMode::Ground => {
                let sol = CoulombOt::new(density.load()?)?;
                let guard = (min_cells > 0.0).then_some(min_cells);
                let gs = coulomb_ground_state(
                    &sol,
                    half_width,
                    grid_n,
                    eps,
                    guard,
                    GroundStateOpts::default(),
                )?;
                let ax = Axis::symmetric(half_width, grid_n)?;
                let v = PotentialField::coulomb(&sol, ax, ax, sce_core::grid::DiagonalRule::Clamp)?;
                let markov: Vec<_> = [0.01, 0.1]
                    .iter()
                    .map(|&t| markov_check(&gs, &v, eps, t))
                    .collect();
                print_json(&json!({
                    "eigenvalue": gs.eigenvalue,
                    "predicted_limit": gs.predicted_limit,
                    "cells_per_width": gs.cells_per_width,
                    "residual": gs.residual,
                    "iterations": gs.iterations,
                    "energy": gs.energy,
                    "markov": markov,
                }))?;
            }
            OracleMode::Constrained => {
                if grid_n > 256 {
                    bail!("the constrained oracle is for coarse grids; use --grid-n <= 256");
                }
                let sol = CoulombOt::new(density.load()?)?;
                let setup = GridSetup::new(&sol, h, &GridSpec::for_h(h, grid_n))?;
                let v = PotentialField::coulomb(
                    &sol,
                    setup.axis,
                    setup.axis,
                    sce_core::grid::DiagonalRule::Clamp,
                )?;
                let r = constrained_min(
                    &v,
                    &setup.rho_h,
                    &setup.rho_h,
                    eps,
                    ConstrainedOpts::default(),
                )?;
                print_json(&json!({
                    "energy": r.energy,
                    "dual_value": r.dual_value,
                    "kkt_residual": r.kkt_residual,
                    "marginal_residual": r.marginal_residual,
                    "block_masses": r.block_masses,
                    "iterations": r.iterations,
                }))?;
            }
            OracleMode::Delta => {
                let d = delta_recovery([hessian[0], hessian[1]], eps, 2.0, grid_n)?;
                print_json(&json!({ "point": d, "h_20": h_ratio(20.0, 2)? }))?;
            }
        },
        Cmd::Sweep { config, output_dir } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let cfg = RunConfig::from_json(&text)?;
            let base = config.parent().map(Path::to_path_buf);
            let report = run_sweep(&cfg, base.as_deref())?;
            let dir = output_dir.unwrap_or_else(|| cfg.output_dir.clone());
            report.write(&dir)?;
            let failures = report.failures();
            eprintln!(
                "{} cells, {} failed, wrote {}",
                report.cells.len(),
                failures,
                dir.join("sweep.csv").display()
            );
            if failures > 0 {
                return Ok(ExitCode::from(2));
            }
        }
        Cmd::ValidateParams { eps, h, overrides } => {
            emit(&validate_params(eps, h, &resolve_overrides(&joined(&overrides))?)?.to_string())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
