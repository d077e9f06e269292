//! Run configuration, the per-cell recovery pipeline and the `(H, eps, n)` sweep.

use crate::coulomb_ot::{CoulombOt, DomainH};
use crate::density::{make_power_tail, make_tabulated, parse_tabulated_csv, Density1D};
use crate::error::{invalid, Error, Result};
use crate::grid::{DiagonalRule, KeScheme, PotentialField};
use crate::marginal_fix::{
    assemble_recovery, deconvolution_pe_bound_check, deconvolve, ke_bound_check, windowed_zpo,
    DeconvolvedPlan, RecoveryField, RemainderPlan,
};
use crate::oracle::{constrained_min, ground_state, ConstrainedOpts, GroundStateOpts};
use crate::recovery::{
    resolve_overrides, GridSetup, GridSpec, MainPlan, Override, ParameterSchedule, PartitionTdelta,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Density entry of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    PowerTail {
        p: f64,
    },
    /// Two-column CSV `(x, pdf)`; relative paths resolve against the config file.
    Tabulated {
        path: PathBuf,
    },
}

impl DensitySpec {
    pub fn load(&self, base: Option<&Path>) -> Result<Density1D> {
        match self {
            DensitySpec::PowerTail { p } => make_power_tail(*p),
            DensitySpec::Tabulated { path } => {
                let full = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                let text = std::fs::read_to_string(&full)?;
                let (x, v) = parse_tabulated_csv(&text)?;
                make_tabulated(&x, &v)
            }
        }
    }
}

/// Which oracles run on each cell, on the pooled `coarse_n` grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleToggles {
    #[serde(default)]
    pub ground: bool,
    #[serde(default)]
    pub constrained: bool,
    #[serde(default = "default_coarse_n")]
    pub coarse_n: usize,
}

fn default_coarse_n() -> usize {
    64
}

impl Default for OracleToggles {
    fn default() -> Self {
        Self {
            ground: false,
            constrained: false,
            coarse_n: default_coarse_n(),
        }
    }
}

impl OracleToggles {
    pub fn any(&self) -> bool {
        self.ground || self.constrained
    }
}

fn default_overrides() -> String {
    "tuned".into()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// A complete sweep description; the single source of a run's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub density: DensitySpec,
    pub h: Vec<f64>,
    pub eps: Vec<f64>,
    pub grid_n: Vec<usize>,
    /// Override list in the grammar of [`resolve_overrides`].
    #[serde(default = "default_overrides")]
    pub overrides: String,
    #[serde(default)]
    pub oracle: OracleToggles,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    /// Parse and validate a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.h.is_empty() || self.eps.is_empty() || self.grid_n.is_empty() {
            return Err(invalid("config", "h, eps and grid_n must be nonempty"));
        }
        let emax = (-1.0f64).exp();
        if let Some(e) = self.eps.iter().find(|e| !(**e > 0.0 && **e < emax)) {
            return Err(invalid("eps", format!("{e} is outside (0, 1/e)")));
        }
        if let Some(h) = self.h.iter().find(|h| !(**h > 1.0 && h.is_finite())) {
            return Err(invalid("h", format!("{h} must be a finite value above 1")));
        }
        if let Some(n) = self.grid_n.iter().find(|n| **n < 16 || **n > 1 << 14) {
            return Err(invalid("grid_n", format!("{n} is outside [16, 16384]")));
        }
        if self.oracle.any() {
            let c = self.oracle.coarse_n;
            if c == 0 || c > 256 {
                return Err(invalid(
                    "oracle.coarse_n",
                    format!("{c} is outside [1, 256]"),
                ));
            }
            if let Some(n) = self.grid_n.iter().find(|n| !n.is_multiple_of(c)) {
                return Err(invalid(
                    "oracle.coarse_n",
                    format!("{c} does not divide grid size {n}"),
                ));
            }
        }
        if let DensitySpec::PowerTail { p } = self.density {
            if !(2.0..=3.0).contains(&p) {
                return Err(invalid("density.p", format!("{p} is outside [2, 3]")));
            }
        }
        resolve_overrides(&self.overrides)?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// One cell of the construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoverOptions {
    pub h: f64,
    pub eps: f64,
    pub grid_n: usize,
    pub overrides: Vec<Override>,
}

/// Energies, residuals and measured constants of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRecord {
    pub h: f64,
    pub eps: f64,
    pub grid_n: usize,
    pub f_ot: f64,
    /// `F_ZPO` of the windowed density, the reference of the gap.
    pub f_zpo: f64,
    pub f_zpo_full: f64,
    pub e_main: f64,
    pub e_total: f64,
    /// `E_eps(psi) - F_ZPO`.
    pub gap_upper: f64,
    /// `max_i ||marg_i(psi^2) - rho_h||_1`.
    pub marginal_residual: f64,
    /// Mass of the main plan minus `int (rho - tau)` over the partition.
    pub mass_identity_error: f64,
    pub c_h_1: f64,
    pub c_h_2: f64,
    pub cap_removed_mass: f64,
    pub remainder_mass: f64,
    pub pe_remainder_over_sqrt_eps: f64,
    pub ke_constant: f64,
    pub pe_constant: f64,
    pub subadditive: bool,
    pub n_trunc: f64,
    pub beta: f64,
    pub delta: f64,
    pub tau: f64,
    pub schedule_valid: bool,
    /// Names of failing orderings joined by `;`.
    pub failed_orderings: String,
    pub oracle: Option<OracleRecord>,
}

/// Oracle values on the pooled grid; energies are per unit mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub coarse_n: usize,
    pub construction_energy: f64,
    pub ground_eigenvalue: Option<f64>,
    pub constrained_energy: Option<f64>,
    pub kkt_residual: Option<f64>,
    /// Constrained energy times mass minus the windowed `F_ZPO`.
    pub gap_oracle: Option<f64>,
    /// `ground <= constrained <= construction` for the values present.
    pub sandwich_ok: bool,
}

/// Intermediate objects of one cell, for dumps and diagnostics.
#[derive(Debug, Clone)]
pub struct RecoveryArtifacts {
    pub schedule: ParameterSchedule,
    pub setup: GridSetup,
    pub main: MainPlan,
    pub remainder: RemainderPlan,
    pub deconvolved: DeconvolvedPlan,
    pub field: RecoveryField,
}

/// Run the construction on one cell.
pub fn recover(
    sol: &CoulombOt,
    opts: &RecoverOptions,
) -> Result<(RecoveryRecord, RecoveryArtifacts)> {
    let sched = ParameterSchedule::new(opts.eps, opts.h, &opts.overrides)?;
    let part = PartitionTdelta::build(sol, opts.h, sched.delta)?;
    let spec = GridSpec::for_h(opts.h, opts.grid_n);
    let setup = GridSetup::new(sol, opts.h, &spec)?;
    let mut main = MainPlan::build(sol, &part, &sched, setup.axis)?;
    let hprime = DomainH::new(sol, opts.h + 1.0)?;
    let (c1, c2) = main.lower_marginal_constant(&setup.rho_h, &hprime, sched.tau);
    let mass_identity_error = main.mass - main.mass_expected;
    main.apply_window_cap(&setup.rho_h)?;
    let remainder =
        RemainderPlan::build(&main, &setup.rho_h, sol, &part, &sched, &setup.potential)?;
    let deconvolved = deconvolve(&remainder.pi0, opts.eps)?;
    let zpo = windowed_zpo(sol, &setup.taper)?;
    let field = assemble_recovery(
        &main,
        &deconvolved,
        &setup.rho_h,
        &setup.potential,
        opts.eps,
        zpo,
    )?;
    let ke = ke_bound_check(&remainder.pi0, &deconvolved, opts.eps);
    let pe =
        deconvolution_pe_bound_check(&remainder, &deconvolved, &setup.potential, opts.eps, 1.0)?;
    let record = RecoveryRecord {
        h: opts.h,
        eps: opts.eps,
        grid_n: opts.grid_n,
        f_ot: sol.f_ot(None)?.f_ot,
        f_zpo: zpo,
        f_zpo_full: sol.f_zpo(None)?.value,
        e_main: field.energy_main.e,
        e_total: field.energy.e,
        gap_upper: field.gap,
        marginal_residual: field.marginal_residual.0.max(field.marginal_residual.1),
        mass_identity_error,
        c_h_1: c1,
        c_h_2: c2,
        cap_removed_mass: main.cap_removed_mass,
        remainder_mass: remainder.mass,
        pe_remainder_over_sqrt_eps: remainder.pe_over_sqrt_eps,
        ke_constant: ke.constant,
        pe_constant: pe.constant,
        subadditive: field.subadditive,
        n_trunc: sched.n,
        beta: sched.beta,
        delta: sched.delta,
        tau: sched.tau,
        schedule_valid: sched.all_hold(),
        failed_orderings: sched
            .failed()
            .iter()
            .map(|c| c.name.as_str())
            .collect::<Vec<_>>()
            .join(";"),
        oracle: None,
    };
    Ok((
        record,
        RecoveryArtifacts {
            schedule: sched,
            setup,
            main,
            remainder,
            deconvolved,
            field,
        },
    ))
}

/// Pool the recovery field to `coarse_n` and run the requested oracles there.
pub fn oracle_cell(
    sol: &CoulombOt,
    art: &RecoveryArtifacts,
    eps: f64,
    f_zpo: f64,
    toggles: OracleToggles,
) -> Result<OracleRecord> {
    let n = art.field.psi_sq.ax.n;
    let c = toggles.coarse_n;
    if c == 0 || !n.is_multiple_of(c) {
        return Err(invalid("coarse_n", format!("{c} does not divide {n}")));
    }
    let pooled = art.field.psi_sq.pool(n / c)?;
    let v = PotentialField::coulomb(sol, pooled.ax, pooled.ay, DiagonalRule::Clamp)?;
    let m = pooled.mass();
    let ec = pooled.e_eps(&v, eps, KeScheme::Forward)?.e / m;
    let ground = if toggles.ground {
        let opts = GroundStateOpts {
            coarsest: c.min(64),
            ..Default::default()
        };
        Some(ground_state(&v, eps, opts)?.eigenvalue)
    } else {
        None
    };
    let constrained = if toggles.constrained {
        Some(constrained_min(
            &v,
            &pooled.marginal_x(),
            &pooled.marginal_y(),
            eps,
            ConstrainedOpts::default(),
        )?)
    } else {
        None
    };
    let ce = constrained.as_ref().map(|r| r.energy.e / m);
    let lo = ground.unwrap_or(f64::NEG_INFINITY);
    let mid = ce.unwrap_or(lo);
    let sandwich_ok =
        lo <= mid * (1.0 + 1e-9) && mid <= ec * (1.0 + 1e-9) && lo <= ec * (1.0 + 1e-9);
    Ok(OracleRecord {
        coarse_n: c,
        construction_energy: ec,
        ground_eigenvalue: ground,
        constrained_energy: ce,
        kkt_residual: constrained.as_ref().map(|r| r.kkt_residual),
        gap_oracle: constrained.as_ref().map(|r| r.energy.e - f_zpo),
        sandwich_ok,
    })
}

/// Outcome of one sweep cell; failures keep the cell coordinates and the error text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub h: f64,
    pub eps: f64,
    pub grid_n: usize,
    pub error: Option<String>,
    pub record: Option<RecoveryRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub version: String,
    pub wall_time_s: f64,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub manifest: Manifest,
    pub cells: Vec<CellRecord>,
}

/// Execute every `(H, grid_n, eps)` cell in parallel; cell failures are recorded, not raised.
pub fn run_sweep(cfg: &RunConfig, base: Option<&Path>) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let sol = CoulombOt::new(cfg.density.load(base)?)?;
    let overrides = resolve_overrides(&cfg.overrides)?;
    let mut coords = Vec::new();
    for &h in &cfg.h {
        for &n in &cfg.grid_n {
            for &e in &cfg.eps {
                coords.push((h, n, e));
            }
        }
    }
    let cells: Vec<CellRecord> = coords
        .par_iter()
        .map(|&(h, n, eps)| {
            let opts = RecoverOptions {
                h,
                eps,
                grid_n: n,
                overrides: overrides.clone(),
            };
            let outcome = recover(&sol, &opts).and_then(|(mut rec, art)| {
                if cfg.oracle.any() {
                    rec.oracle = Some(oracle_cell(&sol, &art, eps, rec.f_zpo, cfg.oracle)?);
                }
                Ok(rec)
            });
            match outcome {
                Ok(r) => CellRecord {
                    h,
                    eps,
                    grid_n: n,
                    error: None,
                    record: Some(r),
                },
                Err(e) => CellRecord {
                    h,
                    eps,
                    grid_n: n,
                    error: Some(e.to_string()),
                    record: None,
                },
            }
        })
        .collect();
    Ok(RunReport {
        config: cfg.clone(),
        manifest: Manifest {
            config_hash: cfg.hash(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s: start.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
        },
        cells,
    })
}

const BASE_COLUMNS: [&str; 29] = [
    "h",
    "eps",
    "grid_n",
    "status",
    "error",
    "f_ot",
    "f_zpo",
    "f_zpo_full",
    "e_main",
    "e_total",
    "gap_upper",
    "marginal_residual",
    "mass_identity_error",
    "c_h_1",
    "c_h_2",
    "cap_removed_mass",
    "remainder_mass",
    "pe_remainder_over_sqrt_eps",
    "ke_constant",
    "pe_constant",
    "subadditive",
    "n_trunc",
    "beta",
    "delta",
    "tau",
    "schedule_valid",
    "failed_orderings",
    "oracle_coarse_n",
    "construction_energy_coarse",
];

const ORACLE_COLUMNS: [&str; 5] = [
    "ground_eigenvalue",
    "constrained_energy",
    "kkt_residual",
    "gap_oracle",
    "sandwich_ok",
];

/// Shortest round-trip text; exponent form outside `[1e-4, 1e15)`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

impl RunReport {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }

    /// Header of the table; the oracle columns appear only when an oracle is enabled.
    pub fn columns(&self) -> Vec<&'static str> {
        let mut cols: Vec<&str> = BASE_COLUMNS[..27].to_vec();
        if self.config.oracle.any() {
            cols.extend_from_slice(&BASE_COLUMNS[27..]);
            cols.extend_from_slice(&ORACLE_COLUMNS);
        }
        cols
    }

    /// RFC 4180 table, one row per cell in sweep order.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(Vec::new());
        let cols = self.columns();
        w.write_record(&cols)?;
        for c in &self.cells {
            let mut row = vec![fmt_f64(c.h), fmt_f64(c.eps), c.grid_n.to_string()];
            match &c.record {
                None => {
                    row.push("failed".into());
                    row.push(c.error.clone().unwrap_or_default());
                    row.resize(cols.len(), String::new());
                }
                Some(r) => {
                    row.push("ok".into());
                    row.push(String::new());
                    row.extend(
                        [
                            r.f_ot,
                            r.f_zpo,
                            r.f_zpo_full,
                            r.e_main,
                            r.e_total,
                            r.gap_upper,
                            r.marginal_residual,
                            r.mass_identity_error,
                            r.c_h_1,
                            r.c_h_2,
                            r.cap_removed_mass,
                            r.remainder_mass,
                            r.pe_remainder_over_sqrt_eps,
                            r.ke_constant,
                            r.pe_constant,
                        ]
                        .iter()
                        .map(|x| fmt_f64(*x)),
                    );
                    row.push(r.subadditive.to_string());
                    row.extend(
                        [r.n_trunc, r.beta, r.delta, r.tau]
                            .iter()
                            .map(|x| fmt_f64(*x)),
                    );
                    row.push(r.schedule_valid.to_string());
                    row.push(r.failed_orderings.clone());
                    if self.config.oracle.any() {
                        match &r.oracle {
                            Some(o) => {
                                row.push(o.coarse_n.to_string());
                                row.push(fmt_f64(o.construction_energy));
                                row.push(opt(o.ground_eigenvalue));
                                row.push(opt(o.constrained_energy));
                                row.push(opt(o.kkt_residual));
                                row.push(opt(o.gap_oracle));
                                row.push(o.sandwich_ok.to_string());
                            }
                            None => row.resize(cols.len(), String::new()),
                        }
                    }
                }
            }
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Write `sweep.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("sweep.csv"), self.to_csv()?)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Decode a table written by [`RunReport::to_csv`].
pub fn parse_sweep_csv(text: &str) -> Result<Vec<CellRecord>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let idx: HashMap<&str, usize> = header
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();
    for c in &BASE_COLUMNS[..27] {
        if !idx.contains_key(c) {
            return Err(Error::Parse(format!("missing column {c:?}")));
        }
    }
    let with_oracle = ORACLE_COLUMNS
        .iter()
        .chain(&BASE_COLUMNS[27..])
        .all(|c| idx.contains_key(c));
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |c: &str| rec.get(idx[c]).unwrap_or("");
        let num = |c: &str| -> Result<f64> {
            get(c)
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("row {}: column {c}: {e}", line + 1)))
        };
        let onum = |c: &str| -> Result<Option<f64>> {
            match get(c) {
                "" => Ok(None),
                _ => num(c).map(Some),
            }
        };
        let boolean = |c: &str| -> Result<bool> {
            get(c)
                .parse::<bool>()
                .map_err(|e| Error::Parse(format!("row {}: column {c}: {e}", line + 1)))
        };
        let int = |c: &str| -> Result<usize> {
            get(c)
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("row {}: column {c}: {e}", line + 1)))
        };
        let (h, eps, grid_n) = (num("h")?, num("eps")?, int("grid_n")?);
        let cell = match get("status") {
            "failed" => CellRecord {
                h,
                eps,
                grid_n,
                error: Some(get("error").to_string()),
                record: None,
            },
            "ok" => {
                let oracle = if with_oracle && !get("oracle_coarse_n").is_empty() {
                    Some(OracleRecord {
                        coarse_n: int("oracle_coarse_n")?,
                        construction_energy: num("construction_energy_coarse")?,
                        ground_eigenvalue: onum("ground_eigenvalue")?,
                        constrained_energy: onum("constrained_energy")?,
                        kkt_residual: onum("kkt_residual")?,
                        gap_oracle: onum("gap_oracle")?,
                        sandwich_ok: boolean("sandwich_ok")?,
                    })
                } else {
                    None
                };
                CellRecord {
                    h,
                    eps,
                    grid_n,
                    error: None,
                    record: Some(RecoveryRecord {
                        h,
                        eps,
                        grid_n,
                        f_ot: num("f_ot")?,
                        f_zpo: num("f_zpo")?,
                        f_zpo_full: num("f_zpo_full")?,
                        e_main: num("e_main")?,
                        e_total: num("e_total")?,
                        gap_upper: num("gap_upper")?,
                        marginal_residual: num("marginal_residual")?,
                        mass_identity_error: num("mass_identity_error")?,
                        c_h_1: num("c_h_1")?,
                        c_h_2: num("c_h_2")?,
                        cap_removed_mass: num("cap_removed_mass")?,
                        remainder_mass: num("remainder_mass")?,
                        pe_remainder_over_sqrt_eps: num("pe_remainder_over_sqrt_eps")?,
                        ke_constant: num("ke_constant")?,
                        pe_constant: num("pe_constant")?,
                        subadditive: boolean("subadditive")?,
                        n_trunc: num("n_trunc")?,
                        beta: num("beta")?,
                        delta: num("delta")?,
                        tau: num("tau")?,
                        schedule_valid: boolean("schedule_valid")?,
                        failed_orderings: get("failed_orderings").to_string(),
                        oracle,
                    }),
                }
            }
            s => {
                return Err(Error::Parse(format!(
                    "row {}: unknown status {s:?}",
                    line + 1
                )))
            }
        };
        out.push(cell);
    }
    Ok(out)
}

/// Orderings of the schedule at `(eps, H)` with the all-pass threshold of the override set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidityTable {
    pub schedule: ParameterSchedule,
    /// `|log10 eps|` beyond which every ordering holds; `None` if never within the search range.
    pub all_hold_log10: Option<f64>,
}

pub fn validate_params(eps: f64, h: f64, overrides: &[Override]) -> Result<ValidityTable> {
    Ok(ValidityTable {
        schedule: ParameterSchedule::new(eps, h, overrides)?,
        all_hold_log10: crate::recovery::all_hold_threshold(overrides),
    })
}

impl std::fmt::Display for ValidityTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = &self.schedule;
        writeln!(
            f,
            "eps = {:e}, H = {}: N = {:.6}, beta = {:.6e}, delta = {:.6e}, tau = {:.6e}",
            s.eps, s.h, s.n, s.beta, s.delta, s.tau
        )?;
        for c in &s.validity {
            writeln!(
                f,
                "  {:<36} {:>12.4e} vs {:>12.4e}  margin {:>+8.3} decades  {}",
                c.name,
                c.lhs,
                c.rhs,
                c.margin_decades,
                if c.holds { "ok" } else { "FAILED" }
            )?;
        }
        match self.all_hold_log10 {
            Some(t) => write!(f, "all orderings hold for |log10 eps| > {t:.2}"),
            None => write!(f, "some ordering fails at every eps in the search range"),
        }
    }
}
