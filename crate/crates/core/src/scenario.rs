//! End-to-end drivers behind the command-line subcommands. Each driver
//! validates its inputs, checks the output directory first, runs, and
//! writes CSV/JSON files atomically.

use std::f64::consts::PI;
use std::path::Path;

use serde::Serialize;

use crate::boundary::SlabMesh;
use crate::config::RunConfig;
use crate::diagnostics::{
    fit_decay, populate_ledger, ConstantsLedger, DecayFit, EntropyReport, EntropyTracker,
};
use crate::error::{Error, Result};
use crate::kl::{nystrom_eig, orthonormality_defect, truncate, verify_orthogonality, CoefficientLaw, OrthogonalityReport};
use crate::output::{preflight, write_atomic, write_json, Table};
use crate::poisson::{poincare_constant, solve_poisson_neumann};
use crate::transport::{RunStats, Scenario, MAX_GENERATOR_SIZE};
use crate::uq::{
    fd_oracle, recursion_g, run_hierarchy, verify_recursion_lemma, Envelope, LemmaCheck, HierarchyConstants,
};

/// Column order of `steps.csv`.
pub const STEP_COLUMNS: [&str; 24] = [
    "t",
    "mass",
    "dev_norm_sq",
    "perp_norm_sq",
    "rho_norm_sq",
    "H",
    "T1",
    "T1_bound",
    "T2_normal",
    "T2_normal_bound",
    "T2_boundary",
    "T2_boundary_bound",
    "T3",
    "T4",
    "T4_bound",
    "T5",
    "T5_bound",
    "T6",
    "boundary_left",
    "boundary_right",
    "dH_dt",
    "dH_dt_bound",
    "running_rate",
    "all_ok",
];

/// Count of records at which each check failed.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct CheckTally {
    pub records: usize,
    pub equivalence: usize,
    pub t1: usize,
    pub t2_normal: usize,
    pub t2_boundary: usize,
    pub t3_identity: usize,
    pub t4: usize,
    pub t5: usize,
    /// Informational: `T5` against the dimension factor.
    pub t5_dim: usize,
    pub gronwall: usize,
}

impl CheckTally {
    pub fn from_reports(reports: &[EntropyReport]) -> Self {
        let mut t = Self {
            records: reports.len(),
            ..Self::default()
        };
        let fail = |c: Option<crate::diagnostics::Check>| c.is_some_and(|c| !c.ok) as usize;
        for r in reports {
            let b = &r.breakdown;
            t.equivalence += !r.equivalence_ok as usize;
            t.t1 += fail(b.t1);
            t.t2_normal += !b.t2_normal.ok as usize;
            t.t2_boundary += !b.t2_boundary.ok as usize;
            t.t3_identity += !b.t3_identity_ok as usize;
            t.t4 += !b.t4.ok as usize;
            t.t5 += fail(b.t5);
            t.t5_dim += fail(b.t5_dim);
            t.gronwall += fail(r.gronwall);
        }
        t
    }

    pub fn all_ok(&self) -> bool {
        self.equivalence + self.t1 + self.t2_normal + self.t2_boundary + self.t3_identity + self.t4 + self.t5 + self.gronwall
            == 0
    }
}

/// Everything `run` writes to `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scenario: Scenario,
    pub stats: RunStats,
    pub norm_fit: Option<DecayFit>,
    pub entropy_fit: Option<DecayFit>,
    /// `|τ_H / τ_norm − 1|`.
    pub entropy_vs_norm: Option<f64>,
    pub oracle_tau: Option<f64>,
    /// `τ_fit / τ_h − 1`.
    pub oracle_rel_error: Option<f64>,
    pub ledger_rate: f64,
    pub checks: Option<CheckTally>,
    pub ledger: Option<ConstantsLedger>,
}

/// Output of [`run_case`], including the records behind the CSV.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub reports: Vec<EntropyReport>,
    pub masses: Vec<f64>,
    pub times: Vec<f64>,
    pub dev_norm_sq: Vec<f64>,
}

fn opt_check(c: Option<crate::diagnostics::Check>) -> [Option<f64>; 2] {
    c.map_or([None, None], |c| [Some(c.value), Some(c.bound)])
}

fn steps_table(out: &RunOutcome) -> Table {
    let mut table = Table::new(&STEP_COLUMNS);
    if out.reports.is_empty() {
        for ((t, m), d) in out.times.iter().zip(&out.masses).zip(&out.dev_norm_sq) {
            let mut row = vec![None; STEP_COLUMNS.len()];
            row[0] = Some(*t);
            row[1] = Some(*m);
            row[2] = Some(*d);
            table.push(row);
        }
        return table;
    }
    for (r, m) in out.reports.iter().zip(&out.masses) {
        let b = &r.breakdown;
        let [t1, t1b] = opt_check(b.t1);
        let [t5, t5b] = opt_check(b.t5);
        let [g, gb] = opt_check(r.gronwall);
        table.push(vec![
            Some(r.t),
            Some(*m),
            Some(r.dev_norm_sq),
            Some(r.perp_norm_sq),
            Some(r.rho_norm_sq),
            Some(r.h),
            t1,
            t1b,
            Some(b.t2_normal.value),
            Some(b.t2_normal.bound),
            Some(b.t2_boundary.value),
            Some(b.t2_boundary.bound),
            Some(b.t3),
            Some(b.t4.value),
            Some(b.t4.bound),
            t5,
            t5b,
            Some(b.t6),
            Some(r.boundary_dissipation[0]),
            Some(r.boundary_dissipation[1]),
            g,
            gb,
            r.running_rate,
            Some(if r.all_ok() { 1.0 } else { 0.0 }),
        ]);
    }
    table
}

/// Runs the deterministic solver with diagnostics and, when `out` is
/// given, writes `steps.csv`, `log_norms.csv`, `summary.json`,
/// `ledger.json` and `config.echo`.
pub fn run_case(cfg: &RunConfig, out: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let problem = cfg.problem()?;
    if let Some(dir) = out {
        preflight(dir)?;
        write_atomic(&dir.join("config.echo"), cfg.echo().as_bytes())?;
    }
    let solver = problem.solver()?;
    let scenario = if solver.has_force() { Scenario::Potential } else { Scenario::Base };
    let ledger = if cfg.diagnostics.entropy {
        let l = populate_ledger(&solver)?;
        if let Some(dir) = out {
            write_json(&dir.join("ledger.json"), &l)?;
        }
        Some(l)
    } else {
        None
    };
    let mut tracker = ledger.clone().map(EntropyTracker::new);
    let mut state = solver.initial_state(problem.initial);
    let mut reports = Vec::new();
    let mut masses = Vec::new();
    let mut times = Vec::new();
    let mut dev = Vec::new();
    let stats = solver.run(&mut state, |s| {
        masses.push(solver.total_mass(&s.f));
        times.push(s.t);
        dev.push(solver.deviation_norm_sq(&s.f));
        if let Some(tr) = tracker.as_mut() {
            reports.push(tr.record(&solver, s)?);
        }
        Ok(())
    })?;
    let window = cfg.fit_window();
    let norm_series: Vec<(f64, f64)> = times.iter().zip(&dev).map(|(t, d)| (*t, d.sqrt())).collect();
    let norm_fit = fit_decay(&norm_series, window, 0.0).ok();
    let entropy_fit = if reports.is_empty() {
        None
    } else {
        let s: Vec<(f64, f64)> = reports.iter().map(|r| (r.t, r.h.max(0.0).sqrt())).collect();
        fit_decay(&s, window, 0.0).ok()
    };
    let entropy_vs_norm = match (&norm_fit, &entropy_fit) {
        (Some(n), Some(h)) => Some((h.tau_fit / n.tau_fit - 1.0).abs()),
        _ => None,
    };
    let oracle_tau = if cfg.diagnostics.oracle && solver.size() <= MAX_GENERATOR_SIZE {
        Some(solver.decay_rate_oracle()?)
    } else {
        None
    };
    let oracle_rel_error = match (&norm_fit, oracle_tau) {
        (Some(f), Some(t)) => Some(f.tau_fit / t - 1.0),
        _ => None,
    };
    let summary = RunSummary {
        scenario,
        stats,
        norm_fit,
        entropy_fit,
        entropy_vs_norm,
        oracle_tau,
        oracle_rel_error,
        ledger_rate: ledger.as_ref().map_or(0.0, |l| l.eta.omega / l.eta.big_c_eta),
        checks: (!reports.is_empty()).then(|| CheckTally::from_reports(&reports)),
        ledger,
    };
    let outcome = RunOutcome {
        summary,
        reports,
        masses,
        times,
        dev_norm_sq: dev,
    };
    if let Some(dir) = out {
        steps_table(&outcome).write(&dir.join("steps.csv"))?;
        let mut plot = Table::new(&["t", "log_dev_norm", "log_sqrt_H"]);
        for (i, (t, d)) in outcome.times.iter().zip(&outcome.dev_norm_sq).enumerate() {
            let h = outcome.reports.get(i).map(|r| 0.5 * r.h.max(1e-300).ln());
            plot.push(vec![Some(*t), Some(0.5 * d.max(1e-300).ln()), h]);
        }
        plot.write(&dir.join("log_norms.csv"))?;
        write_json(&dir.join("summary.json"), &outcome.summary)?;
    }
    Ok(outcome)
}

/// Finite-difference comparison for one level.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FdComparison {
    pub level: usize,
    pub delta_z: f64,
    /// Relative L² gap at the final record.
    pub final_gap: f64,
    pub max_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct UqSummary {
    pub l_max: usize,
    pub z: f64,
    pub dt: f64,
    pub envelopes: Vec<Envelope>,
    pub constants: HierarchyConstants,
    /// Recursion lemma with the ledger constants and the observed initial norms.
    pub lemma: LemmaCheck,
    pub dz_norms: Vec<f64>,
    pub dz_within_bound: Vec<bool>,
    /// Largest relative mass change per level.
    pub mass_drift: Vec<f64>,
    pub source_bound_failures: usize,
    pub j_source_bound_failures: usize,
    pub entropy_failures: usize,
    pub fd: Vec<FdComparison>,
}

fn rel_gap(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        d / n
    } else {
        d
    }
}

/// Runs the derivative hierarchy; with `fd_delta`, compares levels 1 and 2
/// against central differences. Writes `uq_norms.csv`, `uq_summary.json`
/// and `config.echo`.
pub fn uq_case(cfg: &RunConfig, out: Option<&Path>) -> Result<UqSummary> {
    cfg.validate()?;
    let problem = cfg.problem()?;
    if let Some(dir) = out {
        preflight(dir)?;
        write_atomic(&dir.join("config.echo"), cfg.echo().as_bytes())?;
    }
    let ucfg = cfg.uq_config();
    let keep = cfg.uq.fd_delta.is_some();
    let run = run_hierarchy(&problem, ucfg, keep)?;
    let nl = run.norms.len();
    let mut fd = Vec::new();
    if let Some(delta) = cfg.uq.fd_delta {
        for l in 1..=ucfg.l_max.min(2) {
            let series = fd_oracle(&problem, &ucfg, delta, l)?;
            let gaps: Vec<f64> = series
                .iter()
                .zip(&run.snapshots)
                .map(|((_, g_fd), snap)| rel_gap(&snap[l], g_fd))
                .collect();
            // The first record is the initial datum, where both sides agree by construction.
            fd.push(FdComparison {
                level: l,
                delta_z: delta,
                final_gap: *gaps.last().unwrap_or(&0.0),
                max_gap: gaps.iter().skip(1).copied().fold(0.0, f64::max),
            });
        }
    }
    let h0: Vec<f64> = run.norms.iter().map(|n| n[0]).collect();
    let t_end = *run.times.last().unwrap_or(&0.0);
    let bound = recursion_g(run.constants.a, &run.constants.b, &h0)?;
    let lemma = verify_recursion_lemma(&bound, t_end.max(1e-12), &vec![1.0; nl], &vec![0.0; nl])?;
    let mass_drift = run
        .masses
        .iter()
        .zip(&run.norms)
        .map(|(m, n)| {
            let scale = m[0].abs().max(n.iter().copied().fold(0.0, f64::max)).max(1e-300);
            m.iter().map(|x| (x - m[0]).abs() / scale).fold(0.0, f64::max)
        })
        .collect();
    let flat = run.entropy.iter().flatten();
    let summary = UqSummary {
        l_max: ucfg.l_max,
        z: ucfg.z,
        dt: run.dt,
        envelopes: run.envelopes.clone(),
        constants: run.constants.clone(),
        lemma,
        dz_norms: run.dz_norms.clone(),
        dz_within_bound: run.dz_within_bound.clone(),
        mass_drift,
        source_bound_failures: flat.clone().filter(|e| !e.source_ok).count(),
        j_source_bound_failures: flat.clone().filter(|e| !e.j_source_ok).count(),
        entropy_failures: flat.filter(|e| !e.t1_ok).count(),
        fd,
    };
    if let Some(dir) = out {
        let mut cols = vec!["t".to_string()];
        cols.extend((0..nl).map(|l| format!("norm_l{l}")));
        cols.extend((0..nl).map(|l| format!("mass_l{l}")));
        let mut table = Table::new(&cols);
        for (r, t) in run.times.iter().enumerate() {
            let mut row = vec![*t];
            row.extend(run.norms.iter().map(|n| n[r]));
            row.extend(run.masses.iter().map(|m| m[r]));
            table.push_values(&row);
        }
        table.write(&dir.join("uq_norms.csv"))?;
        write_json(&dir.join("uq_summary.json"), &summary)?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct KlSummary {
    pub n: usize,
    pub d: usize,
    pub captured: f64,
    pub eigenvalues: Vec<f64>,
    pub orthonormality_defect: f64,
    pub gram: OrthogonalityReport,
}

/// Nyström eigensolve, truncation and the sampled Gram check. Writes
/// `kl_eigenvalues.csv`, `kl_eigenfunctions.csv`, `kl_gram.json` and
/// `config.echo`.
pub fn kl_case(cfg: &RunConfig, out: Option<&Path>) -> Result<KlSummary> {
    cfg.validate()?;
    if let Some(dir) = out {
        preflight(dir)?;
        write_atomic(&dir.join("config.echo"), cfg.echo().as_bytes())?;
    }
    let full = nystrom_eig(&cfg.kl.kernel(), cfg.kl.n)?;
    let basis = truncate(&full, cfg.kl.energy)?;
    let gram = verify_orthogonality(&basis, CoefficientLaw::Gaussian, cfg.kl.samples, cfg.seed)?;
    let summary = KlSummary {
        n: cfg.kl.n,
        d: basis.d,
        captured: basis.captured,
        eigenvalues: basis.eigenvalues.clone(),
        orthonormality_defect: orthonormality_defect(&basis),
        gram,
    };
    if let Some(dir) = out {
        let mut ev = Table::new(&["index", "lambda"]);
        for (i, l) in full.eigenvalues.iter().enumerate() {
            ev.push_values(&[(i + 1) as f64, *l]);
        }
        ev.write(&dir.join("kl_eigenvalues.csv"))?;
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=basis.d).map(|i| format!("psi_{i}")));
        let mut ef = Table::new(&cols);
        for (k, t) in basis.grid.iter().enumerate() {
            let mut row = vec![*t];
            row.extend(basis.eigenfunctions.iter().map(|p| p[k]));
            ef.push_values(&row);
        }
        ef.write(&dir.join("kl_eigenfunctions.csv"))?;
        write_json(&dir.join("kl_gram.json"), &summary)?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GapSummary {
    pub size: usize,
    pub tau_h: f64,
    pub lambda_h: f64,
    pub c_l: f64,
}

/// Dense spectral oracle only.
pub fn gap_case(cfg: &RunConfig, out: Option<&Path>) -> Result<GapSummary> {
    cfg.validate()?;
    if let Some(dir) = out {
        preflight(dir)?;
    }
    let solver = cfg.problem()?.solver()?;
    if solver.size() > MAX_GENERATOR_SIZE {
        return Err(Error::TooLarge(format!(
            "generator of size {} exceeds {MAX_GENERATOR_SIZE}",
            solver.size()
        )));
    }
    let s = GapSummary {
        size: solver.size(),
        tau_h: solver.decay_rate_oracle()?,
        lambda_h: solver.kernel.spectral_gap()?,
        c_l: solver.kernel.constant_cl(),
    };
    if let Some(dir) = out {
        write_json(&dir.join("gap.json"), &s)?;
    }
    Ok(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct PoissonSummary {
    pub nx: Vec<usize>,
    pub errors: Vec<f64>,
    /// `e(nx) / e(2nx)`.
    pub ratios: Vec<f64>,
    pub cp_h_256: f64,
    pub cp_exact: f64,
    pub ok: bool,
}

/// Manufactured solution `φ = cos(πx/Lx)`, `ρ = (π/Lx)² cos(πx/Lx)` on
/// successively doubled meshes, plus the discrete Poincaré constant at
/// `nx = 256`.
pub fn poisson_check(lx: f64, out: Option<&Path>) -> Result<PoissonSummary> {
    let nx: Vec<usize> = vec![16, 32, 64, 128, 256];
    let k = PI / lx;
    let mut errors = Vec::new();
    for &n in &nx {
        let mesh = SlabMesh::new(n, lx)?;
        let rho: Vec<f64> = mesh.centers().iter().map(|x| k * k * (k * x).cos()).collect();
        let field = solve_poisson_neumann(&rho, &mesh)?;
        let exact: Vec<f64> = mesh.centers().iter().map(|x| (k * x).cos()).collect();
        let mean = exact.iter().sum::<f64>() / n as f64;
        let err = (mesh.dx() * field.phi.iter().zip(&exact).map(|(p, e)| (p - (e - mean)).powi(2)).sum::<f64>()).sqrt();
        errors.push(err);
    }
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let cp_h_256 = poincare_constant(&SlabMesh::new(256, lx)?)?;
    let cp_exact = lx / PI;
    let s = PoissonSummary {
        ok: ratios.iter().all(|r| (3.6..=4.4).contains(r)) && (cp_h_256 - cp_exact).abs() <= 1e-4,
        nx,
        errors,
        ratios,
        cp_h_256,
        cp_exact,
    };
    if let Some(dir) = out {
        preflight(dir)?;
        write_json(&dir.join("poisson_check.json"), &s)?;
    }
    Ok(s)
}

/// Runs `f` inside a dedicated pool of `threads` workers.
pub fn with_workers<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {threads} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Worker count from `KINETIC_THREADS`, if set.
pub fn workers_from_env() -> Result<Option<usize>> {
    match std::env::var("KINETIC_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .map(Some)
            .ok_or_else(|| Error::InvalidConfig(format!("KINETIC_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}
