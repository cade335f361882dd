//! Modified entropy `H(f) = ½‖f‖² + η⟨j, ∂ₓφ⟩`, the constants it is built
//! from, the term-by-term breakdown of `dH/dt` with the bound each term must
//! satisfy, and exponential-rate fitting.

use serde::Serialize;

use crate::boundary::{boundary_dissipation, Wall};
use crate::error::{Error, Result};
use crate::poisson::{poincare_constant, regularity_constant, solve_poisson_neumann, trace_constant, PhiField};
use crate::transport::{KineticState, RunStats, Solver};

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Relative slack used by every inequality check.
pub const SLACK: f64 = 1e-8;

/// Constants entering the entropy estimates, plus the derived `η` choice.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantsLedger {
    pub dim: usize,
    pub c: f64,
    /// Declared pointwise lower bound on the cross-section.
    pub lambda: f64,
    /// Discrete spectral gap of `−L`.
    pub lambda_h: f64,
    pub c_l: f64,
    pub c_p: f64,
    /// `‖(v⊗v − I)M‖_dν`.
    pub d_h: f64,
    /// `max |Σ w v⊗v M − I|`, the quadrature's second-moment error.
    pub second_moment_defect: f64,
    /// `max_k ‖v_k M‖_dν`.
    pub m_v: f64,
    pub k_h: f64,
    pub d_gamma: f64,
    pub c_gamma: f64,
    pub c_v: f64,
    pub big_c_v: f64,
    pub d_v: f64,
    /// Factor in `|T5| ≤ t5_factor · ‖f⊥‖²`; the same constant enters `α`.
    pub t5_factor: f64,
    /// The velocity dimension, the sharp factor for the continuous problem.
    pub t5_dim_factor: f64,
    pub eta: EtaChoice,
    /// How `K_h` and `D_γ,h` were obtained.
    pub policy: String,
}

/// Output of [`choose_eta`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EtaChoice {
    pub eta_tilde: f64,
    pub eta: f64,
    /// The three upper bounds on `η` (dissipation, boundary, equivalence).
    pub constraints: [f64; 3],
    /// Index of the smallest constraint.
    pub binding: usize,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub omega: f64,
    pub c_eta: f64,
    pub big_c_eta: f64,
}

impl ConstantsLedger {
    /// `C_V / c_V`, equal to one without a potential.
    pub fn tilde_c_v(&self) -> f64 {
        self.big_c_v / self.c_v
    }

    fn has_potential(&self) -> bool {
        self.d_v > 0.0
    }
}

/// Gathers the constants for `solver`'s grid, mesh, kernel and potential and
/// picks `η`.
pub fn populate_ledger(solver: &Solver) -> Result<ConstantsLedger> {
    let space = &solver.space;
    let mesh = &solver.mesh;
    let kernel = &solver.kernel;
    let c_gamma = if space.dim() == 2 {
        let g = space.grid();
        let m = space.m();
        (0..space.len())
            .filter(|&i| g.normal(i) > 0.0)
            .map(|i| g.weights()[i] * g.nodes()[i][1].powi(2) * g.normal(i) * m[i])
            .sum::<f64>()
            .sqrt()
    } else {
        0.0
    };
    let (c_v, big_c_v, d_v) = match &solver.potential {
        Some(v) if !v.is_flat() => (v.c_v, v.big_c_v, v.d_v),
        _ => (1.0, 1.0, 0.0),
    };
    let mut ledger = ConstantsLedger {
        dim: space.dim(),
        c: solver.bc.c,
        lambda: kernel.lambda_bound(),
        lambda_h: kernel.spectral_gap()?,
        c_l: kernel.constant_cl(),
        c_p: poincare_constant(mesh)?,
        d_h: space.stress_constant(),
        second_moment_defect: space.second_moment_defect(),
        m_v: space.velocity_moment_norm(),
        k_h: regularity_constant(mesh)?,
        d_gamma: trace_constant(mesh)?,
        c_gamma,
        c_v,
        big_c_v,
        d_v,
        t5_factor: 3.0,
        t5_dim_factor: space.dim() as f64,
        eta: EtaChoice {
            eta_tilde: 0.0,
            eta: 0.0,
            constraints: [0.0; 3],
            binding: 0,
            alpha: 0.0,
            beta: 0.0,
            delta: 0.0,
            omega: 0.0,
            c_eta: 0.5,
            big_c_eta: 0.5,
        },
        policy: "K_h and D_gamma,h are exact discrete suprema (first Neumann mode; \
                 generalized eigenvalue of the wall form against the discrete H1 form)"
            .into(),
    };
    ledger.eta = choose_eta(&ledger, solver.bc.c)?;
    Ok(ledger)
}

/// Chooses `η̃` and `η` at half of their admissible upper bounds and
/// evaluates the resulting coefficients `α, β, δ` and rate `ω = −max(α, β)`.
/// The stress constant enters squared, since `‖S‖² ≤ D_h²‖f⊥‖²`.
pub fn choose_eta(ledger: &ConstantsLedger, c: f64) -> Result<EtaChoice> {
    let l = ledger;
    let vals = [l.lambda, l.c_l, l.c_p, l.d_h, l.k_h, l.d_gamma, l.c_gamma, l.c_v, l.big_c_v, l.d_v];
    if vals.iter().any(|x| !x.is_finite()) || l.lambda <= 0.0 || l.c_v <= 0.0 {
        return Err(Error::InvalidConfig(
            "constants ledger has non-finite or non-positive entries".into(),
        ));
    }
    let ct = if l.has_potential() { l.tilde_c_v() } else { 1.0 };
    let d2 = l.d_h * l.d_h;
    let gk = l.c_gamma * l.d_gamma * l.k_h;
    let k2 = if l.has_potential() { l.k_h * l.k_h * (1.0 + l.d_v) } else { l.k_h * l.k_h };
    let s_coeff = if l.has_potential() { 2.0 * d2 } else { d2 };

    let eta_tilde = 0.5 / (ct * (k2 + 2.0 * (1.0 - c) * gk + l.c_l * l.c_p));
    let first = l.lambda / (ct * (s_coeff / (4.0 * eta_tilde) + l.c_l * l.c_p / (4.0 * eta_tilde) + 3.0));
    let second = if gk * (1.0 - c) > 0.0 {
        eta_tilde * (1.0 + c) / (gk * ct)
    } else {
        f64::INFINITY
    };
    let third = 1.0 / (2.0 * SQRT3 * l.c_p * ct);
    let constraints = [first, second, third];
    let (binding, min) = constraints
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, x)| if x < acc.1 { (i, x) } else { acc });
    let eta = 0.5 * min;

    let alpha = -l.lambda + eta * ct * (s_coeff / (4.0 * eta_tilde) + l.c_l * l.c_p / (4.0 * eta_tilde) + 3.0);
    let beta = eta * (eta_tilde * ct * (k2 + 2.0 * (1.0 - c) * gk + l.c_l * l.c_p) - 1.0);
    let delta = -0.5 * (1.0 - c * c) + eta * (1.0 - c) * gk * ct / (2.0 * eta_tilde);
    let spread = SQRT3 * eta * l.c_p * ct;
    Ok(EtaChoice {
        eta_tilde,
        eta,
        constraints,
        binding,
        alpha,
        beta,
        delta,
        omega: -alpha.max(beta),
        c_eta: 0.5 - spread,
        big_c_eta: 0.5 + spread,
    })
}

/// Mean-free moments and Poisson field of a state.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    /// `f − μ_f eq`.
    pub g: Vec<f64>,
    pub rho: Vec<f64>,
    pub j: Vec<f64>,
    pub s11: Vec<f64>,
    pub j_l: Vec<f64>,
    pub phi: PhiField,
    pub grad_cells: Vec<f64>,
    pub norm_sq: f64,
    pub perp_norm_sq: f64,
    /// `‖f⊥‖²` in `dx dν`.
    pub perp_norm_sq_dx: f64,
    pub rho_norm_sq: f64,
    pub rho_norm_sq_dx: f64,
    pub h: f64,
    pub boundary: [f64; 2],
}

fn cell_weights(solver: &Solver) -> Vec<f64> {
    match &solver.potential {
        Some(v) => v.weight_cells.clone(),
        None => vec![1.0; solver.mesh.nx()],
    }
}

fn face_weights(solver: &Solver) -> Vec<f64> {
    match &solver.potential {
        Some(v) => v.weight_faces.clone(),
        None => vec![1.0; solver.mesh.nx() + 1],
    }
}

/// Builds the snapshot of the mean-free part of `f` used by the entropy.
pub fn snapshot(solver: &Solver, f: &[f64], t: f64, eta: f64) -> Result<Snapshot> {
    let g = solver.deviation(f);
    snapshot_of_deviation(solver, g, t, eta)
}

/// As [`snapshot`], for a state that is already mass-free.
pub fn snapshot_of_deviation(solver: &Solver, g: Vec<f64>, t: f64, eta: f64) -> Result<Snapshot> {
    let space = &solver.space;
    let nv = space.len();
    let nx = solver.mesh.nx();
    let dx = solver.mesh.dx();
    let du = cell_weights(solver);
    let mut rho = vec![0.0; nx];
    let mut j = vec![0.0; nx];
    let mut s11 = vec![0.0; nx];
    let mut j_l = vec![0.0; nx];
    let mut perp_du = 0.0;
    let mut perp_dx = 0.0;
    for k in 0..nx {
        let cell = &g[k * nv..(k + 1) * nv];
        let mom = space.moments(cell);
        rho[k] = mom.rho;
        j[k] = mom.j[0];
        s11[k] = mom.s[0][0];
        j_l[k] = solver.kernel.j_l(cell)[0];
        let p = space.perp_norm_sq(cell) * dx;
        perp_dx += p;
        perp_du += p * du[k];
    }
    let phi = solve_poisson_neumann(&rho, &solver.mesh)?;
    let grad_cells = phi.grad_cells();
    let rho_norm_sq_dx: f64 = rho.iter().map(|r| dx * r * r).sum();
    let rho_norm_sq: f64 = rho.iter().zip(&du).map(|(r, e)| dx * e * r * r).sum();
    let norm_sq = solver.norm_sq(&g);
    let cross: f64 = (0..nx).map(|k| dx * du[k] * j[k] * grad_cells[k]).sum();
    let h = 0.5 * norm_sq + eta * cross;
    let ew = face_weights(solver);
    let boundary = [
        ew[0] * boundary_dissipation(space, &solver.bc, Wall::Left, &g[..nv]),
        ew[nx] * boundary_dissipation(space, &solver.bc, Wall::Right, &g[(nx - 1) * nv..]),
    ];
    Ok(Snapshot {
        t,
        g,
        rho,
        j,
        s11,
        j_l,
        phi,
        grad_cells,
        norm_sq,
        perp_norm_sq: perp_du,
        perp_norm_sq_dx: perp_dx,
        rho_norm_sq,
        rho_norm_sq_dx,
        h,
        boundary,
    })
}

/// `H(f)` for the mean-free part of `f`.
pub fn entropy_h(solver: &Solver, f: &[f64], eta: f64) -> Result<f64> {
    Ok(snapshot(solver, f, 0.0, eta)?.h)
}

/// One term of `dH/dt` together with the bound it must satisfy.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Check {
    pub value: f64,
    pub bound: f64,
    pub ok: bool,
}

impl Check {
    /// `value ≤ bound + SLACK (1 + |value| + |bound|)`.
    fn upper(value: f64, bound: f64) -> Self {
        Self {
            value,
            bound,
            ok: value <= bound + SLACK * (1.0 + value.abs() + bound.abs()),
        }
    }

    /// `|value| ≤ bound` up to the same slack.
    fn abs(value: f64, bound: f64) -> Self {
        let mut c = Self::upper(value.abs(), bound);
        c.value = value;
        c
    }
}

/// The terms `T1..T6` of `dH/dt`. `T1` and `T5` need a previous snapshot.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Breakdown {
    pub t1: Option<Check>,
    pub t2_normal: Check,
    pub t2_boundary: Check,
    pub t3: f64,
    /// `|T3 + T6 + ‖ρ‖²| ≤ 1e−10 (1 + ‖ρ‖²)`.
    pub t3_identity_ok: bool,
    pub t4: Check,
    pub t5: Option<Check>,
    /// `T5` against the dimension factor; reported, not part of [`EntropyReport::all_ok`].
    pub t5_dim: Option<Check>,
    pub t6: f64,
}

/// Evaluates `T1..T6` at `cur`, using `prev` for the backward differences.
pub fn dissipation_breakdown(
    solver: &Solver,
    prev: Option<&Snapshot>,
    cur: &Snapshot,
    ledger: &ConstantsLedger,
) -> Breakdown {
    let nx = solver.mesh.nx();
    let dx = solver.mesh.dx();
    let du = cell_weights(solver);
    let ew = face_weights(solver);
    let ct = ledger.big_c_v;
    let grad = &cur.phi.grad;

    // T3 on interior faces; T6 from the product rule on the weighted flux,
    // so that T3 + T6 = −‖ρ‖²_du exactly.
    let t3: f64 = (1..nx).map(|k| -ew[k] * (cur.rho[k] - cur.rho[k - 1]) * grad[k]).sum();
    let t6: f64 = (0..nx).map(|k| -cur.rho[k] * cur.grad_cells[k] * (ew[k + 1] - ew[k])).sum();
    let t3_identity_ok = (t3 + t6 + cur.rho_norm_sq).abs() <= 1e-10 * (1.0 + cur.rho_norm_sq);

    // T2 = −⟨∂ₓS₁₁, ∂ₓφ⟩ in the same face form.
    let t2: f64 = (1..nx).map(|k| -ew[k] * (cur.s11[k] - cur.s11[k - 1]) * grad[k]).sum();
    let s_norm = ledger.d_h * cur.perp_norm_sq_dx.sqrt() + ledger.second_moment_defect * cur.rho_norm_sq_dx.sqrt();
    let rho_dx = cur.rho_norm_sq_dx.sqrt();
    let t2_bound = if ledger.has_potential() {
        ct * s_norm * rho_dx * (1.0 + ledger.d_v * ledger.c_p)
    } else {
        s_norm * ledger.k_h * rho_dx
    };
    // The walls carry ∂ₓφ = 0 and φ has no tangential dependence, so the
    // surface term is the product of a vanishing gradient with the wall
    // stress.
    let nv = solver.nv();
    let wall_stress = |k: usize| solver.space.moments(&cur.g[k * nv..(k + 1) * nv]).s_tilde[0][0];
    let t2_boundary_value = -(ew[nx] * grad[nx] * wall_stress(nx - 1) - ew[0] * grad[0] * wall_stress(0));
    let sum_gamma: f64 = cur
        .boundary
        .iter()
        .map(|b| if ledger.c < 1.0 { (2.0 * b / (1.0 - ledger.c * ledger.c)).sqrt() } else { 0.0 })
        .sum();
    let t2_boundary_bound = 2.0 * (1.0 - ledger.c) * ledger.c_gamma * ledger.d_gamma * ledger.k_h * ct * rho_dx * sum_gamma;

    let t4: f64 = (0..nx).map(|k| dx * du[k] * cur.j_l[k] * cur.grad_cells[k]).sum();
    let t4_bound = ledger.c_l * ledger.c_p * ct * cur.perp_norm_sq_dx.sqrt() * rho_dx;

    let (t1, t5, t5_dim) = match prev {
        Some(p) => {
            let dt = cur.t - p.t;
            let t1 = 0.5 * (cur.norm_sq - p.norm_sq) / dt;
            let t1_bound = -(cur.boundary[0] + cur.boundary[1]) - ledger.lambda_h * cur.perp_norm_sq;
            let t5: f64 = (0..nx)
                .map(|k| dx * du[k] * cur.j[k] * (cur.grad_cells[k] - p.grad_cells[k]) / dt)
                .sum();
            let base = ct * cur.perp_norm_sq_dx;
            (
                Some(Check::upper(t1, t1_bound)),
                Some(Check::abs(t5, ledger.t5_factor * base)),
                Some(Check::abs(t5, ledger.t5_dim_factor * base)),
            )
        }
        None => (None, None, None),
    };

    Breakdown {
        t1,
        t2_normal: Check::abs(t2, t2_bound),
        t2_boundary: Check::abs(t2_boundary_value, t2_boundary_bound),
        t3,
        t3_identity_ok,
        t4: Check::abs(t4, t4_bound),
        t5,
        t5_dim,
        t6,
    }
}

/// One diagnostic record.
#[derive(Debug, Clone, Serialize)]
pub struct EntropyReport {
    pub t: f64,
    pub dev_norm_sq: f64,
    pub perp_norm_sq: f64,
    pub rho_norm_sq: f64,
    pub h: f64,
    pub breakdown: Breakdown,
    pub boundary_dissipation: [f64; 2],
    /// `c_η‖f‖² ≤ H ≤ C_η‖f‖²`.
    pub equivalence_ok: bool,
    /// Backward difference of `H` against `−(ω/C_η)H`.
    pub gronwall: Option<Check>,
    /// Rate of `‖f − eq‖` between this record and the previous one.
    pub running_rate: Option<f64>,
}

impl EntropyReport {
    /// True when every check evaluated at this record passed.
    pub fn all_ok(&self) -> bool {
        let b = &self.breakdown;
        self.equivalence_ok
            && b.t3_identity_ok
            && b.t2_normal.ok
            && b.t2_boundary.ok
            && b.t4.ok
            && b.t1.is_none_or(|c| c.ok)
            && b.t5.is_none_or(|c| c.ok)
            && self.gronwall.is_none_or(|c| c.ok)
    }
}

/// Turns consecutive states into [`EntropyReport`]s.
pub struct EntropyTracker {
    pub ledger: ConstantsLedger,
    prev: Option<Snapshot>,
}

impl EntropyTracker {
    pub fn new(ledger: ConstantsLedger) -> Self {
        Self { ledger, prev: None }
    }

    pub fn record(&mut self, solver: &Solver, state: &KineticState) -> Result<EntropyReport> {
        let snap = snapshot(solver, &state.f, state.t, self.ledger.eta.eta)?;
        Ok(self.push(solver, snap))
    }

    /// Records an already built snapshot.
    pub fn push(&mut self, solver: &Solver, snap: Snapshot) -> EntropyReport {
        let e = &self.ledger.eta;
        let breakdown = dissipation_breakdown(solver, self.prev.as_ref(), &snap, &self.ledger);
        let n2 = snap.norm_sq;
        let tol = 1e-12 * (1.0 + n2);
        let equivalence_ok = e.c_eta * n2 <= snap.h + tol && snap.h <= e.big_c_eta * n2 + tol;
        let (gronwall, running_rate) = match &self.prev {
            Some(p) => {
                let dt = snap.t - p.t;
                let dh = (snap.h - p.h) / dt;
                let rate = if n2 > 0.0 && p.norm_sq > 0.0 {
                    Some(-0.5 * (n2 / p.norm_sq).ln() / dt)
                } else {
                    None
                };
                (Some(Check::upper(dh, -(e.omega / e.big_c_eta) * snap.h)), rate)
            }
            None => (None, None),
        };
        let report = EntropyReport {
            t: snap.t,
            dev_norm_sq: n2,
            perp_norm_sq: snap.perp_norm_sq,
            rho_norm_sq: snap.rho_norm_sq,
            h: snap.h,
            breakdown,
            boundary_dissipation: snap.boundary,
            equivalence_ok,
            gronwall,
            running_rate,
        };
        self.prev = Some(snap);
        report
    }
}

/// Runs `solver` from `state` and records a report at every cadence point.
pub fn run_with_diagnostics(
    solver: &Solver,
    state: &mut KineticState,
) -> Result<(RunStats, Vec<EntropyReport>, ConstantsLedger)> {
    let ledger = populate_ledger(solver)?;
    let mut tracker = EntropyTracker::new(ledger);
    let mut reports = Vec::new();
    let stats = solver.run(state, |s| {
        reports.push(tracker.record(solver, s)?);
        Ok(())
    })?;
    Ok((stats, reports, tracker.ledger))
}

/// Least-squares exponential fit.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DecayFit {
    pub c_fit: f64,
    pub tau_fit: f64,
    pub r_squared: f64,
    pub points: usize,
    /// Set when records below the underflow floor were dropped.
    pub truncated_at: Option<f64>,
}

/// Values below this are treated as underflow and cut from the fit window.
pub const UNDERFLOW: f64 = 1e-14;

/// Fits `value ≈ C e^{−τ t}` over `window`, discarding the first
/// `transient` fraction of it. Needs at least ten points after trimming.
pub fn fit_decay(series: &[(f64, f64)], window: (f64, f64), transient: f64) -> Result<DecayFit> {
    let (t0, t1) = window;
    if !(t1 > t0) || !(0.0..1.0).contains(&transient) {
        return Err(Error::InvalidConfig("fit window must be increasing, transient in [0, 1)".into()));
    }
    let start = t0 + transient * (t1 - t0);
    let mut pts = Vec::new();
    let mut truncated_at = None;
    for &(t, v) in series {
        if t < start - 1e-12 || t > t1 + 1e-12 {
            continue;
        }
        if !(v > UNDERFLOW) {
            truncated_at = Some(t);
            break;
        }
        pts.push((t, v.ln()));
    }
    if pts.len() < 10 {
        return Err(Error::Domain(format!(
            "decay fit needs at least 10 records in the window, found {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mt;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(DecayFit {
        c_fit: intercept.exp(),
        tau_fit: -slope,
        r_squared,
        points: pts.len(),
        truncated_at,
    })
}

/// Decay fit on `‖f − eq‖` from reports.
pub fn fit_norm_series(reports: &[EntropyReport], window: (f64, f64)) -> Result<DecayFit> {
    let s: Vec<(f64, f64)> = reports.iter().map(|r| (r.t, r.dev_norm_sq.sqrt())).collect();
    fit_decay(&s, window, 0.2)
}

/// Decay fit on `√H`, which decays at the same rate as the norm.
pub fn fit_entropy_series(reports: &[EntropyReport], window: (f64, f64)) -> Result<DecayFit> {
    let s: Vec<(f64, f64)> = reports.iter().map(|r| (r.t, r.h.max(0.0).sqrt())).collect();
    fit_decay(&s, window, 0.2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{MaxwellBc, SlabMesh};
    use crate::collision::{assemble_kernel, CrossSectionSpec};
    use crate::transport::{InitialData, SolverConfig};
    use crate::velocity::{GridKind, VelocitySpace};
    use std::sync::Arc;

    fn solver(dim: usize, n: usize, c: f64, t_end: f64) -> Solver {
        let space = Arc::new(VelocitySpace::build(dim, n, 6.0, GridKind::GaussHermiteTensor).unwrap());
        let mesh = SlabMesh::new(16, 1.0).unwrap();
        let bc = MaxwellBc::new(&space, c).unwrap();
        let kernel = assemble_kernel(&CrossSectionSpec::constant(1.0), &space, 0.0).unwrap();
        let cfg = SolverConfig {
            t_end,
            ..SolverConfig::default()
        };
        Solver::new(space, mesh, bc, kernel, None, cfg).unwrap()
    }

    #[test]
    fn synthetic_fit_is_exact() {
        let s: Vec<(f64, f64)> = (0..100).map(|i| (i as f64 * 0.1, 3.0 * (-0.7 * i as f64 * 0.1).exp())).collect();
        let fit = fit_decay(&s, (0.0, 9.9), 0.2).unwrap();
        assert!((fit.tau_fit - 0.7).abs() < 1e-10);
        assert!((fit.c_fit - 3.0).abs() < 1e-10);
    }

    #[test]
    fn fit_truncates_underflow() {
        let s: Vec<(f64, f64)> = (0..200).map(|i| (i as f64, (-0.5 * i as f64).exp())).collect();
        let fit = fit_decay(&s, (0.0, 199.0), 0.0).unwrap();
        assert!(fit.truncated_at.is_some());
        assert!((fit.tau_fit - 0.5).abs() < 1e-9);
        assert!(fit_decay(&s[..5], (0.0, 4.0), 0.0).is_err());
    }

    #[test]
    fn ledger_reference_values() {
        let s = solver(1, 32, 0.5, 1.0);
        let l = populate_ledger(&s).unwrap();
        assert!((l.lambda_h - 1.0).abs() < 1e-10);
        assert!((l.d_h - 2f64.sqrt()).abs() < 1e-8);
        assert!((l.c_p - 1.0 / std::f64::consts::PI).abs() < 1e-3);
        assert_eq!(l.c_gamma, 0.0);
        assert_eq!((l.c_v, l.big_c_v, l.d_v), (1.0, 1.0, 0.0));
        assert_eq!(l.eta.constraints[1], f64::INFINITY);
        let e = l.eta;
        assert!(e.c_eta > 0.0 && e.alpha < 0.0 && e.beta < 0.0 && e.delta <= 0.0 && e.omega > 0.0);
        assert!((e.eta - 0.5 * e.constraints[0].min(e.constraints[2])).abs() < 1e-15);
    }

    #[test]
    fn c_gamma_two_dimensional() {
        let s = solver(2, 16, 0.5, 1.0);
        let l = populate_ledger(&s).unwrap();
        let expect = (1.0 / (2.0 * std::f64::consts::PI).sqrt()).sqrt();
        assert!((l.c_gamma - expect).abs() < 1e-6, "{}", l.c_gamma);
    }

    #[test]
    fn specular_limit_relaxes_boundary_constraint() {
        let s = solver(2, 8, 1.0, 1.0);
        let l = populate_ledger(&s).unwrap();
        assert_eq!(l.eta.constraints[1], f64::INFINITY);
        assert_eq!(l.eta.delta, 0.0);
    }

    #[test]
    fn equilibrium_and_zero_density_states() {
        let s = solver(1, 16, 0.5, 1.0);
        let l = populate_ledger(&s).unwrap();
        let eq = s.initial_state(InitialData {
            background: 2.0,
            amplitude: 0.0,
        });
        let snap = snapshot(&s, &eq.f, 0.0, l.eta.eta).unwrap();
        assert!(snap.h.abs() < 1e-20);
        // Odd-in-v state: no density, H = ½‖f‖².
        let nv = 16;
        let mut f = vec![0.0; 16 * nv];
        for k in 0..16 {
            for i in 0..nv {
                f[k * nv + i] = s.space.grid().normal(i) * s.space.m()[i] * (k as f64 + 1.0);
            }
        }
        let snap = snapshot(&s, &f, 0.0, l.eta.eta).unwrap();
        assert_eq!(snap.h, 0.5 * snap.norm_sq);
        let b = dissipation_breakdown(&s, None, &snap, &l);
        assert_eq!((b.t3, b.t4.value, b.t6), (0.0, 0.0, 0.0));
    }

    #[test]
    fn short_run_checks_hold() {
        let s = solver(1, 16, 0.5, 1.0);
        let mut st = s.initial_state(InitialData::default());
        let (_, reports, _) = run_with_diagnostics(&s, &mut st).unwrap();
        for r in &reports {
            assert!(r.breakdown.t3_identity_ok);
            assert!(r.equivalence_ok);
        }
    }
}
