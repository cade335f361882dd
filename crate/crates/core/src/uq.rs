//! Derivative hierarchy `gˡ = ∂ᶻˡ f` for a cross-section depending on one
//! scalar parameter `z`, its finite-difference check, and the polynomial
//! envelopes `‖gˡ(t)‖ ≤ e^{−at} Gˡ(t)`.
//!
//! Levels are advanced by differentiating the Strang step `C T C` exactly in
//! `z`: with `C⁽ᵐ⁾ = ∂ᶻᵐ exp(½dt L_z)` and `z`-independent transport `T`,
//! `gˡ ← Σ_{a+b+c=l} l!/(a!b!c!) C⁽ᵃ⁾ T C⁽ᵇ⁾ gᶜ`. The lower levels enter
//! the collision sub-steps exactly as the sources `Sˡ` do in the continuous
//! equation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::boundary::{boundary_dissipation, Wall};
use crate::collision::{assemble_dz_kernels, binomial, DenseOp, DerivativeKernel, Semigroup};
use crate::diagnostics::{fit_decay, populate_ledger, ConstantsLedger, SLACK};
use crate::error::{Error, Result};
use crate::transport::{perturbation_profile, KineticState, Problem, Solver};

/// Largest hierarchy depth handled.
pub const MAX_LEVEL: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UqConfig {
    pub l_max: usize,
    pub z: f64,
    /// Initial data `f₀(z) = background·eq + amplitude (1 + z_init z) p`.
    pub z_init: f64,
    /// Declared bound on `‖L_zᵏ‖`.
    pub c_tilde: f64,
}

impl Default for UqConfig {
    fn default() -> Self {
        Self {
            l_max: 2,
            z: 0.0,
            z_init: 0.0,
            c_tilde: 1.0,
        }
    }
}

/// `f₀` at parameter `z`.
pub fn initial_state_at(problem: &Problem, solver: &Solver, z_init: f64, z: f64) -> KineticState {
    let mut init = problem.initial;
    init.amplitude *= 1.0 + z_init * z;
    solver.initial_state(init)
}

/// `∂ᶻˡ f₀` for `l = 0..=l_max`.
pub fn initial_levels(problem: &Problem, solver: &Solver, cfg: &UqConfig) -> Vec<KineticState> {
    let nx = solver.mesh.nx();
    let nv = solver.nv();
    let mut levels = vec![initial_state_at(problem, solver, cfg.z_init, cfg.z)];
    for l in 1..=cfg.l_max {
        let mut s = KineticState::zeros(nx, nv);
        if l == 1 {
            let scale = problem.initial.amplitude * cfg.z_init;
            let p = perturbation_profile(&solver.mesh, &solver.space);
            s.f.iter_mut().zip(&p).for_each(|(x, q)| *x = scale * q);
        }
        levels.push(s);
    }
    levels
}

/// `Sˡ = Σ_{k<l} C(l,k) L_z^{l−k}(gᵏ)` on every cell. `dz[k−1]` holds `L_zᵏ`.
pub fn build_source(l: usize, dz: &[DerivativeKernel], levels: &[Vec<f64>], nv: usize) -> Result<Vec<f64>> {
    if l == 0 {
        return Ok(vec![0.0; levels.first().map_or(0, |g| g.len())]);
    }
    if dz.len() < l || levels.len() < l {
        return Err(Error::InvalidConfig(format!(
            "level {l} needs derivative kernels and levels up to order {l}"
        )));
    }
    let n = levels[0].len();
    let mut s = vec![0.0; n];
    for (k, g) in levels.iter().enumerate().take(l) {
        let kern = &dz[l - k - 1].kernel;
        let b = binomial(l, k);
        s.par_chunks_mut(nv).zip(g.par_chunks(nv)).for_each(|(out, cell)| {
            let lg = kern.apply(cell);
            for (o, x) in out.iter_mut().zip(lg) {
                *o += b * x;
            }
        });
    }
    Ok(s)
}

/// Co-evolves levels `0..=l_max` on the base problem's time grid.
pub struct HierarchySolver {
    pub solver: Solver,
    pub dz: Vec<DerivativeKernel>,
    pub cfg: UqConfig,
    jets: Vec<DenseOp>,
}

impl HierarchySolver {
    pub fn new(problem: &Problem, cfg: UqConfig) -> Result<Self> {
        if cfg.l_max > MAX_LEVEL {
            return Err(Error::InvalidConfig(format!(
                "uq.l_max = {} exceeds {MAX_LEVEL}",
                cfg.l_max
            )));
        }
        if problem.potential.is_some_and(|p| p.amplitude != 0.0) {
            return Err(Error::InvalidConfig(
                "the derivative hierarchy runs without an external potential".into(),
            ));
        }
        if !problem.solver.collision || !problem.solver.transport {
            return Err(Error::InvalidConfig("the hierarchy needs transport and collision".into()));
        }
        let solver = problem.solver_at(cfg.z)?;
        let dz = assemble_dz_kernels(&problem.sigma, &problem.space, cfg.z, cfg.l_max, cfg.c_tilde)?;
        let g_jet: Vec<f64> = (0..=cfg.l_max)
            .map(|k| problem.sigma.z_factor_derivative(cfg.z, k))
            .collect();
        if g_jet[0] == 0.0 {
            return Err(Error::InvalidConfig("cross-section vanishes at this z".into()));
        }
        let jets = Semigroup::new(&solver.kernel)?.propagator_jet(0.5 * solver.dt(), &g_jet, cfg.l_max);
        Ok(Self { solver, dz, cfg, jets })
    }

    fn collide(&self, levels: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let nv = self.solver.nv();
        (0..levels.len())
            .map(|m| {
                let mut out = vec![0.0; levels[0].len()];
                for b in 0..=m {
                    let coeff = binomial(m, b);
                    let op = &self.jets[b];
                    out.par_chunks_mut(nv)
                        .zip(levels[m - b].par_chunks(nv))
                        .for_each(|(o, cell)| {
                            let mut tmp = vec![0.0; nv];
                            op.apply_into(cell, &mut tmp);
                            for (x, y) in o.iter_mut().zip(tmp) {
                                *x += coeff * y;
                            }
                        });
                }
                out
            })
            .collect()
    }

    /// One Strang step of every level.
    pub fn step(&self, levels: &mut [KineticState]) {
        let dt = self.solver.dt();
        let g: Vec<Vec<f64>> = levels.iter().map(|s| s.f.clone()).collect();
        let mut u = self.collide(&g);
        for ul in &mut u {
            let mut tmp = vec![0.0; ul.len()];
            self.solver.transport_rhs(ul, &mut tmp);
            for (x, y) in ul.iter_mut().zip(tmp) {
                *x += dt * y;
            }
        }
        let out = self.collide(&u);
        for (s, f) in levels.iter_mut().zip(out) {
            s.f = f;
            s.t += dt;
        }
    }
}

/// Both sides of the with-source entropy inequality and the two source
/// bounds for one level at one record.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct UqEntropyTerms {
    pub level: usize,
    pub t: f64,
    pub norm: f64,
    pub source_norm: f64,
    pub source_bound: f64,
    pub source_ok: bool,
    pub j_source_norm: f64,
    pub j_source_bound: f64,
    pub j_source_ok: bool,
    /// Backward difference of `½‖gˡ‖²`.
    pub t1: Option<f64>,
    /// `−boundary − λ_h‖gˡ⊥‖² + ‖Sˡ‖‖gˡ‖`.
    pub t1_bound: f64,
    pub t1_ok: bool,
}

/// Mean-free part of each level (only level 0 carries mass).
fn deviations(solver: &Solver, levels: &[KineticState]) -> Vec<Vec<f64>> {
    levels
        .iter()
        .enumerate()
        .map(|(l, s)| if l == 0 { solver.deviation(&s.f) } else { s.f.clone() })
        .collect()
}

/// Evaluates the with-source entropy inequality for every level.
/// `prev` holds the previous record's `(t, ‖gˡ‖²)` per level.
pub fn assemble_uq_entropy_terms(
    h: &HierarchySolver,
    levels: &[KineticState],
    prev: Option<(f64, &[f64])>,
    ledger: &ConstantsLedger,
) -> Result<Vec<UqEntropyTerms>> {
    let solver = &h.solver;
    let space = &solver.space;
    let nv = solver.nv();
    let nx = solver.mesh.nx();
    let dx = solver.mesh.dx();
    let dev = deviations(solver, levels);
    let norms: Vec<f64> = dev.iter().map(|g| solver.norm_sq(g).sqrt()).collect();
    let t = levels[0].t;
    let mut out = Vec::with_capacity(levels.len());
    for l in 0..levels.len() {
        let s = build_source(l, &h.dz, &dev, nv)?;
        let source_norm = solver.norm_sq(&s).sqrt();
        let mut j_sq = 0.0;
        for k in 0..nx {
            let j = space.moments(&s[k * nv..(k + 1) * nv]).j[0];
            j_sq += dx * j * j;
        }
        let mut source_bound = 0.0;
        let mut j_bound = 0.0;
        for k in 0..l {
            let d = &h.dz[l - k - 1];
            source_bound += binomial(l, k) * d.operator_norm * norms[k];
            j_bound += binomial(l, k) * d.kernel.constant_cl() * norms[k];
        }
        let g = &dev[l];
        let perp: f64 = (0..nx).map(|k| dx * space.perp_norm_sq(&g[k * nv..(k + 1) * nv])).sum();
        let boundary = boundary_dissipation(space, &solver.bc, Wall::Left, &g[..nv])
            + boundary_dissipation(space, &solver.bc, Wall::Right, &g[(nx - 1) * nv..]);
        let t1_bound = -boundary - ledger.lambda_h * perp + source_norm * norms[l];
        let t1 = prev.map(|(tp, sq)| 0.5 * (norms[l] * norms[l] - sq[l]) / (t - tp));
        let tol = |a: f64, b: f64| SLACK * (1.0 + a.abs() + b.abs());
        out.push(UqEntropyTerms {
            level: l,
            t,
            norm: norms[l],
            source_norm,
            source_bound,
            source_ok: source_norm <= source_bound * (1.0 + 1e-12) + 1e-14 * (1.0 + source_bound),
            j_source_norm: j_sq.sqrt(),
            j_source_bound: j_bound,
            j_source_ok: j_sq.sqrt() <= j_bound * (1.0 + 1e-12) + 1e-14 * (1.0 + j_bound),
            t1,
            t1_bound,
            t1_ok: t1.is_none_or(|v| v <= t1_bound + tol(v, t1_bound)),
        });
    }
    Ok(out)
}

/// Fitted `‖gˡ(t)‖ ≈ C (1+t)ˡ e^{−a t}`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Envelope {
    pub level: usize,
    pub a_fit: f64,
    pub c_fit: f64,
    pub r_squared: f64,
}

/// Constants `a = ω/(2C_η)` and `bˡₖ = C(l,k)(C̃ + C_p C_L)/(2c_η)`.
#[derive(Debug, Clone, Serialize)]
pub struct HierarchyConstants {
    pub a: f64,
    pub b: Vec<Vec<f64>>,
}

pub fn hierarchy_constants(ledger: &ConstantsLedger, c_tilde: f64, l_max: usize) -> HierarchyConstants {
    let e = &ledger.eta;
    let a = e.omega / (2.0 * e.big_c_eta);
    let unit = (c_tilde + ledger.c_p * ledger.c_l) / (2.0 * e.c_eta);
    let b = (0..=l_max)
        .map(|l| (0..l).map(|k| binomial(l, k) * unit).collect())
        .collect();
    HierarchyConstants { a, b }
}

/// Output of [`run_hierarchy`].
#[derive(Debug, Clone, Serialize)]
pub struct HierarchyRun {
    pub dt: f64,
    pub times: Vec<f64>,
    /// `norms[l][r]`: `‖gˡ‖` (level 0 mean-free) at record `r`.
    pub norms: Vec<Vec<f64>>,
    /// `masses[l][r]`.
    pub masses: Vec<Vec<f64>>,
    pub entropy: Vec<Vec<UqEntropyTerms>>,
    pub envelopes: Vec<Envelope>,
    pub dz_norms: Vec<f64>,
    pub dz_within_bound: Vec<bool>,
    pub constants: HierarchyConstants,
    #[serde(skip)]
    pub final_levels: Vec<KineticState>,
    /// Full states of every level at each record, kept when requested.
    #[serde(skip)]
    pub snapshots: Vec<Vec<Vec<f64>>>,
}

/// Runs the hierarchy to `t_end`, recording at the solver cadence.
pub fn run_hierarchy(problem: &Problem, cfg: UqConfig, keep_states: bool) -> Result<HierarchyRun> {
    let h = HierarchySolver::new(problem, cfg)?;
    let solver = &h.solver;
    let ledger = populate_ledger(solver)?;
    let mut levels = initial_levels(problem, solver, &cfg);
    let nl = levels.len();
    let mut run = HierarchyRun {
        dt: solver.dt(),
        times: Vec::new(),
        norms: vec![Vec::new(); nl],
        masses: vec![Vec::new(); nl],
        entropy: Vec::new(),
        envelopes: Vec::new(),
        dz_norms: h.dz.iter().map(|d| d.operator_norm).collect(),
        dz_within_bound: h.dz.iter().map(|d| d.within_bound).collect(),
        constants: hierarchy_constants(&ledger, cfg.c_tilde, cfg.l_max),
        final_levels: Vec::new(),
        snapshots: Vec::new(),
    };
    let mut prev: Option<(f64, Vec<f64>)> = None;
    let mut record = |levels: &[KineticState], run: &mut HierarchyRun| -> Result<()> {
        let terms = assemble_uq_entropy_terms(&h, levels, prev.as_ref().map(|(t, v)| (*t, v.as_slice())), &ledger)?;
        run.times.push(levels[0].t);
        for (l, s) in levels.iter().enumerate() {
            run.norms[l].push(terms[l].norm);
            run.masses[l].push(solver.total_mass(&s.f));
        }
        if keep_states {
            run.snapshots.push(levels.iter().map(|s| s.f.clone()).collect());
        }
        prev = Some((levels[0].t, terms.iter().map(|x| x.norm * x.norm).collect()));
        run.entropy.push(terms);
        Ok(())
    };
    record(&levels, &mut run)?;
    for n in 1..=solver.steps() {
        h.step(&mut levels);
        if levels.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite {
                t: levels[0].t,
                dump: None,
            });
        }
        if n % solver.config.cadence == 0 || n == solver.steps() {
            record(&levels, &mut run)?;
        }
    }
    let t_end = *run.times.last().unwrap_or(&0.0);
    for l in 0..nl {
        if let Ok(env) = fit_envelope(l, &run.times, &run.norms[l], (0.0, t_end)) {
            run.envelopes.push(env);
        }
    }
    run.final_levels = levels;
    Ok(run)
}

/// Fits `ln‖gˡ‖ − l ln(1+t) = ln C − a t` over the window after a 20%
/// transient.
pub fn fit_envelope(level: usize, times: &[f64], norms: &[f64], window: (f64, f64)) -> Result<Envelope> {
    let series: Vec<(f64, f64)> = times
        .iter()
        .zip(norms)
        .map(|(&t, &n)| (t, n / (1.0 + t).powi(level as i32)))
        .collect();
    let fit = fit_decay(&series, window, 0.2)?;
    Ok(Envelope {
        level,
        a_fit: fit.tau_fit,
        c_fit: fit.c_fit,
        r_squared: fit.r_squared,
    })
}

/// Central finite differences in `z` of independent base solves.
/// Returns `(t, ∂ᶻˡ f(t))` at each record.
pub fn fd_oracle(problem: &Problem, cfg: &UqConfig, delta_z: f64, l: usize) -> Result<Vec<(f64, Vec<f64>)>> {
    if l > 2 {
        return Err(Error::Domain(format!("finite-difference oracle supports l <= 2, got {l}")));
    }
    if !(1e-3..=1e-1).contains(&delta_z) {
        return Err(Error::Domain(format!("delta_z must be in [1e-3, 1e-1], got {delta_z}")));
    }
    let offsets: Vec<i32> = if l == 0 { vec![0] } else { (-(l as i32)..=l as i32).collect() };
    let runs = offsets
        .iter()
        .map(|&m| {
            let z = cfg.z + m as f64 * delta_z;
            let solver = problem.solver_at(z)?;
            let mut state = initial_state_at(problem, &solver, cfg.z_init, z);
            let mut records = Vec::new();
            solver.run(&mut state, |s| {
                records.push((s.t, s.f.clone()));
                Ok(())
            })?;
            Ok(records)
        })
        .collect::<Result<Vec<_>>>()?;
    let weights: Vec<f64> = match l {
        0 => vec![1.0],
        1 => vec![-0.5 / delta_z, 0.0, 0.5 / delta_z],
        _ => {
            let d2 = delta_z * delta_z;
            vec![0.0, 1.0 / d2, -2.0 / d2, 1.0 / d2, 0.0]
        }
    };
    let n_rec = runs[0].len();
    Ok((0..n_rec)
        .map(|r| {
            let t = runs[0][r].0;
            let mut acc = vec![0.0; runs[0][r].1.len()];
            for (w, run) in weights.iter().zip(&runs) {
                if *w != 0.0 {
                    for (a, x) in acc.iter_mut().zip(&run[r].1) {
                        *a += w * x;
                    }
                }
            }
            (t, acc)
        })
        .collect())
}

/// Polynomial envelopes `Gˡ(t) = hˡ(0) + Σ_k bˡₖ ∫₀ᵗ Gᵏ`.
#[derive(Debug, Clone, Serialize)]
pub struct RecursionBound {
    pub a: f64,
    pub b: Vec<Vec<f64>>,
    pub h0: Vec<f64>,
    /// `coeffs[l][p]` multiplies `tᵖ`.
    pub coeffs: Vec<Vec<f64>>,
}

impl RecursionBound {
    pub fn g(&self, l: usize, t: f64) -> f64 {
        self.coeffs[l].iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    /// `e^{−at} Gˡ(t)`.
    pub fn bound(&self, l: usize, t: f64) -> f64 {
        (-self.a * t).exp() * self.g(l, t)
    }
}

/// Builds the envelopes by exact polynomial integration. `b[l]` has `l`
/// entries `bˡ₀..bˡ_{l−1}`.
pub fn recursion_g(a: f64, b: &[Vec<f64>], h0: &[f64]) -> Result<RecursionBound> {
    if !(a > 0.0) {
        return Err(Error::Domain(format!("recursion rate a must be positive, got {a}")));
    }
    if b.len() != h0.len() || b.iter().enumerate().any(|(l, row)| row.len() != l) {
        return Err(Error::Domain("b[l] must have l entries for every level".into()));
    }
    if h0.iter().any(|x| !(*x >= 0.0)) || b.iter().flatten().any(|x| !(*x >= 0.0)) {
        return Err(Error::Domain("recursion inputs must be nonnegative".into()));
    }
    let mut coeffs: Vec<Vec<f64>> = Vec::with_capacity(h0.len());
    for l in 0..h0.len() {
        let mut c = vec![0.0; l + 1];
        c[0] = h0[l];
        for k in 0..l {
            for (p, ck) in coeffs[k].iter().enumerate() {
                c[p + 1] += b[l][k] * ck / (p + 1) as f64;
            }
        }
        coeffs.push(c);
    }
    Ok(RecursionBound {
        a,
        b: b.to_vec(),
        h0: h0.to_vec(),
        coeffs,
    })
}

/// Outcome of one comparison-ODE run against the envelopes.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LemmaCheck {
    pub ok: bool,
    /// Largest `hˡ(t) / (e^{−at}Gˡ(t))` over the grid.
    pub max_ratio: f64,
}

/// Integrates `hˡ' = −(a + εₗ)hˡ + θₗ Σₖ bˡₖ hᵏ` with RK4 and checks
/// `hˡ(t) ≤ e^{−at}Gˡ(t)(1 + 1e−8)` on 1000 points of `[0, t_end]`.
/// `θ = 1, ε = 0` is the equality case.
pub fn verify_recursion_lemma(bound: &RecursionBound, t_end: f64, theta: &[f64], eps: &[f64]) -> Result<LemmaCheck> {
    let n = bound.h0.len();
    if theta.len() != n || eps.len() != n {
        return Err(Error::Domain("theta and eps need one entry per level".into()));
    }
    let rhs = |h: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|l| {
                let src: f64 = (0..l).map(|k| bound.b[l][k] * h[k]).sum();
                -(bound.a + eps[l]) * h[l] + theta[l] * src
            })
            .collect()
    };
    let points = 1000;
    let sub = 20;
    let dt = t_end / (points * sub) as f64;
    let mut h = bound.h0.clone();
    let mut max_ratio: f64 = 0.0;
    let mut ok = true;
    for p in 1..=points {
        for _ in 0..sub {
            let k1 = rhs(&h);
            let y: Vec<f64> = (0..n).map(|i| h[i] + 0.5 * dt * k1[i]).collect();
            let k2 = rhs(&y);
            let y: Vec<f64> = (0..n).map(|i| h[i] + 0.5 * dt * k2[i]).collect();
            let k3 = rhs(&y);
            let y: Vec<f64> = (0..n).map(|i| h[i] + dt * k3[i]).collect();
            let k4 = rhs(&y);
            for i in 0..n {
                h[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure("comparison ODE diverged".into()));
        }
        let t = p as f64 * t_end / points as f64;
        for (l, hl) in h.iter().enumerate() {
            let b = bound.bound(l, t);
            if b > 0.0 {
                max_ratio = max_ratio.max(hl / b);
            }
            if *hl > b * (1.0 + 1e-8) + 1e-300 {
                ok = false;
            }
        }
    }
    Ok(LemmaCheck { ok, max_ratio })
}

/// Random `(a, b, h0)` instance with up to `MAX_LEVEL + 1` levels and a
/// random sub-equality perturbation.
pub fn random_recursion_instance(rng: &mut ChaCha8Rng) -> (RecursionBound, Vec<f64>, Vec<f64>) {
    let n = rng.random_range(1..=MAX_LEVEL + 1);
    let a = rng.random_range(0.1..2.0);
    let b: Vec<Vec<f64>> = (0..n).map(|l| (0..l).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
    let h0: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let equality = rng.random_bool(0.3);
    let theta: Vec<f64> = (0..n).map(|_| if equality { 1.0 } else { rng.random_range(0.0..1.0) }).collect();
    let eps: Vec<f64> = (0..n).map(|_| if equality { 0.0 } else { rng.random_range(0.0..0.5) }).collect();
    let bound = recursion_g(a, &b, &h0).expect("valid random instance");
    (bound, theta, eps)
}

/// Runs the lemma check on `count` seeded random instances; returns the
/// number that passed.
pub fn verify_random_instances(count: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut passed = 0;
    for _ in 0..count {
        let (bound, theta, eps) = random_recursion_instance(&mut rng);
        if verify_recursion_lemma(&bound, 10.0, &theta, &eps)?.ok {
            passed += 1;
        }
    }
    Ok(passed)
}
