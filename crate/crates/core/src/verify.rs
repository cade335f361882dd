//! One-command property suites on pinned desk-scale configurations.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::boundary::{boundary_dissipation, boundary_flux, MaxwellBc, SlabMesh, Wall};
use crate::collision::{assemble_kernel, CollisionKernel, CrossSectionSpec, ZCoupling};
use crate::config::RunConfig;
use crate::diagnostics::run_with_diagnostics;
use crate::error::{Error, Result};
use crate::kl::{
    mercer_errors, nystrom_eig, orthonormality_defect, project_coeffs, sample_paths, synthesize, truncate,
    verify_orthogonality, CoefficientLaw, CovarianceKernel,
};
use crate::poisson::{solve_poisson_neumann, PotentialFamily};
use crate::scenario::{poisson_check, run_case, CheckTally};
use crate::uq::{fd_oracle, recursion_g, run_hierarchy, verify_random_instances, verify_recursion_lemma, UqConfig};
use crate::velocity::{GridKind, VelocitySpace};

pub const SUITES: [&str; 7] = ["collision", "bc", "poisson", "solver", "diagnostics", "uq", "kl"];

#[derive(Debug, Clone, Serialize)]
pub struct Property {
    pub suite: String,
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub suites: Vec<String>,
    pub passed: usize,
    pub failed: usize,
    pub properties: Vec<Property>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.failed == 0
    }

    pub fn failures(&self) -> impl Iterator<Item = &Property> {
        self.properties.iter().filter(|p| !p.ok)
    }
}

/// Test-only perturbations used as negative controls.
#[derive(Debug, Clone, Copy, Default)]
pub struct Fixtures {
    /// Replace `L` by `−L` in the collision suite.
    pub flip_collision_sign: bool,
}

/// The pinned base scenario: `nx = nv = 16`, `σ ≡ 1`, `c = 0.5`, `t ∈ [0, 8]`.
pub fn base_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.mesh.nx = 16;
    cfg.velocity.n = 16;
    cfg.velocity.vmax = 6.0;
    cfg.velocity.grid = GridKind::UniformMidpoint;
    cfg.bc.c = 0.5;
    cfg.solver.t_end = 8.0;
    cfg
}

/// Base scenario with the cosine well of amplitude 0.5 and mass-free data.
pub fn potential_config() -> RunConfig {
    let mut cfg = base_config();
    cfg.potential.family = PotentialFamily::Cosine;
    cfg.potential.amplitude = 0.5;
    cfg.solver.background = 0.0;
    cfg
}

/// Base scenario in two velocity dimensions, where the tangential boundary
/// term is active.
pub fn two_d_config() -> RunConfig {
    let mut cfg = base_config();
    cfg.mesh.nx = 8;
    cfg.velocity.dim = 2;
    cfg.velocity.n = 8;
    cfg.solver.t_end = 4.0;
    cfg
}

/// Affine `z`-coupling with coefficient 0.3.
pub fn uq_config(t_end: f64) -> RunConfig {
    let mut cfg = base_config();
    cfg.sigma.z_coupling = ZCoupling::Affine;
    cfg.sigma.z_coeff = 0.3;
    cfg.solver.t_end = t_end;
    cfg.uq.l_max = 2;
    cfg
}

struct Recorder {
    suite: &'static str,
    out: Vec<Property>,
}

impl Recorder {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        self.out.push(Property {
            suite: self.suite.to_string(),
            name: format!("{}.{name}", self.suite),
            ok,
            detail,
        });
    }

    fn fail(&mut self, name: &str, e: Error) {
        self.check(name, false, format!("error: {e}"));
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// `√M·ξ` with uniform `ξ`: an `O(1)` vector in `L²(dν)`.
fn weighted_random(rng: &mut ChaCha8Rng, space: &VelocitySpace) -> Vec<f64> {
    space.sqrt_m().iter().map(|s| s * rng.random_range(-1.0..1.0)).collect()
}

fn space_1d(n: usize) -> Result<Arc<VelocitySpace>> {
    Ok(Arc::new(VelocitySpace::build(1, n, 6.0, GridKind::UniformMidpoint)?))
}

fn collision_suite(r: &mut Recorder, fx: Fixtures) -> Result<()> {
    let space = space_1d(16)?;
    let mut kernel = assemble_kernel(&CrossSectionSpec::constant(1.0), &space, 0.0)?;
    if fx.flip_collision_sign {
        let neg: Vec<f64> = kernel.sigma().iter().map(|s| -s).collect();
        kernel = CollisionKernel::from_sigma(space.clone(), neg, 0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let lm = kernel.apply(space.m());
    let lm_norm = space.norm_dnu(&lm);
    r.check("annihilates_equilibrium", lm_norm <= 1e-13, format!("‖L(M)‖ = {lm_norm:.3e}"));

    let mut sa: f64 = 0.0;
    let mut mass: f64 = 0.0;
    let mut identity = true;
    let mut dissipative = true;
    for _ in 0..100 {
        let f = weighted_random(&mut rng, &space);
        let g = weighted_random(&mut rng, &space);
        let (lf, lg) = (kernel.apply(&f), kernel.apply(&g));
        let a = space.inner_dnu(&lf, &g);
        let b = space.inner_dnu(&f, &lg);
        let scale = space.norm_dnu(&lf) * space.norm_dnu(&g) + space.norm_dnu(&f) * space.norm_dnu(&lg);
        sa = sa.max((a - b).abs() / scale.max(1e-300));
        mass = mass.max(space.mass(&kernel.apply(&f)).abs());
        let c = kernel.coercivity_check(&f);
        identity &= c.identity_ok;
        dissipative &= c.lhs <= 1e-14;
    }
    r.check("self_adjoint", sa <= 1e-12, format!("max relative asymmetry {sa:.3e}"));
    r.check("conserves_mass", mass <= 1e-13, format!("max |Σ w Lf| = {mass:.3e}"));
    r.check("h_theorem_identity", identity, "⟨Lf,f⟩ equals the quadratic form to 1e-10".into());
    r.check("dissipative", dissipative, "⟨Lf,f⟩ ≤ 0 on 100 seeded f".into());

    let gap = kernel.spectral_gap()?;
    r.check("unit_kernel_gap", (gap - 1.0).abs() <= 1e-10, format!("λ_h = {gap:.12}"));
    let mut coercive = gap > 0.0;
    for _ in 0..100 {
        let f = weighted_random(&mut rng, &space);
        let lhs = space.inner_dnu(&kernel.apply(&f), &f);
        let rhs = -gap * space.perp_norm_sq(&f);
        coercive &= lhs <= rhs + 1e-12 * (1.0 + rhs.abs());
    }
    r.check("coercive", coercive, format!("⟨Lf,f⟩ ≤ −λ_h‖f⊥‖² with λ_h = {gap:.6}"));

    let bump = assemble_kernel(&CrossSectionSpec::gaussian_bump(1.0, 0.5, 1.5), &space, 0.0)?;
    let bgap = bump.spectral_gap()?;
    let mut ok = bgap >= bump.lambda_bound() * (1.0 - 1e-12);
    for _ in 0..100 {
        ok &= bump.coercivity_check(&weighted_random(&mut rng, &space)).ok;
    }
    r.check(
        "bump_gap_exceeds_floor",
        ok,
        format!("λ_h = {bgap:.6} against floor {:.6}", bump.lambda_bound()),
    );
    Ok(())
}

fn bc_suite(r: &mut Recorder) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for dim in [1, 2] {
        let space = VelocitySpace::build(dim, 8, 6.0, GridKind::UniformMidpoint)?;
        let n = space.len();
        let mut flux: f64 = 0.0;
        let mut diss_ok = true;
        let mut fixed: f64 = 0.0;
        for c in [0.0, 0.5, 1.0] {
            let bc = MaxwellBc::new(&space, c)?;
            for wall in Wall::BOTH {
                let wm = bc.wall_values(&space, wall, space.m());
                fixed = fixed.max(wm.iter().zip(space.m()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
                for _ in 0..20 {
                    let trace: Vec<f64> = random_vec(&mut rng, n).iter().map(|x| x.abs()).collect();
                    let wv = bc.wall_values(&space, wall, &trace);
                    let scale: f64 = trace.iter().map(|x| x.abs()).sum::<f64>();
                    flux = flux.max(boundary_flux(&space, wall, &wv).abs() / scale);
                    let d = boundary_dissipation(&space, &bc, wall, &trace);
                    diss_ok &= d >= -1e-14 && (c < 1.0 || d.abs() <= 1e-14);
                }
            }
        }
        r.check(&format!("null_flux_{dim}d"), flux <= 1e-14, format!("max |flux| / |trace| = {flux:.3e}"));
        r.check(
            &format!("dissipation_sign_{dim}d"),
            diss_ok,
            "boundary dissipation ≥ 0, zero for c = 1".into(),
        );
        r.check(
            &format!("maxwellian_fixed_{dim}d"),
            fixed <= 1e-14,
            format!("max |BC(M) − M| = {fixed:.3e}"),
        );
    }
    Ok(())
}

fn poisson_suite(r: &mut Recorder) -> Result<()> {
    let pc = poisson_check(1.0, None)?;
    r.check(
        "manufactured_second_order",
        pc.ratios.iter().all(|x| (3.6..=4.4).contains(x)),
        format!("error ratios {:?}", pc.ratios),
    );
    r.check(
        "poincare_limit",
        (pc.cp_h_256 - pc.cp_exact).abs() <= 1e-4,
        format!("C_p,h(256) = {:.8}, Lx/π = {:.8}", pc.cp_h_256, pc.cp_exact),
    );
    let mesh = SlabMesh::new(64, 2.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut rho = random_vec(&mut rng, 64);
    let mean = rho.iter().sum::<f64>() / 64.0;
    rho.iter_mut().for_each(|x| *x -= mean);
    let field = solve_poisson_neumann(&rho, &mesh)?;
    r.check("residual", field.residual <= 1e-12, format!("max residual {:.3e}", field.residual));
    let gauge = field.phi.iter().sum::<f64>().abs();
    r.check(
        "zero_mean_gauge",
        gauge <= 1e-12 && field.grad[0] == 0.0 && field.grad[64] == 0.0,
        format!("|Σφ| = {gauge:.3e}"),
    );
    let bad = solve_poisson_neumann(&vec![1.0; 64], &mesh);
    r.check(
        "incompatible_source_rejected",
        matches!(bad, Err(Error::Compatibility { .. })),
        "constant density rejected".into(),
    );
    Ok(())
}

fn solver_and_diagnostics(r_solver: &mut Recorder, r_diag: &mut Recorder, want_solver: bool, want_diag: bool) -> Result<()> {
    let base = run_case(&base_config(), None)?;
    let s = &base.summary;
    if want_solver {
        for c in [0.0, 0.5, 1.0] {
            let mut cfg = base_config();
            cfg.bc.c = c;
            cfg.solver.t_end = 2.0;
            cfg.diagnostics.entropy = false;
            cfg.diagnostics.oracle = false;
            let st = run_case(&cfg, None)?.summary.stats;
            r_solver.check(
                &format!("mass_conservation_c{c}"),
                st.max_mass_drift <= 1e-10,
                format!("relative drift {:.3e}", st.max_mass_drift),
            );
            r_solver.check(
                &format!("null_wall_flux_c{c}"),
                st.max_wall_flux <= 1e-12,
                format!("max flux / ‖f‖ = {:.3e}", st.max_wall_flux),
            );
        }
        r_solver.check(
            "monotone_decay",
            s.stats.max_norm_increase <= 1e-8,
            format!("largest relative increase {:.3e}", s.stats.max_norm_increase),
        );
        let rel = s.oracle_rel_error.unwrap_or(f64::INFINITY);
        r_solver.check(
            "oracle_rate",
            rel.abs() <= 0.05,
            format!("τ_fit / τ_h − 1 = {rel:+.4}"),
        );
        let pot = run_case(&potential_config(), None)?;
        let prel = pot.summary.oracle_rel_error.unwrap_or(f64::INFINITY);
        r_solver.check(
            "potential_oracle_rate",
            prel.abs() <= 0.10 && pot.summary.norm_fit.is_some_and(|f| f.tau_fit > 0.0),
            format!("τ_fit / τ_h − 1 = {prel:+.4}"),
        );
        if want_diag {
            let t = pot.summary.checks.unwrap_or_default();
            r_diag.check(
                "potential_identity_t3_t6",
                t.t3_identity == 0,
                format!("{} of {} records off", t.t3_identity, t.records),
            );
            r_diag.check("potential_all_terms", t.all_ok(), format!("{t:?}"));
        }
    }
    if want_diag {
        let t: CheckTally = s.checks.unwrap_or_default();
        let field = |name: &str, n: usize| (name.to_string(), n);
        for (name, n) in [
            field("equivalence", t.equivalence),
            field("t1", t.t1),
            field("t2_normal", t.t2_normal),
            field("t3_identity", t.t3_identity),
            field("t4", t.t4),
            field("t5", t.t5),
            field("gronwall", t.gronwall),
        ] {
            r_diag.check(&name, n == 0, format!("{n} of {} records fail", t.records));
        }
        let evn = s.entropy_vs_norm.unwrap_or(f64::INFINITY);
        r_diag.check("entropy_rate_matches_norm_rate", evn <= 0.02, format!("|τ_H/τ − 1| = {evn:.4}"));
        let two = two_d_config().problem()?;
        let solver = two.solver()?;
        let mut state = solver.initial_state(two.initial);
        let (_, reports, _) = run_with_diagnostics(&solver, &mut state)?;
        let t2 = CheckTally::from_reports(&reports);
        let active = reports.iter().any(|r| r.breakdown.t2_boundary.bound > 0.0);
        r_diag.check(
            "t2_boundary_2d",
            t2.t2_boundary == 0 && active,
            format!("{} of {} records fail", t2.t2_boundary, t2.records),
        );
        r_diag.check("all_terms_2d", t2.all_ok(), format!("{t2:?}"));
    }
    Ok(())
}

fn uq_suite(r: &mut Recorder) -> Result<()> {
    let cfg = uq_config(1.0);
    let problem = cfg.problem()?;
    let u = UqConfig {
        l_max: 1,
        ..cfg.uq_config()
    };
    let run = run_hierarchy(&problem, u, false)?;
    let fd = fd_oracle(&problem, &u, 1e-2, 1)?;
    let g = &run.final_levels[1].f;
    let g_fd = &fd.last().expect("records").1;
    let gap = g.iter().zip(g_fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        / g.iter().map(|a| a * a).sum::<f64>().sqrt();
    r.check("fd_agreement", gap <= 1e-3, format!("relative L² gap {gap:.3e} at t = 1"));

    let mut dec = uq_config(1.0);
    dec.sigma.z_coupling = ZCoupling::None;
    let dr = run_hierarchy(&dec.problem()?, dec.uq_config(), false)?;
    let worst = dr.norms[1..].iter().flatten().copied().fold(0.0, f64::max);
    r.check("decoupled_levels_zero", worst <= 1e-13, format!("max ‖gˡ‖ = {worst:.3e}"));

    let long = uq_config(8.0);
    let lr = run_hierarchy(&long.problem()?, long.uq_config(), false)?;
    let drift = lr
        .masses
        .iter()
        .map(|m| m.iter().map(|x| (x - m[0]).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    r.check("level_mass", drift <= 1e-10, format!("max mass change {drift:.3e}"));
    let flat: Vec<_> = lr.entropy.iter().flatten().collect();
    r.check(
        "source_bounds",
        flat.iter().all(|e| e.source_ok && e.j_source_ok),
        format!("{} evaluations", flat.len()),
    );
    r.check(
        "entropy_with_source",
        flat.iter().all(|e| e.t1_ok),
        format!("{} evaluations", flat.len()),
    );
    let pos = lr.envelopes.len() == lr.norms.len() && lr.envelopes.iter().all(|e| e.a_fit > 0.0);
    r.check(
        "envelope_decay",
        pos,
        format!("a_fit = {:?}", lr.envelopes.iter().map(|e| e.a_fit).collect::<Vec<_>>()),
    );
    let passed = verify_random_instances(100, 2024)?;
    r.check("recursion_lemma_random", passed == 100, format!("{passed} / 100 instances"));
    let eq = recursion_g(1.0, &[vec![], vec![1.0], vec![1.0, 1.0]], &[1.0, 0.0, 0.0])?;
    let chk = verify_recursion_lemma(&eq, 5.0, &[1.0; 3], &[0.0; 3])?;
    r.check(
        "recursion_equality_tight",
        chk.ok && (chk.max_ratio - 1.0).abs() <= 1e-8,
        format!("max h/(e^(−at)G) = {:.12}", chk.max_ratio),
    );
    Ok(())
}

fn kl_suite(r: &mut Recorder, seed: u64) -> Result<()> {
    use std::f64::consts::PI;
    let kernel = CovarianceKernel::brownian(1.0);
    let full = nystrom_eig(&kernel, 512)?;
    let worst = (1..=5)
        .map(|k| (full.eigenvalues[k - 1] * ((k as f64 - 0.5) * PI).powi(2) - 1.0).abs())
        .fold(0.0, f64::max);
    r.check("brownian_eigenvalues", worst <= 0.01, format!("max relative error {worst:.2e}"));
    let sup = full
        .grid
        .iter()
        .zip(&full.eigenfunctions[0])
        .map(|(t, p)| (p - 2f64.sqrt() * (PI * t / 2.0).sin()).abs())
        .fold(0.0, f64::max);
    r.check("brownian_psi1", sup <= 1e-2, format!("sup error {sup:.2e}"));
    let basis = truncate(&full, 0.95)?;
    let defect = orthonormality_defect(&basis);
    r.check("orthonormality", defect <= 1e-10, format!("max defect {defect:.2e}"));
    let c: Vec<f64> = (0..basis.d).map(|i| (1.3 * i as f64).cos()).collect();
    let back = project_coeffs(&synthesize(&basis, &c), &basis)?;
    let rt = c.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    r.check("round_trip", rt <= 1e-10, format!("max error {rt:.2e}"));
    r.check(
        "determinism",
        sample_paths(&basis, 64, seed) == sample_paths(&basis, 64, seed),
        "fixed seed reproduces paths".into(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mono = true;
    for _ in 0..10 {
        let a = rng.random_range(0..512);
        let b = rng.random_range(0..512);
        let e = mercer_errors(&kernel, &full, a, b, 64);
        mono &= e.first() >= e.last();
    }
    r.check("mercer_partial_sums", mono, "error at d = 64 not above d = 1 at 10 pairs".into());
    let five = truncate(&full, 1.0).map(|mut b| {
        b.d = 5;
        b.eigenvalues.truncate(5);
        b.eigenfunctions.truncate(5);
        b
    })?;
    let rep = verify_orthogonality(&five, CoefficientLaw::Gaussian, 100_000, seed)?;
    r.check(
        "gram_offdiagonal",
        rep.max_offdiag <= 0.05 && rep.ok,
        format!("max normalized off-diagonal {:.4}", rep.max_offdiag),
    );
    let bad = verify_orthogonality(&five, CoefficientLaw::Correlated { rho: 0.5 }, 10_000, seed)?;
    r.check("gram_detects_correlation", !bad.ok, format!("{} flags", bad.flags.len()));
    Ok(())
}

/// Runs the named suites (`"all"` selects every suite).
pub fn verify(selector: &[String], fixtures: Fixtures) -> Result<VerifyReport> {
    let mut chosen: Vec<&str> = Vec::new();
    for s in selector {
        if s == "all" {
            chosen = SUITES.to_vec();
            break;
        }
        let known = SUITES
            .iter()
            .find(|k| **k == s.as_str())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown suite `{s}`; expected one of {SUITES:?} or all")))?;
        if !chosen.contains(known) {
            chosen.push(known);
        }
    }
    if chosen.is_empty() {
        chosen = SUITES.to_vec();
    }
    let mut props = Vec::new();
    let run = |suite: &'static str, f: &mut dyn FnMut(&mut Recorder) -> Result<()>, props: &mut Vec<Property>| {
        let mut r = Recorder {
            suite,
            out: Vec::new(),
        };
        if let Err(e) = f(&mut r) {
            r.fail("suite", e);
        }
        props.extend(r.out);
    };
    for suite in SUITES.iter().filter(|s| chosen.contains(s)) {
        match *suite {
            "collision" => run("collision", &mut |r| collision_suite(r, fixtures), &mut props),
            "bc" => run("bc", &mut bc_suite, &mut props),
            "poisson" => run("poisson", &mut poisson_suite, &mut props),
            "solver" => {
                let want_diag = chosen.contains(&"diagnostics");
                let mut rs = Recorder {
                    suite: "solver",
                    out: Vec::new(),
                };
                let mut rd = Recorder {
                    suite: "diagnostics",
                    out: Vec::new(),
                };
                if let Err(e) = solver_and_diagnostics(&mut rs, &mut rd, true, want_diag) {
                    rs.fail("suite", e);
                }
                props.extend(rs.out);
                props.extend(rd.out);
            }
            "diagnostics" if !chosen.contains(&"solver") => {
                let mut rs = Recorder {
                    suite: "solver",
                    out: Vec::new(),
                };
                let mut rd = Recorder {
                    suite: "diagnostics",
                    out: Vec::new(),
                };
                if let Err(e) = solver_and_diagnostics(&mut rs, &mut rd, false, true) {
                    rd.fail("suite", e);
                }
                props.extend(rd.out);
            }
            "uq" => run("uq", &mut uq_suite, &mut props),
            "kl" => run("kl", &mut |r| kl_suite(r, 7), &mut props),
            _ => {}
        }
    }
    let failed = props.iter().filter(|p| !p.ok).count();
    Ok(VerifyReport {
        suites: chosen.iter().map(|s| s.to_string()).collect(),
        passed: props.len() - failed,
        failed,
        properties: props,
    })
}
