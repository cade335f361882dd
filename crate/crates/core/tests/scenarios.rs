//! End-to-end scenario runs through the library entry points.

use std::fs;

use kinetic_core::config::RunConfig;
use kinetic_core::scenario::{gap_case, kl_case, poisson_check, run_case, uq_case, with_workers, STEP_COLUMNS};
use kinetic_core::verify::{base_config, uq_config};
use kinetic_core::Error;

fn short_base() -> RunConfig {
    let mut cfg = base_config();
    cfg.solver.t_end = 1.0;
    cfg
}

#[test]
fn run_case_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_case(&short_base(), Some(dir.path())).unwrap();
    for name in ["config.echo", "ledger.json", "steps.csv", "log_norms.csv", "summary.json"] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    let steps = fs::read_to_string(dir.path().join("steps.csv")).unwrap();
    let header: Vec<&str> = steps.lines().next().unwrap().split(',').collect();
    assert_eq!(header, STEP_COLUMNS);
    assert_eq!(steps.lines().count(), o.times.len() + 1);
    assert!(o.summary.stats.max_mass_drift < 1e-10);
    assert!(o.summary.checks.unwrap().all_ok());

    let echoed = RunConfig::from_toml_str(&fs::read_to_string(dir.path().join("config.echo")).unwrap(), dir.path()).unwrap();
    assert_eq!(echoed.echo(), short_base().echo());
}

#[test]
fn worker_count_does_not_change_bytes() {
    let cfg = short_base();
    let mut outputs = Vec::new();
    for threads in [1, 3] {
        let dir = tempfile::tempdir().unwrap();
        with_workers(threads, || run_case(&cfg, Some(dir.path()))).unwrap().unwrap();
        outputs.push(fs::read(dir.path().join("steps.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn gap_matches_run_oracle() {
    let cfg = short_base();
    let g = gap_case(&cfg, None).unwrap();
    let o = run_case(&cfg, None).unwrap();
    assert!(g.tau_h > 0.0);
    assert_eq!(Some(g.tau_h), o.summary.oracle_tau);
}

#[test]
fn uq_levels_agree_with_finite_differences() {
    let mut cfg = uq_config(2.0);
    cfg.uq.fd_delta = Some(1e-2);
    let dir = tempfile::tempdir().unwrap();
    let s = uq_case(&cfg, Some(dir.path())).unwrap();
    assert!(dir.path().join("uq_norms.csv").is_file());
    assert_eq!(s.fd.len(), 2);
    for fd in &s.fd {
        assert!(fd.max_gap < 1e-3, "level {} gap {}", fd.level, fd.max_gap);
    }
    assert!(s.lemma.ok);
    assert!(s.mass_drift.iter().all(|d| d.abs() < 1e-10));
}

#[test]
fn uq_rejects_too_many_levels() {
    let mut cfg = uq_config(1.0);
    cfg.uq.l_max = 9;
    assert!(uq_case(&cfg, None).is_err());
}

#[test]
fn kl_brownian_recovers_leading_eigenvalues() {
    let mut cfg = RunConfig::default();
    cfg.kl.n = 128;
    cfg.kl.samples = 10_000;
    let dir = tempfile::tempdir().unwrap();
    let s = kl_case(&cfg, Some(dir.path())).unwrap();
    for (k, lam) in s.eigenvalues.iter().enumerate() {
        let exact = 1.0 / ((k as f64 + 0.5) * std::f64::consts::PI).powi(2);
        assert!((lam - exact).abs() < 1e-3 * exact.max(1e-2), "k {k}: {lam} vs {exact}");
    }
    assert!(s.gram.ok);
    for name in ["kl_eigenvalues.csv", "kl_eigenfunctions.csv", "kl_gram.json"] {
        assert!(dir.path().join(name).is_file());
    }
}

#[test]
fn poisson_check_is_second_order() {
    let s = poisson_check(1.0, None).unwrap();
    assert!(s.ok);
    assert!(s.ratios.iter().all(|r| (r - 4.0).abs() < 0.1));
}

#[test]
fn invalid_config_lists_every_violation() {
    let mut cfg = RunConfig::default();
    cfg.mesh.nx = 1;
    cfg.bc.c = 2.0;
    match run_case(&cfg, None) {
        Err(Error::ConfigViolations(v)) => assert!(v.len() >= 2, "{v:?}"),
        other => panic!("expected violations, got {:?}", other.map(|_| ())),
    }
}
