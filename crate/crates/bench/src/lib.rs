//! Pinned inputs shared by the criterion benches.

use kinetic_core::verify::base_config;
use kinetic_core::{KineticState, Result, Solver};

/// Base-scenario solver at `nx` cells and `n` velocity nodes, with its
/// initial state.
pub fn base_solver(nx: usize, n: usize) -> Result<(Solver, KineticState)> {
    let mut cfg = base_config();
    cfg.mesh.nx = nx;
    cfg.velocity.n = n;
    let problem = cfg.problem()?;
    let solver = problem.solver()?;
    let state = solver.initial_state(problem.initial);
    Ok((solver, state))
}

/// Smooth mean-free density on `nx` cells.
pub fn density(nx: usize) -> Vec<f64> {
    (0..nx)
        .map(|k| (std::f64::consts::PI * (k as f64 + 0.5) / nx as f64).cos())
        .collect()
}
