//! Neumann Poisson problem `−φ'' = ρ` on the slab, the external potential
//! `V` with its weighted measure, and the discrete Poincaré, regularity and
//! trace constants.
//!
//! `φ` lives on cell centres and `∂ₓφ` on faces; both wall faces carry a
//! zero gradient.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::boundary::SlabMesh;
use crate::error::{Error, Result};
use crate::linalg;

/// Largest mesh for which the dense constant computations are attempted.
pub const MAX_DENSE_CELLS: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct PhiField {
    pub phi: Vec<f64>,
    /// Face gradient, `nx + 1` entries; the first and last are the walls.
    pub grad: Vec<f64>,
    /// `max_k |−(Dφ)'_k − ρ̂_k|` against the mean-free density.
    pub residual: f64,
}

impl PhiField {
    /// Average of the two face gradients of each cell.
    pub fn grad_cells(&self) -> Vec<f64> {
        self.grad.windows(2).map(|g| 0.5 * (g[0] + g[1])).collect()
    }
}

fn l2(dx: f64, v: &[f64]) -> f64 {
    (dx * v.iter().map(|x| x * x).sum::<f64>()).sqrt()
}

/// Solves `−φ'' = ρ` with `φ' = 0` at both walls and `Σ φ dx = 0`.
///
/// The tridiagonal system is solved directly by two cumulative sums: the
/// face gradient is `−dx Σ_{m≤k} ρ_m` and `φ` follows by summing gradients.
pub fn solve_poisson_neumann(rho: &[f64], mesh: &SlabMesh) -> Result<PhiField> {
    let nx = mesh.nx();
    let dx = mesh.dx();
    if rho.len() != nx {
        return Err(Error::InvalidConfig(format!(
            "density has {} cells, mesh has {nx}",
            rho.len()
        )));
    }
    let total: f64 = rho.iter().sum::<f64>() * dx;
    let norm = l2(dx, rho);
    let tol = 1e-10 * norm;
    if total.abs() > tol && total.abs() > 1e-300 {
        return Err(Error::Compatibility {
            mean: total,
            tol,
        });
    }
    let mean = total / mesh.lx();
    let rho_hat: Vec<f64> = rho.iter().map(|r| r - mean).collect();

    let mut grad = vec![0.0; nx + 1];
    let mut acc = 0.0;
    for k in 0..nx - 1 {
        acc += rho_hat[k];
        grad[k + 1] = -dx * acc;
    }
    let mut phi = vec![0.0; nx];
    for k in 1..nx {
        phi[k] = phi[k - 1] + dx * grad[k];
    }
    let phi_mean = phi.iter().sum::<f64>() / nx as f64;
    for p in &mut phi {
        *p -= phi_mean;
    }
    // Recompute the gradient from the gauged potential so that the stored
    // field is exactly the discrete gradient of `phi`.
    for k in 1..nx {
        grad[k] = (phi[k] - phi[k - 1]) / dx;
    }
    let mut residual: f64 = 0.0;
    for k in 0..nx {
        let lap = -(grad[k + 1] - grad[k]) / dx;
        residual = residual.max((lap - rho_hat[k]).abs());
    }
    Ok(PhiField { phi, grad, residual })
}

/// Smallest nonzero eigenvalue `μ₁ = (4/dx²) sin²(π dx / 2Lx)` of the
/// discrete Neumann Laplacian, in closed form.
pub fn neumann_mu1(mesh: &SlabMesh) -> f64 {
    let s = (PI * mesh.dx() / (2.0 * mesh.lx())).sin();
    4.0 * s * s / (mesh.dx() * mesh.dx())
}

fn neumann_laplacian(mesh: &SlabMesh) -> DMatrix<f64> {
    let nx = mesh.nx();
    let h2 = mesh.dx() * mesh.dx();
    DMatrix::from_fn(nx, nx, |i, j| {
        if i == j {
            let deg = if i == 0 || i == nx - 1 { 1.0 } else { 2.0 };
            deg / h2
        } else if i.abs_diff(j) == 1 {
            -1.0 / h2
        } else {
            0.0
        }
    })
}

/// `C_p,h = 1/√μ₁` from a dense eigensolve of the Neumann Laplacian.
pub fn poincare_constant(mesh: &SlabMesh) -> Result<f64> {
    if mesh.nx() > MAX_DENSE_CELLS {
        return Ok(1.0 / neumann_mu1(mesh).sqrt());
    }
    let (values, _) = linalg::symmetric_eigen_sorted(neumann_laplacian(mesh))?;
    Ok(1.0 / values[1].sqrt())
}

/// Exact discrete `H²` regularity constant: the supremum of
/// `‖φ‖_{H²,h} / ‖ρ‖` over mean-free `ρ`, which is attained on the first
/// Neumann mode and equals `√(1 + 1/μ₁ + 1/μ₁²)`.
pub fn regularity_constant(mesh: &SlabMesh) -> Result<f64> {
    let mu = 1.0 / poincare_constant(mesh)?.powi(2);
    Ok((1.0 + 1.0 / mu + 1.0 / (mu * mu)).sqrt())
}

/// Exact discrete trace constant: the supremum of
/// `(u₀² + u_{nx−1}²)^{1/2} / ‖u‖_{H¹,h}` over cell functions, from the
/// largest generalized eigenvalue of the wall-value form against the
/// discrete `H¹` form.
pub fn trace_constant(mesh: &SlabMesh) -> Result<f64> {
    let nx = mesh.nx();
    if nx > MAX_DENSE_CELLS {
        return Err(Error::TooLarge(format!(
            "{nx} cells exceed the dense limit of {MAX_DENSE_CELLS}"
        )));
    }
    let dx = mesh.dx();
    let h1 = neumann_laplacian(mesh) * dx + DMatrix::identity(nx, nx) * dx;
    let chol = h1
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("H1 form is not positive definite".into()))?;
    let l = chol.l();
    let mut b = DMatrix::zeros(nx, nx);
    b[(0, 0)] = 1.0;
    b[(nx - 1, nx - 1)] = 1.0;
    let linv_b = l
        .solve_lower_triangular(&b)
        .ok_or_else(|| Error::NumericalFailure("triangular solve failed".into()))?;
    let c = l
        .solve_lower_triangular(&linv_b.transpose())
        .ok_or_else(|| Error::NumericalFailure("triangular solve failed".into()))?;
    let sym = (&c + c.transpose()) * 0.5;
    let (values, _) = linalg::symmetric_eigen_sorted(sym)?;
    Ok(values[nx - 1].max(0.0).sqrt())
}

/// Both sides of the two `φ` estimates.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PhiEstimates {
    pub grad_norm: f64,
    pub cp_rho_norm: f64,
    pub grad_ok: bool,
    pub dt_grad_norm: f64,
    pub j_norm: f64,
    pub dt_grad_ok: bool,
}

/// Checks `‖∂ₓφ‖ ≤ C_p‖ρ‖` and, given the previous solve, the backward
/// difference bound `‖∂ₜ∂ₓφ‖ ≤ ‖j‖ + slack`.
pub fn estimates_for_phi_check(
    mesh: &SlabMesh,
    rho: &[f64],
    j: &[f64],
    current: &PhiField,
    previous: Option<(&PhiField, f64)>,
    cp: f64,
    slack: f64,
) -> PhiEstimates {
    let dx = mesh.dx();
    let grad_norm = l2(dx, &current.grad);
    let cp_rho_norm = cp * l2(dx, rho);
    let j_norm = l2(dx, j);
    let dt_grad_norm = match previous {
        Some((prev, dt)) => {
            let d: Vec<f64> = current.grad.iter().zip(&prev.grad).map(|(a, b)| (a - b) / dt).collect();
            l2(dx, &d)
        }
        None => 0.0,
    };
    PhiEstimates {
        grad_norm,
        cp_rho_norm,
        grad_ok: grad_norm <= cp_rho_norm * (1.0 + 1e-12) + 1e-300,
        dt_grad_norm,
        j_norm,
        dt_grad_ok: dt_grad_norm <= j_norm + slack,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialFamily {
    Zero,
    Cosine,
    Quadratic,
}

/// `V_raw(x)`: zero, `a cos(2πx/Lx)` or `a (x − Lx/2)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub family: PotentialFamily,
    pub amplitude: f64,
}

impl PotentialSpec {
    pub fn zero() -> Self {
        Self {
            family: PotentialFamily::Zero,
            amplitude: 0.0,
        }
    }

    pub fn cosine(amplitude: f64) -> Self {
        Self {
            family: PotentialFamily::Cosine,
            amplitude,
        }
    }

    /// `(V_raw, V', V'')` at `x`.
    pub fn eval(&self, x: f64, lx: f64) -> (f64, f64, f64) {
        let a = self.amplitude;
        match self.family {
            PotentialFamily::Zero => (0.0, 0.0, 0.0),
            PotentialFamily::Cosine => {
                let k = 2.0 * PI / lx;
                (a * (k * x).cos(), -a * k * (k * x).sin(), -a * k * k * (k * x).cos())
            }
            PotentialFamily::Quadratic => {
                let y = x - 0.5 * lx;
                (a * y * y, 2.0 * a * y, 2.0 * a)
            }
        }
    }
}

/// Normalized potential on the mesh with its weighted-measure bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialV {
    pub spec: PotentialSpec,
    pub shift: f64,
    /// `V` at cell centres (shift included).
    pub values: Vec<f64>,
    /// Analytic `V'` at cell centres.
    pub gradient: Vec<f64>,
    /// `e^{−V}` at the `nx + 1` faces.
    pub weight_faces: Vec<f64>,
    /// Cell weight of `du`: the mean of the two face values of `e^{−V}`.
    pub weight_cells: Vec<f64>,
    pub c_v: f64,
    pub big_c_v: f64,
    /// `‖V‖_{C²}` bound: the largest of `sup|V|`, `sup|V'|`, `sup|V''|`.
    pub d_v: f64,
}

/// Shifts `V_raw` so that `Σ e^V dx = 1` and tabulates the derived data.
pub fn normalize_potential(spec: PotentialSpec, mesh: &SlabMesh) -> Result<PotentialV> {
    let lx = mesh.lx();
    let dx = mesh.dx();
    let raw: Vec<(f64, f64, f64)> = mesh.centers().iter().map(|&x| spec.eval(x, lx)).collect();
    if raw.iter().any(|(v, g, h)| !v.is_finite() || !g.is_finite() || !h.is_finite()) {
        return Err(Error::InvalidConfig("potential is not finite on the mesh".into()));
    }
    let z: f64 = raw.iter().map(|(v, _, _)| v.exp()).sum::<f64>() * dx;
    let shift = -z.ln();
    let values: Vec<f64> = raw.iter().map(|(v, _, _)| v + shift).collect();
    let gradient: Vec<f64> = raw.iter().map(|(_, g, _)| *g).collect();
    let weight_faces: Vec<f64> = (0..=mesh.nx())
        .map(|k| (-(spec.eval(mesh.face(k), lx).0 + shift)).exp())
        .collect();
    let weight_cells: Vec<f64> = weight_faces.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect();
    let mut c_v = f64::INFINITY;
    let mut big_c_v: f64 = 0.0;
    for &e in values.iter().map(|v| (-v).exp()).collect::<Vec<_>>().iter().chain(&weight_faces) {
        c_v = c_v.min(e);
        big_c_v = big_c_v.max(e);
    }
    let mut d_v: f64 = 0.0;
    let faces = (0..=mesh.nx()).map(|k| spec.eval(mesh.face(k), lx));
    for (v, g, h) in raw.iter().copied().chain(faces) {
        d_v = d_v.max((v + shift).abs()).max(g.abs()).max(h.abs());
    }
    Ok(PotentialV {
        spec,
        shift,
        values,
        gradient,
        weight_faces,
        weight_cells,
        c_v,
        big_c_v,
        d_v,
    })
}

impl PotentialV {
    pub fn is_flat(&self) -> bool {
        self.gradient.iter().all(|g| *g == 0.0)
    }

    pub fn max_gradient(&self) -> f64 {
        self.gradient.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manufactured_error(nx: usize) -> f64 {
        let mesh = SlabMesh::new(nx, 1.0).unwrap();
        let rho: Vec<f64> = mesh.centers().iter().map(|x| (PI * x).cos()).collect();
        let sol = solve_poisson_neumann(&rho, &mesh).unwrap();
        sol.phi
            .iter()
            .zip(mesh.centers())
            .map(|(p, x)| (p - (PI * x).cos() / (PI * PI)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn manufactured_solution_converges_second_order() {
        let e1 = manufactured_error(32);
        let e2 = manufactured_error(64);
        let e3 = manufactured_error(128);
        assert!(e1 < 1e-3);
        for r in [e1 / e2, e2 / e3] {
            assert!((3.6..=4.4).contains(&r), "ratio {r}");
        }
    }

    #[test]
    fn zero_density_and_gauge() {
        let mesh = SlabMesh::new(16, 1.0).unwrap();
        let sol = solve_poisson_neumann(&[0.0; 16], &mesh).unwrap();
        assert!(sol.phi.iter().all(|p| *p == 0.0));
        let rho: Vec<f64> = mesh.centers().iter().map(|x| (3.0 * PI * x).cos() + 0.2 * (PI * x).cos()).collect();
        let sol = solve_poisson_neumann(&rho, &mesh).unwrap();
        assert!(sol.phi.iter().sum::<f64>().abs() * mesh.dx() < 1e-12);
        assert_eq!(sol.grad[0], 0.0);
        assert_eq!(sol.grad[16], 0.0);
        assert!(sol.residual < 1e-12);
        // ⟨∂ₓφ, ∂ₓφ⟩ = ⟨φ, ρ⟩.
        let gg: f64 = sol.grad.iter().map(|g| g * g).sum::<f64>() * mesh.dx();
        let pr: f64 = sol.phi.iter().zip(&rho).map(|(p, r)| p * r).sum::<f64>() * mesh.dx();
        assert!((gg - pr).abs() < 1e-11 * gg);
    }

    #[test]
    fn incompatible_density_rejected() {
        let mesh = SlabMesh::new(8, 1.0).unwrap();
        assert!(matches!(
            solve_poisson_neumann(&[1.0; 8], &mesh),
            Err(Error::Compatibility { .. })
        ));
    }

    #[test]
    fn poincare_constant_limits() {
        let m = SlabMesh::new(256, 1.0).unwrap();
        let cp = poincare_constant(&m).unwrap();
        assert!((cp - 1.0 / PI).abs() < 1e-4);
        assert!((cp - 1.0 / neumann_mu1(&m).sqrt()).abs() < 1e-10);
        let m2 = SlabMesh::new(256, 2.0).unwrap();
        assert!((poincare_constant(&m2).unwrap() - 2.0 * cp).abs() < 1e-10);
    }

    #[test]
    fn first_mode_saturates_gradient_estimate() {
        let mesh = SlabMesh::new(64, 1.0).unwrap();
        let cp = poincare_constant(&mesh).unwrap();
        // The discrete first Neumann eigenvector is exactly cos(π x_k).
        let rho: Vec<f64> = mesh.centers().iter().map(|x| (PI * x).cos()).collect();
        let sol = solve_poisson_neumann(&rho, &mesh).unwrap();
        let est = estimates_for_phi_check(&mesh, &rho, &[0.0; 64], &sol, Some((&sol, 0.1)), cp, 0.0);
        assert!(est.grad_ok && est.dt_grad_ok);
        assert!((est.grad_norm / est.cp_rho_norm - 1.0).abs() < 1e-10);
        let phi_norm = l2(mesh.dx(), &sol.phi);
        assert!(phi_norm <= cp * est.grad_norm * (1.0 + 1e-12));
    }

    #[test]
    fn regularity_and_trace_constants() {
        let mesh = SlabMesh::new(64, 1.0).unwrap();
        let k = regularity_constant(&mesh).unwrap();
        let mu = neumann_mu1(&mesh);
        assert!((k - (1.0 + 1.0 / mu + 1.0 / (mu * mu)).sqrt()).abs() < 1e-10);
        let d = trace_constant(&mesh).unwrap();
        // A constant function already gives √2.
        assert!(d >= 2f64.sqrt() - 1e-12, "{d}");
        assert!(d < 3.0);
    }

    #[test]
    fn potential_normalization() {
        let m1 = SlabMesh::new(32, 1.0).unwrap();
        let v = normalize_potential(PotentialSpec::zero(), &m1).unwrap();
        assert!(v.shift.abs() < 1e-15);
        assert!((v.c_v - 1.0).abs() < 1e-15 && (v.big_c_v - 1.0).abs() < 1e-15);
        assert!(v.d_v < 1e-15);

        let m2 = SlabMesh::new(32, 2.0).unwrap();
        let v = normalize_potential(PotentialSpec::zero(), &m2).unwrap();
        assert!((v.shift + 2f64.ln()).abs() < 1e-15);

        let v = normalize_potential(PotentialSpec::cosine(0.5), &m1).unwrap();
        let total: f64 = v.values.iter().map(|x| x.exp()).sum::<f64>() * m1.dx();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(v.c_v > 0.0 && v.c_v <= v.big_c_v);
        assert!(v.weight_cells.iter().all(|e| *e >= v.c_v && *e <= v.big_c_v));
    }
}
